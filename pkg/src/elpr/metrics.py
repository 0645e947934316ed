"""Distribution distances (FID, KID) and recognition accuracies (RA, CRA, per-challenge)."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg

from .dataset_io import NORMAL, ChallengeTag
from .errors import DimensionMismatch, EmptyInput, MatrixSqrtError, MissingAnnotation
from .imaging import load_png, resize

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"ELPRFEAT"
FEATURE_VERSION = 1


@dataclass(frozen=True)
class FeatureSet:
    vectors: np.ndarray  # (N, D)
    extractor_id: str

    def __post_init__(self):
        v = np.asarray(self.vectors)
        if v.ndim != 2:
            raise ValueError(f"feature vectors must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("feature vectors contain non-finite entries")
        object.__setattr__(self, "vectors", v)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


# ---------------------------------------------------------------- extractors


class DeskExtractor:
    """Fixed-seed random-projection conv embedder, for self-consistent desk comparisons only.

    Images are resized to 64x64, passed through two random conv layers
    (5x5/2 to 32 channels, 3x3/2 to 128 channels, ReLU) and summarized by
    per-channel mean and max, giving D=256. Weights come from
    ``numpy.random.default_rng(seed)`` so they are identical on every
    platform; all arithmetic is float64.
    """

    dim = 256

    def __init__(self, seed: int = 0):
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.w1 = rng.standard_normal((5, 5, 3, 32)) / np.sqrt(5 * 5 * 3)
        self.b1 = rng.standard_normal(32) * 0.1
        self.w2 = rng.standard_normal((3, 3, 32, 128)) / np.sqrt(3 * 3 * 32)
        self.b2 = rng.standard_normal(128) * 0.1

    @property
    def extractor_id(self) -> str:
        return f"desk-randconv-v1-seed{self.seed}"

    @staticmethod
    def _conv(x, w, b, stride):
        k = w.shape[0]
        pad = k // 2
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")
        win = sliding_window_view(x, (k, k), axis=(0, 1))[::stride, ::stride]  # (H', W', C, k, k)
        out = np.einsum("hwcij,ijco->hwo", win, w, optimize=True) + b
        return np.maximum(out, 0.0)

    def __call__(self, pixels: np.ndarray) -> np.ndarray:
        img = resize(np.asarray(pixels, dtype=np.uint8), (64, 64)).astype(np.float64) / 255.0
        img = (img - 0.5) / 0.25
        h = self._conv(img, self.w1, self.b1, 2)
        h = self._conv(h, self.w2, self.b2, 2)
        return np.concatenate([h.mean(axis=(0, 1)), h.max(axis=(0, 1))]).astype(np.float32)


def extract_features(images: Iterable, extractor=None, on_error: str = "abort"):
    """Embed each image (array or PNG path). Returns ``(FeatureSet, skipped)``.

    ``on_error="skip"`` drops images that fail to decode and lists them in
    ``skipped``; ``"abort"`` re-raises.
    """
    extractor = extractor or DeskExtractor()
    rows, skipped = [], []
    for item in images:
        try:
            pixels = load_png(item) if isinstance(item, (str, Path)) else item
            rows.append(extractor(pixels))
        except (OSError, ValueError) as exc:
            if on_error != "skip":
                raise
            log.warning("skipping %s: %s", item if isinstance(item, (str, Path)) else "<array>", exc)
            skipped.append(str(item) if isinstance(item, (str, Path)) else repr(exc))
    vectors = np.stack(rows) if rows else np.zeros((0, extractor.dim), dtype=np.float32)
    return FeatureSet(vectors, extractor.extractor_id), skipped


# ---------------------------------------------------------------- feature files


def save_features(path, features: FeatureSet) -> None:
    ident = features.extractor_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<HI", FEATURE_VERSION, len(ident)))
        fh.write(ident)
        fh.write(struct.pack("<QQ", features.n, features.dim))
        fh.write(np.ascontiguousarray(features.vectors, dtype="<f4").tobytes())


def load_features(path) -> FeatureSet:
    data = Path(path).read_bytes()
    if data[:8] != FEATURE_MAGIC:
        raise ValueError(f"{path} is not a feature file")
    version, id_len = struct.unpack_from("<HI", data, 8)
    if version != FEATURE_VERSION:
        raise ValueError(f"{path}: unsupported feature file version {version}")
    off = 14
    ident = data[off:off + id_len].decode("utf-8")
    off += id_len
    n, d = struct.unpack_from("<QQ", data, off)
    off += 16
    if len(data) - off != 4 * n * d:
        raise ValueError(f"{path}: expected {n}x{d} floats, found {(len(data) - off) // 4}")
    vectors = np.frombuffer(data, dtype="<f4", offset=off).reshape(n, d).astype(np.float32)
    return FeatureSet(vectors, ident)


# ---------------------------------------------------------------- distances


def _compatible(a: FeatureSet, b: FeatureSet) -> None:
    if a.extractor_id != b.extractor_id:
        raise DimensionMismatch(f"extractor ids differ: {a.extractor_id!r} vs {b.extractor_id!r}")
    if a.dim != b.dim:
        raise DimensionMismatch(f"feature dimensions differ: {a.dim} vs {b.dim}")
    for name, s in (("a", a), ("b", b)):
        if s.n < 2:
            raise EmptyInput(f"feature set {name} needs at least 2 vectors, has {s.n}")


def _trace_sqrt_product(sa: np.ndarray, sb: np.ndarray) -> float:
    for eps in (0.0, 1e-6):
        offset = eps * np.eye(sa.shape[0])
        root = linalg.sqrtm((sa + offset) @ (sb + offset))
        if np.isfinite(root).all():
            if np.iscomplexobj(root):
                if np.abs(root.imag).max() > 1e-3:
                    raise MatrixSqrtError(f"matrix square root has imaginary part {np.abs(root.imag).max():.3g}")
                root = root.real
            return float(np.trace(root))
    raise MatrixSqrtError(
        f"matrix square root did not converge (cond(sigma_a)={np.linalg.cond(sa):.3g}, "
        f"cond(sigma_b)={np.linalg.cond(sb):.3g})"
    )


def fid(a: FeatureSet, b: FeatureSet) -> float:
    """Frechet distance between Gaussians fitted to the two feature sets."""
    _compatible(a, b)
    xa, xb = a.vectors.astype(np.float64), b.vectors.astype(np.float64)
    mu_a, mu_b = xa.mean(axis=0), xb.mean(axis=0)
    sa = np.atleast_2d(np.cov(xa, rowvar=False))
    sb = np.atleast_2d(np.cov(xb, rowvar=False))
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(sa) + np.trace(sb) - 2.0 * _trace_sqrt_product(sa, sb))
    return max(value, 0.0)


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def kid_x100(a: FeatureSet, b: FeatureSet) -> float:
    """100 x unbiased squared MMD with the cubic polynomial kernel."""
    _compatible(a, b)
    x, y = a.vectors.astype(np.float64), b.vectors.astype(np.float64)
    n, m = len(x), len(y)
    kxx, kyy, kxy = polynomial_kernel(x, x), polynomial_kernel(y, y), polynomial_kernel(x, y)
    sum_xx = kxx.sum() - np.trace(kxx)
    sum_yy = kyy.sum() - np.trace(kyy)
    mmd2 = sum_xx / (n * (n - 1)) + sum_yy / (m * (m - 1)) - 2.0 * kxy.sum() / (n * m)
    return float(100.0 * mmd2)


# ---------------------------------------------------------------- recognition


@dataclass(frozen=True)
class RecognitionResult:
    plate_id: str
    predicted: str
    label: str

    def __post_init__(self):
        if not self.label:
            raise ValueError(f"result {self.plate_id!r} has an empty label")


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _nonempty(results: Sequence[RecognitionResult]) -> Sequence[RecognitionResult]:
    results = list(results)
    if not results:
        raise EmptyInput("no recognition results")
    return results


def ra(results: Sequence[RecognitionResult]) -> float:
    """Percentage of plates whose prediction matches the label exactly."""
    results = _nonempty(results)
    return 100.0 * sum(r.predicted == r.label for r in results) / len(results)


def cra(results: Sequence[RecognitionResult]) -> float:
    """Percentage of label characters recognized, counted as length minus edit distance."""
    results = _nonempty(results)
    correct = sum(max(0, len(r.label) - edit_distance(r.label, r.predicted)) for r in results)
    return 100.0 * correct / sum(len(r.label) for r in results)


@dataclass(frozen=True)
class ChallengeScore:
    ra: float
    cra: float
    n: int


def per_challenge(results: Sequence[RecognitionResult], annotations: Mapping[str, Iterable[str]]):
    """RA/CRA over the plates carrying each tag; untagged plates form the ``NOR`` row.

    Returns ``(rows, omitted)`` where ``omitted`` lists taxonomy tags no
    plate carries (n=0). Rows are ordered by the taxonomy, ``NOR`` last,
    then any tags outside the taxonomy alphabetically.
    """
    groups: dict[str, list[RecognitionResult]] = {}
    for r in _nonempty(results):
        if r.plate_id not in annotations:
            raise MissingAnnotation(f"no challenge annotation for plate {r.plate_id!r}")
        tags = list(dict.fromkeys(annotations[r.plate_id])) or [NORMAL]
        for tag in tags:
            groups.setdefault(tag, []).append(r)
    order = [t.value for t in ChallengeTag] + [NORMAL]
    names = [t for t in order if t in groups] + sorted(set(groups) - set(order))
    rows = {t: ChallengeScore(ra(groups[t]), cra(groups[t]), len(groups[t])) for t in names}
    omitted = [t.value for t in ChallengeTag if t.value not in groups]
    return rows, omitted


@dataclass
class MetricsReport:
    fid: float | None = None
    kid_x100: float | None = None
    ra_percent: float | None = None
    cra_percent: float | None = None
    per_challenge: dict[str, ChallengeScore] = field(default_factory=dict)
    omitted_challenges: list[str] = field(default_factory=list)
    extractor_id: str | None = None

    def __post_init__(self):
        for name in ("ra_percent", "cra_percent"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 100.0:
                raise ValueError(f"{name}={v} outside [0, 100]")

    def to_dict(self) -> dict:
        return {
            "fid": self.fid,
            "kid_x100": self.kid_x100,
            "extractor_id": self.extractor_id,
            "ra_percent": self.ra_percent,
            "cra_percent": self.cra_percent,
            "per_challenge": {k: {"ra": v.ra, "cra": v.cra, "n": v.n} for k, v in self.per_challenge.items()},
            "omitted_challenges": [{"tag": t, "n": 0} for t in self.omitted_challenges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, ensure_ascii=False)


def recognition_report(results: Sequence[RecognitionResult], annotations: Mapping[str, Iterable[str]]) -> MetricsReport:
    rows, omitted = per_challenge(results, annotations)
    return MetricsReport(ra_percent=ra(results), cra_percent=cra(results), per_challenge=rows,
                         omitted_challenges=omitted)


def load_results(path, labels: Mapping[str, str] | None = None) -> list[RecognitionResult]:
    """Read a results file: JSON lines with ``plate_id``, ``predicted`` and ``label``.

    A record without ``label`` takes it from ``labels`` (plate_id -> label).
    """
    labels = labels or {}
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(RecognitionResult(str(d["plate_id"]), str(d["predicted"]),
                                             str(d.get("label") or labels.get(str(d["plate_id"]), ""))))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad result record ({exc})") from exc
    return out
