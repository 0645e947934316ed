"""ELPR-style manifests: plate records, challenge taxonomy, splitting, corpus packaging.

On-disk format is UTF-8 JSON lines. The first line is a header
``{"format": "elpr-manifest", "name": ..., "version": ...}``; each further
line is one record with keys ``plate_id``, ``image`` (relative to the
manifest's directory), ``label``, ``province``, ``challenges`` (list of tag
names), ``split`` (``train``/``test``/``unassigned``), ``plate_bbox``
(``[x, y, w, h]`` or null) and ``nonstandard`` (bool). Any other keys are
carried through untouched.
"""

from __future__ import annotations

import json
import os
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ManifestError
from .imaging import save_png
from .text_forge import ALPHANUMERICS, LETTERS, load_provinces

FORMAT = "elpr-manifest"
SPLITS = ("train", "test", "unassigned")
_KNOWN_KEYS = {"plate_id", "image", "label", "province", "challenges", "split", "plate_bbox", "nonstandard"}


class ChallengeTag(str, Enum):
    InclinedAngle = "InclinedAngle"
    AbnormalIllumination = "AbnormalIllumination"
    DifferentSpacing = "DifferentSpacing"
    SizeVariation = "SizeVariation"
    Blur = "Blur"
    Abrasion = "Abrasion"
    BackgroundClutter = "BackgroundClutter"
    NonStandardCharacter = "NonStandardCharacter"
    DoubleRowPlate = "DoubleRowPlate"
    Occlusion = "Occlusion"

    @property
    def short(self) -> str:
        return _SHORT[self]


_SHORT = {
    ChallengeTag.InclinedAngle: "IA",
    ChallengeTag.AbnormalIllumination: "AI",
    ChallengeTag.DifferentSpacing: "DS",
    ChallengeTag.SizeVariation: "SV",
    ChallengeTag.Blur: "BLU",
    ChallengeTag.Abrasion: "ABR",
    ChallengeTag.BackgroundClutter: "BC",
    ChallengeTag.NonStandardCharacter: "NSC",
    ChallengeTag.DoubleRowPlate: "DRP",
    ChallengeTag.Occlusion: "OCC",
}
TAG_NAMES = frozenset(t.value for t in ChallengeTag)
NORMAL = "NOR"  # row name for plates that carry no challenge tag


@dataclass(frozen=True)
class PlateRecord:
    plate_id: str
    image: str
    label: str
    province: str = ""
    challenges: tuple[str, ...] = ()
    split: str = "unassigned"
    plate_bbox: tuple[int, int, int, int] | None = None
    nonstandard: bool = False
    extra: dict = field(default_factory=dict, compare=True, hash=False)

    def to_json(self) -> str:
        d = {
            "plate_id": self.plate_id,
            "image": self.image,
            "label": self.label,
            "province": self.province,
            "challenges": list(self.challenges),
            "split": self.split,
            "plate_bbox": list(self.plate_bbox) if self.plate_bbox is not None else None,
            "nonstandard": self.nonstandard,
        }
        d.update(self.extra)
        return json.dumps(d, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "PlateRecord":
        bbox = d.get("plate_bbox")
        return cls(
            plate_id=str(d["plate_id"]),
            image=str(d["image"]),
            label=str(d["label"]),
            province=str(d.get("province", "")),
            challenges=tuple(d.get("challenges", ())),
            split=str(d.get("split", "unassigned")),
            plate_bbox=tuple(int(v) for v in bbox) if bbox is not None else None,
            nonstandard=bool(d.get("nonstandard", False)),
            extra={k: v for k, v in d.items() if k not in _KNOWN_KEYS},
        )


@dataclass(frozen=True)
class Manifest:
    records: tuple[PlateRecord, ...]
    name: str = "elpr"
    version: str = "1"
    root: Path = field(default=Path("."), compare=False)

    def __len__(self):
        return len(self.records)

    def image_path(self, record: PlateRecord) -> Path:
        return self.root / record.image

    def by_id(self) -> dict[str, PlateRecord]:
        return {r.plate_id: r for r in self.records}

    def subset(self, split: str) -> "Manifest":
        return replace(self, records=tuple(r for r in self.records if r.split == split))


def _check_unique(records) -> None:
    seen = set()
    for r in records:
        if r.plate_id in seen:
            raise ManifestError(f"duplicate plate_id {r.plate_id!r}")
        seen.add(r.plate_id)


def load_manifest(path) -> Manifest:
    path = Path(path)
    records = []
    header = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc.msg}") from exc
            if header is None:
                if d.get("format") != FORMAT:
                    raise ManifestError(f"{path}:{lineno}: missing {FORMAT} header")
                header = d
                continue
            try:
                records.append(PlateRecord.from_dict(d))
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: bad record ({exc})") from exc
    if header is None:
        raise ManifestError(f"{path}: empty manifest (no header line)")
    _check_unique(records)
    return Manifest(tuple(records), str(header.get("name", "elpr")), str(header.get("version", "1")), path.parent)


def save_manifest(manifest: Manifest, path) -> None:
    _check_unique(manifest.records)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"format": FORMAT, "name": manifest.name, "version": manifest.version}) + "\n")
        for r in manifest.records:
            fh.write(r.to_json() + "\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------- validation


def plate_pattern(provinces: Iterable[str] | None = None) -> re.Pattern:
    provinces = "".join(provinces if provinces is not None else load_provinces())
    return re.compile(f"^[{re.escape(provinces)}][{LETTERS}][{ALPHANUMERICS}]{{5}}$")


@dataclass(frozen=True)
class Violation:
    plate_id: str
    kind: str
    detail: str


@dataclass
class ValidationReport:
    n_records: int
    violations: list[Violation]
    histogram: dict[str, int]

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def exit_status(self) -> int:
        return 0 if self.ok else 1

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "ok": self.ok,
            "histogram": self.histogram,
            "violations": [vars(v) for v in self.violations],
        }


def validate(manifest: Manifest, check_files: bool = True) -> ValidationReport:
    pattern = plate_pattern()
    violations = []
    hist = Counter()
    seen = set()
    for r in manifest.records:
        if r.plate_id in seen:
            violations.append(Violation(r.plate_id, "duplicate_id", "plate_id appears more than once"))
        seen.add(r.plate_id)
        for tag in r.challenges:
            if tag in TAG_NAMES:
                hist[tag] += 1
            else:
                violations.append(Violation(r.plate_id, "unknown_tag", tag))
        if not r.challenges:
            hist[NORMAL] += 1
        if r.split not in SPLITS:
            violations.append(Violation(r.plate_id, "bad_split", r.split))
        if not r.label:
            violations.append(Violation(r.plate_id, "grammar", "empty label"))
        elif not r.nonstandard and not pattern.match(r.label):
            violations.append(Violation(r.plate_id, "grammar", r.label))
        if r.label and r.province and r.province != r.label[0]:
            violations.append(Violation(r.plate_id, "province", f"{r.province} != {r.label[0]}"))
        if check_files and not manifest.image_path(r).exists():
            violations.append(Violation(r.plate_id, "missing_file", str(manifest.image_path(r))))
    ordered = {t.value: hist[t.value] for t in ChallengeTag if hist[t.value]}
    if hist[NORMAL]:
        ordered[NORMAL] = hist[NORMAL]
    return ValidationReport(len(manifest.records), violations, ordered)


# ---------------------------------------------------------------- splitting


def split(manifest: Manifest, test_fraction: float = 0.2, seed=0) -> Manifest:
    """Assign ``round(N * test_fraction)`` random records to test, the rest to train."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(manifest.records)
    n_test = round(n * test_fraction)  # round-half-even
    rng = np.random.default_rng(seed)
    test_idx = set(rng.permutation(n)[:n_test].tolist())
    records = tuple(
        replace(r, split="test" if i in test_idx else "train") for i, r in enumerate(manifest.records)
    )
    return replace(manifest, records=records)


def mix_corpora(real: Manifest, synthetic: Manifest, n_real: int, n_synthetic: int, seed, out_path) -> Manifest:
    """Training manifest drawing ``n_real`` real train records and ``n_synthetic`` synthetic ones.

    Paths are rewritten relative to ``out_path``'s directory.
    """
    out_dir = Path(out_path).parent
    rng = np.random.default_rng(seed)
    real_pool = real.subset("train") if any(r.split == "train" for r in real.records) else real
    picked = []
    for src, n, kind in ((real_pool, n_real, "real"), (synthetic, n_synthetic, "synthetic")):
        if n > len(src):
            raise ValueError(f"asked for {n} {kind} records, only {len(src)} available")
        for i in sorted(rng.permutation(len(src))[:n].tolist()):
            r = src.records[i]
            rel = os.path.relpath(src.image_path(r).resolve(), out_dir.resolve())
            picked.append(replace(r, image=rel, split="train", extra={**r.extra, "source": kind}))
    mixed = Manifest(tuple(picked), name=f"mix-{n_real}-{n_synthetic}", root=out_dir)
    save_manifest(mixed, out_path)
    return mixed


# ---------------------------------------------------------------- packaging


def package_corpus(items, out_dir, name: str = "synthetic", id_prefix: str = "syn",
                   manifest_name: str = "manifest.jsonl") -> Manifest:
    """Write ``(image, label[, extra])`` items as PNGs plus a manifest.

    ``extra`` may carry ``plate_id`` to override the generated id; other extra
    keys go into the record verbatim.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = []
    seen = set()
    for i, item in enumerate(items):
        pixels, label = item[0], item[1]
        extra = dict(item[2]) if len(item) > 2 else {}
        plate_id = str(extra.pop("plate_id", f"{id_prefix}{i:06d}"))
        if plate_id in seen:
            raise ManifestError(f"plate_id collision on {plate_id!r}")
        seen.add(plate_id)
        rel = f"images/{plate_id}.png"
        save_png(out_dir / rel, pixels)
        records.append(PlateRecord(plate_id, rel, label, province=label[:1], split="train", extra=extra))
    manifest = Manifest(tuple(records), name=name, root=out_dir)
    save_manifest(manifest, out_dir / manifest_name)
    return manifest
