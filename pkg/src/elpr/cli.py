"""``elpr`` command line: batch workflows over text synthesis, banks, training, corpora and metrics.

Option precedence is flags > config file > built-in defaults. The config
file is a flat JSON object whose keys are option names with underscores
(``test_fraction``, ``per_image``) or any training-config field; it comes
from ``--config`` or, failing that, the ``ELPR_CONFIG`` environment
variable.

Exit codes: 0 success, 1 validation failure or domain error, 2 usage
error, 3 config parse error, 4 missing input.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np
import PIL
import scipy
import torch

from . import __version__
from .background_bank import harvest_templates, load_bank, save_bank
from .dataset_io import load_manifest, mix_corpora, save_manifest, split, validate
from .errors import ElprError, PartialHarvest
from .imaging import load_png
from .metrics import (
    DeskExtractor, MetricsReport, extract_features, fid, kid_x100, load_features, load_results,
    recognition_report, save_features,
)
from .synthesis import generate_corpus, script_corpus, text_corpus
from .text_forge import TextForge
from .toydata import make_toy_corpus
from .trainer import TrainConfig, TrainingData, load_checkpoint, train

log = logging.getLogger("elpr")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3, 4
CONFIG_ENV = "ELPR_CONFIG"
TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}


class ConfigError(Exception):
    pass


# Built-in defaults per subcommand. Options are declared with SUPPRESS so the
# namespace only holds what the user typed, which makes layering explicit.
DEFAULTS = {
    "make-toy": {"count": 40, "seed": 0},
    "synth-text": {"count": 10, "seed": 0, "canvas": [256, 512]},
    "build-bank": {"per_image": 4, "crop_size": [64, 64], "out_size": [256, 256], "seed": 0},
    "train": {"preset": "default", "resume": True},
    "generate": {"count": 100, "seed": 0, "preview": True},
    "script-generate": {"count": 100, "seed": 0, "canvas": [256, 512], "preview": True},
    "score": {"extractor_seed": 0},
    "evaluate": {},
    "split": {"test_fraction": 0.2, "seed": 0},
    "validate": {"check_files": True},
    "mix": {"seed": 0},
}

TRAIN_FLAGS = {
    "iterations": int, "seed": int, "learning_rate": float, "batch_size": int, "image_size": int,
    "mask_weight": float, "mask_region": str, "checkpoint_interval": int, "adversarial": str,
    "prefetch_workers": int,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elpr", description="Synthetic enlarged-plate corpus toolkit.")
    parser.add_argument("--version", action="version", version=f"elpr {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def cmd(name, help_text):
        p = sub.add_parser(name, help=help_text, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help=f"flat JSON config file (default: ${CONFIG_ENV})")
        p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
        return p

    p = cmd("make-toy", "write a procedural stand-in corpus of plate scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)

    p = cmd("synth-text", "render text images and masks")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--canvas", type=int, nargs=2, metavar=("H", "W"))

    p = cmd("build-bank", "harvest background templates around annotated plates")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-image", dest="per_image", type=int)
    p.add_argument("--crop-size", dest="crop_size", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--out-size", dest="out_size", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--seed", type=int)

    p = cmd("train", "train DGNet")
    p.add_argument("--manifest", required=True, help="real-plate manifest (discriminator reals)")
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=["default", "toy"])
    for name, kind in TRAIN_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind)
    p.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                   help="override any training-config field (JSON value)")
    p.add_argument("--no-resume", dest="resume", action="store_false")

    p = cmd("generate", "translate sampled text images into synthetic plates")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-preview", dest="preview", action="store_false")

    p = cmd("script-generate", "paste masks onto templates (non-learned baseline)")
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--canvas", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--no-preview", dest="preview", action="store_false")

    p = cmd("score", "FID and KIDx100 between two image sets")
    p.add_argument("--real", required=True, help="image directory, manifest or feature file")
    p.add_argument("--fake", required=True, help="image directory, manifest or feature file")
    p.add_argument("--out", help="report path (default: stdout only)")
    p.add_argument("--extractor-seed", dest="extractor_seed", type=int)
    p.add_argument("--save-features", dest="save_features", help="directory for real.feat / fake.feat")

    p = cmd("evaluate", "RA, CRA and per-challenge rows from recognizer output")
    p.add_argument("--results", required=True, help="JSON lines: plate_id, predicted[, label]")
    p.add_argument("--manifest", required=True, help="annotations (labels and challenge tags)")
    p.add_argument("--out", help="report path (default: stdout only)")

    p = cmd("split", "assign a seeded train/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output manifest path")
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--seed", type=int)

    p = cmd("validate", "check a manifest (grammar, tags, splits, files)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="report path (default: stdout only)")
    p.add_argument("--no-file-check", dest="check_files", action="store_false")

    p = cmd("mix", "training manifest mixing real and synthetic records")
    p.add_argument("--real", required=True)
    p.add_argument("--synthetic", required=True)
    p.add_argument("--n-real", dest="n_real", type=int, required=True)
    p.add_argument("--n-synthetic", dest="n_synthetic", type=int, required=True)
    p.add_argument("--out", required=True, help="output manifest path")
    p.add_argument("--seed", type=int)
    return parser


_PARSER = None


def _parser() -> argparse.ArgumentParser:
    global _PARSER
    if _PARSER is None:
        _PARSER = _build_parser()
    return _PARSER


def _known_keys() -> set[str]:
    return set(TRAIN_FIELDS).union(*DEFAULTS.values())


def _read_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    unknown = set(data) - _known_keys()
    if unknown:
        raise ConfigError(f"config {path}: unknown keys {sorted(unknown)}")
    return data


def resolve(argv) -> tuple[str, dict, dict]:
    """Parse argv and layer defaults < config file < flags. Returns ``(command, options, file_values)``."""
    ns = vars(_parser().parse_args(argv))
    command = ns.pop("command")
    config_path = ns.pop("config", None) or os.environ.get(CONFIG_ENV)
    file_values = _read_config(config_path) if config_path else {}
    options = dict(DEFAULTS[command])
    options.update({k: v for k, v in file_values.items() if k in DEFAULTS[command]})
    options.update(ns)
    options["config_path"] = config_path
    return command, options, file_values


def train_config(options: dict, file_values: dict) -> TrainConfig:
    base = TrainConfig.toy() if options.get("preset") == "toy" else TrainConfig()
    merged = base.to_dict()
    merged.update({k: v for k, v in file_values.items() if k in TRAIN_FIELDS})
    merged.update({k: options[k] for k in TRAIN_FLAGS if k in options})
    for item in options.get("overrides") or []:
        key, sep, raw = item.partition("=")
        if not sep or key not in TRAIN_FIELDS:
            raise ConfigError(f"bad --set {item!r}: expected KEY=VALUE with a training-config key")
        try:
            merged[key] = json.loads(raw)
        except json.JSONDecodeError:
            merged[key] = raw
    try:
        return TrainConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training config: {exc}") from exc


# ---------------------------------------------------------------- provenance


def _versions() -> dict:
    return {
        "elpr": __version__, "python": platform.python_version(), "numpy": np.__version__,
        "torch": torch.__version__, "scipy": scipy.__version__, "pillow": PIL.__version__,
    }


def write_provenance(target: Path, command: str, argv, options: dict, extra: dict | None = None) -> Path:
    """Write a provenance record beside ``target`` (inside it when it is a directory)."""
    target = Path(target)
    path = target / "provenance.json" if target.is_dir() else target.with_name(target.name + ".provenance.json")
    record = {
        "command": command,
        "argv": list(argv),
        "options": {k: v for k, v in sorted(options.items())},
        "seed": options.get("seed"),
        "versions": _versions(),
    }
    if extra:
        record.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=1, ensure_ascii=False, default=str) + "\n", encoding="utf-8")
    return path


def _emit(report: dict, out) -> None:
    text = json.dumps(report, indent=1, ensure_ascii=False)
    print(text)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------- commands


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    return path


def _forge(options) -> TextForge:
    h, w = options["canvas"]
    return TextForge(canvas=(h, w))


def _image_source(path: Path):
    """Feature set for a feature file, a manifest or a directory of PNGs."""
    path = _require(path)
    if path.is_file() and path.suffix == ".feat":
        return load_features(path), None
    if path.is_file():
        m = load_manifest(path)
        return None, [m.image_path(r) for r in m.records]
    return None, sorted(path.rglob("*.png"))


def cmd_make_toy(o, argv):
    make_toy_corpus(o["out"], o["count"], o["seed"])
    write_provenance(Path(o["out"]), "make-toy", argv, o)


def cmd_synth_text(o, argv):
    text_corpus(o["count"], o["seed"], o["out"], _forge(o))
    write_provenance(Path(o["out"]), "synth-text", argv, o)


def cmd_build_bank(o, argv):
    manifest = load_manifest(_require(o["manifest"]))
    templates, skipped = [], []
    for i, rec in enumerate(manifest.records):
        if rec.plate_bbox is None:
            skipped.append(rec.plate_id)
            continue
        image = load_png(manifest.image_path(rec))
        try:
            templates += harvest_templates(image, rec.plate_bbox, o["per_image"], tuple(o["crop_size"]),
                                           seed=[o["seed"], i], source_id=rec.plate_id,
                                           out_size=tuple(o["out_size"]))
        except PartialHarvest as exc:
            log.warning("%s: %s", rec.plate_id, exc)
            templates += exc.templates
    if skipped:
        log.warning("%d records have no plate_bbox and were skipped", len(skipped))
    bank = save_bank(templates, o["out"])
    write_provenance(Path(o["out"]), "build-bank", argv, o, {"templates": len(bank), "skipped": skipped})
    print(f"{len(bank)} templates -> {o['out']}")


def cmd_train(o, argv, file_values):
    config = train_config(o, file_values)
    manifest = load_manifest(_require(o["manifest"]))
    bank = load_bank(_require(o["bank"]))
    data = TrainingData(config, manifest, bank)
    out = train(config, data, o["out"], resume=o["resume"])
    write_provenance(out, "train", argv, o, {"train_config": config.to_dict()})


def cmd_generate(o, argv):
    state = load_checkpoint(_require(o["checkpoint"]))
    bank = load_bank(_require(o["bank"]))
    m = generate_corpus(state, bank, o["count"], o["seed"], o["out"], preview=o["preview"])
    write_provenance(Path(o["out"]), "generate", argv, o, {"checkpoint_step": state.step})
    print(f"{len(m)} images -> {o['out']}")


def cmd_script_generate(o, argv):
    bank = load_bank(_require(o["bank"]))
    m = script_corpus(bank, o["count"], o["seed"], o["out"], _forge(o), preview=o["preview"])
    write_provenance(Path(o["out"]), "script-generate", argv, o)
    print(f"{len(m)} images -> {o['out']}")


def cmd_score(o, argv):
    extractor = DeskExtractor(o["extractor_seed"])
    sets = {}
    for side in ("real", "fake"):
        feats, paths = _image_source(Path(o[side]))
        if feats is None:
            feats, skipped = extract_features(paths, extractor, on_error="skip")
            if skipped:
                log.warning("%s: %d images could not be decoded", side, len(skipped))
        sets[side] = feats
        if o.get("save_features"):
            Path(o["save_features"]).mkdir(parents=True, exist_ok=True)
            save_features(Path(o["save_features"]) / f"{side}.feat", feats)
    report = MetricsReport(fid=fid(sets["real"], sets["fake"]), kid_x100=kid_x100(sets["real"], sets["fake"]),
                           extractor_id=sets["real"].extractor_id)
    _emit(report.to_dict(), o.get("out"))
    if o.get("out"):
        write_provenance(Path(o["out"]), "score", argv, o)


def cmd_evaluate(o, argv):
    manifest = load_manifest(_require(o["manifest"]))
    labels = {r.plate_id: r.label for r in manifest.records}
    results = load_results(_require(o["results"]), labels)
    annotations = {r.plate_id: r.challenges for r in manifest.records}
    report = recognition_report(results, annotations)
    _emit(report.to_dict(), o.get("out"))
    if o.get("out"):
        write_provenance(Path(o["out"]), "evaluate", argv, o)


def cmd_split(o, argv):
    manifest = load_manifest(_require(o["manifest"]))
    out = Path(o["out"])
    result = split(manifest, o["test_fraction"], o["seed"])
    # Image paths are kept relative to the original manifest's directory.
    if out.resolve().parent != manifest.root.resolve():
        rel = os.path.relpath(manifest.root.resolve(), out.resolve().parent)
        result = replace(result, records=tuple(replace(r, image=str(Path(rel) / r.image)) for r in result.records))
    save_manifest(result, out)
    n_test = sum(r.split == "test" for r in result.records)
    write_provenance(out, "split", argv, o, {"n_test": n_test, "n_train": len(result) - n_test})
    print(f"{n_test} test / {len(result) - n_test} train -> {out}")


def cmd_validate(o, argv):
    report = validate(load_manifest(_require(o["manifest"])), check_files=o["check_files"])
    _emit(report.to_dict(), o.get("out"))
    if o.get("out"):
        write_provenance(Path(o["out"]), "validate", argv, o)
    return report.exit_status


def cmd_mix(o, argv):
    real = load_manifest(_require(o["real"]))
    synthetic = load_manifest(_require(o["synthetic"]))
    mixed = mix_corpora(real, synthetic, o["n_real"], o["n_synthetic"], o["seed"], o["out"])
    write_provenance(Path(o["out"]), "mix", argv, o)
    print(f"{len(mixed)} records -> {o['out']}")


COMMANDS = {
    "make-toy": cmd_make_toy, "synth-text": cmd_synth_text, "build-bank": cmd_build_bank,
    "generate": cmd_generate, "script-generate": cmd_script_generate, "score": cmd_score,
    "evaluate": cmd_evaluate, "split": cmd_split, "validate": cmd_validate, "mix": cmd_mix,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        command, options, file_values = resolve(argv)
    except SystemExit as exc:  # argparse: usage errors exit 2, --help exits 0
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"elpr: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"elpr: config file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING
    logging.basicConfig(level=options.pop("log_level", "WARNING"), format="%(levelname)s %(name)s: %(message)s")
    try:
        if command == "train":
            status = cmd_train(options, argv, file_values)
        else:
            status = COMMANDS[command](options, argv)
    except ConfigError as exc:
        print(f"elpr: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"elpr: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ElprError, ValueError) as exc:
        print(f"elpr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK if status is None else int(status)


def main() -> None:
    sys.exit(run())
