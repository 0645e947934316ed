"""Acceptance criteria, each checked at its stated tolerance and time budget.

Every test prints one PASS/FAIL line (shown live and again in the terminal
summary). Criteria 5, 6 and 8 share one set of toy training runs.
"""

import contextlib
import time
from dataclasses import replace

import numpy as np
import pytest
import torch

from elpr.cli import run
from elpr.dataset_io import load_manifest, split, validate
from elpr.losses import LossWeights, adv_loss_d, adv_loss_g, cycle_l1, mask_l1, recon_l1, total_loss
from elpr.metrics import FeatureSet, RecognitionResult, cra, fid, kid_x100, ra
from elpr.text_forge import TextForge, augment_glyph, compose_text_image, default_layouts, extract_mask, \
    load_atlas, sample_plate_string
from elpr.trainer import TrainConfig, TrainingData, compute_norm_stats, latest_checkpoint, read_loss_log, train

from helpers import (
    ACCEPTANCE_LINES, REFERENCE_SIZE, check_script_corpus, fid_oracle, gradient_check, kid_oracle,
    levenshtein_oracle, loss_functions, stamp_oracle, synthetic_manifest, tiny_batch, tiny_model,
)

SEEDS = (0, 1, 2)


@contextlib.contextmanager
def criterion(number, title, budget, capsys, extra_seconds=0.0):
    t0 = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - t0 + extra_seconds
        assert elapsed < budget, f"took {elapsed:.1f} s, budget {budget} s"
    except BaseException as exc:
        line = f"FAIL  {number}. {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        raise
    else:
        line = f"PASS  {number}. {title} ({elapsed:.1f} s)"
    finally:
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)


def l1_oracle(a, b, sel=None):
    a, b = a.numpy(), b.numpy()
    total, count = 0.0, 0
    for idx in np.ndindex(a.shape):
        if sel is None or sel[idx[0], 0, idx[2], idx[3]]:
            total += abs(float(a[idx]) - float(b[idx]))
            count += 1
    return total / count


def test_1_loss_identities(capsys):
    with criterion(1, "loss identities on 1000 random inputs", 10, capsys):
        gen = torch.Generator().manual_seed(1)
        w = LossWeights()
        for _ in range(1000):
            n, h, wd = (int(v) for v in torch.randint(1, 4, (3,), generator=gen))
            shape = (n, 3, h + 1, wd + 1)
            d = torch.randn(n, 1, h, wd, generator=gen, dtype=torch.float64)
            assert adv_loss_d(torch.ones_like(d), torch.zeros_like(d)).item() == 0.0
            assert adv_loss_g(torch.ones_like(d)).item() == 0.0
            a, b = (torch.randn(shape, generator=gen, dtype=torch.float64) for _ in range(2))
            sel = torch.rand(n, 1, h + 1, wd + 1, generator=gen) > 0.5
            sel[0, 0, 0, 0] = True
            ref = l1_oracle(a, b)
            assert abs(cycle_l1(a, b).item() - ref) < 1e-6 and abs(recon_l1(a, b).item() - ref) < 1e-6
            assert abs(mask_l1(a, b, sel).item() - l1_oracle(a, b, sel.numpy())) < 1e-6
            parts = {k: float(v) for k, v in zip(("adv_g", "recon", "cycle", "mask"),
                                                 torch.rand(4, generator=gen, dtype=torch.float64) * 10)}
            expected = 1 * parts["adv_g"] + 10 * parts["recon"] + 10 * parts["cycle"] + 15 * parts["mask"]
            assert total_loss(parts, w) == expected


def test_2_gradient_checks(capsys):
    with criterion(2, "gradient checks (all losses, all parameter groups)", 120, capsys):
        model = tiny_model(0)
        assert sum(p.numel() for p in model.parameters()) <= 1000
        batch = tiny_batch(model, 0)
        assert batch["x"].shape[1:] == (3, 8, 8)
        for loss_name, fn in loss_functions().items():
            for group, errs in gradient_check(model, batch, fn, step=1e-3).items():
                if errs.size == 0:
                    continue
                within = float(np.mean(errs < 1e-4))
                assert within >= 0.95, f"{loss_name}/{group}: {within:.1%} within 1e-4"
                assert errs.max() < 1e-3, f"{loss_name}/{group}: worst {errs.max():.2e}"


def test_3_mask_round_trip(capsys):
    with criterion(3, "mask round trip on 200 glyph/layout/seed combinations", 30, capsys):
        forge = TextForge()
        atlas = load_atlas()
        layouts = default_layouts()
        for seed in range(200):
            layout = layouts[seed % len(layouts)]
            rng = np.random.default_rng([7, seed])
            label = sample_plate_string([7, seed])
            glyphs = [augment_glyph(atlas[ch], int(rng.integers(2**31)), forge.ranges.clipped(s[2], s[3]))
                      for ch, s in zip(label, layout.slots)]
            mask = extract_mask(compose_text_image(glyphs, layout))
            assert np.array_equal(mask.support, stamp_oracle(glyphs, layout)), (seed, layout.preset_id)


def test_4_metric_oracles(capsys):
    with criterion(4, "metric oracles (FID, KID, RA, CRA)", 60, capsys):
        rng = np.random.default_rng(4)
        a = FeatureSet(rng.normal(size=(200, 16)), "t")
        assert abs(fid(a, a)) < 1e-6
        for _ in range(50):
            xa = rng.normal(size=(int(rng.integers(10, 40)), 5)) * rng.uniform(0.5, 2.0)
            xb = rng.normal(loc=rng.normal(size=5), size=(int(rng.integers(10, 40)), 5))
            assert abs(fid(FeatureSet(xa, "t"), FeatureSet(xb, "t")) - fid_oracle(xa, xb)) < 1e-6
        for _ in range(20):  # dyadic inputs make every product exact, so equality is bitwise
            xa, xb = (rng.integers(-8, 9, size=(3, 4)) / 4.0 for _ in range(2))
            assert kid_x100(FeatureSet(xa, "t"), FeatureSet(xb, "t")) == kid_oracle(xa, xb)
        for seed in range(3):
            draw = np.random.default_rng([44, seed]).normal(size=(1000, 256))
            assert abs(kid_x100(FeatureSet(draw[:500], "t"), FeatureSet(draw[500:], "t"))) <= 0.5
        alphabet = "京沪ABC0123"
        for _ in range(100):
            pairs = []
            for _ in range(int(rng.integers(1, 30))):
                lab = "".join(rng.choice(list(alphabet), size=int(rng.integers(1, 9))))
                pred = lab if rng.random() < 0.4 else "".join(rng.choice(list(alphabet),
                                                                         size=int(rng.integers(0, 9))))
                pairs.append((pred, lab))
            res = [RecognitionResult(f"p{i}", p, lab) for i, (p, lab) in enumerate(pairs)]
            hits = sum(1 for p, lab in pairs if p == lab)
            assert ra(res) == 100.0 * hits / len(pairs)
            correct = sum(max(0, len(lab) - levenshtein_oracle(lab, p)) for p, lab in pairs)
            assert cra(res) == 100.0 * correct / sum(len(lab) for _, lab in pairs)


# ---------------------------------------------------------------- toy training runs


@pytest.fixture(scope="module")
def runs(toy_corpus, toy_bank, tmp_path_factory):
    """Toy runs per seed: ``full`` (mask weight 15), ``resumed`` (interrupted at 100) and ``nomask``."""
    root = tmp_path_factory.mktemp("runs")
    out = {"root": root, "seconds": {}}
    norm = compute_norm_stats(TrainingData(TrainConfig.toy(), toy_corpus, toy_bank).real_plates())
    for seed in SEEDS:
        configs = {"full": TrainConfig.toy(seed=seed), "nomask": TrainConfig.toy(seed=seed, mask_weight=0.0)}
        for kind, cfg in configs.items():
            t0 = time.perf_counter()
            data = TrainingData(cfg, toy_corpus, toy_bank, norm=norm)
            out[kind, seed] = (train(cfg, data, root / f"{kind}{seed}"), data)
            if kind == "full":
                resumed = root / f"resumed{seed}"
                train(cfg, TrainingData(cfg, toy_corpus, toy_bank, norm=norm), resumed, stop_after=100)
                train(cfg, TrainingData(cfg, toy_corpus, toy_bank, norm=norm), resumed)
                out["resumed", seed] = resumed
            out["seconds"][kind, seed] = time.perf_counter() - t0
    return out


def test_5_training_smoke(runs, capsys):
    spent = sum(v for (kind, _), v in runs["seconds"].items() if kind == "full")
    with criterion(5, "toy training: loss drop, finite parameters, bitwise resume", 15 * 60, capsys, spent):
        for seed in SEEDS:
            run_dir, _ = runs["full", seed]
            totals = [r["total"] for r in read_loss_log(run_dir / "losses.jsonl")]
            assert len(totals) == 200 and all(np.isfinite(totals))
            first, last = float(np.mean(totals[:10])), float(np.median(totals[-10:]))
            assert last <= 0.8 * first, f"seed {seed}: last-10 median {last:.3f} vs first-10 mean {first:.3f}"
            state = torch.load(latest_checkpoint(run_dir), weights_only=True)
            for part in state["params"].values():
                assert all(torch.isfinite(t).all() for t in part.values() if t.is_floating_point())
            resumed = runs["resumed", seed]
            assert (resumed / "losses.jsonl").read_bytes() == (run_dir / "losses.jsonl").read_bytes(), seed


def test_6_end_to_end_corpus(runs, toy_bank, tmp_path, capsys):
    with criterion(6, "generate/script-generate 100 images, labels, validate, support oracle", 120, capsys):
        ckpt = latest_checkpoint(runs["full", 0][0])
        gen_dir = tmp_path / "gen"
        assert run(["generate", "--checkpoint", str(ckpt), "--bank", str(toy_bank.root), "--out", str(gen_dir),
                    "--count", "100", "--seed", "21"]) == 0
        generated = load_manifest(gen_dir / "manifest.jsonl")
        forge = TextForge()
        sampled = [forge.sample(child.spawn(2)[0])[0].label for child in np.random.SeedSequence(21).spawn(100)]
        assert [r.label for r in generated.records] == sampled
        assert all(generated.image_path(r).exists() for r in generated.records)
        report = validate(generated)
        assert report.ok, report.violations[:3]

        scr_dir = tmp_path / "scr"
        assert run(["script-generate", "--bank", str(toy_bank.root), "--out", str(scr_dir), "--count", "100",
                    "--seed", "22"]) == 0
        script = load_manifest(scr_dir / "manifest.jsonl")
        assert validate(script).ok
        assert check_script_corpus(script, toy_bank) == 100


def test_7_dataset_split(capsys):
    with criterion(7, "9342-record split", 5, capsys):
        manifest = synthetic_manifest()
        a = split(manifest, 0.2, seed=3)
        test_ids = [r.plate_id for r in a.records if r.split == "test"]
        train_ids = [r.plate_id for r in a.records if r.split == "train"]
        assert len(test_ids) == 1868 and len(train_ids) == REFERENCE_SIZE - 1868
        assert set(test_ids).isdisjoint(train_ids)
        assert sorted(test_ids + train_ids) == sorted(r.plate_id for r in manifest.records)
        assert [replace(r, split=None) for r in a.records] == [replace(r, split=None) for r in manifest.records]
        assert split(manifest, 0.2, seed=3) == a
        assert split(manifest, 0.2, seed=4) != a


def held_out_mask_l1(run_dir, data, n=16) -> float:
    from elpr.trainer import load_checkpoint

    state = load_checkpoint(latest_checkpoint(run_dir))
    model = state.model.eval()
    values = []
    with torch.no_grad():
        for k in range(n):
            b = data.batch(10**6 + k)  # steps never reached in training
            values.append(mask_l1(b.i_mask, model.translate(b.x, b.y_bg), b.support).item())
    return float(np.mean(values))


def test_8_mask_loss_ablation(runs, capsys):
    spent = sum(runs["seconds"].values())
    with criterion(8, "mask-loss ablation: held-out mask L1 lower with weight 15 than 0", 30 * 60, capsys, spent):
        with_mask = [held_out_mask_l1(*runs["full", s]) for s in SEEDS]
        without = [held_out_mask_l1(*runs["nomask", s]) for s in SEEDS]
        med_with, med_without = float(np.median(with_mask)), float(np.median(without))
        with capsys.disabled():
            print(f"\n    held-out mask L1 per seed: weight 15 {np.round(with_mask, 4).tolist()}, "
                  f"weight 0 {np.round(without, 4).tolist()}")
        assert med_with < med_without, f"median {med_with:.4f} (weight 15) vs {med_without:.4f} (weight 0)"
