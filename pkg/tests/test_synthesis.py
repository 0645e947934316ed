import numpy as np
import pytest

from elpr.background_bank import BankManifest
from elpr.dataset_io import load_manifest, validate
from elpr.errors import EmptyBank
from elpr.imaging import load_png, resize
from elpr.synthesis import contact_sheet, generate_corpus, script_corpus, text_corpus
from elpr.text_forge import TextForge
from elpr.toydata import make_scene
from elpr.trainer import NormStats, TrainConfig, new_state

from helpers import check_script_corpus


def test_script_corpus_matches_support_oracle(tmp_path, toy_bank):
    m = script_corpus(toy_bank, 6, 11, tmp_path)
    assert validate(m).ok and len(m) == 6
    check_script_corpus(m, toy_bank)


def test_script_corpus_is_deterministic(tmp_path, toy_bank):
    a = script_corpus(toy_bank, 3, 5, tmp_path / "a", preview=False)
    b = script_corpus(toy_bank, 3, 5, tmp_path / "b", preview=False)
    assert [r.label for r in a.records] == [r.label for r in b.records]
    for ra, rb in zip(a.records, b.records):
        assert np.array_equal(load_png(a.image_path(ra)), load_png(b.image_path(rb)))


def test_generated_corpus_labels_follow_the_seed(tmp_path, toy_bank):
    cfg = TrainConfig.toy(image_size=32, text_channels=8, bg_channels=8, res_blocks=1)
    state = new_state(cfg, NormStats((0.5,) * 3, (0.25,) * 3))
    m = generate_corpus(state, toy_bank, 20, 4, tmp_path / "g")
    # item i depends on child i only, so a shorter run reproduces the prefix
    m3 = generate_corpus(state, toy_bank, 3, 4, tmp_path / "h", preview=False)
    assert [r.label for r in m.records[:3]] == [r.label for r in m3.records]
    for ra, rb in zip(m.records[:3], m3.records):
        assert np.array_equal(load_png(m.image_path(ra)), load_png(m3.image_path(rb)))
    assert validate(m).ok and load_png(m.image_path(m.records[0])).shape == (32, 32, 3)


def test_empty_bank_is_rejected(tmp_path):
    empty = BankManifest((), tmp_path)
    with pytest.raises(EmptyBank):
        script_corpus(empty, 1, 0, tmp_path / "s")
    assert len(script_corpus(empty, 0, 0, tmp_path / "z", preview=False)) == 0


def test_text_corpus_masks_match_their_text(tmp_path):
    forge = TextForge()
    m = text_corpus(4, 2, tmp_path, forge)
    assert validate(m).ok
    for rec in m.records:
        support = load_png(tmp_path / rec.extra["support"]) > 0
        assert support.shape[:2] == (256, 512) and support.any()


def test_contact_sheet_shapes():
    assert contact_sheet([]).shape == (64, 64, 3)
    sheet = contact_sheet([np.zeros((32, 64, 3), np.uint8)] * 5, cols=2, height=16)
    assert sheet.shape == (2 * 18, 2 * 34, 3)  # capped at cols * cols tiles


def test_toy_scene_is_deterministic_and_boxed():
    a, box, label, tags = make_scene(7)
    b, *_ = make_scene(7)
    assert np.array_equal(a, b)
    x, y, w, h = box
    assert 0 <= x and x + w <= a.shape[1] and 0 <= y and y + h <= a.shape[0]
    assert len(label) == 7
