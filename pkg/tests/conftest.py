import numpy as np
import pytest

from elpr.background_bank import harvest_templates, load_bank, save_bank
from elpr.imaging import load_png
from elpr.toydata import make_toy_corpus


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    return make_toy_corpus(tmp_path_factory.mktemp("toy"), 12, seed=0)


@pytest.fixture(scope="session")
def toy_bank(toy_corpus, tmp_path_factory):
    templates = []
    for i, rec in enumerate(toy_corpus.records):
        templates += harvest_templates(load_png(toy_corpus.image_path(rec)), rec.plate_bbox, 4, (64, 64),
                                       seed=i, source_id=rec.plate_id)
    path = tmp_path_factory.mktemp("bank")
    save_bank(templates, path)
    return load_bank(path)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
