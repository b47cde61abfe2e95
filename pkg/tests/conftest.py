import numpy as np
import pytest

from audiostego.dataio import DatasetSpec, PairedCorpus, generate_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Two 64x64 images and two one-second clips, desk geometry."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    img_dir, wav_dir = generate_corpus(root, 2, 2, 64, 9000, seed=7)
    return PairedCorpus(DatasetSpec(str(img_dir), str(wav_dir), 64, 8192, pairing_seed=3))


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
