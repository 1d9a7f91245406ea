import numpy as np
import pytest

from emsca.spectral import SpectralDataset, StftConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_dataset(n_per_class, n_classes, width=8, seed=0, separation=3.0):
    """Gaussian blobs, one per class, offset along distinct feature axes."""
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for c in range(n_classes):
        x = rng.standard_normal((n_per_class, width))
        x[:, c % width] += separation
        feats.append(x)
        labels.append(np.full(n_per_class, c))
    cfg = StftConfig(fft_size=width if width & (width - 1) == 0 else 8)
    return SpectralDataset(np.concatenate(feats).astype(np.float32), np.concatenate(labels),
                           [f"c{c}" for c in range(n_classes)], None, cfg)


SMALL_HIDDEN = (96, 48)
SMALL_WINDOWS = 80


@pytest.fixture(scope="session")
def desk_cfg():
    from emsca.synth import builtin_config
    return builtin_config("desk")


@pytest.fixture(scope="session")
def small_corpus(desk_cfg):
    """All desk devices and sessions at full STFT width but few windows."""
    from emsca.synth import corpus_from_config
    return corpus_from_config(desk_cfg, seed=3, windows_per_activity=SMALL_WINDOWS)


@pytest.fixture(scope="session")
def small_splits(small_corpus):
    from emsca.dataset import SplitSpec, split
    return {key: split(ds, SplitSpec(seed=3)) for key, ds in small_corpus.items()}


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
