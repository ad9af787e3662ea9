import numpy as np
import pytest

from loga import tensor as T
from loga.config import DatasetConfig
from loga.datagen import Dataset, generate_dataset


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function of ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


def check_grads(build, *arrays, rtol=1e-6, atol=1e-8, seed=0):
    """Compare backprop against central differences for ``sum(build(*tensors) * R)``."""
    tensors = [T.Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    out = build(*tensors)
    weights = np.random.default_rng(seed).normal(size=out.shape)

    def value():
        return float((build(*tensors).data * weights).sum())

    loss = T.sum(T.mul(out, T.Tensor(weights, dtype=np.float64)))
    loss.backward()
    for t in tensors:
        expected = numeric_grad(value, t.data)
        got = t.grad if t.grad is not None else np.zeros_like(t.data)
        np.testing.assert_allclose(got, expected, rtol=rtol, atol=atol)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    cfg = DatasetConfig(num_identities=8, train_identities=4, tracklets_per_identity=4, frames_per_tracklet=20, height=16, width=8, seed=3)
    root = tmp_path_factory.mktemp("small") / "data"
    generate_dataset(cfg, root)
    return Dataset.load(root)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
