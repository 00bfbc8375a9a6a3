import numpy as np
import pytest

from mmhash.config import TrainConfig
from mmhash.dataio import generate_synthetic

ACCEPTANCE_LINES = []


def numeric_grad(f, x, eps=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        up = f()
        x[idx] = orig - eps
        down = f()
        x[idx] = orig
        g[idx] = (up - down) / (2 * eps)
    return g


def max_rel_error(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    mask = np.abs(analytic) > floor
    # a coordinate the analytic path calls ~zero must be ~zero numerically too
    assert np.all(np.abs(numeric[~mask]) < 1e-6), "numeric gradient nonzero where analytic vanishes"
    if not mask.any():
        return 0.0
    a, n = analytic[mask], numeric[mask]
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a), np.abs(n))))


@pytest.fixture(scope="session")
def synth():
    return generate_synthetic(4, 100, 32, 0.1, 42)


@pytest.fixture(scope="session")
def synth_config():
    return TrainConfig(code_bits=16, vision_dim=32, text_dim=32)


@pytest.fixture
def acceptance_report():
    def report(criterion, ok, detail=""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-10):
    # float64 central differences at step 1e-5 carry ~1e-11 absolute noise
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)
