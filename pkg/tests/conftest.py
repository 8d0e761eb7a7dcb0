import numpy as np
import pytest

from cfrformer.autodiff import Tensor


def fd_gradient(fn, arrays, step=1e-4):
    """Central-difference gradient of scalar ``fn(*arrays)`` w.r.t. every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = fn(*arrays)
            flat[i] = old - step
            down = fn(*arrays)
            flat[i] = old
            gflat[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def rel_error(a, b, floor=1e-4):
    """Norm-wise relative error; ``floor`` keeps identically-zero gradients
    (e.g. attention key biases, which softmax cancels) from dividing by noise."""
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(build, arrays, step=1e-4):
    """Compare reverse-mode gradients of ``build(*tensors)`` with finite differences.

    Returns the worst relative error over all inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    build(*tensors).backward()
    analytic = [t.grad for t in tensors]

    def value(*xs):
        return build(*[Tensor(x) for x in xs]).item()

    numeric = fd_gradient(value, arrays, step)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria suite")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
