import numpy as np
import pytest

from weaksep.datagrid import GridAxis, MultiwayDataset


def random_dataset(rng, n, ns, nt, nonuniform=False, scale=1.0):
    """Gaussian surfaces with a decaying random covariance on a small grid."""
    if nonuniform:
        s = np.sort(rng.uniform(0, 1, ns)) + np.arange(ns) * 1e-3
        t = np.cumsum(rng.uniform(0.5, 1.5, nt))
    else:
        s, t = np.linspace(0, 1, ns), np.linspace(0, 2, nt)
    A = rng.standard_normal((ns * nt, ns * nt)) * np.exp(-0.3 * np.arange(ns * nt))
    X = rng.standard_normal((n, ns * nt)) @ A.T
    return MultiwayDataset(scale * X.reshape(n, ns, nt), GridAxis(s), GridAxis(t))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    lines = request.config._acceptance_lines

    def record(label, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


def design_dataset(eta, psi, phi, s_axis, t_axis):
    """Surfaces whose empirical scores have second moments exactly ``eta``.

    Score columns are distinct non-constant Hadamard columns, so they are
    mean zero and mutually orthogonal: all empirical cross-moments vanish.
    """
    from scipy.linalg import hadamard

    P, K = eta.shape
    n = 1 << int(np.ceil(np.log2(P * K + 1)))
    H = hadamard(n).astype(float)[:, 1:P * K + 1]
    chi = (H * np.sqrt(eta.ravel())).reshape(n, P, K)
    X = np.einsum("sj,ijk,tk->ist", psi, chi, phi)
    return MultiwayDataset(X, s_axis, t_axis), chi


def orthonormal_columns(rng, axis, count):
    """Random columns orthonormal in the axis quadrature inner product."""
    sw = np.sqrt(axis.weights)
    q, _ = np.linalg.qr(rng.standard_normal((len(axis), count)))
    return q / sw[:, None]
