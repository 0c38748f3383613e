import time

import numpy as np
import pytest

from fcpflow.flowcore import FlowModel


def randomize(model: FlowModel, seed=0, scale=0.3):
    """Give every coupling network non-zero weights so the layers do real work."""
    rng = np.random.default_rng(seed)
    for blk in model.blocks:
        for net in blk.coupling.nets().values():
            for p in net.parameters():
                p.value[...] = scale * rng.standard_normal(p.value.shape)
    return model


def numeric_jacobian(f, x, step=1e-6):
    """Central-difference Jacobian of a map R^T -> R^T at the row vector ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    T = x.shape[1]
    J = np.empty((T, T))
    for j in range(T):
        e = np.zeros_like(x)
        e[0, j] = step
        J[:, j] = (f(x + e) - f(x - e)).reshape(-1) / (2 * step)
    return J


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance check, echoed in the terminal summary
ACCEPTANCE: list[str] = []
SUITE_BUDGET_S = 600.0


def check(criterion, label, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {label}" + (f" ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def pytest_sessionstart(session):
    session.config._fcp_t0 = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    elapsed = time.perf_counter() - config._fcp_t0
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)
    ok = elapsed < SUITE_BUDGET_S
    terminalreporter.write_line(
        f"[{'PASS' if ok else 'FAIL'}] criterion 10: full session runtime {elapsed:.1f} s < {SUITE_BUDGET_S:.0f} s"
    )
