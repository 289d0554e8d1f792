import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "qnet", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("qnet")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def brute_force_simplex(v):
    """Nearest point of the probability simplex by enumerating supports (KKT on each face)."""
    import itertools

    v = np.asarray(v, dtype=float)
    n = v.size
    best, best_d = None, np.inf
    for k in range(1, n + 1):
        for s in itertools.combinations(range(n), k):
            s = list(s)
            p = np.zeros(n)
            p[s] = v[s] - (v[s].sum() - 1) / k
            if (p >= -1e-12).all():
                d = np.linalg.norm(p - v)
                if d < best_d:
                    best, best_d = np.clip(p, 0, None), d
    return best


#: filled by the acceptance tests, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
