import numpy as np
import pytest

from uwrestore import wave_sim

# criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion, passed, detail=""):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"[acceptance] {criterion}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def texture128():
    return wave_sim.make_scene("mixed", 128, seed=3)


def analytic_texture(x, y):
    """Smooth band-limited test image with values inside (0, 1)."""
    return (0.5 + 0.2 * np.sin(x / 5.0 + 0.3 * y / 7.0) + 0.15 * np.cos(y / 4.3 - x / 9.0)
            + 0.1 * np.sin((x + y) / 6.1))


def sparse_instance(seed=0, shape=(8, 16, 16), n_atoms=5, site_fraction=0.2):
    """Random s-sparse coefficient volume observed at a fraction of spatial sites, all frames."""
    from uwrestore import cs_mvf

    r = np.random.default_rng(seed)
    T, H, W = shape
    theta = np.zeros(shape, dtype=complex)
    idx = r.choice(theta.size, n_atoms, replace=False)
    theta.flat[idx] = r.normal(size=n_atoms) + 1j * r.normal(size=n_atoms)
    n_sites = int(round(site_fraction * H * W))
    sites = r.choice(H * W, n_sites, replace=False)
    iy, ix = np.unravel_index(sites, (H, W))
    tt = np.tile(np.arange(T), n_sites)
    iy, ix = np.repeat(iy, T), np.repeat(ix, T)
    field = cs_mvf.synthesize(theta)
    plan = cs_mvf.SamplingPlan(shape, tt, iy, ix, field[tt, iy, ix])
    return theta, plan
