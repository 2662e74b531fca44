import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import sparse_instance
from uwrestore import cs_mvf as cs
from uwrestore import wave_sim as ws
from uwrestore.errors import DataError, NumericalError
from uwrestore.tracking import DisplacementTrajectory


def dt(anchor, offsets, pid=0):
    return DisplacementTrajectory(np.asarray(anchor, float), np.asarray(offsets, float), pid)


def scattered_dts(n_frames=4, count=12, value=0.0):
    return [dt((16 * i, 8 * (i % 3)), np.full((n_frames, 2), value), i) for i in range(count)]


# -- plans -----------------------------------------------------------------


def test_plan_single_zero_trajectory():
    plan = cs.build_plan([dt((10, 12), np.zeros((5, 2)))], (64, 64), 5, downsample=8, min_sites=1)
    assert len(plan) == 5
    assert np.all(plan.e == 0)
    assert len({(a, b) for a, b in zip(plan.iy, plan.ix)}) == 1


def test_plan_collisions_are_averaged():
    v = np.array([[1.0, -2.0], [0.5, 0.25], [3.0, 1.0]])
    dts = [dt((17, 9), v, 0), dt((15.2, 7.4), -v, 1)] + [dt((40 + 8 * i, 40), v, 2 + i) for i in range(8)]
    plan = cs.build_plan(dts, (128, 128), 3)
    at = (plan.iy == 1) & (plan.ix == 2)
    assert at.sum() == 3
    assert np.all(plan.e[at] == 0)


def test_plan_degenerate_sampling_rejected():
    dts = [dt((3 + 0.1 * i, 4), np.zeros((3, 2)), i) for i in range(20)]
    with pytest.raises(DataError):
        cs.build_plan(dts, (64, 64), 3)


def test_plan_default_coarse_grid():
    plan = cs.build_plan(scattered_dts(101), (256, 256), 101)
    assert plan.shape == (101, 32, 32)
    assert cs.coarse_size(256, 8) == 32


def test_plan_measurement_values():
    off = np.array([[1.0, 2.0], [-3.0, 0.5]])
    dts = [dt((8 * i, 8 * i), off * (i + 1), i) for i in range(8)]
    plan = cs.build_plan(dts, (64, 64), 2)
    for i in range(8):
        sel = (plan.ix == i) & (plan.iy == i)
        assert np.allclose(plan.e[sel], (i + 1) * (off[:, 0] + 1j * off[:, 1]))


def test_plan_validates_sites():
    with pytest.raises(DataError):
        cs.SamplingPlan((2, 3, 3), [0, 0], [1, 1], [1, 1], [0, 0])
    with pytest.raises(DataError):
        cs.SamplingPlan((2, 3, 3), [2], [0], [0], [0])


# -- operators -------------------------------------------------------------


def test_forward_of_zero_is_zero():
    _, plan = sparse_instance()
    assert np.all(cs.forward(np.zeros(plan.shape, complex), plan) == 0)


def test_dc_atom_with_full_sampling():
    shape = (4, 3, 5)
    n = int(np.prod(shape))
    t, y, x = (a.ravel() for a in np.meshgrid(*map(np.arange, shape), indexing="ij"))
    plan = cs.SamplingPlan(shape, t, y, x, np.zeros(n))
    theta = np.zeros(shape, complex)
    theta[0, 0, 0] = 1.0
    assert np.allclose(cs.forward(theta, plan), 1 / np.sqrt(n), atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adjoint_identity(seed):
    r = np.random.default_rng(seed)
    shape = (4, 8, 8)
    keep = r.random(shape) < 0.3
    keep.flat[0] = True
    t, y, x = np.nonzero(keep)
    plan = cs.SamplingPlan(shape, t, y, x, np.zeros(len(t)))
    theta = r.normal(size=shape) + 1j * r.normal(size=shape)
    res = r.normal(size=len(t)) + 1j * r.normal(size=len(t))
    lhs = np.vdot(cs.forward(theta, plan), res)
    rhs = np.vdot(theta, cs.adjoint(res, plan))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_operator_norm_at_most_one():
    _, plan = sparse_instance(3)
    v = np.random.default_rng(0).normal(size=plan.shape) + 0j
    for _ in range(50):
        v = cs.adjoint(cs.forward(v, plan), plan)
        v /= np.linalg.norm(v)
    assert np.linalg.norm(cs.forward(v, plan)) <= 1 + 1e-12


def test_coherence_lower_bound():
    _, plan = sparse_instance()
    assert cs.coherence(plan, max_sites=50) == pytest.approx(1.0, abs=1e-12)


# -- LASSO -----------------------------------------------------------------


def test_zero_measurements_give_zero_solution():
    _, plan = sparse_instance()
    plan.e[:] = 0
    res = cs.solve_lasso(plan, 0.1)
    assert np.all(res.theta == 0)


def test_exact_recovery_small_grid():
    theta, plan = sparse_instance(0)
    lam = 1e-4 * cs.max_correlation(plan)
    start = time.perf_counter()
    res = cs.solve_lasso(plan, lam)
    elapsed = time.perf_counter() - start
    truth = cs.synthesize(theta)
    err = np.linalg.norm(cs.synthesize(res.theta) - truth) / np.linalg.norm(truth)
    assert err <= 1e-3
    assert elapsed < 5


@pytest.mark.parametrize("seed", range(4))
def test_objective_monotone_and_kkt(seed):
    theta, plan = sparse_instance(seed)
    plan.e += 0.01 * (np.random.default_rng(seed).normal(size=len(plan)) + 0j)
    lam = 1e-2 * cs.max_correlation(plan)
    res = cs.solve_lasso(plan, lam, max_iters=5000, tol=1e-12)
    assert np.all(np.diff(res.objective) <= 0)
    grad = cs.adjoint(plan.e - cs.forward(res.theta, plan), plan)
    assert np.abs(grad).max() <= lam / 2 * (1 + 1e-3)
    # on the support the subgradient is tight: grad = lam/2 * sign(theta)
    on = np.abs(res.theta) > 1e-8
    expected = lam / 2 * res.theta[on] / np.abs(res.theta[on])
    assert np.allclose(grad[on], expected, atol=1e-3 * lam)


def test_solver_log(tmp_path):
    _, plan = sparse_instance()
    res = cs.solve_lasso(plan, 1e-3, max_iters=20)
    res.write_log(tmp_path / "log.txt")
    lines = (tmp_path / "log.txt").read_text().splitlines()
    assert lines[1] == "iteration objective relative_change"
    assert len(lines) == 2 + len(res.objective)


def test_non_finite_measurements_raise():
    _, plan = sparse_instance()
    plan.e[3] = np.nan
    with pytest.raises(NumericalError):
        cs.solve_lasso(plan, 0.1)


def test_solver_params_validation():
    with pytest.raises(ValueError):
        cs.SolverParams(lam=-1)
    with pytest.raises(ValueError):
        cs.SolverParams(cv_holdout=1.0)
    with pytest.raises(ValueError):
        cs.SolverParams(downsample=3)


# -- cross-validation ------------------------------------------------------


def test_cv_single_candidate():
    _, plan = sparse_instance()
    out = cs.cross_validate(plan, cs.SolverParams(lambda_grid=(0.02,)))
    assert out.lam == 0.02
    assert out.result.lam == 0.02


def test_cv_picks_smallest_on_noiseless_instance():
    _, plan = sparse_instance(1)
    params = cs.SolverParams(seed=3)
    out = cs.cross_validate(plan, params)
    grid = cs.default_lambda_grid(plan, params)
    assert out.lam == min(grid)
    # full sweep oracle: holdout error falls as the sparsity pressure is removed
    ordered = [out.scores[g] for g in sorted(grid, reverse=True)]
    assert np.all(np.diff(ordered) < 0)


def test_cv_deterministic():
    _, plan = sparse_instance(2)
    a = cs.cross_validate(plan, cs.SolverParams(seed=5))
    b = cs.cross_validate(plan, cs.SolverParams(seed=5))
    assert a.lam == b.lam
    assert np.array_equal(a.result.theta, b.result.theta)


def test_cv_needs_twenty_measurements():
    _, plan = sparse_instance()
    with pytest.raises(DataError):
        cs.cross_validate(plan.subset(np.arange(len(plan)) < 10))


def test_default_grid_spacing():
    _, plan = sparse_instance()
    grid = np.array(cs.default_lambda_grid(plan))
    scale = cs.max_correlation(plan)
    assert len(grid) == 8
    assert grid.min() == pytest.approx(1e-4 * scale)
    assert grid.max() == pytest.approx(1e-1 * scale)
    assert np.allclose(np.diff(np.log(grid)), np.log(1e3) / 7)


# -- reconstruction --------------------------------------------------------


def test_reconstruct_zero_and_identity():
    assert np.all(cs.reconstruct_field(np.zeros((3, 5, 5), complex), (33, 33), 8).values == 0)
    theta = np.random.default_rng(0).normal(size=(3, 6, 7)) + 0j
    field = cs.reconstruct_field(theta, (6, 7), 1).values
    assert np.allclose(field, cs.synthesize(theta))


def test_reconstruct_band_limited_field():
    model = ws.random_model(0, n_waves=3, target_sigma_motion=6.0, width=256, height=256)
    assert min(2 * np.pi / np.hypot(*w.wavevector) for w in model.waves) >= 32
    truth = ws.displacement_field(model, 256, 256, 6).values
    coarse = truth[:, ::8, ::8]
    field = cs.reconstruct_field(cs.analyze(coarse), (256, 256), 8).values
    rms = np.sqrt(np.mean(np.abs(field - truth)[:, :249, :249] ** 2))
    assert rms <= 0.15


def test_energy_fraction():
    theta = np.zeros((4, 4, 4), complex)
    theta[0, 0, 0] = 10
    theta[1, 1, 1] = 2  # energies 100 and 4
    assert cs.energy_fraction(theta, 0.99) == 2 / 64
    assert cs.energy_fraction(theta, 0.9) == 1 / 64
    assert cs.energy_fraction(np.zeros(8)) == 0.0
