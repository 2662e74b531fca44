"""Recover a Fourier-sparse motion field from a handful of sampled sites.

A few random atoms of the 3D DFT make up the field; we keep 20% of the
spatial sites (all frames) and solve the LASSO at a tiny penalty.
"""

import numpy as np

from uwrestore import cs_mvf as cs

rng = np.random.default_rng(0)
shape = (8, 16, 16)
theta = np.zeros(shape, complex)
idx = rng.choice(theta.size, 5, replace=False)
theta.flat[idx] = rng.normal(size=5) + 1j * rng.normal(size=5)
field = cs.synthesize(theta)

sites = rng.choice(shape[1] * shape[2], int(0.2 * shape[1] * shape[2]), replace=False)
iy, ix = np.unravel_index(sites, shape[1:])
t = np.repeat(np.arange(shape[0]), len(sites))
iy, ix = np.tile(iy, shape[0]), np.tile(ix, shape[0])
plan = cs.SamplingPlan(shape, t, iy, ix, field[t, iy, ix])

print(f"{len(sites)} of {shape[1] * shape[2]} sites, {len(plan)} measurements")
print(f"scaled coherence of the sampled rows: {cs.coherence(plan):.3f} (1 is the best possible)")
res = cs.solve_lasso(plan, 1e-4 * cs.max_correlation(plan))
err = np.linalg.norm(cs.synthesize(res.theta) - field) / np.linalg.norm(field)
print(f"{res.n_iter} iterations, {res.restarts} restarts, relative field error {err:.2e}")
print("largest recovered bins:", sorted(np.argsort(np.abs(res.theta).ravel())[-5:].tolist()))
print("true bins:             ", sorted(idx.tolist()))
