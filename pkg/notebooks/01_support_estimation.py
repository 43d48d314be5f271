# %% [markdown]
# # Estimating where the data lives
#
# The whole laboratory rests on one primitive: a kernel one-class estimator
# whose decision function g is positive on the region occupied by training
# points and negative away from it.  This script fits one on a 2D Gaussian
# cloud and pokes at the three properties everything downstream relies on:
# the nu knob, the boundary, and the global slope bound.

# %%
import numpy as np

from dfrlab.kernel_ocsvm import (
    KernelParams,
    OcsvmParams,
    decision_values,
    lipschitz_bound,
    model_dual_objective,
    solve_dual_bruteforce,
    train_ocsvm,
)

rng = np.random.default_rng(0)
X = rng.normal(size=(500, 2))
params = OcsvmParams(nu=0.05, kernel=KernelParams(gamma=0.5))
model = train_ocsvm(X, params)
print(f"{len(model.alphas)} support vectors out of {len(X)} points, rho = {model.rho:.4f}")

# %% [markdown]
# ## The nu knob
#
# nu upper-bounds the fraction of training points left outside (g < 0) and
# lower-bounds the fraction kept as support vectors.  With nu = 0.05 both
# fractions should straddle five percent.

# %%
g = decision_values(model, X)
print(f"training outliers: {(g < 0).mean():.3f}  (nu = {params.nu})")
print(f"support vectors:   {len(model.alphas) / len(X):.3f}")

# %% [markdown]
# ## A picture in ASCII
#
# Sampling g on a grid shows the contour hugging the cloud.  '#' is inside
# (g >= 0), '.' is outside.

# %%
for y in np.linspace(2.5, -2.5, 15):
    row = ""
    for x in np.linspace(-3.0, 3.0, 48):
        gv = decision_values(model, np.array([[x, y]]))[0]
        row += "#" if gv >= 0 else "."
    print(row)

# %% [markdown]
# ## The slope bound
#
# Each decision value comes with a certificate: g cannot change faster than
# the Lipschitz constant L.  Sampled finite differences stay below it.

# %%
L = lipschitz_bound(model)
worst = 0.0
for _ in range(2000):
    a = rng.normal(size=2) * 1.5
    b = a + rng.normal(size=2) * 1e-3
    ga, gb = decision_values(model, np.stack([a, b]))
    worst = max(worst, abs(gb - ga) / np.linalg.norm(b - a))
print(f"max sampled slope {worst:.4f} <= L = {L:.4f}")

# %% [markdown]
# ## Two solvers, one optimum
#
# The production solver is pairwise coordinate descent; a projected-gradient
# reference solves tiny instances independently.  Their dual objectives must
# agree to machine precision, which guards each against the other's bugs.

# %%
gaps = []
for seed in range(20):
    r = np.random.default_rng(seed)
    pts = r.normal(size=(int(r.integers(3, 9)), 2))
    p = OcsvmParams(nu=0.5, kernel=KernelParams(gamma=1.0))
    gaps.append(abs(model_dual_objective(train_ocsvm(pts, p))
                    - model_dual_objective(solve_dual_bruteforce(pts, p))))
print(f"max dual objective gap over 20 instances: {max(gaps):.3g}")
