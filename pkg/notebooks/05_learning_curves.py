# %% [markdown]
# # Does recovery pay for itself?
#
# The learning-curve experiment pits four controllers against each other on
# point_push across a grid of demonstration counts: the scripted supervisor
# (sanity ceiling), the bare cloned policy (baseline), early stopping (es,
# freeze on trigger), and recovery (dfr).  Every cell refits the support and
# the policy from scratch, and all controllers share eval seeds so the
# comparison is paired.

# %%
from collections import defaultdict
from importlib.resources import files

from dfrlab.harness import load_experiment_config, run_learning_curve, wilson_interval

cfg = load_experiment_config(
    str(files("dfrlab").joinpath("data").joinpath("exp_point_push_learning_curve.json"))
)
print(f"env={cfg.env} grid={cfg.demo_grid} trials={cfg.trials} "
      f"eval_samples={cfg.eval_samples} lambda={cfg.lam}")

# %%
result = run_learning_curve(cfg)

# %% [markdown]
# ## Completion and collision along the curve
#
# Fractions are pooled over trials; brackets are 95% Wilson intervals.

# %%
pool = defaultdict(lambda: {"n": 0, "completed": 0, "collided": 0})
for row in result["rows"]:
    cell = pool[(row["controller"], row["demo_count"])]
    cell["n"] += row["n"]
    cell["completed"] += row["completed"]
    cell["collided"] += row["collided"]

print(f"{'controller':>10} {'demos':>5} {'complete':>22} {'collide':>22}")
for (kind, n_demo) in sorted(pool, key=lambda k: (k[0], k[1])):
    c = pool[(kind, n_demo)]
    clo, chi = wilson_interval(c["completed"], c["n"])
    xlo, xhi = wilson_interval(c["collided"], c["n"])
    print(f"{kind:>10} {n_demo:>5} "
          f"{c['completed'] / c['n']:.3f} [{clo:.3f}, {chi:.3f}]   "
          f"{c['collided'] / c['n']:.3f} [{xlo:.3f}, {xhi:.3f}]")

# %% [markdown]
# ## The claims, as gates
#
# Two headline gates compare dfr to baseline over the pooled runs: its
# collision upper bound must sit at or below half of baseline's lower bound,
# and it must keep at least half of baseline's completion rate.  Two more
# check that es does not collide more than dfr and that the supervisor
# completes everything.

# %%
for name, gate in result["gates"].items():
    mark = "pass" if gate["passed"] else "FAIL"
    print(f"{mark}  {name}: {gate['detail']}")

# %%
agg = result["aggregates"]
print(f"pooled collision reduction vs baseline: {agg['collision_reduction_ratio']:.3f}")
print(f"per-count dfr/baseline completion interval overlap: "
      f"{agg['completion_interval_overlap']}")
print(f"episodes per controller: {agg['per_controller']['dfr']['n']}")
