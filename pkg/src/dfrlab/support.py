"""Time-varying support estimation over demonstration time slices.

A separate one-class SVM is fit to the demonstration states observed at each
time index, so the estimated support tracks the nominal task progress.  A
pooled single-estimator baseline is provided for contrast: pooling mixes all
time slices, and any region visited only during a small fraction of the
horizon can fall below the nu quantile and be rejected outright.
"""

from dataclasses import dataclass, field
import json
import os

import numpy as np

from .errors import InsufficientDataError, InvalidInputError
from .kernel_ocsvm import (
    decision_value,
    lipschitz_bound,
    load_model,
    save_model,
    train_ocsvm,
)
from .util import as_generator, atomic_write_text, dump_json


@dataclass
class Trajectory:
    """Time-indexed states and the controls applied between them."""

    states: np.ndarray
    controls: np.ndarray
    seed: int = None
    outcome: str = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.controls = np.asarray(self.controls, dtype=float)
        if self.controls.size == 0:
            self.controls = self.controls.reshape(0, 0)
        if not np.isfinite(self.states).all():
            raise InvalidInputError("trajectory states contain non-finite values")
        if len(self.controls) != len(self.states) - 1:
            raise InvalidInputError(
                f"trajectory has {len(self.states)} states but "
                f"{len(self.controls)} controls; expected one control per step"
            )

    def __len__(self):
        return len(self.states)


@dataclass
class DemoSet:
    """A bag of demonstration trajectories with a shared state dimension."""

    trajectories: list

    def __post_init__(self):
        if not self.trajectories:
            raise InvalidInputError("a demo set needs at least one trajectory")
        dims = {traj.states.shape[1] for traj in self.trajectories}
        if len(dims) != 1:
            raise InvalidInputError(f"trajectories disagree on state dimension: {sorted(dims)}")

    def __len__(self):
        return len(self.trajectories)

    @property
    def state_dim(self):
        return self.trajectories[0].states.shape[1]

    @property
    def horizon(self):
        return max(1, max(len(t) for t in self.trajectories) - 1)

    def states_at(self, t):
        """All demonstration states observed at time index t."""
        rows = [traj.states[t] for traj in self.trajectories if len(traj) > t]
        if not rows:
            return np.empty((0, self.state_dim))
        return np.stack(rows)

    def all_states(self):
        return np.concatenate([traj.states for traj in self.trajectories])


@dataclass
class TimeVaryingSupport:
    """One estimator per demonstration time slice plus bookkeeping.

    projection is an index list selecting the state coordinates the
    estimators were trained on; lipschitz holds a Lipschitz bound of each
    slice's decision function.
    """

    estimators: list
    projection: np.ndarray
    lipschitz: np.ndarray = field(default=None)

    def __post_init__(self):
        self.projection = np.asarray(self.projection, dtype=int)
        if self.lipschitz is None:
            self.lipschitz = np.array([lipschitz_bound(e) for e in self.estimators])
        else:
            self.lipschitz = np.asarray(self.lipschitz, dtype=float)

    @property
    def horizon(self):
        return len(self.estimators)

    def estimator_index(self, t):
        if t < 0:
            raise InvalidInputError(f"time index must be >= 0, got {t}")
        return min(int(t), len(self.estimators) - 1)

    def g_at(self, t, x):
        """Decision value of the slice-t estimator (last slice reused past the end)."""
        x = np.asarray(x, dtype=float)
        model = self.estimators[self.estimator_index(t)]
        return decision_value(model, self._project(x, model))

    def lipschitz_at(self, t):
        return float(self.lipschitz[self.estimator_index(t)])

    def _project(self, x, model):
        if self.projection.size and self.projection.max() >= x.shape[0]:
            raise InvalidInputError(
                f"projection indices {self.projection.tolist()} do not fit a "
                f"state of dimension {x.shape[0]}"
            )
        projected = x[self.projection]
        if projected.shape[0] != model.dim:
            raise InvalidInputError(
                f"projected state has dimension {projected.shape[0]}, "
                f"estimator expects {model.dim}"
            )
        return projected


def _resolve_projection(projection, state_dim):
    if projection is None:
        return np.arange(state_dim)
    projection = np.asarray(projection, dtype=int)
    if projection.ndim != 1 or projection.size == 0:
        raise InvalidInputError("projection must be a nonempty index list")
    if projection.min() < 0 or projection.max() >= state_dim:
        raise InvalidInputError(
            f"projection {projection.tolist()} out of range for state dimension {state_dim}"
        )
    return projection


def fit_time_varying(demos, params, projection=None):
    """Fit one estimator per time slice t = 0 .. horizon-1."""
    projection = _resolve_projection(projection, demos.state_dim)
    estimators = []
    for t in range(demos.horizon):
        pts = demos.states_at(t)
        if len(pts) < 2:
            raise InsufficientDataError(
                f"time slice {t} has {len(pts)} demonstration state(s); need at least 2"
            )
        estimators.append(train_ocsvm(pts[:, projection], params))
    return TimeVaryingSupport(estimators=estimators, projection=projection)


def fit_pooled(demos, params, projection=None):
    """Fit a single estimator on all demonstration states regardless of time."""
    projection = _resolve_projection(projection, demos.state_dim)
    return train_ocsvm(demos.all_states()[:, projection], params)


def g_t(support, t, x):
    """Decision value of the time-t estimator at full state x."""
    return support.g_at(t, x)


def _ball_point(rng, center, radius):
    angle = rng.uniform(0.0, 2.0 * np.pi)
    r = radius * np.sqrt(rng.uniform())
    return center + r * np.array([np.cos(angle), np.sin(angle)])


def make_failure_demo(n_demos, T, seed):
    """Synthetic demos on which pooling fails but time-varying support works.

    Every trajectory starts inside a small ball B0 and spends the remaining T
    steps inside a far-away ball B1 (centers 10 apart).  B0 carries only a
    1/(T+1) fraction of the pooled training mass, so for T large relative to
    1/nu a pooled estimator rejects it, while the slice-0 estimator is
    trained on B0 alone.
    """
    if n_demos < 2 or T < 1:
        raise InvalidInputError(f"need n_demos >= 2 and T >= 1, got {n_demos}, {T}")
    rng = as_generator(seed)
    c0 = np.array([0.0, 0.0])
    c1 = np.array([10.0, 0.0])
    trajectories = []
    for _ in range(n_demos):
        states = [_ball_point(rng, c0, 0.1)]
        for _ in range(T):
            states.append(_ball_point(rng, c1, 0.1))
        states = np.stack(states)
        controls = np.diff(states, axis=0)
        trajectories.append(Trajectory(states=states, controls=controls, seed=int(seed), outcome="completed"))
    return DemoSet(trajectories=trajectories)


BUNDLE_FORMAT = "support-bundle"


def save_support(support, directory):
    """Write a bundle directory: manifest.json plus one model file per slice."""
    os.makedirs(directory, exist_ok=True)
    first = support.estimators[0]
    manifest = {
        "format": BUNDLE_FORMAT,
        "version": 1,
        "horizon": support.horizon,
        "projection": support.projection.tolist(),
        "lipschitz": [float(v) for v in support.lipschitz],
        "params": {"nu": float(first.nu), "gamma": float(first.kernel.gamma)},
        "slices": [f"slice_{t:03d}.json" for t in range(support.horizon)],
    }
    for name, model in zip(manifest["slices"], support.estimators):
        save_model(model, os.path.join(directory, name))
    atomic_write_text(os.path.join(directory, "manifest.json"), dump_json(manifest))


def load_support(directory):
    manifest_path = os.path.join(directory, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read bundle manifest {manifest_path}: {exc}") from exc
    if manifest.get("format") != BUNDLE_FORMAT:
        raise InvalidInputError(f"{manifest_path} is not a support bundle manifest")
    estimators = [load_model(os.path.join(directory, name)) for name in manifest["slices"]]
    if len(estimators) != manifest["horizon"]:
        raise InvalidInputError("bundle manifest horizon disagrees with slice count")
    return TimeVaryingSupport(
        estimators=estimators,
        projection=np.asarray(manifest["projection"], dtype=int),
        lipschitz=np.asarray(manifest["lipschitz"], dtype=float),
    )
