"""Switched Markov process model.

An observed chain follows the pre-change kernel until an unobservable,
geometrically distributed time ``theta`` and the post-change kernel from then
on, with the first post-change step drawn from the row of the state occupied
at ``theta - 1``.  This module defines the model types, validation, the
likelihood-ratio table and seeded trajectory sampling.

All types are immutable after construction and all operations are pure given
their inputs and seeds, so they are safe to share across threads.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROW_SUM_TOL = 1e-12

_MODEL_KEYS = {"states", "pre", "post", "p", "d", "x0"}


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class StateSpace:
    """Finite state space with distinct labels."""

    labels: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class MarkovKernel:
    """Row-stochastic transition table; ``probs[i, j]`` is P(i -> j)."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _readonly(self.probs))

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    def row(self, i: int) -> np.ndarray:
        return self.probs[i]


@dataclass(frozen=True)
class GeometricPrior:
    """Prior on the switch time: P(theta = j) = p^(j-1) * q with q = 1 - p."""

    p: float

    @property
    def q(self) -> float:
        return 1.0 - self.p


@dataclass(frozen=True)
class DisorderModel:
    """Two kernels, geometric prior, detection window and initial state.

    ``d`` is the detection tolerance: a stop at ``tau`` counts as a success
    when ``|theta - tau| <= d``.  ``x0`` indexes the (deterministic) state at
    time 0.
    """

    space: StateSpace
    pre: MarkovKernel
    post: MarkovKernel
    prior: GeometricPrior
    d: int
    x0: int

    @property
    def n_states(self) -> int:
        return self.space.size

    @property
    def p(self) -> float:
        return self.prior.p

    @property
    def q(self) -> float:
        return self.prior.q


@dataclass(frozen=True)
class LikelihoodRatioTable:
    """Elementwise post/pre transition ratios.

    ``ratios[i, j]`` is ``+inf`` where only the pre-change probability is
    zero.  Entries where both kernels are zero are unobservable transitions;
    they are flagged in ``undefined`` and hold ``nan``.
    """

    ratios: np.ndarray
    undefined: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ratios", _readonly(self.ratios))
        u = np.asarray(self.undefined, dtype=bool)
        u.flags.writeable = False
        object.__setattr__(self, "undefined", u)

    def diagnostics(self) -> list[str]:
        """One note per unobservable (both-zero) transition."""
        out = []
        for i, j in zip(*np.nonzero(self.undefined)):
            out.append(
                f"transition {i}->{j} impossible under both kernels; "
                "ratio undefined (transition can never be observed)"
            )
        return out


@dataclass(frozen=True)
class Trajectory:
    """A sampled path together with its ground-truth switch time."""

    theta: int
    states: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.int64)
        s.flags.writeable = False
        object.__setattr__(self, "states", s)

    @property
    def horizon(self) -> int:
        return len(self.states) - 1


def _kernel_diagnostics(name: str, kernel: MarkovKernel, n: int) -> list[str]:
    diags = []
    probs = kernel.probs
    if probs.ndim != 2 or probs.shape != (n, n):
        diags.append(f"{name} kernel shape {probs.shape} does not match state space size {n}")
        return diags
    if np.any(probs < 0):
        bad = np.argwhere(probs < 0)[0]
        diags.append(f"{name} kernel entry ({bad[0]},{bad[1]}) is negative")
    for i, s in enumerate(probs.sum(axis=1)):
        if abs(s - 1.0) > ROW_SUM_TOL:
            diags.append(f"{name} kernel row {i} sums to {s:.6g}")
    return diags


def validate(model: DisorderModel) -> list[str]:
    """Check every type invariant; returns one diagnostic per violation.

    An empty list means the model is valid.  Violations are reported, not
    raised, so callers can surface all problems at once.
    """
    diags = []
    n = model.space.size
    if n < 1:
        diags.append("state space is empty")
    if len(set(model.space.labels)) != n:
        diags.append("state labels are not unique")
    diags += _kernel_diagnostics("pre", model.pre, n)
    diags += _kernel_diagnostics("post", model.post, n)
    if not 0.0 < model.prior.p < 1.0:
        diags.append(f"prior parameter out of (0,1): p = {model.prior.p}")
    if model.d < 0:
        diags.append(f"detection window must be nonnegative: d = {model.d}")
    if not 0 <= model.x0 < n:
        diags.append(f"initial state index {model.x0} outside [0, {n})")
    return diags


def require_valid(model: DisorderModel) -> DisorderModel:
    diags = validate(model)
    if diags:
        from .errors import InvalidModelError

        raise InvalidModelError(diags)
    return model


def likelihood_ratios(model: DisorderModel) -> LikelihoodRatioTable:
    """Post/pre ratio table with the +inf convention for support mismatches."""
    pre = model.pre.probs
    post = model.post.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = post / pre
    undefined = (pre == 0) & (post == 0)
    ratios = np.where((pre == 0) & (post > 0), np.inf, ratios)
    ratios = np.where(undefined, np.nan, ratios)
    return LikelihoodRatioTable(ratios=ratios, undefined=undefined)


# --- sampling -------------------------------------------------------------
#
# Seed splitting rule: trajectory i of a Monte Carlo run with master seed s
# uses numpy's SeedSequence(s, spawn_key=(i,)).  Any partition of trials
# therefore reproduces the same per-trajectory streams.


def trajectory_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Seed for the index-th trajectory derived from a master seed."""
    return np.random.SeedSequence(master_seed, spawn_key=(index,))


def _rng(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def sample_theta(prior: GeometricPrior, rng_seed) -> int:
    """Draw a switch time: P(theta = j) = p^(j-1) * q, j = 1, 2, ..."""
    return int(_rng(rng_seed).geometric(prior.q))


def sample_theta_batch(prior: GeometricPrior, n: int, rng_seed) -> np.ndarray:
    """Vectorized counterpart of :func:`sample_theta`."""
    return _rng(rng_seed).geometric(prior.q, size=n).astype(np.int64)


def sample_trajectory(model: DisorderModel, horizon: int, rng_seed) -> Trajectory:
    """Sample X_0..X_horizon and the switch time.

    Transition n (into X_n) uses the pre-change kernel for n < theta and the
    post-change kernel for n >= theta; the first post-change step starts from
    the state occupied at theta - 1.  theta is drawn independently of both
    chains.  Bit-reproducible given the seed.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = _rng(rng_seed)
    theta = int(rng.geometric(model.prior.q))
    pre_cum = np.cumsum(model.pre.probs, axis=1)
    post_cum = np.cumsum(model.post.probs, axis=1)
    states = np.empty(horizon + 1, dtype=np.int64)
    states[0] = model.x0
    u = rng.random(horizon)
    for n in range(1, horizon + 1):
        cum = post_cum if n >= theta else pre_cum
        states[n] = np.searchsorted(cum[states[n - 1]], u[n - 1], side="right")
    return Trajectory(theta=theta, states=states)


# --- bundled demonstration model -------------------------------------------

TWO_STATE_PRE = ((0.1, 0.9), (0.8, 0.2))
TWO_STATE_POST = ((0.7, 0.3), (0.4, 0.6))


def two_state_model(p: float, d: int = 0, x0: int = 0) -> DisorderModel:
    """The bundled two-state model with ratio table ((7, 1/3), (1/2, 3)).

    Its threshold function has known piecewise closed forms in p, which the
    ``example`` module reproduces and checks.
    """
    return DisorderModel(
        space=StateSpace(labels=("0", "1")),
        pre=MarkovKernel(np.array(TWO_STATE_PRE)),
        post=MarkovKernel(np.array(TWO_STATE_POST)),
        prior=GeometricPrior(p=p),
        d=d,
        x0=x0,
    )


# --- model file (JSON) ------------------------------------------------------


def model_to_dict(model: DisorderModel) -> dict:
    return {
        "states": list(model.space.labels),
        "pre": model.pre.probs.tolist(),
        "post": model.post.probs.tolist(),
        "p": model.prior.p,
        "d": model.d,
        "x0": model.x0,
    }


def model_from_dict(data: dict) -> DisorderModel:
    """Build a model from the documented JSON schema; unknown keys rejected."""
    unknown = set(data) - _MODEL_KEYS
    if unknown:
        raise ValueError(f"unknown model keys: {sorted(unknown)}")
    missing = _MODEL_KEYS - set(data)
    if missing:
        raise ValueError(f"missing model keys: {sorted(missing)}")
    return DisorderModel(
        space=StateSpace(labels=tuple(str(s) for s in data["states"])),
        pre=MarkovKernel(np.array(data["pre"], dtype=float)),
        post=MarkovKernel(np.array(data["post"], dtype=float)),
        prior=GeometricPrior(p=float(data["p"])),
        d=int(data["d"]),
        x0=int(data["x0"]),
    )


def load_model(path: str | Path) -> DisorderModel:
    with open(path, encoding="utf-8") as f:
        return model_from_dict(json.load(f))


def save_model(model: DisorderModel, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def model_hash(model: DisorderModel) -> str:
    """Content hash used to tie solved thresholds and reports to a model."""
    canonical = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
