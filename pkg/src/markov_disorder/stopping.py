"""Optimal stopping: evidence statistic, threshold iteration and decision rule.

The stopping rule compares an evidence statistic computed from the last d+2
observations against a threshold table indexed by the last d+1 observations.
The table is the fixed point of a monotone contraction (factor p) obtained by
value iteration over the finite state space.

Scaling convention: the payoff's statistic carries a factor q = 1-p on its
ratio terms.  Both sides of the stopping comparison scale linearly, so the
implementation works with the q-free statistic

    stat(window) = (1 - p^d)/q + sum_{m=1..d+1} prod(last m ratios) / p^m

and the matching q-free thresholds; reported thresholds use this scaling.
Support mismatches (pre-change probability 0 with post-change positive) make
the statistic +inf, which always stops; inside the iteration every product is
kept in probability form so no 0*inf arithmetic occurs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConvergenceError, UnreachableObservationError
from .likelihood import as_segment, segment_likelihoods
from .model import DisorderModel, Trajectory, model_hash

MAX_TABLE_SIZE = 10**6


# --- value table -------------------------------------------------------------


@dataclass(frozen=True)
class ValueTable:
    """Threshold values over (d+1)-tuples of states, flat in base-K order.

    Entry layout: tuple (t_1, ..., t_{d+1}) lives at index
    sum_j t_j * K^(d+1-1-j), i.e. t_1 is the most significant digit.
    """

    d: int
    n_states: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def index(self, states) -> int:
        idx = 0
        for s in states:
            idx = idx * self.n_states + int(s)
        return idx

    def value(self, states) -> float:
        if len(states) != self.d + 1:
            raise ValueError(f"need a {self.d + 1}-tuple of states")
        return float(self.values[self.index(states)])

    def scaled(self, factor: float) -> "ValueTable":
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return ValueTable(d=self.d, n_states=self.n_states, values=self.values * factor)


@dataclass(frozen=True)
class SolveResult:
    """Fixed point with its convergence certificate."""

    table: ValueTable
    iterations: int
    residual: float
    certified_error: float


@dataclass(frozen=True)
class DetectionStatistic:
    """Evidence value for one window, in the q-free threshold scaling."""

    value: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.value)


@dataclass(frozen=True)
class Policy:
    """A stopping rule over observation windows; never stops before d+1.

    kinds: "optimal-threshold" compares the evidence statistic against a
    table; "posterior-threshold" stops once the posterior reaches c;
    "fixed-time" stops at max(t, d+1).
    """

    kind: str
    table: ValueTable | None = None
    c: float | None = None
    t: int | None = None
    label: str = ""

    @staticmethod
    def optimal(table: ValueTable, label: str = "optimal") -> "Policy":
        return Policy(kind="optimal-threshold", table=table, label=label)

    @staticmethod
    def posterior(c: float, label: str = "") -> "Policy":
        if not 0.0 <= c <= 1.0:
            raise ValueError("posterior threshold must lie in [0, 1]")
        return Policy(kind="posterior-threshold", c=c, label=label or f"posterior>={c:g}")

    @staticmethod
    def fixed(t: int, label: str = "") -> "Policy":
        if t < 0:
            raise ValueError("fixed stopping time must be nonnegative")
        return Policy(kind="fixed-time", t=t, label=label or f"fixed@{t}")

    @property
    def policy_id(self) -> str:
        return self.label or self.kind


# --- evidence statistic -------------------------------------------------------


def detection_statistic(model: DisorderModel, window) -> DetectionStatistic:
    """Q-free evidence statistic of a (d+2)-state window; may be +inf."""
    seg = as_segment(window)
    if len(seg) != model.d + 2:
        raise ValueError(f"window must contain d+2 = {model.d + 2} states")
    p, q = model.p, model.q
    L = segment_likelihoods(model, seg).values
    if all(v == 0.0 for v in L):
        raise UnreachableObservationError(
            "window has zero probability under every switch time"
        )
    total = (1.0 - p**model.d) / q
    for m in range(1, model.d + 2):
        if L[m] == 0.0:
            continue
        if L[0] == 0.0:
            return DetectionStatistic(value=math.inf)
        total += L[m] / (p**m * L[0])
    return DetectionStatistic(value=total)


def payoff_h(model: DisorderModel, window, alpha: float) -> float:
    """Stopping payoff: (1 - p^d + q * sum_m L_m/(p^m L_0)) * (1 - alpha).

    Expectation of this payoff at a stopping time equals the success
    probability.  At alpha = 1 the payoff is 0 even when the statistic is
    infinite (the underlying probability difference is 0 there).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 1.0:
        return 0.0
    stat = detection_statistic(model, window)
    return model.q * stat.value * (1.0 - alpha)


# --- tuple-table machinery ----------------------------------------------------


def _tuple_digits(n_states: int, width: int) -> np.ndarray:
    """All base-K tuples of a given width, most significant digit first."""
    size = n_states**width
    if size > MAX_TABLE_SIZE:
        raise CapacityError(
            f"threshold table needs {n_states}^{width} = {size} entries "
            f"(limit {MAX_TABLE_SIZE}); reduce d or the state space"
        )
    idx = np.arange(size)
    dig = np.empty((size, width), dtype=np.int64)
    for j in range(width):
        dig[:, j] = (idx // n_states ** (width - 1 - j)) % n_states
    return dig


def _zero_safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """num/den with 0-dominant zeros: 0 wherever num == 0, +inf where only den == 0."""
    out = np.full(num.shape, np.inf)
    nz = num != 0.0
    np.divide(num, den, out=out, where=nz & (den != 0.0))
    out[~nz] = 0.0
    return out


class _TupleWorkspace:
    """Precomputed arrays shared by the Bellman step and the value formula."""

    def __init__(self, model: DisorderModel):
        self.model = model
        K = model.n_states
        d = model.d
        self.dig = _tuple_digits(K, d + 1)
        M = self.dig.shape[0]
        pre = model.pre.probs
        post = model.post.probs
        # products of post/pre probabilities over the last j tuple transitions
        npr = np.ones((M, d + 1))
        dpr = np.ones((M, d + 1))
        for j in range(1, d + 1):
            a, b = self.dig[:, d - j], self.dig[:, d - j + 1]
            npr[:, j] = npr[:, j - 1] * post[a, b]
            dpr[:, j] = dpr[:, j - 1] * pre[a, b]
        q_suffix = _zero_safe_ratio(npr, dpr)  # ratio products, 0-dominant
        p = model.p
        # S_t = sum_{m=1..d+1} p^(1-m) * prod(last m-1 ratios)
        self.evidence_sum = sum(
            p ** (1 - m) * q_suffix[:, m - 1] for m in range(1, d + 2)
        )
        self.c0 = (1.0 - p**d) / model.q
        self.pre_row = pre[self.dig[:, -1], :]  # (M, K)
        self.post_row = post[self.dig[:, -1], :]
        self.suffix_idx = (np.arange(M) % K**d)[:, None] * K + np.arange(K)[None, :]

    def seed(self) -> ValueTable:
        values = self.model.p * self.c0 + self.evidence_sum
        return ValueTable(d=self.model.d, n_states=self.model.n_states, values=values)

    def step(self, r_prev: ValueTable) -> ValueTable:
        p = self.model.p
        # stop branch: p * mu0(y) * stat(tuple+y), in probability form so a
        # mismatch extension contributes its post-change mass, never inf*0
        with np.errstate(invalid="ignore"):
            evidence = self.post_row * self.evidence_sum[:, None]
        evidence = np.where(self.post_row == 0.0, 0.0, evidence)
        stop_term = p * self.c0 * self.pre_row + evidence
        # continue branch: p * mu0(y) * r(suffix); zero pre-change mass kills it
        r_next = r_prev.values[self.suffix_idx]
        with np.errstate(invalid="ignore"):
            cont_term = p * self.pre_row * r_next
        cont_term = np.where(self.pre_row == 0.0, 0.0, cont_term)
        values = np.maximum(stop_term, cont_term).sum(axis=1)
        return ValueTable(d=self.model.d, n_states=self.model.n_states, values=values)


def bellman_step(model: DisorderModel, r_prev: ValueTable | None) -> ValueTable:
    """One application of the threshold operator; ``None`` yields the seed table.

    Seed: r_0 = p * [(1-p^d)/q + sum_{m=1..d+1} prod(last m-1 ratios)/p^m].
    Step: r_k(t) = p * sum_y mu0(y) * max{stat(t+y), r_{k-1}(suffix(t, y))},
    summed exactly over the state space.
    """
    ws = _TupleWorkspace(model)
    if r_prev is None:
        return ws.seed()
    if r_prev.d != model.d or r_prev.n_states != model.n_states:
        raise ValueError("table shape does not match the model")
    return ws.step(r_prev)


def zero_table(model: DisorderModel) -> ValueTable:
    """All-zero table; converges to the same fixed point as the seed."""
    size = model.n_states ** (model.d + 1)
    if size > MAX_TABLE_SIZE:
        raise CapacityError(f"threshold table needs {size} entries (limit {MAX_TABLE_SIZE})")
    return ValueTable(d=model.d, n_states=model.n_states, values=np.zeros(size))


def _sup_diff(a: np.ndarray, b: np.ndarray) -> float:
    """Sup-norm over entries finite in both tables (inf entries are structural)."""
    both_finite = np.isfinite(a) & np.isfinite(b)
    if not both_finite.any():
        return 0.0
    return float(np.max(np.abs(a[both_finite] - b[both_finite])))


def solve_rstar(
    model: DisorderModel,
    tolerance: float = 1e-10,
    max_iters: int = 200_000,
    start: ValueTable | None = None,
) -> SolveResult:
    """Iterate the threshold operator to its fixed point.

    Stops once the sup-norm step falls below tolerance*(1-p)/p, which by the
    contraction factor p certifies sup-norm error <= tolerance.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    p = model.p
    ws = _TupleWorkspace(model)
    table = start if start is not None else ws.seed()
    gate = tolerance * (1.0 - p) / p
    residual = math.inf
    for k in range(1, max_iters + 1):
        new = ws.step(table)
        residual = _sup_diff(new.values, table.values)
        table = new
        if residual <= gate:
            certified = residual * p / (1.0 - p)
            return SolveResult(table=table, iterations=k, residual=residual, certified_error=certified)
    raise ConvergenceError(
        f"no fixed point within {max_iters} iterations (last step {residual:.3e})",
        residual=residual,
        iterations=max_iters,
    )


# --- decision rule and policies ------------------------------------------------


def stop_decision(model: DisorderModel, rstar: ValueTable, window) -> bool:
    """True iff the window's statistic meets or exceeds the threshold.

    Ties stop.  An infinite statistic (pre-change-impossible transition in
    the window) always stops.
    """
    seg = as_segment(window)
    stat = detection_statistic(model, seg)
    if stat.infinite:
        return True
    return stat.value >= rstar.value(seg.states[1:])


def run_policy(model: DisorderModel, policy: Policy, trajectory) -> int | None:
    """First time n >= d+1 at which the policy stops; None if censored.

    Deterministic in (model, policy, observations); the switch time carried
    by a Trajectory is ignored.
    """
    states = trajectory.states if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    horizon = len(states) - 1
    d = model.d
    if horizon < d + 1:
        raise ValueError(f"trajectory must contain at least d+2 = {d + 2} states")
    if policy.kind == "fixed-time":
        t = max(policy.t, d + 1)
        return t if t <= horizon else None
    if policy.kind == "posterior-threshold":
        from .posterior import pi_step

        pi = 0.0
        for n in range(1, horizon + 1):
            pi = pi_step(model, pi, int(states[n - 1]), int(states[n]))
            if n >= d + 1 and pi >= policy.c:
                return n
        return None
    if policy.kind == "optimal-threshold":
        for n in range(d + 1, horizon + 1):
            window = tuple(int(s) for s in states[n - d - 1 : n + 1])
            if stop_decision(model, policy.table, window):
                return n
        return None
    raise ValueError(f"unknown policy kind {policy.kind!r}")


# --- value of the optimal rule ---------------------------------------------------


def value_at_start(model: DisorderModel, rstar: ValueTable) -> float:
    """Success probability of the optimal rule, by exact summation.

    p^(d+1) * sum over (d+1)-step windows from x0 of
    max{payoff statistic, threshold} * L_0(window), with each branch kept in
    probability form: the stop branch is the exact switch-mass bookkeeping
    sum_m p^(d+1-m) q L_m + p^(d+1) (1-p^d) L_0, the continue branch
    q p^(d+1) r(tuple) L_0 (zero when L_0 = 0).
    """
    if rstar.d != model.d or rstar.n_states != model.n_states:
        raise ValueError("table shape does not match the model")
    K, d, p, q = model.n_states, model.d, model.p, model.q
    dig = _tuple_digits(K, d + 1)
    M = dig.shape[0]
    wdig = np.concatenate([np.full((M, 1), model.x0, dtype=np.int64), dig], axis=1)
    pre_tr = model.pre.probs[wdig[:, :-1], wdig[:, 1:]]  # (M, d+1)
    post_tr = model.post.probs[wdig[:, :-1], wdig[:, 1:]]
    # prefix products of pre-change, suffix products of post-change probabilities
    pd = np.ones((M, d + 2))
    pn = np.ones((M, d + 2))
    for i in range(1, d + 2):
        pd[:, i] = pd[:, i - 1] * pre_tr[:, i - 1]
        pn[:, d + 1 - i] = pn[:, d + 2 - i] * post_tr[:, d + 1 - i]
    L0 = pd[:, d + 1]
    stop_mass = p ** (d + 1) * (1.0 - p**d) * L0
    for m in range(1, d + 2):
        stop_mass = stop_mass + p ** (d + 1 - m) * q * pd[:, d + 1 - m] * pn[:, d + 1 - m]
    with np.errstate(invalid="ignore"):
        cont_mass = q * p ** (d + 1) * rstar.values * L0
    cont_mass = np.where(L0 == 0.0, 0.0, cont_mass)
    return float(np.maximum(stop_mass, cont_mass).sum())


# --- threshold export / import ---------------------------------------------------


def rstar_export(model: DisorderModel, result: SolveResult) -> dict:
    """JSON-ready threshold table tied to the model by content hash."""
    labels = model.space.labels
    entries = []
    for idx, value in enumerate(result.table.values):
        digits = []
        rem = idx
        for j in range(model.d + 1):
            digits.append(rem // model.n_states ** (model.d - j))
            rem %= model.n_states ** (model.d - j)
        entries.append([[labels[t] for t in digits], "inf" if math.isinf(value) else float(value)])
    return {
        "model_hash": model_hash(model),
        "p": model.p,
        "d": model.d,
        "scaling": "q-free",
        "iterations": result.iterations,
        "certified_error": result.certified_error,
        "entries": entries,
    }


def rstar_import(data: dict, model: DisorderModel) -> ValueTable:
    """Rebuild a threshold table, verifying it belongs to this model."""
    if data.get("model_hash") != model_hash(model):
        raise ValueError("threshold table was solved for a different model")
    if int(data["d"]) != model.d:
        raise ValueError("threshold table window does not match the model")
    label_idx = {lab: i for i, lab in enumerate(model.space.labels)}
    values = np.empty(model.n_states ** (model.d + 1))
    for labels, value in data["entries"]:
        idx = 0
        for lab in labels:
            idx = idx * model.n_states + label_idx[lab]
        values[idx] = math.inf if value == "inf" else float(value)
    return ValueTable(d=model.d, n_states=model.n_states, values=values)


def save_rstar(model: DisorderModel, result: SolveResult, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(rstar_export(model, result), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_rstar(path: str | Path, model: DisorderModel) -> ValueTable:
    with open(path, encoding="utf-8") as f:
        return rstar_import(json.load(f), model)
