"""Segment likelihoods and the joint/mixture densities built from them.

For a path segment ``x_k..x_n``, ``L_m`` is the probability of its
transitions when the last ``m`` of them follow the post-change kernel and the
rest the pre-change kernel (empty products are 1).  The joint density ``S``
mixes the ``L_m`` over the geometric prior on the switch time; ``G`` does the
same conditionally on a posterior value at the segment start.

Likelihoods are accumulated in log space (with -inf marking exact zeros) so
that long windows neither underflow nor require dividing tiny numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DisorderModel


@dataclass(frozen=True)
class PathSegment:
    """Contiguous run of observed states; ``offset`` is the time of states[0]."""

    states: tuple[int, ...]
    offset: int = 0

    def __post_init__(self):
        if len(self.states) == 0:
            raise ValueError("segment must be nonempty")
        if self.offset < 0:
            raise ValueError("offset must be nonnegative")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def n_transitions(self) -> int:
        return len(self.states) - 1


def as_segment(states, offset: int = 0) -> PathSegment:
    if isinstance(states, PathSegment):
        return states
    return PathSegment(states=tuple(int(s) for s in states), offset=offset)


@dataclass(frozen=True)
class SegmentLikelihoods:
    """All L_m of one segment, m = 0..n_transitions, stored as logs.

    ``log_values[m]`` is log L_m, with -inf for an exact zero.
    """

    log_values: tuple[float, ...]

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(math.exp(v) if v != -math.inf else 0.0 for v in self.log_values)

    def value(self, m: int) -> float:
        lv = self.log_values[m]
        return math.exp(lv) if lv != -math.inf else 0.0


def _log(x: float) -> float:
    return math.log(x) if x > 0.0 else -math.inf


def segment_likelihoods(model: DisorderModel, segment) -> SegmentLikelihoods:
    """Compute every L_m of a segment in one pass.

    Uses prefix sums of pre-change log-probabilities and suffix sums of
    post-change ones: log L_m = prefix0[n-m] + suffix1[n-m+1].
    """
    seg = as_segment(segment)
    s = seg.states
    n = seg.n_transitions
    log_pre = [_log(model.pre.probs[s[r - 1], s[r]]) for r in range(1, n + 1)]
    log_post = [_log(model.post.probs[s[r - 1], s[r]]) for r in range(1, n + 1)]
    prefix0 = [0.0] * (n + 1)  # prefix0[i] = sum of first i pre-change logs
    suffix1 = [0.0] * (n + 2)  # suffix1[i] = sum of post-change logs from transition i
    for i in range(1, n + 1):
        prefix0[i] = prefix0[i - 1] + log_pre[i - 1]
    for i in range(n, 0, -1):
        suffix1[i] = suffix1[i + 1] + log_post[i - 1]
    logs = tuple(prefix0[n - m] + suffix1[n - m + 1] for m in range(n + 1))
    return SegmentLikelihoods(log_values=logs)


def segment_L(model: DisorderModel, segment, m: int) -> float:
    """L_m of a segment: last m transitions post-change, the rest pre-change."""
    seg = as_segment(segment)
    if not 0 <= m <= seg.n_transitions:
        raise IndexError(f"m = {m} outside [0, {seg.n_transitions}]")
    return segment_likelihoods(model, seg).value(m)


def joint_density_S(model: DisorderModel, path) -> float:
    """Joint density of a path observed from time 0.

    S = sum_{i=1..n} p^(i-1) q L_{n-i+1} + p^n L_0, i.e. the prior mixture of
    the switch placing the last n-i+1 transitions after the change, plus the
    no-change-yet term.
    """
    seg = as_segment(path)
    if seg.offset != 0:
        raise ValueError("joint density is defined for paths starting at time 0")
    n = seg.n_transitions
    L = segment_likelihoods(model, seg).values
    p, q = model.p, model.q
    total = sum(p ** (i - 1) * q * L[n - i + 1] for i in range(1, n + 1))
    return total + p**n * L[0]


def mixture_G(model: DisorderModel, segment, alpha: float) -> float:
    """Density of a segment given posterior value ``alpha`` at its start.

    G = alpha * L_{l+1}
        + (1 - alpha) * (sum_{i=0..l} p^(l-i) q L_{i+1} + p^(l+1) L_0)
    for a segment of length l + 2.
    """
    seg = as_segment(segment)
    if len(seg) < 2:
        raise ValueError("segment must contain at least 2 states")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    l = seg.n_transitions - 1
    L = segment_likelihoods(model, seg).values
    p, q = model.p, model.q
    tail = sum(p ** (l - i) * q * L[i + 1] for i in range(l + 1)) + p ** (l + 1) * L[0]
    return alpha * L[l + 1] + (1.0 - alpha) * tail


def check_factorization(model: DisorderModel, path, l: int) -> float:
    """Absolute error of S(x_0..x_n) = S(x_0..x_{n-l-1}) * G(tail, Pi_{n-l-1}).

    The posterior entering G is computed from the path head, so this checks
    the splitting identity between the joint density, the mixture density and
    the filtering recursion.
    """
    from .posterior import pi_direct

    seg = as_segment(path)
    n = seg.n_transitions
    if not 0 <= l < n:
        raise ValueError(f"l = {l} outside [0, {n})")
    split = n - l - 1
    head = PathSegment(states=seg.states[: split + 1], offset=0)
    tail = PathSegment(states=seg.states[split:], offset=split)
    pi_split = pi_direct(model, head)
    lhs = joint_density_S(model, seg)
    rhs = joint_density_S(model, head) * mixture_G(model, tail, pi_split)
    return abs(lhs - rhs)
