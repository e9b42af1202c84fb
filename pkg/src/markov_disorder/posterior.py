"""Posterior probability of the switch and its conditional identities.

``Pi_n`` is the probability, given the observations up to time n, that the
switch has already happened.  It starts at 0, is absorbing at 1, and admits
three equivalent computations: a one-step filter, a multi-step jump driven by
segment likelihoods, and a direct form from the joint density of the whole
path.  The remaining operations are the forward/backward conditional
probabilities of the switch time used by the stopping payoff.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UnreachableObservationError
from .likelihood import as_segment, joint_density_S, mixture_G, segment_likelihoods
from .model import DisorderModel, GeometricPrior


@dataclass(frozen=True)
class PosteriorState:
    """Posterior value at a time index; Pi_0 = 0 by definition."""

    n: int
    pi: float

    def __post_init__(self):
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError(f"posterior {self.pi} outside [0, 1]")
        if self.n == 0 and self.pi != 0.0:
            raise ValueError("posterior at time 0 must be 0")


@dataclass(frozen=True)
class WindowState:
    """Markov statistic for stopping: the last d+2 states plus the posterior."""

    window: tuple[int, ...]
    posterior: PosteriorState


def initial_state() -> PosteriorState:
    return PosteriorState(n=0, pi=0.0)


def pi_step(model: DisorderModel, pi_n: float, x_prev: int, x_next: int) -> float:
    """One filtering step of the posterior after observing x_prev -> x_next.

    Computed as mu1*(q + p*pi) / (mu1*(q + p*pi) + p*mu0*(1 - pi)), which is
    the mixture density form; a pre-change-impossible transition (mu0 = 0
    with mu1 > 0) yields exactly 1.
    """
    if not 0.0 <= pi_n <= 1.0:
        raise ValueError("pi_n must lie in [0, 1]")
    p, q = model.p, model.q
    mu0 = model.pre.probs[x_prev, x_next]
    mu1 = model.post.probs[x_prev, x_next]
    num = mu1 * (q + p * pi_n)
    den = num + p * mu0 * (1.0 - pi_n)
    if den == 0.0:
        raise UnreachableObservationError(
            f"transition {x_prev}->{x_next} has zero probability under both kernels "
            f"given posterior {pi_n}"
        )
    return num / den


def advance(model: DisorderModel, state: PosteriorState, x_prev: int, x_next: int) -> PosteriorState:
    """pi_step wrapped in the value type."""
    return PosteriorState(n=state.n + 1, pi=pi_step(model, state.pi, x_prev, x_next))


def pi_chain(model: DisorderModel, states) -> list[float]:
    """Posterior after each observation of a path from time 0: [Pi_0, ..., Pi_n]."""
    pis = [0.0]
    for x_prev, x_next in zip(states[:-1], states[1:]):
        pis.append(pi_step(model, pis[-1], int(x_prev), int(x_next)))
    return pis


def pi_multi(model: DisorderModel, pi_start: float, segment) -> float:
    """Posterior at the segment end given the posterior at its start.

    Equals l+1 chained pi_step applications over a segment of length l+2:
    (pi*L_{l+1} + (1-pi)*q*sum_{k=0..l} p^(l-k) L_{k+1}) / G(segment, pi).
    """
    if not 0.0 <= pi_start <= 1.0:
        raise ValueError("pi_start must lie in [0, 1]")
    seg = as_segment(segment)
    if len(seg) < 2:
        raise ValueError("segment must contain at least 2 states")
    l = seg.n_transitions - 1
    L = segment_likelihoods(model, seg).values
    p, q = model.p, model.q
    g = mixture_G(model, seg, pi_start)
    if g == 0.0:
        raise UnreachableObservationError("segment has zero probability given the posterior")
    num = pi_start * L[l + 1] + (1.0 - pi_start) * q * sum(
        p ** (l - k) * L[k + 1] for k in range(l + 1)
    )
    return num / g


def pi_direct(model: DisorderModel, path) -> float:
    """Posterior from the whole path: 1 - p^n L_0 / S."""
    seg = as_segment(path)
    if seg.offset != 0:
        raise ValueError("pi_direct needs the full path from time 0")
    n = seg.n_transitions
    if n == 0:
        return 0.0
    s = joint_density_S(model, seg)
    if s == 0.0:
        raise UnreachableObservationError("path has zero probability under every switch time")
    L0 = segment_likelihoods(model, seg).value(0)
    return 1.0 - model.p**n * L0 / s


def prob_theta_forward(prior: GeometricPrior, pi_n: float, k: int) -> float:
    """P(theta <= n+k | observations to n) = 1 - p^k (1 - Pi_n)."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return 1.0 - prior.p**k * (1.0 - pi_n)


def prob_theta_backward(model: DisorderModel, segment, pi_start: float) -> float:
    """P(theta <= n-l-1 | observations to n) for a segment covering n-l-1..n.

    ``pi_start`` is the posterior at the segment start: the value is
    pi_start * L_{l+1} / G(segment, pi_start).
    """
    seg = as_segment(segment)
    l = seg.n_transitions - 1
    g = mixture_G(model, seg, pi_start)
    if g == 0.0:
        raise UnreachableObservationError("segment has zero probability given the posterior")
    return pi_start * segment_likelihoods(model, seg).value(l + 1) / g


def prob_window(model: DisorderModel, window, pi_n: float) -> float:
    """P(|theta - n| <= d | observations to n) from the last d+2 states.

    Evaluates (1 - p^d + q * sum_m L_m / (p^m L_0)) * (1 - Pi_n) term by
    term, dropping terms with L_m = 0.  A window with L_0 = 0 forces
    Pi_n = 1 on any realizable path; the (1 - Pi_n) factor then resolves the
    infinite ratio to the formula limit 0.
    """
    seg = as_segment(window)
    if len(seg) != model.d + 2:
        raise ValueError(f"window must contain d+2 = {model.d + 2} states")
    if not 0.0 <= pi_n <= 1.0:
        raise ValueError("pi_n must lie in [0, 1]")
    p, q = model.p, model.q
    L = segment_likelihoods(model, seg).values
    if L[0] == 0.0:
        if pi_n < 1.0:
            raise ValueError(
                "window impossible before the switch but posterior < 1: "
                "window and posterior are inconsistent"
            )
        return 0.0
    total = (1.0 - p**model.d) * (1.0 - pi_n)
    for m in range(1, model.d + 2):
        if L[m] > 0.0:
            total += q * (1.0 - pi_n) * L[m] / (p**m * L[0])
    return total
