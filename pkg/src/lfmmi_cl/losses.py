"""Training objectives (all maximised) and their emission/parameter gradients.

Every objective returns ``(value, grad)`` where ``grad`` is the derivative of
``value`` with respect to the raw network outputs (``T x P``) or, for EWC,
the flat parameter vector.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import fb, net
from .errors import InvalidInput, NoPath
from .graph import Graph

log = logging.getLogger(__name__)

ROW_TOL = 1e-6


def log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(x: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(x))


def lfmmi(num_graph: Graph, den_graph: Graph, emissions) -> tuple[float, np.ndarray]:
    try:
        num_lp, num_gamma = fb.logprob_and_occupancies(num_graph, emissions)
    except NoPath as e:
        raise NoPath(e.frame, "numerator") from e
    try:
        den_lp, den_gamma = fb.logprob_and_occupancies(den_graph, emissions)
    except NoPath as e:
        raise NoPath(e.frame, "denominator") from e
    return num_lp - den_lp, num_gamma - den_gamma


def lwf_cross_entropy(emissions, y_src) -> float:
    """sum_t sum_p y_src * log softmax(emissions), without the scale."""
    return float(np.sum(y_src * log_softmax(np.asarray(emissions, dtype=np.float64))))


def lwf(emissions, y_src, alpha: float) -> tuple[float, np.ndarray]:
    em = np.asarray(emissions, dtype=np.float64)
    y_src = np.asarray(y_src, dtype=np.float64)
    if y_src.shape != em.shape:
        raise InvalidInput(f"reference posteriors {y_src.shape} do not match emissions {em.shape}")
    if np.any(y_src < 0) or np.any(np.abs(y_src.sum(axis=1) - 1.0) > ROW_TOL):
        raise InvalidInput("reference posterior rows must be nonnegative and sum to 1")
    if alpha == 0:
        return 0.0, np.zeros_like(em)
    logy = log_softmax(em)
    return float(alpha * np.sum(y_src * logy)), alpha * (y_src - np.exp(logy))


def denlwf(
    den_graph: Graph, emissions, gamma_src, alpha: float, include_offset: bool = True
) -> tuple[float, np.ndarray]:
    """Sequence-level LWF using source denominator occupancies as targets.

    With ``include_offset`` the denominator log-prob is subtracted, which makes
    the gradient ``alpha * (gamma_src - gamma_den)``. Without it only the
    cross-entropy-like term remains and the gradient is ``alpha * gamma_src``,
    whose rows sum to alpha rather than 0.
    """
    em = np.asarray(emissions, dtype=np.float64)
    gamma_src = np.asarray(gamma_src, dtype=np.float64)
    if gamma_src.shape != em.shape:
        raise InvalidInput(f"reference occupancies {gamma_src.shape} do not match emissions {em.shape}")
    if alpha == 0:
        return 0.0, np.zeros_like(em)
    # log(y_i) is the raw network output, as in the LF-MMI derivative
    ce = float(np.sum(gamma_src * em))
    if not include_offset:
        return alpha * ce, alpha * gamma_src
    try:
        den_lp, gamma = fb.logprob_and_occupancies(den_graph, em)
    except NoPath as e:
        raise NoPath(e.frame, "denominator") from e
    return alpha * (ce - den_lp), alpha * (gamma_src - gamma)


@dataclass
class ClSnapshot:
    step: int
    params: np.ndarray
    fisher: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        self.fisher = np.asarray(self.fisher, dtype=np.float64)
        if self.params.shape != self.fisher.shape:
            raise InvalidInput("snapshot parameters and Fisher diagonal differ in length")
        if np.any(self.fisher < 0):
            raise InvalidInput("Fisher diagonal must be nonnegative")


def ewc_penalty(theta: np.ndarray, snapshots: Sequence[ClSnapshot], alpha: float) -> tuple[float, np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64)
    value = 0.0
    grad = np.zeros_like(theta)
    for snap in snapshots:
        if snap.params.shape != theta.shape:
            raise InvalidInput(
                f"snapshot {snap.step} has {snap.params.shape[0]} parameters, model has {theta.shape[0]}"
            )
        diff = theta - snap.params
        value -= alpha * float(np.sum(snap.fisher * diff * diff))
        grad -= 2.0 * alpha * snap.fisher * diff
    return value, grad


def ewc_proximal_step(theta: np.ndarray, snapshots: Sequence[ClSnapshot], alpha: float, step_size: float) -> np.ndarray:
    """Implicit ascent step on the EWC penalty alone.

    Returns ``argmax_x  F_EWC(x) - |x - theta|^2 / (2 step_size)``, which for
    the diagonal quadratic is
    ``(theta + 2 s a sum_d F^d theta^d) / (1 + 2 s a sum_d F^d)``. Stable for
    any step size, unlike an explicit gradient step when ``alpha * F`` is large.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if not snapshots or alpha == 0:
        return theta
    num = theta.copy()
    den = np.ones_like(theta)
    for snap in snapshots:
        if snap.params.shape != theta.shape:
            raise InvalidInput(
                f"snapshot {snap.step} has {snap.params.shape[0]} parameters, model has {theta.shape[0]}"
            )
        c = 2.0 * step_size * alpha * snap.fisher
        num += c * snap.params
        den += c
    return num / den


@dataclass
class FisherEstimate:
    diagonal: np.ndarray
    raw_median: float
    normalized: bool
    num_used: int


def estimate_fisher(
    params: net.ModelParams,
    utterances: Sequence,
    num_graph_for: Callable[[object], Graph],
    den_graph: Graph,
    median_floor: float = 1e-12,
) -> FisherEstimate:
    """Running mean of squared per-utterance LF-MMI gradients, median-normalised.

    ``utterances`` need ``.features``; ``num_graph_for(utt)`` returns the
    numerator graph. Utterances without a path are skipped.
    """
    if not utterances:
        raise InvalidInput("Fisher estimation needs at least one utterance")
    mean = np.zeros_like(params.vector)
    n = 0
    for utt in utterances:
        em, cache = net.forward(params, utt.features)
        try:
            _, g = lfmmi(num_graph_for(utt), den_graph, em)
        except NoPath as e:
            log.warning("Fisher: skipping utterance %s: %s", getattr(utt, "uid", "?"), e)
            continue
        grad = net.backward(params, cache, g)
        n += 1
        mean += (grad * grad - mean) / n
    if n == 0:
        raise InvalidInput("no utterance admitted a path; cannot estimate Fisher")
    med = float(np.median(mean))
    if med < median_floor:
        log.warning("Fisher median %.3g below %.1g; skipping normalisation", med, median_floor)
        return FisherEstimate(mean, med, False, n)
    return FisherEstimate(mean / med, med, True, n)


def compute_reference_posteriors(params: net.ModelParams, utterances: Sequence) -> list[np.ndarray]:
    return [softmax(net.forward(params, u.features)[0]) for u in utterances]


def compute_reference_den_occupancies(
    params: net.ModelParams, den_graph: Graph, utterances: Sequence
) -> list[np.ndarray | None]:
    """Source denominator occupancies; ``None`` marks utterances with no path."""
    out: list[np.ndarray | None] = []
    for u in utterances:
        em, _ = net.forward(params, u.features)
        try:
            out.append(fb.logprob_and_occupancies(den_graph, em)[1])
        except NoPath as e:
            log.warning("reference occupancies: excluding utterance %s: %s", getattr(u, "uid", "?"), e)
            out.append(None)
    return out
