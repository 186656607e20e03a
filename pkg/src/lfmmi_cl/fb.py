"""Forward-backward and Viterbi over a :class:`~lfmmi_cl.graph.Graph`.

Emissions are a ``T x P`` matrix of natural-log scores. A path's score is the
sum of its arc weights, the emissions of the labels it consumes, and the
final weight of its last state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import get_kernels
from .errors import InvalidInput, NoPath
from .graph import Graph


@dataclass
class ForwardBackward:
    total_logprob: float
    gamma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    start_state: int

    @property
    def backward_total(self) -> float:
        return float(self.beta[0, self.start_state])


def _check(graph: Graph, emissions) -> np.ndarray:
    em = np.ascontiguousarray(emissions, dtype=np.float64)
    if em.ndim != 2 or em.shape[0] < 1:
        raise InvalidInput(f"emissions must be T x P with T >= 1, got shape {em.shape}")
    if em.shape[1] != graph.num_labels:
        raise InvalidInput(f"emissions have {em.shape[1]} labels, graph has {graph.num_labels}")
    if not np.all(np.isfinite(em)):
        raise InvalidInput("emissions must be finite")
    return em


def _no_path_frame(table: np.ndarray) -> int:
    alive = np.any(table[1:] > -np.inf, axis=1)
    dead = np.flatnonzero(~alive)
    return int(dead[0]) if dead.size else table.shape[0] - 1


def forward_backward(graph: Graph, emissions, backend: str | None = None) -> ForwardBackward:
    em = _check(graph, emissions)
    k = get_kernels(backend)
    alpha = k.forward(graph.num_states, graph.start_state, graph.src, graph.dst, graph.lab, graph.weights, em)
    ends = alpha[-1] + graph.final_log_weights
    hi = ends.max()
    if hi == -np.inf:
        raise NoPath(_no_path_frame(alpha))
    total = float(hi + np.log(np.exp(ends - hi).sum()))
    beta = k.backward(graph.num_states, graph.src, graph.dst, graph.lab, graph.weights, graph.final_log_weights, em)
    gamma = k.occupancy(graph.num_labels, graph.src, graph.dst, graph.lab, graph.weights, em, alpha, beta, total)
    return ForwardBackward(total, gamma, alpha, beta, graph.start_state)


def logprob_and_occupancies(graph: Graph, emissions, backend: str | None = None) -> tuple[float, np.ndarray]:
    """Total log-probability of all complete paths and per-frame label posteriors."""
    r = forward_backward(graph, emissions, backend)
    return r.total_logprob, r.gamma


def viterbi(graph: Graph, emissions, backend: str | None = None) -> tuple[float, list[int]]:
    """Best complete path score and its per-frame label sequence."""
    em = _check(graph, emissions)
    k = get_kernels(backend)
    delta, back = k.viterbi(graph.num_states, graph.start_state, graph.src, graph.dst, graph.lab, graph.weights, em)
    ends = delta[-1] + graph.final_log_weights
    state = int(np.argmax(ends))
    best = float(ends[state])
    if best == -np.inf:
        raise NoPath(_no_path_frame(delta))
    T = em.shape[0]
    labels = [0] * T
    for t in range(T, 0, -1):
        a = int(back[t, state])
        labels[t - 1] = int(graph.lab[a])
        state = int(graph.src[a])
    return best, labels
