"""Weighted finite-state graphs for LF-MMI numerator and denominator terms.

Graphs are acceptors over label indices ``0..P-1``: every arc consumes exactly
one label (one frame), there are no epsilon arcs, and weights are natural-log
values in the (log, +) semiring.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInput

NEG_INF = -np.inf
BOUNDARY_TOL = 1e-9


class Arc(NamedTuple):
    source_state: int
    dest_state: int
    label: int
    log_weight: float


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable graph stored as parallel arc arrays sorted by (src, label, dst)."""

    num_states: int
    start_state: int
    final_log_weights: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    lab: np.ndarray
    weights: np.ndarray
    num_labels: int

    @classmethod
    def from_arcs(
        cls,
        num_states: int,
        start_state: int,
        final_log_weights: Sequence[float],
        arcs: Iterable[Arc | tuple],
        num_labels: int,
        validate: bool = True,
    ) -> "Graph":
        arcs = [Arc(int(a[0]), int(a[1]), int(a[2]), float(a[3])) for a in arcs]
        arcs.sort(key=lambda a: (a.source_state, a.label, a.dest_state))
        final = np.array(final_log_weights, dtype=np.float64)
        g = cls(
            num_states=int(num_states),
            start_state=int(start_state),
            final_log_weights=final,
            src=np.array([a.source_state for a in arcs], dtype=np.int64),
            dst=np.array([a.dest_state for a in arcs], dtype=np.int64),
            lab=np.array([a.label for a in arcs], dtype=np.int64),
            weights=np.array([a.log_weight for a in arcs], dtype=np.float64),
            num_labels=int(num_labels),
        )
        for arr in (g.final_log_weights, g.src, g.dst, g.lab, g.weights):
            arr.setflags(write=False)
        if validate:
            g.validate()
        return g

    @property
    def num_arcs(self) -> int:
        return int(self.src.shape[0])

    @property
    def arcs(self) -> list[Arc]:
        return [
            Arc(int(s), int(d), int(l), float(w))
            for s, d, l, w in zip(self.src, self.dst, self.lab, self.weights)
        ]

    def final_states(self) -> list[int]:
        return [int(s) for s in np.flatnonzero(np.isfinite(self.final_log_weights))]

    def validate(self) -> None:
        n = self.num_states
        if n < 1:
            raise InvalidInput("graph has no states")
        if self.num_labels < 1:
            raise InvalidInput("graph must have at least one label")
        if not 0 <= self.start_state < n:
            raise InvalidInput(f"start state {self.start_state} out of range")
        if self.final_log_weights.shape != (n,):
            raise InvalidInput("final weights must have one entry per state")
        if np.any(np.isnan(self.final_log_weights)) or np.any(self.final_log_weights == np.inf):
            raise InvalidInput("final weights must be finite or -inf")
        if not np.any(np.isfinite(self.final_log_weights)):
            raise InvalidInput("graph has no final state")
        if self.num_arcs:
            if not np.all(np.isfinite(self.weights)):
                raise InvalidInput("arc weights must be finite")
            if self.src.min() < 0 or self.src.max() >= n or self.dst.min() < 0 or self.dst.max() >= n:
                raise InvalidInput("arc state index out of range")
            if self.lab.min() < 0 or self.lab.max() >= self.num_labels:
                raise InvalidInput("arc label out of range")
        acc = _reachable(n, [self.start_state], self.src, self.dst)
        if not acc.all():
            raise InvalidInput(f"unreachable states: {np.flatnonzero(~acc).tolist()}")
        coacc = _reachable(n, self.final_states(), self.dst, self.src)
        if not coacc.all():
            raise InvalidInput(f"states cannot reach a final state: {np.flatnonzero(~coacc).tolist()}")

    # -- text format -------------------------------------------------------

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(f"STATES {self.num_states} START {self.start_state} LABELS {self.num_labels}\n")
        for a in self.arcs:
            out.write(f"ARC {a.source_state} {a.dest_state} {a.label} {a.log_weight:.17g}\n")
        for s in self.final_states():
            out.write(f"FINAL {s} {self.final_log_weights[s]:.17g}\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "Graph":
        lines = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0][0] != "STATES" or len(lines[0]) != 6:
            raise InvalidInput("missing graph header")
        hdr = lines[0]
        if hdr[2] != "START" or hdr[4] != "LABELS":
            raise InvalidInput("malformed graph header")
        n, start, p = int(hdr[1]), int(hdr[3]), int(hdr[5])
        final = np.full(n, NEG_INF)
        arcs = []
        for toks in lines[1:]:
            if toks[0] == "ARC" and len(toks) == 5:
                arcs.append(Arc(int(toks[1]), int(toks[2]), int(toks[3]), float(toks[4])))
            elif toks[0] == "FINAL" and len(toks) == 3:
                final[int(toks[1])] = float(toks[2])
            else:
                raise InvalidInput(f"bad graph line: {' '.join(toks)}")
        return cls.from_arcs(n, start, final, arcs, p)


def _reachable(n, seeds, frm, to):
    seen = np.zeros(n, dtype=bool)
    adj = [[] for _ in range(n)]
    for a, b in zip(frm.tolist(), to.tolist()):
        adj[a].append(b)
    stack = list(seeds)
    for s in stack:
        seen[s] = True
    while stack:
        s = stack.pop()
        for nxt in adj[s]:
            if not seen[nxt]:
                seen[nxt] = True
                stack.append(nxt)
    return seen


def trim(num_states, start, final, arcs, num_labels) -> Graph:
    """Drop states that are not both accessible and coaccessible, then renumber."""
    src = np.array([a[0] for a in arcs], dtype=np.int64)
    dst = np.array([a[1] for a in arcs], dtype=np.int64)
    final = np.asarray(final, dtype=np.float64)
    acc = _reachable(num_states, [start], src, dst)
    coacc = _reachable(num_states, np.flatnonzero(np.isfinite(final)).tolist(), dst, src)
    keep = acc & coacc
    if not keep[start]:
        raise InvalidInput("graph accepts no label sequence")
    remap = np.cumsum(keep) - 1
    new_arcs = [
        Arc(int(remap[a[0]]), int(remap[a[1]]), a[2], a[3])
        for a in arcs
        if keep[a[0]] and keep[a[1]]
    ]
    return Graph.from_arcs(int(keep.sum()), int(remap[start]), final[keep], new_arcs, num_labels)


# --------------------------------------------------------------------------
# language model


@dataclass(frozen=True, eq=False)
class BigramLm:
    """Label bigram with a boundary symbol at index ``num_labels``.

    Row ``P`` holds start probabilities; column ``P`` holds end probabilities.
    """

    num_labels: int
    log_probs: np.ndarray

    def __post_init__(self):
        p = self.num_labels
        if p < 1:
            raise InvalidInput("language model needs at least one label")
        lp = np.asarray(self.log_probs, dtype=np.float64)
        if lp.shape != (p + 1, p + 1):
            raise InvalidInput(f"log_probs must be {(p + 1, p + 1)}, got {lp.shape}")
        sums = np.exp(lp).sum(axis=1)
        if np.any(np.abs(sums - 1.0) > BOUNDARY_TOL):
            raise InvalidInput(f"language model rows not normalized: {sums}")
        object.__setattr__(self, "log_probs", lp)

    @property
    def boundary(self) -> int:
        return self.num_labels

    def sequence_logprob(self, labels: Sequence[int]) -> float:
        b = self.boundary
        prev = b
        total = 0.0
        for lab in labels:
            total += self.log_probs[prev, lab]
            prev = lab
        return float(total + self.log_probs[prev, b])


def estimate_bigram_lm(
    transcripts: Iterable[Sequence[int]], num_labels: int, smoothing_count: float = 0.0
) -> BigramLm:
    """Add-k smoothed label bigram.

    Start-row successors are labels only; label rows also permit the end
    symbol. A label row with no counts at all (k = 0, unseen label) becomes
    uniform over its successors.
    """
    if smoothing_count < 0:
        raise InvalidInput("smoothing_count must be nonnegative")
    p = num_labels
    counts = np.zeros((p + 1, p + 1))
    seen_any = False
    for seq in transcripts:
        seq = [int(x) for x in seq]
        if not seq:
            continue
        if min(seq) < 0 or max(seq) >= p:
            raise InvalidInput(f"label out of range in transcript {seq}")
        seen_any = True
        prev = p
        for lab in seq:
            counts[prev, lab] += 1
            prev = lab
        counts[prev, p] += 1
    if not seen_any:
        raise InvalidInput("all transcripts are empty")
    allowed = np.ones((p + 1, p + 1), dtype=bool)
    allowed[p, p] = False
    counts = np.where(allowed, counts + smoothing_count, 0.0)
    rows = counts.sum(axis=1, keepdims=True)
    empty = rows[:, 0] == 0
    counts[empty] = allowed[empty].astype(float)
    probs = counts / counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        return BigramLm(p, np.log(probs))


def with_self_loops(lm: BigramLm, loop_prob: float) -> BigramLm:
    """Mix a label self-loop into every label row.

    ``p'(a|a) = q + (1-q) p(a|a)`` and ``p'(x|a) = (1-q) p(x|a)`` otherwise,
    which gives each label a geometric duration (mean ``1/(1-q)`` frames) when
    the LM is used at frame level. The start row is unchanged.
    """
    if not 0.0 <= loop_prob < 1.0:
        raise InvalidInput("loop_prob must lie in [0, 1)")
    p = lm.num_labels
    probs = np.exp(lm.log_probs)
    probs[:p] *= 1.0 - loop_prob
    probs[np.arange(p), np.arange(p)] += loop_prob
    with np.errstate(divide="ignore"):
        return BigramLm(p, np.log(probs))


# --------------------------------------------------------------------------
# builders


def build_numerator_graph(labels: Sequence[int], num_labels: int, allow_self_loops: bool = True) -> Graph:
    """Left-to-right chain over the reference labels, all arc weights 0."""
    labels = [int(x) for x in labels]
    if not labels:
        raise InvalidInput("numerator needs a non-empty label sequence")
    if min(labels) < 0 or max(labels) >= num_labels:
        raise InvalidInput(f"label out of range [0, {num_labels})")
    n = len(labels)
    arcs = [Arc(i, i + 1, lab, 0.0) for i, lab in enumerate(labels)]
    if allow_self_loops:
        arcs += [Arc(i, i, lab, 0.0) for i, lab in enumerate(labels)]
    final = np.full(n + 1, NEG_INF)
    final[n] = 0.0
    return Graph.from_arcs(n + 1, 0, final, arcs, num_labels)


def build_denominator_graph(lm: BigramLm) -> Graph:
    """One state per label plus a start state; arcs carry bigram log-probs.

    State 0 is the start state and state ``b + 1`` is "last label was b".
    Zero-probability arcs are omitted, and states left inaccessible or
    non-coaccessible are trimmed.
    """
    p = lm.num_labels
    if p < 1:
        raise InvalidInput("denominator graph needs at least one label")
    lp = lm.log_probs
    b = lm.boundary
    arcs = []
    for lab in range(p):
        if np.isfinite(lp[b, lab]):
            arcs.append(Arc(0, lab + 1, lab, lp[b, lab]))
    for a in range(p):
        for lab in range(p):
            if np.isfinite(lp[a, lab]):
                arcs.append(Arc(a + 1, lab + 1, lab, lp[a, lab]))
    final = np.concatenate([[NEG_INF], lp[:p, b]])
    return trim(p + 1, 0, final, arcs, p)
