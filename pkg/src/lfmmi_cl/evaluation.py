"""Decoding, label error rates, and continual-learning metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import fb, net
from .errors import DegenerateGap, InvalidInput, NoPath
from .graph import Graph

log = logging.getLogger(__name__)


def levenshtein(hyp: Sequence, ref: Sequence) -> int:
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def collapse_repeats(frame_labels: Sequence[int]) -> list[int]:
    out: list[int] = []
    for lab in frame_labels:
        if not out or out[-1] != lab:
            out.append(int(lab))
    return out


@dataclass
class DomainScore:
    errors: int
    ref_labels: int
    no_path: int = 0

    @property
    def error_rate(self) -> float:
        return 100.0 * self.errors / self.ref_labels


def error_rate(hyps: Sequence[Sequence[int]], refs: Sequence[Sequence[int]]) -> float:
    """Micro-averaged error: total edits over total reference labels, in percent."""
    edits = sum(levenshtein(h, r) for h, r in zip(hyps, refs))
    total = sum(len(r) for r in refs)
    if total == 0:
        raise InvalidInput("no reference labels to score against")
    return 100.0 * edits / total


def decode_and_score(params: net.ModelParams, decode_graph: Graph, utterances: Sequence) -> DomainScore:
    """Viterbi-decode each utterance, collapse repeats, and count edits."""
    edits = 0
    total = 0
    no_path = 0
    for u in utterances:
        em, _ = net.forward(params, u.features)
        ref = list(u.labels)
        total += len(ref)
        try:
            _, frames = fb.viterbi(decode_graph, em)
        except NoPath as e:
            log.warning("decode: %s has no path (%s); counting as full deletion", u.uid, e)
            edits += len(ref)
            no_path += 1
            continue
        edits += levenshtein(collapse_repeats(frames), ref)
    if total == 0:
        raise InvalidInput("no reference labels to score against")
    return DomainScore(edits, total, no_path)


@dataclass
class EvalResult:
    """Error rates (percent) for the domains evaluated at one step."""

    step: int
    method: str
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def average(self) -> float:
        return float(np.mean(list(self.errors.values())))


def gap_recovery(wer_cl: float, wer_comb: float, wer_ft: float) -> float:
    if wer_ft == wer_comb:
        raise DegenerateGap("FT and Comb error rates are equal; gap recovery undefined")
    return 1.0 - (wer_cl - wer_comb) / (wer_ft - wer_comb)


def relative_learning(cwer: float, cwer_src: float) -> float:
    if not cwer_src > 0:
        raise InvalidInput("source error on the current domain must be positive")
    return 1.0 - cwer / cwer_src


def relative_forgetting(pwer: float, pwer_src: float) -> float:
    if not pwer_src > 0:
        raise InvalidInput("source error on past domains must be positive")
    return pwer / pwer_src - 1.0


def past_average(errors: dict[str, float], past: Sequence[str]) -> float:
    """Unweighted mean over the past domains' error rates."""
    return float(np.mean([errors[d] for d in past]))


def step_metrics(
    evaluations: Sequence[EvalResult],
    source_target_errors: Sequence[float | None],
    ft_evaluations: Sequence[EvalResult] | None = None,
    comb_errors: dict[str, float] | None = None,
) -> list[dict]:
    """Per-step gap recovery, relative learning and relative forgetting.

    ``evaluations[k]`` lists the domains seen up to step ``k`` with the target
    last; ``source_target_errors[k]`` is the step-``k`` source model's error on
    that target. Gap recovery uses step averages and needs both baselines.
    """
    rows = []
    for k in range(1, len(evaluations)):
        cur, prev = evaluations[k], evaluations[k - 1]
        target = list(cur.errors)[-1]
        past = list(prev.errors)
        row = {
            "step": k,
            "method": cur.method,
            "rel_learning": relative_learning(cur.errors[target], source_target_errors[k]),
            "rel_forgetting": relative_forgetting(past_average(cur.errors, past), past_average(prev.errors, past)),
            "gap_recovery": None,
        }
        if ft_evaluations is not None and comb_errors is not None:
            comb_avg = float(np.mean([comb_errors[d] for d in cur.errors]))
            row["gap_recovery"] = gap_recovery(cur.average, comb_avg, ft_evaluations[k].average)
        rows.append(row)
    return rows


def mean_evaluations(runs: Sequence[Sequence[EvalResult]]) -> list[EvalResult]:
    """Cell-wise mean of several runs' evaluation sequences (e.g. over seeds).

    All runs must evaluate the same domains at the same steps.
    """
    if not runs:
        raise InvalidInput("nothing to average")
    out = []
    for step_evals in zip(*runs):
        first = step_evals[0]
        for ev in step_evals[1:]:
            if list(ev.errors) != list(first.errors):
                raise InvalidInput(f"runs disagree on the domains evaluated at step {first.step}")
        errors = {d: float(np.mean([ev.errors[d] for ev in step_evals])) for d in first.errors}
        out.append(EvalResult(first.step, first.method, errors))
    return out
