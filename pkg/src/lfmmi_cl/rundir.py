"""Run-directory writers and readers.

A single-method run directory holds::

    config.json                resolved configuration
    checkpoints/step_k.bin     model after step k (step 0 is the seed model)
    state/step_k.state         full ClState after step k, for resuming
    logs/step_k_iters.csv      per-iteration objective trace
    results/eval_matrix.csv    triangular error matrix, one row per step
    results/metrics.csv        per-step gap recovery, relative learning/forgetting
    results/summary.json       everything above in one document

Multi-method runs put one such directory per method under the run root and
write combined ``results/`` files at the root. Nothing written here carries a
timestamp, so identical runs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

from . import harness, net
from .evaluation import EvalResult

METRIC_COLUMNS = ("step", "method", "gap_recovery", "rel_learning", "rel_forgetting")


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_config(root: Path, config: harness.PipelineConfig, extra: dict | None = None) -> None:
    d = config.to_dict()
    if extra:
        d.update(extra)
    write_json(root / "config.json", d)


def write_iter_log(path: Path, trace: harness.IterationLog) -> None:
    write_csv(path, trace.columns, trace.rows)


def eval_matrix_rows(evaluations: Sequence[EvalResult], domains: Sequence[str]) -> list[list]:
    rows = []
    for ev in evaluations:
        cells = [ev.errors.get(d) for d in domains]
        rows.append([ev.step, ev.method, *cells, ev.average])
    return rows


def write_eval_matrix(path: Path, evaluations: Sequence[EvalResult], domains: Sequence[str]) -> None:
    write_csv(path, ["step", "method", *domains, "Avg"], eval_matrix_rows(evaluations, domains))


def metric_rows(metrics: Sequence[dict]) -> list[list]:
    return [[m[c] for c in METRIC_COLUMNS] for m in metrics]


def write_method_run(
    root: Path, run: harness.MethodRun, metrics: Sequence[dict], domains: Sequence[str], seed_log=None
) -> dict:
    """Write one method's run directory and return its summary document."""
    write_config(root, run.config)
    for k, state in enumerate(run.states):
        net.save_checkpoint(state.params, root / "checkpoints" / f"step_{k}.bin")
        harness.save_state(state, root / "state" / f"step_{k}.state")
    for k, trace in enumerate(run.logs):
        if k == 0 and seed_log is not None:
            trace = seed_log
        write_iter_log(root / "logs" / f"step_{k}_iters.csv", trace)
    write_eval_matrix(root / "results" / "eval_matrix.csv", run.evaluations, domains)
    write_csv(root / "results" / "metrics.csv", METRIC_COLUMNS, metric_rows(metrics))
    summary = {
        "method": run.method,
        "domains": list(domains),
        "evaluations": [{"step": e.step, "errors": e.errors, "average": e.average} for e in run.evaluations],
        "seed_errors": run.states[0].seed_errors,
        "source_target_errors": [s.history[-1].source_target_error for s in run.states],
        "metrics": list(metrics),
        "final_average": run.final.average,
    }
    write_json(root / "results" / "summary.json", summary)
    return summary


def write_comb(root: Path, comb: harness.CombResult, config: harness.PipelineConfig, domains) -> dict:
    write_config(root, config)
    net.save_checkpoint(comb.params, root / "checkpoints" / "comb.bin")
    write_iter_log(root / "logs" / "comb_iters.csv", comb.log)
    write_eval_matrix(root / "results" / "eval_matrix.csv", [comb.evaluation], domains)
    summary = {"method": "comb", "domains": list(domains), "errors": comb.evaluation.errors,
               "average": comb.evaluation.average}
    write_json(root / "results" / "summary.json", summary)
    return summary


def write_pipeline(root: Path, result: harness.PipelineResult, domains: Sequence[str]) -> dict:
    """Write a pipeline result; flat layout for one method, per-method subdirectories otherwise."""
    root = Path(root)
    names = [*result.runs, *(["comb"] if result.comb is not None else [])]
    if len(names) == 1:
        if result.comb is not None:
            return write_comb(root, result.comb, result.config.with_method("comb"), domains)
        name = names[0]
        return write_method_run(root, result.runs[name], result.metrics(name), domains, result.seed_log)
    write_config(root, result.config, {"methods": names})
    summaries = {}
    all_metrics = []
    all_evals = []
    for name, run in result.runs.items():
        m = result.metrics(name)
        for row in m:
            all_metrics.append({**row, "method": name})
        all_evals += [EvalResult(e.step, name, e.errors) for e in run.evaluations]
        summaries[name] = write_method_run(root / name, run, m, domains, result.seed_log)
    if result.comb is not None:
        summaries["comb"] = write_comb(root / "comb", result.comb, result.config.with_method("comb"), domains)
        all_evals.append(result.comb.evaluation)
    write_eval_matrix(root / "results" / "eval_matrix.csv", all_evals, domains)
    write_csv(root / "results" / "metrics.csv", METRIC_COLUMNS, metric_rows(all_metrics))
    summary = {"methods": names, "domains": list(domains), "runs": summaries}
    write_json(root / "results" / "summary.json", summary)
    return summary
