"""Markdown summaries and plot-ready CSVs for a finished run directory."""
from __future__ import annotations

import json
from pathlib import Path

from . import rundir


def _num(text: str, digits: int = 2) -> str:
    if text in ("", None):
        return ""
    return f"{float(text):.{digits}f}"


def markdown_table(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def eval_matrix_markdown(path: Path) -> str:
    rows = rundir.read_csv(path)
    if not rows:
        return ""
    header = list(rows[0])
    body = [[r["step"], r["method"], *[_num(r[h]) for h in header[2:]]] for r in rows]
    return markdown_table(header, body)


def metrics_markdown(path: Path) -> str:
    rows = rundir.read_csv(path)
    if not rows:
        return "(no expansion steps)\n"
    body = [
        [r["step"], r["method"], _num(r["gap_recovery"], 3), _num(r["rel_learning"], 3), _num(r["rel_forgetting"], 3)]
        for r in rows
    ]
    return markdown_table(list(rundir.METRIC_COLUMNS), body)


def _method_dirs(root: Path, config: dict) -> dict[str, Path]:
    if "methods" in config:
        return {m: root / m for m in config["methods"]}
    return {config.get("method", "run"): root}


def lwf_ce_rows(method: str, run: Path) -> list[list]:
    """Per-iteration LWF cross-entropy for the expansion steps of one run."""
    rows = []
    for path in sorted((run / "logs").glob("step_*_iters.csv"), key=lambda p: int(p.stem.split("_")[1])):
        step = int(path.stem.split("_")[1])
        if step == 0:
            continue
        for r in rundir.read_csv(path):
            if r["LWF_CE"] != "":
                rows.append([method, step, int(r["iteration"]), r["LWF_CE"]])
    return rows


def build_report(root: Path) -> str:
    """Write fig-style CSVs under ``results/`` and return the Markdown report."""
    root = Path(root)
    cfg_path = root / "config.json"
    if not cfg_path.is_file():
        raise FileNotFoundError(f"not a run directory (missing {cfg_path})")
    config = json.loads(cfg_path.read_text())
    results = root / "results"
    out = [f"# Run report: {root.name}\n"]

    sweep = results / "sweep.csv"
    if sweep.is_file():
        rows = rundir.read_csv(sweep)
        rundir.write_csv(results / "fig3_sweep.csv", list(rows[0]), [list(r.values()) for r in rows])
        out.append(f"\n## Scale sweep onto {config.get('target')}\n\n")
        header = list(rows[0])
        out.append(markdown_table(header, [[r["method"], r["alpha"], *[_num(r[h]) for h in header[2:]]] for r in rows]))
        return "".join(out)

    dirs = _method_dirs(root, config)
    ce_rows = []
    for name, d in dirs.items():
        matrix = d / "results" / "eval_matrix.csv"
        if not matrix.is_file():
            raise FileNotFoundError(f"missing results file: {matrix}")
        out.append(f"\n## {name}: error rates (%)\n\n")
        out.append(eval_matrix_markdown(matrix))
        metrics = d / "results" / "metrics.csv"
        if metrics.is_file():
            out.append(f"\n### {name}: per-step metrics\n\n")
            out.append(metrics_markdown(metrics))
        if (d / "logs").is_dir():
            ce_rows += lwf_ce_rows(name, d)

    combined = results / "metrics.csv"
    if "methods" in config and combined.is_file():
        rows = rundir.read_csv(combined)
        rundir.write_csv(results / "fig1_metrics.csv", list(rundir.METRIC_COLUMNS),
                         [[r[c] for c in rundir.METRIC_COLUMNS] for r in rows])
        out.append("\n## Summary\n\n")
        finals = []
        for name, d in dirs.items():
            summary = json.loads((d / "results" / "summary.json").read_text())
            avg = summary.get("final_average", summary.get("average"))
            m = summary.get("metrics", [])

            def mean(key):
                vals = [x[key] for x in m if x.get(key) is not None]
                return f"{sum(vals) / len(vals):.3f}" if vals else ""

            finals.append([name, f"{avg:.2f}", mean("gap_recovery"), mean("rel_learning"), mean("rel_forgetting")])
        out.append(markdown_table(["method", "final avg", "mean GR", "mean RL", "mean RF"], finals))
    if ce_rows:
        rundir.write_csv(results / "fig2_lwf_ce.csv", ["method", "step", "iteration", "LWF_CE"], ce_rows)
    return "".join(out)
