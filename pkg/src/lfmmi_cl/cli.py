"""Command-line entry point: ``lfmmi-cl <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import sys
import typing
from pathlib import Path

from . import harness, net, rundir, synth
from .errors import InvalidInput, LfmmiClError
from .harness import PipelineConfig

log = logging.getLogger("lfmmi_cl")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --------------------------------------------------------------------------
# configuration


def _field_types() -> dict[str, typing.Any]:
    hints = typing.get_type_hints(PipelineConfig)
    return {f.name: hints[f.name] for f in dataclasses.fields(PipelineConfig)}


def parse_value(key: str, text: str):
    """Convert a config-file or ``--set`` string to the field's type."""
    types = _field_types()
    if key not in types:
        raise UsageError(f"unknown config key {key!r}")
    t = types[key]
    text = text.strip().strip('"').strip("'")
    try:
        if t is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if t is int:
            return int(text)
        if t is float:
            return float(text)
        if t is str:
            return text
        # hidden_dims
        return tuple(int(x) for x in text.replace("(", "").replace(")", "").split(",") if x.strip())
    except ValueError:
        raise UsageError(f"bad value for {key}: {text!r}") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` and ``;`` start comments."""
    p = Path(path)
    if not p.is_file():
        raise RuntimeFailure(f"config file not found: {p}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string("[config]\n" + p.read_text())
    except configparser.Error as e:
        raise UsageError(f"cannot parse config file {p}: {e}") from None
    return {k: parse_value(k, v) for k, v in cp["config"].items()}


def resolve_config(args, **forced) -> PipelineConfig:
    """Defaults, then the config file, then command-line flags."""
    values: dict = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = parse_value(k.strip(), v)
    for flag, key in (
        ("master_seed", "master_seed"),
        ("threads", "threads"),
        ("epochs_seed", "epochs_seed"),
        ("epochs_step", "epochs_step"),
        ("epochs_comb", "epochs_comb"),
        ("learning_rate", "learning_rate"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    values.update(forced)
    try:
        return PipelineConfig.from_dict(values)
    except InvalidInput as e:
        raise UsageError(str(e)) from None


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--master-seed", type=int)
    p.add_argument("--threads", type=int, help="worker threads per minibatch (default 1)")
    p.add_argument("--epochs-seed", type=int)
    p.add_argument("--epochs-step", type=int)
    p.add_argument("--epochs-comb", type=int)
    p.add_argument("--learning-rate", type=float)


# --------------------------------------------------------------------------
# helpers


def _load_data(path, config: PipelineConfig) -> harness.PipelineData:
    p = Path(path)
    if not (p / "domains.json").is_file():
        raise RuntimeFailure(f"dataset directory not found or incomplete: {p / 'domains.json'}")
    datasets = synth.load_pipeline(p)
    return harness.PipelineData(datasets, config.lm_smoothing, config.self_loop_prob)


def _load_state(path) -> harness.ClState:
    p = Path(path)
    if not p.is_file():
        raise RuntimeFailure(f"state file not found: {p}")
    return harness.load_state(p)


def _split_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _alphas(text: str) -> list[float]:
    try:
        vals = [float(x) for x in _split_list(text)]
    except ValueError:
        raise UsageError(f"--alphas must be comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError("--alphas is empty")
    return vals


def _methods(text: str, allowed) -> list[str]:
    names = _split_list(text)
    bad = [m for m in names if m not in allowed]
    if bad or not names:
        raise UsageError(f"unknown method(s) {', '.join(bad) or text!r}; choose from {', '.join(allowed)}")
    return names


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> None:
    knobs = synth.PipelineKnobs()
    if args.seed_utts is not None or args.step_utts is not None:
        knobs = dataclasses.replace(
            knobs,
            seed_utts=args.seed_utts if args.seed_utts is not None else knobs.seed_utts,
            step_utts=args.step_utts if args.step_utts is not None else knobs.step_utts,
        )
    datasets = synth.generate_pipeline(args.master_seed, knobs)
    synth.save_pipeline(datasets, args.out)
    for name, ds in datasets.items():
        print(f"{name}: {len(ds.train)} train, {len(ds.test)} test")


def cmd_train_seed(args) -> None:
    config = resolve_config(args)
    data = _load_data(args.data, config)
    state, trace = harness.train_seed(config, data)
    out = Path(args.out)
    rundir.write_config(out, config)
    net.save_checkpoint(state.params, out / "checkpoints" / "step_0.bin")
    harness.save_state(state, out / "state" / "step_0.state")
    rundir.write_iter_log(out / "logs" / "step_0_iters.csv", trace)
    seed_eval = harness.EvalResult(0, "seed", {data.order[0]: state.seed_errors[data.order[0]]})
    rundir.write_eval_matrix(out / "results" / "eval_matrix.csv", [seed_eval], data.order)
    rundir.write_json(out / "results" / "summary.json", {"method": "seed", "seed_errors": state.seed_errors})
    print(json.dumps(state.seed_errors, sort_keys=True))


def cmd_expand(args) -> None:
    config = resolve_config(args, method=args.method)
    if args.alpha is not None:
        config = config.with_method(args.method, args.alpha)
    if config.method == "comb":
        raise UsageError("expand does not accept method comb")
    data = _load_data(args.data, config)
    state = _load_state(args.state)
    if args.target not in data.datasets:
        raise UsageError(f"unknown target domain {args.target!r}; have {', '.join(data.order)}")
    res = harness.expand_step(state, args.target, config, data)
    k = res.state.step
    out = Path(args.out)
    rundir.write_config(out, config, {"target": args.target})
    net.save_checkpoint(res.state.params, out / "checkpoints" / f"step_{k}.bin")
    harness.save_state(res.state, out / "state" / f"step_{k}.state")
    rundir.write_iter_log(out / "logs" / f"step_{k}_iters.csv", res.log)
    rundir.write_eval_matrix(out / "results" / "eval_matrix.csv", [res.evaluation], res.state.domains)
    summary = {
        "method": config.method,
        "alpha": config.alpha,
        "step": k,
        "target": args.target,
        "errors": res.evaluation.errors,
        "average": res.evaluation.average,
        "source_target_error": res.state.history[-1].source_target_error,
    }
    rundir.write_json(out / "results" / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_run_pipeline(args) -> None:
    config = resolve_config(args)
    methods = _methods(args.method, [*harness.METHODS, *harness.VARIANTS])
    config = harness.variant_config(config, methods[0]) if len(methods) == 1 else config
    data = _load_data(args.data, config)
    result = harness.run_pipeline(config, data, methods)
    rundir.write_pipeline(Path(args.out), result, data.order)
    for name, run in result.runs.items():
        print(f"{name}: final average {run.final.average:.2f}")
    if result.comb is not None:
        print(f"comb: average {result.comb.evaluation.average:.2f}")


def cmd_sweep(args) -> None:
    config = resolve_config(args)
    alphas = _alphas(args.alphas)
    methods = _methods(args.methods, ("ewc", "lwf", "denlwf"))
    data = _load_data(args.data, config)
    if args.target not in data.datasets:
        raise UsageError(f"unknown target domain {args.target!r}; have {', '.join(data.order)}")
    if args.state:
        state = _load_state(args.state)
    else:
        state, _ = harness.train_seed(config, data)
    rows = harness.sweep_alpha(config, state, args.target, alphas, methods, data)
    out = Path(args.out)
    rundir.write_config(out, config, {"target": args.target, "alphas": alphas, "methods": methods})
    domains = list(rows[0]["errors"])
    rundir.write_csv(
        out / "results" / "sweep.csv",
        ["method", "alpha", *domains, "Avg"],
        [[r["method"], r["alpha"], *[r["errors"][d] for d in domains], r["average"]] for r in rows],
    )
    rundir.write_json(out / "results" / "summary.json", {"target": args.target, "source_step": state.step,
                                                         "rows": rows})
    for r in rows:
        print(f"{r['method']} alpha={r['alpha']:g} avg={r['average']:.2f}")


def cmd_report(args) -> None:
    from . import report

    root = Path(args.run)
    if not root.is_dir():
        raise RuntimeFailure(f"run directory not found: {root}")
    text = report.build_report(root)
    (root / "results").mkdir(parents=True, exist_ok=True)
    (root / "results" / "report.md").write_text(text)
    print(text, end="")


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lfmmi-cl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="write the five synthetic domains")
    g.add_argument("--out", required=True)
    g.add_argument("--master-seed", type=int, default=0)
    g.add_argument("--seed-utts", type=int, help="utterances in the seed domain")
    g.add_argument("--step-utts", type=int, help="utterances in each expansion domain")
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train-seed", help="train the seed model on the first domain")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_train_seed)

    e = sub.add_parser("expand", help="run one expansion step from a saved state")
    e.add_argument("--data", required=True)
    e.add_argument("--state", required=True, help="state file written by train-seed, expand or run-pipeline")
    e.add_argument("--target", required=True)
    e.add_argument("--method", required=True, choices=harness.CL_METHODS)
    e.add_argument("--alpha", type=float)
    e.add_argument("--out", required=True)
    _add_config_flags(e)
    e.set_defaults(func=cmd_expand)

    r = sub.add_parser("run-pipeline", help="seed model plus all expansion steps")
    r.add_argument("--data", required=True)
    r.add_argument("--method", default="denlwf", help="method or comma list, e.g. ft,ewc,lwf,denlwf,comb")
    r.add_argument("--out", required=True)
    _add_config_flags(r)
    r.set_defaults(func=cmd_run_pipeline)

    w = sub.add_parser("sweep", help="rerun one expansion step over a list of scales")
    w.add_argument("--data", required=True)
    w.add_argument("--state", help="source state; default trains the seed model")
    w.add_argument("--target", default="E")
    w.add_argument("--alphas", required=True)
    w.add_argument("--methods", default="lwf,denlwf")
    w.add_argument("--out", required=True)
    _add_config_flags(w)
    w.set_defaults(func=cmd_sweep)

    t = sub.add_parser("report", help="render Markdown tables and plot-ready CSVs for a run")
    t.add_argument("--run", required=True)
    t.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        args.func(args)
    except UsageError as e:
        print(f"lfmmi-cl {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeFailure, LfmmiClError, OSError) as e:
        print(f"lfmmi-cl {args.command}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
