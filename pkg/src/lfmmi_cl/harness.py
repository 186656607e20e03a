"""Continual-learning pipeline: seed training, expansion steps, Comb, sweeps."""
from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import losses, net, serialize
from .errors import InvalidInput, NoPath, NumericalError
from .evaluation import EvalResult, decode_and_score, step_metrics
from .graph import (
    BigramLm,
    Graph,
    build_denominator_graph,
    build_numerator_graph,
    estimate_bigram_lm,
    with_self_loops,
)
from .synth import Dataset

log = logging.getLogger(__name__)

METHODS = ("ft", "ewc", "lwf", "denlwf", "comb")
CL_METHODS = ("ft", "ewc", "lwf", "denlwf")


@dataclass
class PipelineConfig:
    method: str = "denlwf"
    alpha_lwf: float = 1.0
    alpha_denlwf: float = 0.6
    alpha_ewc: float = 300.0
    epochs_seed: int = 10
    epochs_step: int = 10
    epochs_comb: int = 10
    learning_rate: float = 0.001
    lr_final_factor: float = 1.0
    momentum: float = 0.9
    minibatch_size: int = 8
    master_seed: int = 0
    lm_smoothing: float = 1.0
    self_loop_prob: float = 0.5
    freeze_den_graph: bool = False
    gamma_src_graph: str = "current"
    denlwf_offset: bool = True
    ewc_update: str = "proximal"
    context_radius: int = 1
    hidden_dims: tuple[int, ...] = (32, 32)
    threads: int = 1

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.method not in METHODS:
            raise InvalidInput(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.ewc_update not in ("proximal", "gradient"):
            raise InvalidInput("ewc_update must be 'proximal' or 'gradient'")
        if self.gamma_src_graph not in ("current", "previous"):
            raise InvalidInput("gamma_src_graph must be 'current' or 'previous'")
        for name in ("alpha_lwf", "alpha_denlwf", "alpha_ewc"):
            if getattr(self, name) < 0:
                raise InvalidInput(f"{name} must be nonnegative")
        for name in ("epochs_seed", "epochs_step", "epochs_comb"):
            if getattr(self, name) < 0:
                raise InvalidInput(f"{name} must be nonnegative")
        if self.minibatch_size < 1 or self.threads < 1:
            raise InvalidInput("minibatch_size and threads must be positive")

    @property
    def alpha(self) -> float:
        return {"ewc": self.alpha_ewc, "lwf": self.alpha_lwf, "denlwf": self.alpha_denlwf}.get(self.method, 0.0)

    def with_method(self, method: str, alpha: float | None = None) -> "PipelineConfig":
        cfg = dataclasses.replace(self, method=method)
        if alpha is not None and method in ("ewc", "lwf", "denlwf"):
            setattr(cfg, f"alpha_{method}", float(alpha))
        return cfg

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidInput(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def net_config(self, feature_dim: int, num_labels: int) -> net.NetConfig:
        return net.NetConfig(feature_dim, num_labels, self.context_radius, self.hidden_dims)


# --------------------------------------------------------------------------


class PipelineData:
    """Datasets in pipeline order plus the shared decoding graph.

    The decoding graph uses a bigram estimated on every domain's training
    transcripts, so it is identical for all steps and methods.
    """

    def __init__(self, datasets: dict[str, Dataset], lm_smoothing: float = 1.0, self_loop_prob: float = 0.5):
        if not datasets:
            raise InvalidInput("pipeline needs at least one dataset")
        self.datasets = dict(datasets)
        self.order = list(datasets)
        first = self.datasets[self.order[0]]
        self.num_labels = first.num_labels
        self.feature_dim = first.feature_dim
        for ds in self.datasets.values():
            if (ds.num_labels, ds.feature_dim) != (self.num_labels, self.feature_dim):
                raise InvalidInput("all domains must share label count and feature dimension")
        transcripts = [u.labels for ds in self.datasets.values() for u in ds.train]
        self.decode_lm = with_self_loops(estimate_bigram_lm(transcripts, self.num_labels, lm_smoothing), self_loop_prob)
        self.decode_graph = build_denominator_graph(self.decode_lm)
        self._num_graphs: dict[tuple[int, ...], Graph] = {}

    def num_graph(self, utt) -> Graph:
        g = self._num_graphs.get(utt.labels)
        if g is None:
            g = build_numerator_graph(utt.labels, self.num_labels, allow_self_loops=True)
            self._num_graphs[utt.labels] = g
        return g

    def evaluate(self, params: net.ModelParams, domains: Sequence[str], step: int, method: str) -> EvalResult:
        errors = {d: decode_and_score(params, self.decode_graph, self.datasets[d].test).error_rate for d in domains}
        return EvalResult(step, method, errors)


def den_lm_for(datasets: Sequence[Dataset], num_labels: int, config: "PipelineConfig") -> BigramLm:
    lm = estimate_bigram_lm([u.labels for ds in datasets for u in ds.train], num_labels, config.lm_smoothing)
    return with_self_loops(lm, config.self_loop_prob)


# --------------------------------------------------------------------------


@dataclass
class StepRecord:
    step: int
    domain: str
    errors: dict[str, float]
    source_target_error: float | None = None  # source model on this step's target
    fisher_median: float | None = None


@dataclass
class ClState:
    params: net.ModelParams
    step: int
    method: str
    domains: list[str]
    den_lm: BigramLm
    seed_den_lm: BigramLm
    snapshots: list[losses.ClSnapshot] = field(default_factory=list)
    history: list[StepRecord] = field(default_factory=list)
    seed_errors: dict[str, float] = field(default_factory=dict)
    initial_params: net.ModelParams | None = None

    def copy(self) -> "ClState":
        return dataclasses.replace(
            self,
            params=self.params.copy(),
            domains=list(self.domains),
            snapshots=list(self.snapshots),
            history=list(self.history),
            seed_errors=dict(self.seed_errors),
        )


@dataclass
class IterationLog:
    """Per-minibatch training trace; columns mirror ``logs/step_k_iters.csv``."""

    rows: list[tuple] = field(default_factory=list)
    columns: tuple[str, ...] = ("iteration", "F_MMI", "F_reg", "LWF_CE", "reg_grad_inf_norm")


@dataclass
class Regularizer:
    """Method-specific inputs fixed before a step's training starts."""

    method: str
    alpha: float
    y_src: dict[str, np.ndarray] = field(default_factory=dict)
    gamma_src: dict[str, np.ndarray] = field(default_factory=dict)
    snapshots: list[losses.ClSnapshot] = field(default_factory=list)
    include_offset: bool = True


@dataclass
class StepResult:
    state: ClState
    log: IterationLog
    evaluation: EvalResult
    regularizer: Regularizer | None = None


def _clean(x: float) -> float:
    # turns -0.0 into 0.0 so zero-scale runs log identically
    return float(x) + 0.0


def _utterance_terms(utt, em, data: PipelineData, den: Graph, reg: Regularizer | None):
    try:
        f_mmi, g = losses.lfmmi(data.num_graph(utt), den, em)
    except NoPath as e:
        log.warning("dropping %s from minibatch: %s", utt.uid, e)
        return None
    f_reg = 0.0
    reg_norm = 0.0
    ce = None
    if reg is not None:
        y_src = reg.y_src.get(utt.uid)
        if y_src is not None:
            ce = losses.lwf_cross_entropy(em, y_src)
        if reg.method == "lwf" and y_src is not None:
            f_reg, rg = losses.lwf(em, y_src, reg.alpha)
            g = g + rg
            reg_norm = float(np.abs(rg).max())
        elif reg.method == "denlwf":
            gs = reg.gamma_src.get(utt.uid)
            if gs is not None:
                try:
                    f_reg, rg = losses.denlwf(den, em, gs, reg.alpha, reg.include_offset)
                except NoPath as e:
                    log.warning("no DenLWF term for %s: %s", utt.uid, e)
                else:
                    g = g + rg
                    reg_norm = float(np.abs(rg).max())
    return f_mmi, g, f_reg, ce, reg_norm


def minibatch_gradient(
    params, batch, data: PipelineData, den: Graph, reg: Regularizer | None, pool=None, ewc_in_grad: bool = True
):
    """Summed objective terms and parameter gradient over one minibatch.

    The EWC penalty is evaluated once per minibatch; its gradient is left out
    of the returned gradient when ``ewc_in_grad`` is false (proximal update).
    """
    ems, cache = net.forward_many(params, [u.features for u in batch])
    if pool is None:
        terms = [_utterance_terms(u, em, data, den, reg) for u, em in zip(batch, ems)]
    else:
        terms = list(pool.map(lambda ue: _utterance_terms(ue[0], ue[1], data, den, reg), zip(batch, ems)))
    grads = []
    f_mmi = f_reg = 0.0
    ce_sum = None
    reg_norm = 0.0
    for em, term in zip(ems, terms):
        if term is None:
            grads.append(np.zeros_like(em))
            continue
        fm, g, fr, ce, rn = term
        f_mmi += fm
        f_reg += fr
        reg_norm = max(reg_norm, rn)
        if ce is not None:
            ce_sum = ce if ce_sum is None else ce_sum + ce
        grads.append(g)
    grad = net.backward(params, cache, grads)
    if reg is not None and reg.method == "ewc":
        val, pg = losses.ewc_penalty(params.vector, reg.snapshots, reg.alpha)
        f_reg += val
        if ewc_in_grad:
            grad = grad + pg
        reg_norm = float(np.abs(pg).max()) if pg.size else 0.0
    return f_mmi, f_reg, ce_sum, reg_norm, grad


def _shuffle_seed(config: PipelineConfig, stream: int, step: int, epoch: int):
    return np.random.SeedSequence([config.master_seed, stream, step, epoch])


def train(
    params: net.ModelParams,
    utterances: Sequence,
    data: PipelineData,
    den: Graph,
    config: PipelineConfig,
    epochs: int,
    stream: int,
    step: int,
    reg: Regularizer | None = None,
) -> tuple[net.ModelParams, IterationLog]:
    """Momentum SGD ascent on LF-MMI plus the optional regularizer.

    With ``epochs == 0`` no update happens, but the first minibatch's
    objective terms are still logged as iteration 0.
    """
    trace = IterationLog()
    if not utterances:
        raise InvalidInput("training set is empty")
    bs = config.minibatch_size
    batches_per_epoch = (len(utterances) + bs - 1) // bs
    total = max(1, epochs * batches_per_epoch)
    velocity = None
    it = 0
    proximal = reg is not None and reg.method == "ewc" and config.ewc_update == "proximal"
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        if epochs == 0:
            order = np.random.default_rng(_shuffle_seed(config, stream, step, 0)).permutation(len(utterances))
            batch = [utterances[i] for i in order[:bs]]
            fm, fr, ce, rn, _ = minibatch_gradient(params, batch, data, den, reg, pool)
            trace.rows.append((0, _clean(fm), _clean(fr), ce, rn))
            return params, trace
        for epoch in range(epochs):
            order = np.random.default_rng(_shuffle_seed(config, stream, step, epoch)).permutation(len(utterances))
            for b in range(batches_per_epoch):
                batch = [utterances[i] for i in order[b * bs : (b + 1) * bs]]
                fm, fr, ce, rn, grad = minibatch_gradient(params, batch, data, den, reg, pool, not proximal)
                if not (np.isfinite(fm) and np.isfinite(fr)):
                    raise NumericalError(f"objective diverged at iteration {it}", iteration=it)
                trace.rows.append((it, _clean(fm), _clean(fr), ce, rn))
                lr = config.learning_rate * (1.0 - (1.0 - config.lr_final_factor) * it / total)
                try:
                    params, velocity = net.sgd_step(params, grad, lr, config.momentum, velocity)
                except NumericalError as e:
                    raise NumericalError(f"{e} at iteration {it}", iteration=it) from e
                if proximal:
                    vec = losses.ewc_proximal_step(params.vector, reg.snapshots, reg.alpha, lr)
                    params = net.ModelParams(params.config, vec)
                it += 1
    finally:
        if pool is not None:
            pool.shutdown()
    return params, trace


# --------------------------------------------------------------------------

SEED_STREAM = 1
STEP_STREAM = 2
COMB_STREAM = 3


def initial_params(config: PipelineConfig, data: PipelineData) -> net.ModelParams:
    seed = np.random.SeedSequence([config.master_seed, 0xC0FFEE]).generate_state(1)[0]
    return net.ModelParams.init(config.net_config(data.feature_dim, data.num_labels), int(seed))


def train_seed(config: PipelineConfig, data: PipelineData) -> tuple[ClState, IterationLog]:
    """Plain LF-MMI from random init on the first domain; evaluated on all domains."""
    seed_name = data.order[0]
    ds = data.datasets[seed_name]
    if not ds.train:
        raise InvalidInput(f"seed domain {seed_name} has no training utterances")
    lm = den_lm_for([ds], data.num_labels, config)
    den = build_denominator_graph(lm)
    p0 = initial_params(config, data)
    params, trace = train(p0, ds.train, data, den, config, config.epochs_seed, SEED_STREAM, 0)
    all_eval = data.evaluate(params, data.order, 0, "seed")
    state = ClState(
        params=params,
        step=0,
        method="seed",
        domains=[seed_name],
        den_lm=lm,
        seed_den_lm=lm,
        history=[StepRecord(0, seed_name, {seed_name: all_eval.errors[seed_name]})],
        seed_errors=all_eval.errors,
        initial_params=p0,
    )
    return state, trace


def prepare_regularizer(state: ClState, target: Dataset, den: Graph, data: PipelineData, config: PipelineConfig):
    """Reference caches / Fisher snapshot computed once from the source model."""
    method = config.method
    if method == "ft":
        return None, None
    reg = Regularizer(method, config.alpha, include_offset=config.denlwf_offset)
    fisher_median = None
    if method == "ewc":
        snaps = list(state.snapshots)
        if len(snaps) < state.step + 1:
            src = data.datasets[state.domains[-1]]
            src_den = build_denominator_graph(state.den_lm)
            est = losses.estimate_fisher(state.params, src.train, data.num_graph, src_den)
            fisher_median = est.raw_median
            snaps.append(losses.ClSnapshot(state.step, state.params.vector.copy(), est.diagonal))
        reg.snapshots = snaps
        return reg, fisher_median
    train_utts = target.train
    # LWF cross-entropy is logged for both output-level methods
    y = losses.compute_reference_posteriors(state.params, train_utts)
    reg.y_src = {u.uid: m for u, m in zip(train_utts, y)}
    if method == "denlwf":
        g_den = den if config.gamma_src_graph == "current" else build_denominator_graph(state.den_lm)
        occ = losses.compute_reference_den_occupancies(state.params, g_den, train_utts)
        reg.gamma_src = {u.uid: m for u, m in zip(train_utts, occ) if m is not None}
    return reg, fisher_median


def expand_step(state: ClState, target_name: str, config: PipelineConfig, data: PipelineData) -> StepResult:
    """One domain-expansion step from ``state`` onto ``target_name``."""
    if config.method == "comb":
        raise InvalidInput("comb is not a sequential method; use train_combined")
    target = data.datasets[target_name]
    step = state.step + 1
    source_target = data.evaluate(state.params, [target_name], step, "source").errors[target_name]
    lm = state.seed_den_lm if config.freeze_den_graph else den_lm_for([target], data.num_labels, config)
    den = build_denominator_graph(lm)
    reg, fisher_median = prepare_regularizer(state, target, den, data, config)
    params, trace = train(state.params, target.train, data, den, config, config.epochs_step, STEP_STREAM, step, reg)
    domains = [*state.domains, target_name]
    ev = data.evaluate(params, domains, step, config.method)
    new = ClState(
        params=params,
        step=step,
        method=config.method,
        domains=domains,
        den_lm=lm,
        seed_den_lm=state.seed_den_lm,
        snapshots=list(reg.snapshots) if reg is not None and config.method == "ewc" else [],
        history=[*state.history, StepRecord(step, target_name, ev.errors, source_target, fisher_median)],
        seed_errors=dict(state.seed_errors),
        initial_params=state.initial_params,
    )
    return StepResult(new, trace, ev, reg)


@dataclass
class CombResult:
    params: net.ModelParams
    evaluation: EvalResult
    log: IterationLog


def train_combined(config: PipelineConfig, data: PipelineData) -> CombResult:
    """Single LF-MMI run on all domains' training data; regularizer settings are ignored."""
    utts = [u for name in data.order for u in data.datasets[name].train]
    lm = den_lm_for([data.datasets[n] for n in data.order], data.num_labels, config)
    den = build_denominator_graph(lm)
    params, trace = train(initial_params(config, data), utts, data, den, config, config.epochs_comb, COMB_STREAM, 0)
    return CombResult(params, data.evaluate(params, data.order, 0, "comb"), trace)


# --------------------------------------------------------------------------


@dataclass
class MethodRun:
    method: str
    config: PipelineConfig
    evaluations: list[EvalResult]
    states: list[ClState]
    logs: list[IterationLog]

    @property
    def final(self) -> EvalResult:
        return self.evaluations[-1]


def run_method(config: PipelineConfig, data: PipelineData, seed_state: ClState, seed_log: IterationLog | None = None):
    seed_eval = EvalResult(0, config.method, {data.order[0]: seed_state.seed_errors[data.order[0]]})
    evals, states, logs = [seed_eval], [seed_state], [seed_log or IterationLog()]
    state = seed_state.copy()
    for target in data.order[1:]:
        res = expand_step(state, target, config, data)
        state = res.state
        evals.append(res.evaluation)
        states.append(state)
        logs.append(res.log)
    return MethodRun(config.method, config, evals, states, logs)


def sweep_alpha(
    config: PipelineConfig,
    source_state: ClState,
    target_name: str,
    alphas: Sequence[float],
    methods: Sequence[str],
    data: PipelineData,
) -> list[dict]:
    """Rerun one expansion step for every (method, alpha) pair."""
    rows = []
    for method in methods:
        for a in alphas:
            cfg = config.with_method(method, a)
            res = expand_step(source_state.copy(), target_name, cfg, data)
            rows.append({"method": method, "alpha": float(a), "errors": res.evaluation.errors,
                         "average": res.evaluation.average})
    return rows


# --------------------------------------------------------------------------
# whole-pipeline driver

# named variants that are not methods in their own right
VARIANTS = {"denlwf_nooffset": ("denlwf", {"denlwf_offset": False})}


def variant_config(config: PipelineConfig, name: str) -> PipelineConfig:
    if name in VARIANTS:
        method, overrides = VARIANTS[name]
        return dataclasses.replace(config.with_method(method), **overrides)
    if name not in METHODS:
        raise InvalidInput(f"unknown method {name!r}; choose from {', '.join([*METHODS, *VARIANTS])}")
    return config.with_method(name)


@dataclass
class PipelineResult:
    config: PipelineConfig
    seed_state: ClState
    seed_log: IterationLog
    runs: dict[str, MethodRun] = field(default_factory=dict)
    comb: CombResult | None = None

    def metrics(self, name: str) -> list[dict]:
        """Per-step metrics for one run; gap recovery only when FT and Comb exist."""
        run = self.runs[name]
        src = [None] + [s.history[-1].source_target_error for s in run.states[1:]]
        ft = self.runs.get("ft")
        return step_metrics(
            run.evaluations,
            src,
            ft.evaluations if ft is not None else None,
            self.comb.evaluation.errors if self.comb is not None else None,
        )


def run_pipeline(config: PipelineConfig, data: PipelineData, methods: Sequence[str]) -> PipelineResult:
    """Seed model once, then every requested method (and Comb) from it."""
    methods = list(dict.fromkeys(methods))
    cfgs = {m: variant_config(config, m) for m in methods}
    seed_state, seed_log = train_seed(config, data)
    result = PipelineResult(config, seed_state, seed_log)
    for name, cfg in cfgs.items():
        if cfg.method == "comb":
            result.comb = train_combined(cfg, data)
        else:
            result.runs[name] = run_method(cfg, data, seed_state, seed_log)
    return result


# --------------------------------------------------------------------------
# state files


def state_bytes(state: ClState) -> bytes:
    """Serialise a ClState (model, snapshots, LMs, history) to one container."""
    cfg = state.params.config
    arrays = {
        "params": state.params.vector,
        "den_lm": state.den_lm.log_probs,
        "seed_den_lm": state.seed_den_lm.log_probs,
    }
    if state.initial_params is not None:
        arrays["initial_params"] = state.initial_params.vector
    for i, snap in enumerate(state.snapshots):
        arrays[f"snapshot{i}_params"] = snap.params
        arrays[f"snapshot{i}_fisher"] = snap.fisher
    meta = {
        "net": {
            "feature_dim": cfg.feature_dim,
            "num_labels": cfg.num_labels,
            "context_radius": cfg.context_radius,
            "hidden_dims": list(cfg.hidden_dims),
        },
        "step": state.step,
        "method": state.method,
        "domains": state.domains,
        "snapshot_steps": [s.step for s in state.snapshots],
        "history": [dataclasses.asdict(h) for h in state.history],
        "seed_errors": state.seed_errors,
    }
    return serialize.dumps("cl-state", meta, arrays)


def state_from_bytes(data: bytes) -> ClState:
    meta, arrays = serialize.loads(data, "cl-state")
    cfg = net.NetConfig(**meta["net"])
    p = cfg.num_labels
    snaps = [
        losses.ClSnapshot(s, arrays[f"snapshot{i}_params"], arrays[f"snapshot{i}_fisher"])
        for i, s in enumerate(meta["snapshot_steps"])
    ]
    init = arrays.get("initial_params")
    return ClState(
        params=net.ModelParams(cfg, arrays["params"]),
        step=int(meta["step"]),
        method=meta["method"],
        domains=list(meta["domains"]),
        den_lm=BigramLm(p, arrays["den_lm"]),
        seed_den_lm=BigramLm(p, arrays["seed_den_lm"]),
        snapshots=snaps,
        history=[StepRecord(**h) for h in meta["history"]],
        seed_errors=dict(meta["seed_errors"]),
        initial_params=None if init is None else net.ModelParams(cfg, init),
    )


def save_state(state: ClState, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(state_bytes(state))


def load_state(path) -> ClState:
    return state_from_bytes(Path(path).read_bytes())
