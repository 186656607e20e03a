import dataclasses

import numpy as np
import pytest

from lfmmi_cl import harness, losses
from lfmmi_cl.errors import InvalidInput, NumericalError


def _same_log(a, b):
    return [r[:3] for r in a.rows] == [r[:3] for r in b.rows]


def test_zero_epoch_seed_returns_init(tiny_data, tiny_config):
    cfg = dataclasses.replace(tiny_config, epochs_seed=0)
    state, _ = harness.train_seed(cfg, tiny_data)
    assert state.params.vector.tobytes() == harness.initial_params(cfg, tiny_data).vector.tobytes()


def test_seed_training_improves_seed_domain(tiny_data, tiny_seed):
    state, trace = tiny_seed
    init_err = tiny_data.evaluate(state.initial_params, ["A"], 0, "init").errors["A"]
    assert state.seed_errors["A"] < init_err
    assert set(state.seed_errors) == set("ABCDE")
    assert trace.rows and trace.rows[-1][1] > trace.rows[0][1]


def test_seed_training_is_deterministic(tiny_data, tiny_config, tiny_seed):
    again, _ = harness.train_seed(tiny_config, tiny_data)
    assert again.params.vector.tobytes() == tiny_seed[0].params.vector.tobytes()


def test_threads_do_not_change_results(tiny_data, tiny_config, tiny_seed):
    cfg = dataclasses.replace(tiny_config, threads=3)
    state, _ = harness.train_seed(cfg, tiny_data)
    assert state.params.vector.tobytes() == tiny_seed[0].params.vector.tobytes()


def test_ft_step_has_no_regularizer(tiny_data, tiny_config, tiny_seed):
    res = harness.expand_step(tiny_seed[0].copy(), "B", tiny_config.with_method("ft"), tiny_data)
    assert res.regularizer is None
    assert all(r[2] == 0.0 and r[3] is None for r in res.log.rows)
    assert res.state.snapshots == []
    assert list(res.evaluation.errors) == ["A", "B"]


def test_denlwf_zero_start(tiny_data, tiny_config, tiny_seed):
    cfg = dataclasses.replace(tiny_config.with_method("denlwf"), epochs_step=0)
    state = tiny_seed[0]
    res = harness.expand_step(state.copy(), "B", cfg, tiny_data)
    assert res.state.params.vector.tobytes() == state.params.vector.tobytes()
    (row,) = res.log.rows
    assert row[0] == 0 and row[4] < 1e-9
    # the cross-entropy is still logged for the visualization
    assert row[3] is not None


def test_ewc_zero_alpha_equals_ft(tiny_data, tiny_config, tiny_seed):
    ft = harness.expand_step(tiny_seed[0].copy(), "B", tiny_config.with_method("ft"), tiny_data)
    ewc = harness.expand_step(tiny_seed[0].copy(), "B", tiny_config.with_method("ewc", 0.0), tiny_data)
    assert ewc.state.params.vector.tobytes() == ft.state.params.vector.tobytes()
    assert _same_log(ft.log, ewc.log)
    assert ewc.evaluation.errors == ft.evaluation.errors


@pytest.mark.parametrize("method", ["lwf", "denlwf"])
def test_zero_alpha_sweep_point_equals_ft(tiny_data, tiny_config, tiny_seed, method):
    ft = harness.expand_step(tiny_seed[0].copy(), "E", tiny_config.with_method("ft"), tiny_data)
    rows = harness.sweep_alpha(tiny_config, tiny_seed[0], "E", [0.0], [method], tiny_data)
    assert rows[0]["errors"] == ft.evaluation.errors


def test_singleton_sweep_equals_expand(tiny_data, tiny_config, tiny_seed):
    res = harness.expand_step(tiny_seed[0].copy(), "E", tiny_config.with_method("lwf", 1.0), tiny_data)
    rows = harness.sweep_alpha(tiny_config, tiny_seed[0], "E", [1.0], ["lwf"], tiny_data)
    assert rows[0]["errors"] == res.evaluation.errors
    assert rows[0]["average"] == res.evaluation.average


def test_sweep_row_count(tiny_data, tiny_config, tiny_seed):
    cfg = dataclasses.replace(tiny_config, epochs_step=0)
    rows = harness.sweep_alpha(cfg, tiny_seed[0], "B", [0.2, 0.4, 0.8], ["lwf", "denlwf"], tiny_data)
    assert len(rows) == 6
    assert [(r["method"], r["alpha"]) for r in rows[:3]] == [("lwf", 0.2), ("lwf", 0.4), ("lwf", 0.8)]


def test_ewc_snapshots_track_completed_steps(tiny_data, tiny_config, tiny_seed):
    run = harness.run_method(tiny_config.with_method("ewc"), tiny_data, tiny_seed[0])
    assert [len(s.snapshots) for s in run.states] == [0, 1, 2, 3, 4]
    assert [s.step for s in run.states[-1].snapshots] == [0, 1, 2, 3]
    medians = [s.history[-1].fisher_median for s in run.states[1:]]
    assert all(m is not None and m > 0 for m in medians)


def test_evaluation_rows_are_triangular(tiny_data, tiny_config, tiny_seed):
    run = harness.run_method(tiny_config.with_method("ft"), tiny_data, tiny_seed[0])
    assert [list(e.errors) for e in run.evaluations] == [list("ABCDE"[: k + 1]) for k in range(5)]


def test_state_round_trip_and_resume(tiny_data, tiny_config, tiny_seed, tmp_path):
    cfg = tiny_config.with_method("ewc")
    s1 = harness.expand_step(tiny_seed[0].copy(), "B", cfg, tiny_data).state
    direct = harness.expand_step(s1.copy(), "C", cfg, tiny_data)
    harness.save_state(s1, tmp_path / "s1.state")
    loaded = harness.load_state(tmp_path / "s1.state")
    assert harness.state_bytes(loaded) == harness.state_bytes(s1)
    resumed = harness.expand_step(loaded, "C", cfg, tiny_data)
    assert resumed.state.params.vector.tobytes() == direct.state.params.vector.tobytes()
    assert resumed.evaluation.errors == direct.evaluation.errors
    assert harness.state_bytes(resumed.state) == harness.state_bytes(direct.state)


def test_comb_is_deterministic_and_ignores_alpha(tiny_data, tiny_config):
    a = harness.train_combined(tiny_config, tiny_data)
    b = harness.train_combined(dataclasses.replace(tiny_config, alpha_lwf=9.0, alpha_ewc=1.0), tiny_data)
    assert a.params.vector.tobytes() == b.params.vector.tobytes()
    assert list(a.evaluation.errors) == list("ABCDE")


def test_divergence_reports_iteration(tiny_data, tiny_config, monkeypatch):
    calls = {"n": 0}
    real = losses.lfmmi

    def flaky(num, den, em):
        calls["n"] += 1
        f, g = real(num, den, em)
        return (np.nan if calls["n"] > 10 else f), g

    monkeypatch.setattr(losses, "lfmmi", flaky)
    with pytest.raises(NumericalError) as exc:
        harness.train_seed(tiny_config, tiny_data)
    # minibatches of 4: calls 9..12 form iteration 2
    assert exc.value.iteration == 2


def test_config_validation():
    with pytest.raises(InvalidInput):
        harness.PipelineConfig(method="bogus")
    with pytest.raises(InvalidInput):
        harness.PipelineConfig(alpha_lwf=-1.0)
    with pytest.raises(InvalidInput):
        harness.PipelineConfig.from_dict({"nope": 1})
    cfg = harness.PipelineConfig()
    assert harness.PipelineConfig.from_dict(cfg.to_dict()) == cfg
    assert (cfg.alpha_lwf, cfg.alpha_denlwf, cfg.alpha_ewc) == (1.0, 0.6, 300.0)
    assert (cfg.minibatch_size, cfg.epochs_step, cfg.threads) == (8, 10, 1)


def test_run_pipeline_gap_recovery_needs_baselines(tiny_data, tiny_config):
    cfg = dataclasses.replace(tiny_config, epochs_step=0)
    res = harness.run_pipeline(cfg, tiny_data, ["lwf"])
    assert all(m["gap_recovery"] is None for m in res.metrics("lwf"))
    with pytest.raises(InvalidInput):
        harness.run_pipeline(cfg, tiny_data, ["nope"])
