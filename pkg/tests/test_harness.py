import numpy as np
import pytest

from cocodlab.harness import experiments as ex
from cocodlab.harness.cli import main
from cocodlab.harness.config import ConfigError, ExperimentConfig, build, load_config
from cocodlab.harness.oracle import compare_trajectories, pinned_grid, verify_oracle, verify_reduction
from cocodlab.theory import predicted_speedup
from cocodlab.timing import read_trace_csv, simulate_run

MINIMAL = """
[run]
seed = 3
T = 10

[model]
workers = 1
dimension = 4
"""


def write(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


# -- config -------------------------------------------------------------------------


def test_load_config_and_overrides(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL), ["algorithm.period=4", "lr=0.2", "capabilities="])
    assert (cfg.seed, cfg.T, cfg.workers, cfg.dimension, cfg.period, cfg.lr) == (3, 10, 1, 4, 4, 0.2)


def test_unknown_key_is_named(tmp_path):
    bad = MINIMAL + "\n[algorithm]\nlearning_rte = 0.1\n"
    with pytest.raises(ConfigError, match="learning_rte"):
        load_config(write(tmp_path, bad))
    with pytest.raises(ConfigError, match="learning_rte"):
        load_config(None, ["learning_rte=0.1", "T=3"])
    with pytest.raises(ConfigError, match="timing.period"):
        load_config(None, ["timing.period=3", "T=3"])


def test_invalid_values_name_the_key():
    with pytest.raises(ConfigError, match="'capabilities'"):
        ExperimentConfig(T=5, workers=3, capabilities=(1.0, 2.0))
    with pytest.raises(ConfigError, match="'variant'"):
        ExperimentConfig(T=5, variant="asynclocal")
    with pytest.raises(ConfigError, match="'overlap_a'"):
        load_config(None, ["T=5", "overlap_a=1.5"])
    with pytest.raises(ConfigError, match="'period'"):
        load_config(None, ["T=5", "period=two"])


def test_config_ini_round_trip(tmp_path):
    cfg = ExperimentConfig(T=7, workers=2, capabilities=(1.0, 2.0), period_schedule=((0.0, 1), (2.5, 4)),
                           decay_epochs=(3.0,), comm_time=1.5, full_batch=True)
    again = load_config(write(tmp_path, cfg.to_ini()))
    assert again == cfg


def test_epoch_accounting_and_schedules():
    cfg = ExperimentConfig(epochs=2, workers=2, capabilities=(1.0, 2.0), base_batch=8, points_per_unit=40,
                           variant="cocod", period=5, period_schedule=((0.0, 1), (1.0, 5)),
                           lr_rule="scaled", lr=0.01, warmup_epochs=1.0, decay_epochs=(1.5,))
    exp = build(cfg)
    # shards (40, 80), batches (8, 16): one epoch is five steps for both workers
    assert exp.steps_per_epoch == 5
    assert exp.T == 10
    assert exp.variant.rounds(exp.T) == [(0, 1), (1, 1), (2, 1), (3, 1), (4, 1), (5, 5)]
    assert exp.lr(0) == pytest.approx(0.01, rel=1e-14)
    assert exp.lr(5) == pytest.approx(0.03, rel=1e-14)
    assert exp.lr(8) == pytest.approx(0.003, rel=1e-14)


def test_corollary_rule_uses_exact_constants():
    cfg = ExperimentConfig(T=400, workers=2, lr_rule="corollary", spread=2.0, base_batch=4)
    exp = build(cfg)
    c = exp.constants
    assert exp.lr(0) == pytest.approx((8 / 400) ** 0.5 / c.sigma, rel=1e-14)
    with pytest.raises(ConfigError):
        build(cfg.replace(spread=0.0, shard_offset=0.0))


def test_dataset_csv_input(tmp_path):
    from cocodlab import model

    data = model.generate_dataset(1, 3, (10, 10))
    path = tmp_path / "data.csv"
    model.save_dataset_csv(path, data)
    exp = build(ExperimentConfig(T=3, workers=2, dimension=3, dataset_csv=str(path)))
    assert np.array_equal(exp.problem.objective.points, data.points)
    with pytest.raises(ConfigError, match="dataset_csv"):
        build(ExperimentConfig(T=3, workers=2, dimension=4, dataset_csv=str(path)))


# -- run ------------------------------------------------------------------------------


def test_minimal_run(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    trace, summary = ex.run(cfg, tmp_path / "out")
    cols = read_trace_csv(tmp_path / "out" / "trace.csv")
    assert len(cols["step"]) == 10
    assert np.all(cols["comm_rounds"] == 0)
    rows = ex.read_csv(tmp_path / "out" / "summary.csv")
    assert list(rows[0]) == ex.SUMMARY_COLUMNS
    assert float(rows[0]["final_loss"]) == summary["final_loss"]
    assert int(rows[0]["comm_rounds"]) == 0


def test_run_is_byte_identical(tmp_path):
    cfg = ExperimentConfig(T=25, workers=3, capabilities=(1.0, 2.0, 1.0), variant="cocod", period=3,
                           alpha=0.1, beta=0.001, overlap_a=0.4, jitter=0.1)
    ex.run(cfg, tmp_path / "a")
    ex.run(cfg, tmp_path / "b")
    for name in ("trace.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_aborts_on_divergence(tmp_path):
    cfg = ExperimentConfig(T=200, workers=2, lr=1e150)
    with pytest.raises(ex.RunAborted) as info, np.errstate(over="ignore", invalid="ignore"):
        ex.run(cfg, tmp_path)
    assert info.value.step >= 1
    assert "step" in str(info.value)


# -- oracle -----------------------------------------------------------------------------


def test_oracle_cocod_example():
    cfg = ExperimentConfig(T=60, workers=4, variant="cocod", period=3, dimension=8, spread=1.5, shard_offset=1.0)
    report = verify_oracle(cfg)
    assert report.passed and report.max_deviation <= 1e-12
    assert report.steps == 60


def test_oracle_reduction_cross_check():
    cfg = ExperimentConfig(T=50, workers=4, dimension=6)
    report = verify_reduction(cfg)
    assert report.passed and report.max_deviation <= 1e-12


def test_oracle_catches_perturbed_engine():
    cfg = ExperimentConfig(T=30, workers=2, variant="cocod", period=3)

    def perturbed(exp):
        x_hat = simulate_run(exp.variant, exp.problem, exp.cost, exp.lr, exp.T, exp.x0).x_hat.copy()
        x_hat[17:] += 1e-9
        return x_hat

    report = verify_oracle(cfg, engine=perturbed)
    assert not report.passed
    assert report.first_divergent_step == 17
    assert "FAIL" in report.summary()


def test_oracle_covers_truncation_momentum_and_schedules():
    base = ExperimentConfig(T=23, workers=3, capabilities=(1.0, 2.0, 3.0), dimension=5, momentum=0.5,
                            lr_rule="scaled", warmup_steps=5, decay_epochs=(0.5,))
    for cfg in (
        base.replace(variant="cocod", period=4, final_period="truncate"),
        base.replace(variant="local", period=1, period_schedule=((0.2, 3),)),
        base.replace(variant="pipe", staleness=2),
        base.replace(variant="ssgd", weight_decay=0.01),
    ):
        assert verify_oracle(cfg).passed


def test_pinned_grid_shape():
    grid = pinned_grid()
    assert len(grid) == 48
    cells = {(c.variant, c.workers, bool(c.capabilities)) for c in grid}
    assert len(cells) == 24


def test_compare_trajectories_shape_check():
    with pytest.raises(ValueError):
        compare_trajectories("x", np.zeros((3, 2)), np.zeros((4, 2)))


# -- sweep ------------------------------------------------------------------------------


def test_sweep_over_workers(tmp_path):
    cfg = ExperimentConfig(T=20, variant="cocod", period=5, dimension=16, alpha=0.05, beta=0.01, overlap_a=0.5)
    rows = ex.sweep(cfg, "N", [1, 2, 4, 8, 16], tmp_path)
    assert len(rows) == 5
    for r in rows:
        assert abs(r["measured_ts"] - r["predicted_ts"]) <= 1e-9
    assert [r["comm_rounds"] for r in rows] == [0, 4, 4, 4, 4]
    back = ex.read_csv(tmp_path / "sweep.csv")
    assert [int(r["value"]) for r in back] == [1, 2, 4, 8, 16]
    assert all(float(b["measured_ts"]) == r["measured_ts"] for b, r in zip(back, rows))


def test_sweep_over_seeds_appends_mean():
    cfg = ExperimentConfig(T=10, workers=2)
    rows = ex.sweep(cfg, "seed", list(range(20)))
    assert len(rows) == 21
    assert rows[-1]["seed"] == "mean"
    assert rows[-1]["final_loss"] == pytest.approx(np.mean([r["final_loss"] for r in rows[:-1]]), rel=1e-12)


def test_sweep_rejects_other_axes():
    with pytest.raises(ConfigError, match="non-sweepable axis"):
        ex.sweep(ExperimentConfig(T=5), "d", [2, 4])


def test_sweep_other_axes_and_target_speedups():
    cfg = ExperimentConfig(T=150, workers=2, variant="local", period=2, spread=3.0, exact_shard_means=True,
                           base_batch=8, lr=0.05, lr_rule="scaled", x0=3.0, target_grad_norm_sq=1.0, comm_time=1.0)
    for axis, values in (("k", [1, 2, 3]), ("a", [0.0, 1.0]), ("t_comm", [0.5, 2.0]), ("base_batch", [4, 8])):
        rows = ex.sweep(cfg, axis, values)
        assert len(rows) == len(values)
        assert all(r["measured_is_target"] != "" for r in rows)
    k_rows = ex.sweep(cfg, "k", [1, 2, 4])
    assert [r["comm_rounds"] for r in k_rows] == [150, 75, 38]


# -- compare ------------------------------------------------------------------------------


def four_variants(**kw):
    base = ExperimentConfig(**kw)
    return [
        base.replace(variant="ssgd"),
        base.replace(variant="local", period=4),
        base.replace(variant="cocod", period=4),
        base.replace(variant="pipe"),
    ]


def test_compare_zero_variance_collapse(tmp_path):
    cfgs = four_variants(T=40, workers=3, spread=0.0, shard_offset=0.0, full_batch=True, x0=2.0, lr=0.1)
    steps, times, labels = ex.compare(cfgs, output=tmp_path)
    assert labels == ["ssgd", "local_k4", "cocod_k4", "pipe_s1"]
    for row in steps:
        assert abs(row["loss_ssgd"] - row["loss_local_k4"]) <= 1e-12
        assert abs(row["loss_ssgd"] - row["loss_cocod_k4"]) <= 1e-12
    by_step = ex.read_csv(tmp_path / "compare_by_step.csv")
    by_time = ex.read_csv(tmp_path / "compare_by_time.csv")
    assert len(by_step) == 41 and list(by_time[0])[0] == "sim_time_s"
    assert float(by_step[-1]["loss_pipe_s1"]) == steps[-1]["loss_pipe_s1"]


def test_compare_variance_dominated_similar_convergence():
    cfgs = four_variants(T=200, workers=4, dimension=10, spread=3.0, exact_shard_means=True, base_batch=8,
                         x0=3.0, lr=0.05)
    steps, _, labels = ex.compare(cfgs, seeds=range(20))
    final = np.array([steps[-1][f"loss_{lab}"] for lab in labels])
    assert final.max() <= 1.1 * final.min()


def test_compare_time_aligned_cocod_first():
    cfgs = four_variants(T=120, workers=4, dimension=10, spread=1.0, base_batch=8, x0=3.0, lr=0.05,
                         per_sample_time=1 / 8, comm_time=2.0, overlap_a=0.5)
    _, times, labels = ex.compare(cfgs)
    target = 1.05 * max(times[-1][f"loss_{lab}"] for lab in labels)
    first = {}
    for lab in labels:
        first[lab] = next(r["sim_time_s"] for r in times if r[f"loss_{lab}"] <= target)
    assert first["cocod_k4"] < min(first[lab] for lab in labels if lab != "cocod_k4")


def test_compare_rejects_mismatched_data():
    a = ExperimentConfig(T=10, workers=2)
    with pytest.raises(ConfigError, match="spread"):
        ex.compare([a, a.replace(variant="ssgd", spread=2.0)])
    with pytest.raises(ConfigError, match="lr_rule"):
        ex.compare([a, a.replace(lr_rule="scaled")])


# -- command line ------------------------------------------------------------------------


def test_cli_run_and_errors(tmp_path, capsys):
    path = write(tmp_path, MINIMAL)
    assert main(["run", "--config", str(path), "--output", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "trace.csv").exists()
    assert main(["run", "--config", str(path), "--set", "learning_rte=1"]) == 2
    assert "learning_rte" in capsys.readouterr().err
    with np.errstate(over="ignore", invalid="ignore"):
        assert main(["run", "--config", str(path), "--set", "lr=1e200", "--set", "T=100",
                     "--output", str(tmp_path / "bad")]) == 1


def test_cli_verify_and_sweep(tmp_path, capsys):
    path = write(tmp_path, MINIMAL + "\n[algorithm]\nvariant = cocod\nperiod = 3\n", "c.ini")
    assert main(["verify-oracle", "--config", str(path), "--set", "workers=4", "--reduction"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["sweep", "--config", str(path), "--axis", "N", "--values", "1,2,4",
                 "--output", str(tmp_path / "s")]) == 0
    assert len(ex.read_csv(tmp_path / "s" / "sweep.csv")) == 3
    assert main(["sweep", "--config", str(path), "--axis", "d", "--values", "1,2"]) == 2


def test_cli_compare(tmp_path):
    a = write(tmp_path, MINIMAL + "\n[algorithm]\nvariant = cocod\nperiod = 2\n", "a.ini")
    b = write(tmp_path, MINIMAL + "\n[algorithm]\nvariant = ssgd\n", "b.ini")
    assert main(["compare", "--configs", f"{a},{b}", "--seeds", "1,2", "--output", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "compare_by_time.csv").exists()


def test_cli_predict(capsys):
    assert main(["predict", "--n", "4", "--tcomp", "2", "--tcomm", "2", "--a", "0.5", "--k", "5"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "variant,N,t_comp,t_comm,a,k,predicted_ts"
    got = {line.split(",")[0]: float(line.split(",")[-1]) for line in out[1:]}
    for v, ts in got.items():
        assert ts == predicted_speedup(v, 4, 2.0, 2.0, 0.5, 5)
    assert got["cocod"] == pytest.approx(8 / 2.2, rel=1e-15)
