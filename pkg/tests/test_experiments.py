import json

import pytest

from osplab.experiments import (
    EXPERIMENTS,
    R_ATTN_GRID,
    Job,
    JobRecord,
    Lab,
    Summary,
    TheoremViolation,
    accounting_table,
    assert_theorems,
    check_theorems,
    feasible,
    hybrid_accounting,
    run_experiments,
    summarize,
    sweep_spec,
)
from osplab.models import ModelConfig
from osplab.trainer import TrainConfig

CAPACITY = {"transformer": 10, "gla": 9, "linear_transformer": 3, "mamba_N16": 1, "transformer_L4": 10,
            "mamba_N16_L4": 1}


def fake_runner(job):
    """Accuracy 1 up to a per-model capacity, 0.2 beyond; no training."""
    label = job.canonical.label
    cap = CAPACITY.get(label, 5 if label.startswith("hybrid") else 2)
    acc = 1.0 if job.n <= cap else 0.2
    return JobRecord(job.key, label, job.n, job.T, acc, job.train.eval_instances, 0.0, 0, 0.0, job.train.seed), "step,loss\n"


class Counting:
    def __init__(self):
        self.calls = []

    def __call__(self, job):
        self.calls.append((job.canonical.label, job.n, job.T))
        return fake_runner(job)


def test_full_profile_grids():
    e1 = sweep_spec("exp1", "full")
    assert e1.n_grid == tuple(range(1, 11)) and e1.T_grid == (32,) and len(e1.models) == 5
    e2 = sweep_spec("exp2", "full")
    assert e2.n_grid == (1, 2, 4, 8, 16, 32) and e2.T_grid == (20, 32, 48, 64)
    e4 = sweep_spec("exp4", "full")
    assert e4.r_attn_grid == tuple(i * 0.125 for i in range(9))
    e5 = sweep_spec("exp5", "full")
    assert len(e5.models) * len(e5.T_grid) == 14
    with pytest.raises(ValueError):
        sweep_spec("exp9")


def test_fast_profile_grids():
    assert sweep_spec("exp1", "fast").n_grid == (1, 2, 4, 8)
    assert sweep_spec("exp3", "fast").labels == ["transformer", "linear_transformer", "mamba_N16"]


def test_feasible_points():
    assert feasible([1, 2, 4, 8, 16, 32], 20) == [1, 2, 4]
    assert feasible([1, 2, 4, 8, 16, 32], 64) == [1, 2, 4, 8, 16]


def test_accounting_table_is_training_free_and_exact():
    got = {r["arch"]: (r["step_flops"], r["state_bits"]) for r in accounting_table(64)}
    assert got == {
        "transformer": (16384, 524288),
        "hybrid_r0.5": (10240, 589824),
        "gla": (4096, 65536),
        "linear_transformer": (4096, 65536),
        "mamba_N16": (1024, 65536),
    }


def test_hybrid_accounting_monotone():
    rows = hybrid_accounting(32)
    assert [r["n_attn"] for r in rows] == [0, 1, 1, 2, 2, 3, 3, 4, 4]
    for key in ("state_bits", "step_flops"):
        vals = [r[key] for r in rows]
        assert vals == sorted(vals)


def test_equivalent_configs_share_one_job():
    tc = TrainConfig.for_profile("fast")
    hyb = lambda r: ModelConfig.for_arch("hybrid", r_attn=r)  # noqa: E731
    assert Job(hyb(0.0), 2, 32, tc).key == Job(ModelConfig.for_arch("mamba", n_layers=4), 2, 32, tc).key
    assert Job(hyb(1.0), 2, 32, tc).key == Job(ModelConfig.for_arch("transformer", n_layers=4), 2, 32, tc).key
    assert Job(hyb(0.125), 2, 32, tc).key == Job(hyb(0.25), 2, 32, tc).key
    assert Job(hyb(0.25), 2, 32, tc).key != Job(hyb(0.5), 2, 32, tc).key
    assert Job(hyb(0.5), 2, 32, tc).key != Job(hyb(0.5), 2, 32, TrainConfig.for_profile("full")).key


def test_descending_scan_stops_at_first_pass(tmp_path):
    runner = Counting()
    lab = Lab(profile="fast", outdir=None, runner=runner)
    (res,) = run_experiments(["exp1"], lab)
    by_arch = {s.arch: s for s in res.summaries}
    assert by_arch["transformer"].n_star == 8 and by_arch["gla"].n_star == 8
    assert by_arch["linear_transformer"].n_star == 2 and by_arch["mamba_N16"].n_star == 1
    assert ("transformer", 4, 32) not in runner.calls
    assert ("mamba_N16", 1, 32) in runner.calls


def test_full_scan_trains_every_point():
    runner = Counting()
    lab = Lab(profile="fast", outdir=None, runner=runner, descending_stop=False)
    run_experiments(["exp1"], lab)
    assert len(runner.calls) == 4 * 4


def test_all_experiments_write_outputs_and_manifest(tmp_path):
    runner = Counting()
    lab = Lab(profile="fast", outdir=tmp_path, runner=runner)
    results = run_experiments(list(EXPERIMENTS), lab)
    for exp in EXPERIMENTS:
        assert (tmp_path / exp / "rows.csv").exists() and (tmp_path / exp / "summary.csv").exists()
    for fid, exp in [("1a", "exp1"), ("1b", "exp1"), ("3a", "exp3"), ("3c", "exp3"), ("4", "exp4"), ("5a", "exp5")]:
        assert (tmp_path / exp / f"fig_{fid}.svg").exists()
    assert (tmp_path / "exp2" / "accounting.csv").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert set(manifest["experiments"]) == set(EXPERIMENTS)
    assert manifest["experiments"]["exp3"]["shared_with"] == {"jobs": "exp2"}
    assert manifest["seed"] == 42 and manifest["profile"] == "fast"
    job = manifest["experiments"]["exp1"]["jobs"][0]
    assert set(job["streams"]) == {"init", "train", "eval"}
    # every summary satisfies both theorem checks
    assert all(check_theorems(r.summaries) == [] for r in results)


def test_exp3_reuses_exp2_jobs(tmp_path):
    runner = Counting()
    lab = Lab(profile="fast", outdir=tmp_path, runner=runner)
    run_experiments(["exp2"], lab)
    before = len(runner.calls)
    run_experiments(["exp3"], lab)
    assert len(runner.calls) == before


def test_cache_persists_across_labs(tmp_path):
    first = Counting()
    run_experiments(["exp1"], Lab(profile="fast", outdir=tmp_path, runner=first))
    second = Counting()
    run_experiments(["exp1"], Lab(profile="fast", outdir=tmp_path, runner=second))
    assert first.calls and second.calls == []


def test_outputs_are_byte_identical_across_runs(tmp_path):
    for d in ("a", "b"):
        run_experiments(["exp4"], Lab(profile="fast", outdir=tmp_path / d, runner=fake_runner))
    for name in ("rows.csv", "summary.csv", "fig_4.csv", "fig_4.svg"):
        assert (tmp_path / "a" / "exp4" / name).read_bytes() == (tmp_path / "b" / "exp4" / name).read_bytes()


def test_hybrid_endpoints_match_pure_stacks():
    lab = Lab(profile="fast", outdir=None, runner=fake_runner)
    (res,) = run_experiments(["exp4"], lab)
    n_star = {s.r_attn: s.n_star for s in res.summaries}
    assert n_star[0.0] == CAPACITY["mamba_N16_L4"]
    assert sorted(n_star) == list(R_ATTN_GRID)


def test_parallel_workers_give_same_rows(tmp_path):
    seq = run_experiments(["exp1"], Lab(profile="fast", outdir=None, runner=fake_runner, descending_stop=False))
    par = run_experiments(["exp1"], Lab(profile="fast", outdir=None, runner=fake_runner, workers=2))
    assert [r.to_dict() for r in seq[0].rows] == [r.to_dict() for r in par[0].rows]


def test_theorem_violation_is_loud():
    model = ModelConfig.for_arch("mamba", N=1, d=4, n_heads=1)
    ok = summarize("exp5", model, 32, 1)
    assert check_theorems([ok]) == []
    bad = Summary(**{**ok.to_dict(), "n_star": ok.bound_n_star + 1})
    with pytest.raises(TheoremViolation, match="exceeds bound"):
        assert_theorems([bad])
    bad_r = Summary(**{**ok.to_dict(), "r": ok.tradeoff_rhs * 2})
    assert any("trade-off" in p for p in check_theorems([bad_r]))


def test_summary_fields_recomputable():
    s = summarize("exp2", ModelConfig.for_arch("transformer"), 64, 16)
    assert (s.state_bits, s.step_flops) == (524288, 16384)
    assert s.r == 0.25 and s.e == 16384 / (64 * 64) and s.c == 524288 / (64 * 5 * 32)
    assert s.utilization == 16 / s.bound_n_star
