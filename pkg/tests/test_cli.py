import functools
import json

import pytest

from osplab import cli, experiments
from osplab.experiments import JobRecord


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def perfect_runner(job):
    return JobRecord(job.key, job.canonical.label, job.n, job.T, 1.0, 1, 0.0, 0, 0.0, job.train.seed), "step,loss\n"


def test_bound_for_64_kilobit_state(capsys):
    code, out, _ = run(capsys, "bound", "--q-bits", 65536)
    assert code == 0 and out.split()[0] == "18724"


def test_bound_rejects_binary_vocabulary(capsys):
    code, _, err = run(capsys, "bound", "--q-bits", 100, "--V", 2)
    assert code == cli.EXIT_CONFIG and "error" in err


def test_gen_task_is_deterministic(capsys, tmp_path):
    code, out, _ = run(capsys, "gen-task", "--n", 1, "--T", 5, "--seed", 42)
    assert code == 0
    inst = json.loads(out)
    assert inst["tokens"][0] == 32 and inst["tokens"][3] == 34 and len(inst["tokens"]) == 5
    _, again, _ = run(capsys, "gen-task", "--n", 1, "--T", 5, "--seed", 42)
    assert again == out
    run(capsys, "gen-task", "--n", 3, "--T", 12, "--count", 4, "--out", tmp_path / "x.jsonl")
    lines = (tmp_path / "x.jsonl").read_text().splitlines()
    assert len(lines) == 4 and all(json.loads(line)["n"] == 3 for line in lines)


def test_gen_task_infeasible_length(capsys):
    assert run(capsys, "gen-task", "--n", 4, "--T", 10)[0] == cli.EXIT_CONFIG


def test_taxonomy_csv_has_every_architecture(capsys):
    code, out, _ = run(capsys, "taxonomy", "--format", "csv")
    assert code == 0 and len(out.strip().splitlines()) == 53


@pytest.mark.parametrize("arch, region", [("transformer", "Rec"), ("mamba", "EffComp"), ("gla", "EffComp")])
def test_classify_architectures(capsys, arch, region):
    code, out, _ = run(capsys, "classify", "--arch", arch)
    assert code == 0 and region in out


def test_classify_by_growth_rates(capsys):
    code, out, _ = run(capsys, "classify", "--state", "0,1024", "--flops", "0,64", "--strong-rec")
    assert code == 0 and "Rec" in out


def test_ecr_profile(capsys):
    code, out, _ = run(capsys, "ecr", "--arch", "transformer", "--n-star", 16, "--T", 64)
    assert code == 0 and "0.25" in out


def test_unknown_config_key_lists_known_keys(capsys, tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("arch = gla\nlearning_rate = 1e-3\n")
    code, _, err = run(capsys, "train", "--config", path)
    assert code == cli.EXIT_CONFIG and "learning_rate" in err and "lr_peak" in err


def test_malformed_config_value(capsys, tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("d = wide  # not a number\n")
    assert run(capsys, "train", "--config", path)[0] == cli.EXIT_CONFIG


def test_flags_override_config(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("# comment\narch = gla\nd = 16\nn_heads = 2\ntotal_steps = 50\n")
    args = cli.build_parser().parse_args(["train", "--config", str(path), "--d", "32", "--steps", "3"])
    settings = cli.resolve(args)
    assert settings["arch"] == "gla" and settings["d"] == 32 and settings["total_steps"] == 3
    model = cli.model_from(settings)
    assert (model.arch, model.d, model.n_heads) == ("gla", 32, 2)
    assert cli.train_from(settings).total_steps == 3


def test_example_config_parses():
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / "example.cfg"
    settings = cli.load_config(path)
    assert set(settings) == set(cli.CONFIG_KEYS)


def test_train_eval_plot_round_trip(capsys, tmp_path):
    out = tmp_path / "run"
    code, text, _ = run(capsys, "train", "--arch", "gla", "--d", 16, "--n", 1, "--T", 8, "--steps", 3,
                        "--instances", 20, "--outdir", out)
    assert code == 0 and "accuracy=" in text
    assert {p.name for p in out.iterdir()} == {"model.npz", "loss.csv", "eval.csv"}
    assert len((out / "loss.csv").read_text().splitlines()) == 4
    code, text, _ = run(capsys, "eval", "--checkpoint", out / "model.npz", "--instances", 20, "--out", tmp_path / "e.csv")
    assert code == 0 and "over 20 instances" in text
    rows = tmp_path / "rows.csv"
    rows.write_text("arch,n,accuracy\ngla,1,0.5\ngla,2,0.25\n")
    code, _, _ = run(capsys, "plot", "--rows", rows, "--figure", "1a", "--out", tmp_path / "fig")
    assert code == 0 and (tmp_path / "fig" / "fig_1a.svg").exists()


def test_plot_missing_columns_is_config_error(capsys, tmp_path):
    rows = tmp_path / "rows.csv"
    rows.write_text("arch,n\ngla,1\n")
    assert run(capsys, "plot", "--rows", rows, "--figure", "5a")[0] == cli.EXIT_CONFIG


def test_oracle_suite_passes(capsys, tmp_path):
    code, out, _ = run(capsys, "oracle", "--count", 20, "--out", tmp_path / "o.csv")
    assert code == 0 and out.startswith("20/20")


def test_experiment_all_writes_manifest(capsys, tmp_path, monkeypatch):
    monkeypatch.setattr(experiments, "Lab", functools.partial(experiments.Lab, runner=perfect_runner))
    code, out, _ = run(capsys, "experiment", "all", "--outdir", tmp_path)
    assert code == 0 and "manifest" in out
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert set(manifest["experiments"]) == set(experiments.EXPERIMENTS)


def test_experiment_exits_3_on_bound_violation(capsys, tmp_path, monkeypatch):
    # a bound of zero pairs makes every successful recall a violation
    monkeypatch.setattr(experiments, "recall_bound", lambda *a, **k: 0)
    monkeypatch.setattr(experiments, "Lab", functools.partial(experiments.Lab, runner=perfect_runner))
    code, _, err = run(capsys, "experiment", "exp1", "--outdir", tmp_path)
    assert code == cli.EXIT_VIOLATION and "exceeds bound" in err
    # the offending results are still on disk for inspection
    assert (tmp_path / "exp1" / "summary.csv").exists()
