import csv

import numpy as np
import pytest

from ilalab import cli, formats as fm


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(zoo_dir, tmp_path_factory):
    """A copy-free workdir: the session zoo plus one attack dump."""
    args = ("attack", "--workdir", zoo_dir, "--n-inputs", 5, "--iterations", 6, "--samples", 3,
            "--store-inputs", "true", "--out", zoo_dir / "attack")
    assert run(*args) == 0
    return zoo_dir


# -------------------------------------------------------------- exit codes


def test_help_exits_zero(capsys):
    assert run("--help") == 0
    assert "report" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["report", "--bogus"],
    ["attack", "--epsilon", "abc"],
    ["attack", "--norm", "l1"],
    ["nonsense"],
    ["report", "--methods", "ifgsm+lasso"],
    ["report", "--samples", "500"],
    ["sweep", "--sweep-lam", "1,2", "--runs", "1,2"],
])
def test_config_errors_exit_2(argv, tmp_path):
    assert run(*argv, "--workdir", tmp_path) == 2


def test_missing_zoo_exits_2_with_hint(tmp_path, capsys):
    assert run("evaluate", "--workdir", tmp_path, "--batches", tmp_path / "x.ilab") == 2
    assert "train" in capsys.readouterr().err


def test_train_without_dataset_exits_2(tmp_path):
    assert run("train", "--workdir", tmp_path) == 2


def test_runtime_failure_exits_3(tmp_path):
    (tmp_path / "bad.idx").write_bytes(b"\0\0")
    assert run("dataset", "--workdir", tmp_path, "--idx", tmp_path) == 3


def test_unknown_source_exits_2(work):
    assert run("attack", "--workdir", work, "--source", "vit@0", "--out", work / "tmp") == 2


# ---------------------------------------------------------------- pipeline


def test_dataset_and_train(tmp_path):
    assert run("dataset", "--workdir", tmp_path, "--n-train", 60, "--n-test", 20) == 0
    assert (tmp_path / "data").is_dir()
    assert run("train", "--workdir", tmp_path, "--archs", "mlp-2", "--seeds", "0",
               "--mlp-epochs", 1) == 0
    assert (tmp_path / "models" / "mlp-2@0.ilaf").exists()


def test_attack_writes_trajectories(work):
    files = sorted((work / "attack" / "traj").glob("*.bin"))
    assert len(files) == 5
    tr, _ = fm.load_trajectory(files[0])
    assert len(tr) == 4 and tr.inputs is not None
    batch = fm.load_adv_batch(work / "attack" / "baseline.ilab")
    assert batch.header["method"] == "ifgsm" and len(batch) == 5


@pytest.mark.parametrize("method,extra", [
    ("rr", []), ("svr", []), ("elasticnet", ["--lambda1", "0.05"]), ("ila_huang", []),
    ("rand_input", []), ("rand_feature", ["--sigma", "0.1"]), ("rr", ["--normalized", "true"]),
])
def test_fit_refine_evaluate(work, tmp_path, method, extra):
    g = tmp_path / "g.ilag"
    assert run("fit-guide", "--workdir", work, "--method", method, "--out", g, *extra) == 0
    guides, head = fm.load_guides(g)
    assert len(guides) == 5 and head["method"] == method
    adv = tmp_path / "r.ilab"
    assert run("refine", "--workdir", work, "--guides", g, "--iterations", 4, "--out", adv) == 0
    out = tmp_path / "eval"
    assert run("evaluate", "--workdir", work, "--batches", f"{adv},{work / 'attack' / 'baseline.ilab'}",
               "--out", out) == 0
    rows = list(csv.DictReader((out / "transfer.csv").open()))
    assert len(rows) == 2 * 3
    assert {r["victim"] for r in rows} == {"mlp-2@0", "mlp-2@1", "cnn-wide@1"}


def test_refine_from_baseline(work, tmp_path):
    g = tmp_path / "g.ilag"
    assert run("fit-guide", "--workdir", work, "--out", g) == 0
    base = work / "attack" / "baseline.ilab"
    assert run("refine", "--workdir", work, "--guides", g, "--start", "baseline",
               "--iterations", 0, "--baseline", base, "--out", tmp_path / "r.ilab") == 0
    np.testing.assert_array_equal(fm.load_adv_batch(tmp_path / "r.ilab").images,
                                  fm.load_adv_batch(base).images)
    assert run("refine", "--workdir", work, "--guides", g, "--start", "baseline",
               "--out", tmp_path / "r2.ilab") == 2


REPORT_ARGS = ("--n-inputs", 4, "--epsilons", "8/255", "--iterations", 4,
               "--refine-iterations", 4, "--samples", 2, "--methods", "ifgsm,ifgsm+rr")


def test_report_and_config_equivalence(work, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("report", "--workdir", work, *REPORT_ARGS, "--out", a) == 0
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# same campaign as flags\n"
                   "campaign.n_inputs = 4\ncampaign.epsilons = 8/255\ncampaign.iterations = 4\n"
                   "report.refine-iterations = 4\nreport.samples = 2\n"
                   "report.methods = ifgsm,ifgsm+rr\nattack.epsilon = 0.5\n")
    assert run("--config", cfg, "report", "--workdir", work, "--out", b) == 0
    for name in ("transfer.csv", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    # flags override the file
    assert run("--config", cfg, "report", "--workdir", work, "--n-inputs", 3,
               "--out", tmp_path / "c") == 0
    rows = list(csv.DictReader((tmp_path / "c" / "transfer.csv").open()))
    assert {r["n_inputs"] for r in rows} == {"3"}


@pytest.mark.parametrize("text", ["report.not_a_flag = 1\n", "bogus.samples = 2\n", "oops\n"])
def test_bad_config_exits_2(work, tmp_path, text):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(text)
    assert run("--config", cfg, "report", "--workdir", work) == 2


def test_missing_config_file_exits_2(work, tmp_path):
    assert run("--config", tmp_path / "none.cfg", "report", "--workdir", work) == 2


def test_sweep_command(work, tmp_path):
    out = tmp_path / "s"
    assert run("sweep", "--workdir", work, *REPORT_ARGS, "--runs", "1,2", "--guide", "rr",
               "--out", out) == 0
    lines = (out / "plots" / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3 and "pgdx2+rr" in lines[2]
