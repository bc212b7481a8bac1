import numpy as np
import pytest

from stochsqp import bench as B
from stochsqp import problems as P
from stochsqp.cli import EXIT_DATA, EXIT_USAGE, UsageError, main, parse_config


def test_defaults_snapshot():
    cfg = parse_config(["solve", "--synthetic", "qp10"])
    p = cfg.params
    assert (p.beta, p.sigma, p.theta1, p.alpha_u, p.eps_tau) == (1.0, 2.0, 0.99, 100.0, 1e-4)
    assert (p.tau_init, p.eta, p.omega1, p.omega2, p.omega_a, p.omega_b) == (1.0, 0.5, 0.5, 0.5, 100.0, 100.0)
    assert cfg.variants == ["inexact-adaptive"] and cfg.seeds == [0]


def test_range_error_names_parameter():
    with pytest.raises(UsageError, match=r"omega1.*\(0, 1\)"):
        parse_config(["solve", "--synthetic", "qp10", "--omega1", "1.5"])


def test_file_then_flag_precedence(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nseed = 7\nomega2=0.25\n")
    cfg = parse_config(["solve", "--synthetic", "qp10", "--config", str(f), "--seed", "9"])
    assert cfg.seeds == [9] and cfg.params.omega2 == 0.25
    cfg = parse_config(["solve", "--synthetic", "qp10", "--config", str(f)])
    assert cfg.seeds == [7]


@pytest.mark.parametrize("text", ["bogus=1\n", "omega1\n", "omega1=abc\n"])
def test_bad_config_files(tmp_path, text):
    f = tmp_path / "bad.cfg"
    f.write_text(text)
    assert main(["solve", "--synthetic", "qp10", "--config", str(f)]) == EXIT_USAGE


def test_usage_errors_exit_1(capsys):
    assert main(["solve"]) == EXIT_USAGE
    assert main(["solve", "--synthetic", "qp10", "--wat"]) == EXIT_USAGE
    assert main(["solve", "--synthetic", "cube3"]) == EXIT_USAGE
    assert main(["solve", "--synthetic", "qp10", "--variant", "turbo"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_data_errors_exit_2(tmp_path):
    assert main(["solve", "--libsvm", str(tmp_path / "missing.svm")]) == EXIT_DATA
    bad = tmp_path / "bad.svm"
    bad.write_text("+1 1:x\n")
    assert main(["solve", "--libsvm", str(bad)]) == EXIT_DATA
    (tmp_path / "runs").mkdir()
    assert main(["profile", "--runs", str(tmp_path / "runs")]) == EXIT_DATA


def test_help_lists_parameters(capsys):
    assert main(["solve", "--help"]) == 0
    out = capsys.readouterr().out
    for name in ("--omega1", "--theta1", "--alpha-u", "--eps-tau", "--sigma"):
        assert name in out
    assert "0.99" in out and "0.0001" in out


def test_solve_smoke(tmp_path):
    rc = main(["solve", "--synthetic", "qp10", "--variant", "adaptive-inexact", "--seed", "1",
               "--max-iters", "40", "--out", str(tmp_path)])
    assert rc == 0
    files = list(tmp_path.glob("*.csv"))
    assert len(files) == 1
    rec = B.read_run(files[0])
    assert 0 < len(rec.iterations) <= 40
    assert rec.config.problem_args["noise"] == 0.1


def test_solve_libsvm(tmp_path):
    ds = P.make_synthetic_dataset(30, 6, seed=0)
    path = tmp_path / "toy.svm"
    P.write_libsvm(path, ds)
    rc = main(["solve", "--libsvm", str(path), "--constraint-seed", "1", "--max-epochs", "3",
               "--out", str(tmp_path / "o")])
    assert rc == 0
    rec = B.read_run(tmp_path / "o" / "toy__inexact-adaptive__s0.csv")
    assert rec.iterations[-1].grad_evals_cum <= 90


def test_bench_then_profile(tmp_path):
    runs = tmp_path / "runs"
    rc = main(["bench", "--synthetic", "qp10,sphere10", "--variants", "inexact-adaptive,exact-fixed4",
               "--seeds", "0,1", "--max-epochs", "1", "--out", str(runs)])
    assert rc == 0
    assert len(list(runs.glob("*.csv"))) == 8
    prof = tmp_path / "prof"
    assert main(["profile", "--runs", str(runs), "--eps-pp", "1e-1,1e-3,1e-5", "--out", str(prof)]) == 0
    tables = sorted(prof.glob("*.csv"))
    assert len(tables) == 3
    header = tables[0].read_text().splitlines()[0]
    assert header == "solver,eps_pp,metric,cost,budget_fraction,solved_fraction"


def test_run_reconstructable_from_header(tmp_path):
    main(["solve", "--synthetic", "sphere10", "--seed", "3", "--max-iters", "15", "--omega1", "0.3",
          "--out", str(tmp_path)])
    (path,) = tmp_path.glob("*.csv")
    rec = B.read_run(path)
    cfg = rec.config
    prob = P.AdditiveNoiseProblem(P.get_synthetic(cfg.problem, cfg.problem_args["constraint_seed"]),
                                  cfg.problem_args["noise"])
    again = B.run_experiment(cfg, prob)
    assert again.iterations == rec.iterations
