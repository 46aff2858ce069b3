import pytest

from ifesolve.cli import main


def test_solve_zero(capsys):
    assert main(["solve", "--problem", "zero", "--M", "8"]) == 0
    out = capsys.readouterr().out
    assert "residual 0.000e+00" in out


def test_study_table(capsys):
    assert main(["study", "--problem", "example1", "--beta-plus", "1000", "--beta-minus", "1", "--M", "8,16"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("|")]
    assert len(lines) == 2 + 2


def test_study_csv_to_file(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["study", "--M", "8,16", "--format", "csv", "--out", str(out)]) == 0
    assert out.read_text().startswith("M,ndof,L2_error")


def test_study_assert_exit_code():
    assert main(["study", "--M", "8,16", "--assert", "--l2-window", "1.5", "2.5", "--h1-window", "0.5", "1.5"]) == 0
    assert main(["study", "--M", "8,16", "--assert", "--l2-window", "5", "6"]) == 2


def test_config_file_overridden_by_flags(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("problem = example1\nM = 8\nbeta_plus = 1000\n")
    assert main(["solve", "--config", str(cfg), "--problem", "zero"]) == 0
    assert "problem zero" in capsys.readouterr().out


def test_errors_exit_one(capsys):
    assert main(["solve", "--problem", "nope"]) == 1
    assert "unknown problem" in capsys.readouterr().err


def test_usage_error_prints_help(capsys):
    with pytest.raises(SystemExit) as e:
        main(["study", "--stab", "magic"])
    assert e.value.code == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1


def test_props_quick(capsys):
    assert main(["props", "--suite", "cT", "--suite", "lifting", "--quick"]) == 0
    assert capsys.readouterr().out.count("PASS") == 2


def test_export(tmp_path):
    assert main(["export", "--M", "4", "--out", str(tmp_path), "--what", "vtk"]) == 0
    assert (tmp_path / "example1_4.vtk").exists()
