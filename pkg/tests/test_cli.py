import io

import pytest

from smgark.cli import main
from smgark.tableau import build_mr_imex2, save


def run(*argv):
    buf = io.StringIO()
    return main(list(argv), out=buf), buf.getvalue()


def test_check_builtin_passes():
    code, text = run("check", "mr-lpfr", "--M", "2", "--explicit", "--positive-weights")
    assert code == 0 and "FAIL" not in text


def test_check_odd_lpfr(capsys):
    code, _ = run("check", "mr-lpfr", "--M", "3")
    assert code != 0
    assert "M must be even" in capsys.readouterr().err


def test_check_corrupted_file(tmp_path):
    path = tmp_path / "imex2.tab"
    save(build_mr_imex2(2), path)
    assert run("check", str(path))[0] == 0
    lines = path.read_text().splitlines()
    i = lines.index("[bar.b.s]") + 1
    lines[i] = lines[i].replace("0.5", "0.6", 1)
    path.write_text("\n".join(lines) + "\n")
    code, text = run("check", str(path))
    assert code == 1
    assert "FAIL p1.slow.bar" in text


def test_check_parse_error(tmp_path, capsys):
    path = tmp_path / "bad.tab"
    path.write_text("M = 1\n\n[bar.ss]\n0 x\n")
    assert run("check", str(path))[0] == 2
    assert "line" in capsys.readouterr().err


def test_check_report(tmp_path):
    rep = tmp_path / "r.csv"
    run("check", "mr-imex2", "--M", "5", "--decoupled", "--report", str(rep))
    rows = rep.read_text().splitlines()
    assert len(rows) > 12


def test_integrate_fig3_rows(tmp_path):
    out = tmp_path / "t.csv"
    code, _ = run("integrate", "--scheme", "mr-imex2", "--M", "50", "--H", "0.1", "--t-end", "1", "-o", str(out))
    assert code == 0
    assert len(out.read_text().splitlines()) == 12  # header + 11 macro-grid rows


def test_integrate_zero_time(tmp_path):
    out = tmp_path / "t.csv"
    assert run("integrate", "--t-end", "0", "-o", str(out))[0] == 0
    assert len(out.read_text().splitlines()) == 2


def test_integrate_unknown_scheme(capsys):
    assert run("integrate", "--scheme", "rk4")[0] != 0
    assert "mr-imex2" in capsys.readouterr().err


def test_integrate_non_integral_steps(capsys):
    assert run("integrate", "--H", "0.3", "--t-end", "1")[0] != 0


def test_byte_identical_reruns(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        run("integrate", "--scheme", "mr-imim2", "--M", "5", "--H", "0.1", "--t-end", "0.5",
            "--compose", "tj", "--order", "4", "-o", str(p))
    assert a.read_bytes() == b.read_bytes()


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# run\nscheme = mr-lpfr\nM = 4\nH = 0.1\nt_end = 0.3\n")
    out = tmp_path / "t.csv"
    assert run("integrate", "--config", str(cfg), "-o", str(out))[0] == 0
    assert len(out.read_text().splitlines()) == 5
    assert run("integrate", "--config", str(cfg), "--t-end", "0.5", "-o", str(out))[0] == 0
    assert len(out.read_text().splitlines()) == 7


def test_micro_output(tmp_path):
    out, micro = tmp_path / "t.csv", tmp_path / "m.csv"
    run("integrate", "--M", "5", "--H", "0.1", "--t-end", "0.2", "-o", str(out), "--micro-output", str(micro))
    assert len(micro.read_text().splitlines()) == 12


def test_compose_writes_tableau(tmp_path):
    out = tmp_path / "c.tab"
    assert run("compose", "mr-imex2", "--M", "1", "--family", "tj", "--order", "4", "-o", str(out))[0] == 0
    assert out.read_text().startswith("M = 3")
    code, text = run("check", str(out))
    assert code == 0 and "flattened" in text


def test_experiment_convergence_footer(tmp_path):
    code, text = run("experiment", "convergence", "--compose", "triple-jump", "--kmax", "7",
                     "--outdir", str(tmp_path))
    assert code == 0
    files = list(tmp_path.glob("convergence*.csv"))
    assert len(files) == 1
    assert files[0].read_text().splitlines()[-1].startswith("slope,")


def test_experiment_energy_short(tmp_path):
    code, _ = run("experiment", "energy", "--scheme", "mr-imex2", "--M", "50", "--t-end", "2",
                  "--outdir", str(tmp_path))
    assert code == 0
    rows = next(tmp_path.glob("energy*.csv")).read_text().splitlines()
    assert rows[0] == "t,H,I1,I2,I3,I" and len(rows) == 22


def test_experiment_unknown(capsys):
    assert run("experiment", "fig9")[0] == 2
    assert "energy" in capsys.readouterr().err


def test_list():
    code, text = run("list")
    assert code == 0 and "mr-lpfr" in text and "sweep" in text
