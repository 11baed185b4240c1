# standard
import csv
import pytest
# local
import bench
import taylor_bench


@pytest.fixture
def run(tmp_path, capsys):
    """Run the CLI with a config file in tmp_path. Returns exit code and stdout."""
    config_path = tmp_path / "test.ini"
    config_path.write_text("LOG_LEVEL = INFO\n"
                           "LOG_STRING_INDICATOR = TEST |\n"
                           "REFERENCE_TOL = 1e-10\n"
                           "SWEEP_TOLERANCES = [1e-4, 1e-6]\n"
                           f"CSV_PATH = {tmp_path / 'default.csv'}\n")

    def run_cli(*arguments: str, config: str = str(config_path)) -> tuple[int, str]:
        code = taylor_bench.main(["--config", config, "--env", str(tmp_path / "missing.env"), *arguments])
        return code, capsys.readouterr().out
    return run_cli


def test_dump_cl(run):
    code, output = run("dump-cl", "--problem", "spring-pendulum")
    assert code == 0
    rows = [row.split() for row in output.splitlines()]
    assert ["Line", "Kind", "Op", "Mode", "R1", "R2", "Imm"] in rows
    assert ["15", "SUB", "exp", "RR", "15", "14"] in rows
    assert ["17", "ALG", "mul", "IR", "16", "40"] in rows


def test_dump_cl_with_param(run):
    code, output = run("dump-cl", "--param", "k=80", "--param", "m=2")
    assert code == 0
    assert ["17", "ALG", "mul", "IR", "16", "40"] in [row.split() for row in output.splitlines()]


def test_unknown_param(run):
    code, output = run("dump-cl", "--param", "length=2")
    assert code == 1
    assert "Command 'dump-cl' failed." in output
    assert "length" in output


def test_bad_param_value(run):
    code, output = run("dump-cl", "--param", "k=stiff")
    assert code == 1
    assert "numeric value" in output


def test_solve(run, tmp_path):
    csv_path = tmp_path / "states.csv"
    code, output = run("solve", "--t-end", "1", "--tol", "1e-9", "--csv", str(csv_path))
    assert code == 0
    assert "problem: spring-pendulum" in output
    assert "order: 12" in output
    assert "energy drift:" in output
    assert "TEST |" in output
    with open(csv_path, newline="") as csv_file:
        rows = list(csv.reader(csv_file))
    assert rows[0] == ["t", "x1", "x2", "x3", "x4"]
    assert float(rows[1][1]) == pytest.approx(1.24525)
    assert float(rows[-1][0]) == 1.0


def test_solve_with_fixed_order(run):
    code, output = run("solve", "--problem", "pleiades", "--t-end", "0.2", "--order", "15")
    assert code == 0
    assert "order: 15" in output
    assert "angular_momentum drift:" in output


def test_analyze(run):
    code, output = run("analyze", "--problem", "spring-pendulum")
    assert code == 0
    assert "code list: 23 lines, DAE size 24" in output
    assert "diagonal is a highest-value transversal: True" in output
    assert "code-list offsets: valid" in output
    assert "implicit ODE (canonical c = 0): False" in output


def test_analyze_brusselator(run):
    code, output = run("analyze", "--problem", "brusselator", "--n", "3")
    assert code == 0
    assert "implicit ODE (canonical c = 0): True" in output
    assert "structural index: 0" in output


def test_sweep(run, tmp_path):
    csv_path = tmp_path / "sweep.csv"
    code, output = run("sweep", "--problem", "spring-pendulum", "--tol", "1e-5", "1e-7", "--csv", str(csv_path))
    assert code == 0
    with open(csv_path, newline="") as csv_file:
        rows = list(csv.reader(csv_file))
    assert rows[0] == list(bench.CSV_COLUMNS)
    assert [float(row[0]) for row in rows[1:]] == [1e-5, 1e-7]
    assert "Results saved." in output


def test_sweep_defaults_from_config(run, tmp_path):
    code, output = run("sweep", "--problem", "brusselator", "--n", "3")
    assert code == 0
    with open(tmp_path / "default.csv", newline="") as csv_file:
        rows = list(csv.reader(csv_file))
    assert [float(row[0]) for row in rows[1:]] == [1e-4, 1e-6]
    assert {int(row[1]) for row in rows[1:]} == {bench.BRUSSELATOR_STIFF_ORDER}


def test_missing_config(run, tmp_path, caplog):
    code, output = run("dump-cl", config=str(tmp_path / "missing.ini"))
    assert code == 0
    assert "Config file not found. Using defaults." in caplog.text


def test_log_level_from_config(run, tmp_path):
    quiet_config = tmp_path / "quiet.ini"
    quiet_config.write_text("LOG_LEVEL = WARNING\n")
    code, output = run("dump-cl", config=str(quiet_config))
    assert code == 0
    assert "Code list built." not in output


def test_unknown_problem(run):
    with pytest.raises(SystemExit):
        run("solve", "--problem", "lorenz")
