import json

import numpy as np
import pandas as pd
import pytest

from src.cli.app import parse_args
from src.cli.commands import EXIT_INPUT, EXIT_OK, emit_plotdata
from src.cli.fixtures import FIXTURES, example41_document, write_fixtures
from src.cli.loader import ConfigError, load_document, parse_config
from src.evaluate.sweep import SweepResult
from src.main import main

from conftest import FIXTURES_DIR


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_bundled_files_match_their_documents(name):
    loaded = parse_config(FIXTURES_DIR / f"{name}.json")
    assert loaded.document == load_document(FIXTURES[name]()).document


def test_example41_document_loads(example41):
    assert example41.kind == "lq"
    assert example41.N == 4
    np.testing.assert_allclose(example41.x, [0.5, 0.5])
    assert example41.evaluation.k == [0, 1, 2, 3]
    np.testing.assert_allclose(example41.punishment.psis[3], [[1.0]])


def test_dimension_errors_are_located():
    doc = example41_document()
    doc["lq"]["A"] = np.eye(3).tolist()
    with pytest.raises(ConfigError) as err:
        load_document(doc)
    assert any(e.startswith("lq.A") and "expected shape (2, 2)" in e for e in err.value.errors)


def test_ragged_matrices_are_located():
    doc = example41_document()
    doc["lq"]["A"] = [[1.0, 0.0], [0.0]]
    doc["lq"]["G"] = [[1.0, 0.0], [0.0, 1.0, 2.0]]
    with pytest.raises(ConfigError) as err:
        load_document(doc)
    assert "lq.A[1]: ragged matrix" in err.value.errors
    assert "lq.G[1]: ragged matrix" in err.value.errors


def test_unknown_keys_are_rejected():
    doc = example41_document()
    doc["lq"]["Qhat"] = [[1.0, 0.0], [0.0, 1.0]]
    with pytest.raises(ConfigError) as err:
        load_document(doc)
    assert any(e.startswith("lq.Qhat") for e in err.value.errors)


def test_initial_time_and_stages_are_checked():
    doc = example41_document()
    doc["initial"]["t"] = 4
    doc["evaluation"]["k"] = [0, 5]
    with pytest.raises(ConfigError) as err:
        load_document(doc)
    assert any(e.startswith("initial.t") for e in err.value.errors)
    assert any(e.startswith("evaluation.k[1]") for e in err.value.errors)


def test_invalid_json_is_reported(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{\"kind\": \"lq\",", encoding="utf-8")
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    assert "invalid JSON" in err.value.errors[0]


def test_write_fixtures_round_trip(tmp_path):
    paths = write_fixtures(str(tmp_path))
    assert sorted(p.name for p in paths) == ["example41.json", "example42.json", "scalar_n1.json"]
    for path in paths:
        assert json.loads(path.read_text(encoding="utf-8"))["name"] == path.stem
        parse_config(path)


def test_parser_keeps_mu_options_exclusive():
    args = parse_args(["sweep", "--config", "x.json", "--mu-grid", "list:[0, 1]"])
    assert args.mu_grid == "list:[0, 1]"
    assert args.dump_bundle is False
    with pytest.raises(SystemExit):
        parse_args(["solve", "--mu", "1", "--mu-grid", "multiscale"])
    assert parse_args(["sweep", "--grid", "paper"]).mu_grid == "paper"
    assert args.recursion is None
    assert parse_args(["verify", "--recursion", "symmetric"]).recursion == "symmetric"
    with pytest.raises(SystemExit):
        parse_args(["verify", "--recursion", "transposed"])


def test_solve_scalar_game(tmp_path, capsys):
    code = main(["solve", "--config", str(FIXTURES_DIR / "scalar_n1.json"), "--output", str(tmp_path)])
    assert code == EXIT_OK
    assert "verdict: SufficientUnique" in capsys.readouterr().out
    gains = pd.read_csv(tmp_path / "gains.csv")
    kdev = gains[(gains["gain"] == "Kdev") & (gains["policy"] == "precommit")]
    assert kdev["value"].iloc[0] == pytest.approx(-1 / 3)


def test_solve_lq_dumps_bundle(tmp_path, capsys):
    code = main(["solve", "--config", str(FIXTURES_DIR / "example41.json"), "--output", str(tmp_path),
                 "--dump-bundle", "--k", "0,1"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "V_0 = " in out and "V_1 = " in out
    bundle = pd.read_csv(tmp_path / "bundle.csv")
    assert list(bundle.columns) == ["name", "t", "k", "l", "row", "col", "value"]
    assert {"P", "T", "Ttil", "O", "OO", "Vcal"} <= set(bundle["name"])


def test_verify_scalar_game(tmp_path):
    code = main(["verify", "--config", str(FIXTURES_DIR / "scalar_n1.json"), "--output", str(tmp_path)])
    assert code == EXIT_OK
    checks = pd.read_csv(tmp_path / "verify.csv")
    assert checks.loc[checks["check"] == "adjoint_gap", "value"].iloc[0] <= 1e-8


def test_oracle_commands(capsys):
    assert main(["oracle", "--config", str(FIXTURES_DIR / "scalar_n1.json")]) == EXIT_OK
    assert main(["oracle", "--config", str(FIXTURES_DIR / "example42.json")]) == EXIT_INPUT
    assert "exceed the oracle limit" in capsys.readouterr().out


def test_sweep_writes_tables_and_plotdata(tmp_path, capsys):
    code = main(["sweep", "--config", str(FIXTURES_DIR / "example41.json"), "--output", str(tmp_path),
                 "--mu-grid", "list:[0, 0.5, 1]", "--k", "0,1", "--threads", "2"])
    assert code == EXIT_OK
    assert "k=0: min V = " in capsys.readouterr().out
    values = pd.read_csv(tmp_path / "sweep_values.csv")
    assert len(values[values["policy"] == "selfcoord"]) == 6
    curve = np.loadtxt(tmp_path / "plotdata" / "curve_k1.dat")
    assert curve.shape == (3, 2)
    baseline = np.loadtxt(tmp_path / "plotdata" / "precommit_k0.dat")
    assert baseline[0, 1] == baseline[1, 1]


def test_sweep_needs_a_single_player_config(tmp_path):
    code = main(["sweep", "--config", str(FIXTURES_DIR / "scalar_n1.json"), "--output", str(tmp_path)])
    assert code == EXIT_INPUT


def test_mc_command(tmp_path):
    code = main(["mc", "--config", str(FIXTURES_DIR / "example41.json"), "--output", str(tmp_path),
                 "--k", "0", "--paths", "500", "--mu", "0.5", "--seed", "1"])
    assert code == EXIT_OK
    mc = pd.read_csv(tmp_path / "mc.csv")
    assert list(mc.columns) == ["k", "exact", "estimate", "stderr", "z"]


def test_fixtures_command(tmp_path):
    assert main(["fixtures", "--output", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "example42.json").exists()


@pytest.mark.parametrize("argv", [
    ["solve"],
    ["solve", "--config", "does-not-exist.json"],
    ["solve", "--config", str(FIXTURES_DIR / "example41.json"), "--t", "7"],
    ["sweep", "--config", str(FIXTURES_DIR / "example41.json"), "--mu-grid", "cubic:1"],
    ["solve", "--config", str(FIXTURES_DIR / "example41.json"), "--mu", "-1"],
])
def test_input_errors_exit_with_one(argv, tmp_path):
    assert main(argv + ["--output", str(tmp_path)]) == EXIT_INPUT


def test_emit_plotdata_without_stages(tmp_path):
    result = SweepResult(grid=np.array([0.0, 1.0]), ks=[], rows=[])
    assert emit_plotdata(result, tmp_path / "plots") == []
    assert not (tmp_path / "plots").exists()
