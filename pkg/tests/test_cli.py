import json

import pytest

from kleincantor import __version__
from kleincantor.cli import ConfigError, RunConfig, load_config, main
from kleincantor.export import read_csv


@pytest.fixture
def small_config(tmp_path):
    """A config with a short enumeration radius so the pipelines run quickly."""
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"delta_t": 10.0, "seed": 3}))
    return path


def test_unknown_preset_names_it(tmp_path, capsys):
    code = main(["delta", "--preset", "no-such-group", "--out", str(tmp_path)])
    assert code == 2
    assert "no-such-group" in capsys.readouterr().err


def test_zero_depth_is_a_usage_error(tmp_path, capsys):
    assert main(["construct", "--depth", "0", "--out", str(tmp_path)]) == 2
    assert "insufficient depth" in capsys.readouterr().err


def test_zero_samples_is_a_usage_error(tmp_path, capsys):
    assert main(["verify-geometry", "--samples", "0", "--out", str(tmp_path)]) == 2
    assert "sample size" in capsys.readouterr().err


def test_unknown_config_keys(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"depht": 3}))
    with pytest.raises(ConfigError, match="depht"):
        load_config(str(path), {})
    assert main(["delta", "--config", str(path), "--out", str(tmp_path)]) == 2


def test_overrides_win_over_file(small_config):
    cfg = load_config(str(small_config), {"seed": 9, "out": None})
    assert cfg.seed == 9 and cfg.delta_t == 10.0


def test_digest_ignores_output_location():
    a = RunConfig(out="a", threads=1)
    b = RunConfig(out="b", threads=4)
    assert a.digest == b.digest
    assert RunConfig(seed=1).digest != a.digest


def test_verify_geometry_passes(tmp_path):
    assert main(["verify-geometry", "--samples", "2000", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "verify_geometry.json").read_text())
    assert rep["passed"] and rep["summit"]["violations"] == 0


def test_verify_geometry_rejects_a_smaller_constant(tmp_path, capsys):
    # tau = 0.8 is below the sharp constant: the suite must find a counterexample
    code = main(["verify-geometry", "--samples", "2000", "--tau", "0.8", "--out", str(tmp_path)])
    assert code == 1
    assert "minimal instance" in capsys.readouterr().err
    rep = json.loads((tmp_path / "verify_geometry.json").read_text())
    assert rep["summit"]["counterexample"]["gap"] >= 0.8


def test_delta_output_is_reproducible(tmp_path, small_config):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["delta", "--config", str(small_config), "--out", str(out)]) == 0
        outs.append((out / "delta.json").read_bytes())
    assert outs[0] == outs[1]
    doc = json.loads(outs[0])
    assert doc["header"]["version"] == __version__
    assert doc["header"]["config_hash"] == load_config(str(small_config), {}).digest


def test_dump_orbit_respects_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("KLEINCANTOR_OUT", str(tmp_path))
    assert main(["dump-orbit", "--max-length", "3", "--label", "0"]) == 0
    first, rows = read_csv(tmp_path / "orbit.csv")
    assert "config_hash=" in first and f"version={__version__}" in first
    assert rows and all(r["label"] == "0" for r in rows)


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_construct_negative_control_fails(tmp_path, capsys):
    code = main(["construct", "--p-minus-one", "--branches", "2", "--threads", "1",
                 "--out", str(tmp_path)])
    assert code == 1
    assert "crucial_sum" in capsys.readouterr().err
