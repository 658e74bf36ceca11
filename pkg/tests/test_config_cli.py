import json
from pathlib import Path

import numpy as np
import pytest

from horizonlab.cli import main
from horizonlab.config import CheckSpec, ConfigError, config_from_dict, load_config, parse_config, serialize
from horizonlab.pipeline import RunData, run_pipeline, thread_count

ROOT = Path(__file__).resolve().parents[1]
SHIPPED = ("l0_aretakis.json", "subextreme_contrast.json")


def small_doc(**overrides):
    doc = {
        "background": {"mass": 1.0, "charge_ratio": 1.0},
        "l": 0,
        "grid": {"r_max": 24.0, "h": 0.1, "horizon_spacing": 0.2},
        "initial_data": {"kind": "gaussian_bump", "center": 3.0, "width": 1.0},
        "evolution": {"t_final": 10.0, "output_every": 1.0, "order": 4},
        "diagnostics": ["aretakis_drift", "energy_balance", "hardy"],
        "output_dir": "unused",
    }
    doc.update(overrides)
    return doc


@pytest.fixture
def small_config_path(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(small_doc()))
    return path


# --------------------------------------------------------------------------- configuration


def test_defaults():
    cfg = config_from_dict({"evolution": {"t_final": 5.0}})
    assert cfg.evolution.cfl == 0.5
    assert cfg.evolution.order == 2
    assert cfg.evolution.outer_boundary == "causal_buffer"
    assert cfg.background.charge_ratio == 1.0
    assert cfg.diagnostics == ()
    assert cfg.build_grid().r_max >= cfg.build_background().mass * 2 + 5.0


def test_charge_ratio_out_of_range():
    with pytest.raises(ConfigError) as info:
        config_from_dict(small_doc(background={"mass": 1.0, "charge_ratio": 1.2}))
    assert "charge_ratio must lie in [0,1]" in info.value.errors


def test_all_errors_are_reported():
    doc = small_doc(l=-1, evolution={"t_final": -1.0, "cfl": "fast", "typo": 1}, diagnostics=["no_such_check"])
    with pytest.raises(ConfigError) as info:
        config_from_dict(doc)
    text = "\n".join(info.value.errors)
    for fragment in ("l must be", "t_final", "cfl", "typo", "no_such_check"):
        assert fragment in text
    assert len(info.value.errors) >= 5


def test_syntax_error_reports_position():
    with pytest.raises(ConfigError) as info:
        parse_config('{\n  "l": 0,\n  "grid": }')
    assert "line 3" in info.value.errors[0]


def test_round_trip(tmp_path):
    cfg = config_from_dict(small_doc(diagnostics=["hardy", {"check": "blowup_slope", "k": 2}]))
    path = tmp_path / "c.json"
    path.write_text(serialize(cfg))
    again = load_config(path)
    assert again == cfg
    assert serialize(again) == serialize(cfg)
    assert again.diagnostics[1] == CheckSpec("blowup_slope", {"k": 2})
    assert again.diagnostics[1].label == "blowup_slope_k=2"


def test_cross_field_checks():
    with pytest.raises(ConfigError, match="r_max"):
        config_from_dict(small_doc(grid={"r_max": 5.0, "h": 0.1}))
    with pytest.raises(ConfigError) as info:
        config_from_dict(small_doc(initial_data={"center": 30.0}))
    assert any("center" in e for e in info.value.errors)
    with pytest.raises(ConfigError):
        config_from_dict(small_doc(grid={"r_max": 24.0, "h": 0.1, "n_points": 100}))


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_configs_valid_and_identical(name):
    packaged = ROOT / "src" / "horizonlab" / "configs" / name
    example = ROOT / "examples" / name
    assert packaged.read_bytes() == example.read_bytes()
    cfg = load_config(packaged)
    assert cfg.diagnostics


# --------------------------------------------------------------------------- CLI


def test_cli_derive_laws_text(capsys):
    assert main(["derive-laws", "--l", "1"]) == 0
    out = capsys.readouterr().out
    assert "1/M^2" in out and "3/M" in out


def test_cli_derive_laws_json(capsys):
    assert main(["derive-laws", "--l", "2", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["l"] == 2


def test_cli_verify_positivity(tmp_path, capsys):
    csv = tmp_path / "n.csv"
    assert main(["verify-positivity", "--multiplier", "N_mod", "--csv", str(csv), "--samples", "2000"]) == 0
    assert capsys.readouterr().out.startswith("PASS")
    data = np.loadtxt(csv, delimiter=",", skiprows=1)
    assert data.shape == (2000, 4)
    assert data[:, 1].min() >= -1e-12


def test_cli_killing_field_identically_zero(tmp_path, capsys):
    assert main(["verify-positivity", "--multiplier", "T", "--csv", str(tmp_path / "t.csv"), "--rmax", "5"]) == 0
    assert "identically_zero=True" in capsys.readouterr().out


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert main(["derive-laws", "--l", "1", "--bogus"]) == 2
    assert main(["verify-positivity", "--multiplier", "nope"]) == 2
    assert main([]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(small_doc(background={"charge_ratio": 2.0})))
    assert main(["show-config", str(bad)]) == 2
    assert "charge_ratio must lie in [0,1]" in capsys.readouterr().err


@pytest.mark.parametrize(
    "command", ["derive-laws", "evolve", "analyze", "verify-positivity", "convergence", "run", "show-config"]
)
def test_cli_help(command, capsys):
    assert main([command, "--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_cli_show_config_is_canonical(small_config_path, capsys):
    assert main(["show-config", str(small_config_path)]) == 0
    text = capsys.readouterr().out
    assert parse_config(text) == load_config(small_config_path)


# --------------------------------------------------------------------------- pipeline


def _files(directory: Path) -> dict:
    return {
        p.relative_to(directory).as_posix(): p.read_bytes()
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }


def test_pipeline_is_deterministic(small_config_path, tmp_path):
    cfg = load_config(small_config_path)
    a = run_pipeline(cfg, tmp_path / "a")
    b = run_pipeline(cfg, tmp_path / "b")
    assert not a.errors and [v["check"] for v in a.verdicts] == ["aretakis_drift", "energy_balance", "hardy"]
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    assert a.verdicts == b.verdicts
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["tool"] == "horizonlab"
    assert {f["path"] for f in manifest["files"]} == set(_files(tmp_path / "a"))


def test_pipeline_outputs(small_config_path, tmp_path):
    cfg = load_config(small_config_path)
    run_pipeline(cfg, tmp_path)
    header = (tmp_path / "trace.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["tstar", "psi", "dr1"] and "H_0" in header
    snaps = sorted((tmp_path / "snapshots").glob("snap_*.csv"))
    assert len(snaps) == 11
    assert snaps[0].read_text().startswith("# t*=")
    for label in ("aretakis_drift", "energy_balance", "hardy"):
        for ext in ("json", "csv", "plt"):
            assert (tmp_path / "checks" / f"{label}.{ext}").is_file()
    assert (tmp_path / "laws.json").is_file()


def test_pipeline_without_diagnostics(tmp_path):
    cfg = config_from_dict(small_doc(diagnostics=[]))
    manifest = run_pipeline(cfg, tmp_path)
    assert manifest.passed and manifest.verdicts == []
    assert any(f["path"].startswith("snapshots/") for f in manifest.files)


def test_stored_run_reanalysis_matches(small_config_path, tmp_path, capsys):
    cfg = load_config(small_config_path)
    keep = {}
    manifest = run_pipeline(cfg, tmp_path, keep=keep)
    loaded = RunData.load(tmp_path)
    np.testing.assert_array_equal(loaded.trace.radial, keep["run"].trace.radial)
    assert main(["analyze", "--run", str(tmp_path), "--check", "energy_balance"]) == 0
    verdict = json.loads(capsys.readouterr().out)
    stored = next(v for v in manifest.verdicts if v["check"] == "energy_balance")
    assert verdict["measured"] == pytest.approx(stored["measured"], rel=1e-12)


def test_failing_check_exit_code(small_config_path, tmp_path, capsys):
    assert main(["run", str(small_config_path), "--output", str(tmp_path)]) == 0
    capsys.readouterr()
    code = main(["analyze", "--run", str(tmp_path), "--check", "energy_balance", "--param", "tolerance=1e-30"])
    assert code == 1
    assert json.loads(capsys.readouterr().out)["pass"] is False
    assert main(["analyze", "--run", str(tmp_path), "--check", "nope"]) == 2


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("HORIZONLAB_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.delenv("HORIZONLAB_THREADS")
    assert 1 <= thread_count() <= 4
