import json
import math
from importlib import resources

import numpy as np
import pytest

from cellflux import (Approach, ConfigError, load_mesh, preset_config,
                      run_flux_convergence, run_model_comparison,
                      serialize_config, validate_config)
from cellflux.cli import EXIT_CONFIG, EXIT_OK, main
from cellflux.metrics import load_metric_series

TINY_COMPARE = """
[domain]
half_width = 10.0
cell_center_x = 0.0
cell_center_y = 0.0
cell_radius = 1.0
target_h = 0.7

[flux]
phi0 = 1.0
rho = 1.0
mode = 1

[time]
dt = 0.25
duration = {duration}

[model]
diffusivity = 5.0
approaches = single, multi
r_values = 0.25, 0.01
epsilon = 0.01
circle_samples = 64

[output]
directory = {out}
seed = 0
"""


def _shipped(name: str) -> str:
    return resources.files("cellflux").joinpath(f"configs/{name}").read_text()


def test_shipped_configs_are_valid():
    paper = validate_config(_shipped("paper.ini"))
    assert paper.domain.target_h == 0.0875
    assert paper.grid.dt == 0.04 and paper.grid.T == 40.0
    assert paper.diffusivity == 5.0 and paper.flux.rho == 1.0
    assert paper.r_values == (0.25, 0.1, 0.01)
    ci = validate_config(_shipped("ci.ini"))
    assert ci.grid.n_steps == 64


def test_validate_reports_every_violation_at_once():
    text = _shipped("ci.ini").replace("r_values = 0.25, 0.1, 0.01",
                                      "r_values = 1.5, 0.1")
    text = text.replace("rho = 1.0", "rho = 2.0")
    text = text.replace("dt = 0.15625", "dt = 0.16")
    text += "\n[extra]\nwhat = 1\n"
    with pytest.raises(ConfigError) as err:
        validate_config(text)
    messages = "\n".join(err.value.errors)
    assert "r = 1.5" in messages and "(0,R)" in messages
    assert "rho" in messages
    assert "not integral" in messages
    assert "unknown section" in messages
    assert len(err.value.errors) >= 4


def test_validate_flags_unknown_and_missing_keys():
    text = _shipped("ci.ini").replace("phi0 = 1.0", "phi_zero = 1.0")
    with pytest.raises(ConfigError) as err:
        validate_config(text)
    messages = "\n".join(err.value.errors)
    assert "unknown key 'phi_zero'" in messages
    assert "missing key 'phi0'" in messages


def test_config_serialization_round_trips():
    config = preset_config("ci", out_dir="somewhere")
    again = validate_config(serialize_config(config))
    assert again == config
    assert serialize_config(again) == serialize_config(config)


def test_presets():
    paper = preset_config("paper")
    assert paper.grid.T == 40.0 and paper.domain.target_h == 0.0875
    ci = preset_config("ci")
    assert ci.grid.T == 10.0 and ci.domain.target_h == 0.35
    assert ci.approaches == (Approach.SINGLE_DIRAC, Approach.MULTI_DIRAC)
    with pytest.raises(ConfigError):
        preset_config("galactic")


@pytest.fixture(scope="module")
def tiny_compare_results(tmp_path_factory):
    out = tmp_path_factory.mktemp("compare")
    config = validate_config(TINY_COMPARE.format(duration=1.0, out=out))
    manifest = run_model_comparison(config, out)
    return out, manifest


def test_comparison_emits_complete_manifest(tiny_compare_results):
    out, manifest = tiny_compare_results
    assert not manifest.failures
    for rel in manifest.files.values():
        target = out / rel
        assert target.exists() and target.stat().st_size > 0
    assert (out / "manifest.json").exists()
    payload = json.loads((out / "manifest.json").read_text())
    assert payload["files"] == manifest.files
    assert "[domain]" in payload["config"]


def test_comparison_metric_series_shapes(tiny_compare_results):
    out, _ = tiny_compare_results
    series = load_metric_series(out / "metrics_multi_r0.01.csv")
    assert len(series.times) == 4  # duration / dt
    assert series.times[0] == 0.25
    assert np.all(np.diff(series.c_star) >= 0.0)


def test_comparison_summary_checks(tiny_compare_results):
    out, _ = tiny_compare_results
    summary = json.loads((out / "summary.json").read_text())
    assert summary["exclusion_mass"]["passed"]
    assert summary["exclusion_mass_balance_per_step"]["passed"]
    assert summary["mirror_symmetry"]["passed"]
    assert "flux_dev_multi_le_single" in summary


def test_comparison_mesh_exports_load(tiny_compare_results):
    out, _ = tiny_compare_results
    holed = load_mesh(out / "mesh_holed.txt")
    full = load_mesh(out / "mesh_full.txt")
    assert len(holed.edge_tags) > len(full.edge_tags)


def test_single_step_run_has_one_row_with_rectangle_cstar(tmp_path):
    config = validate_config(TINY_COMPARE.format(duration=0.25, out=tmp_path))
    run_model_comparison(config, tmp_path)
    series = load_metric_series(tmp_path / "metrics_single.csv")
    assert len(series.times) == 1
    assert abs(series.c_star[0] - series.flux_dev[0] * 0.25) < 1e-12


def test_comparison_output_is_deterministic(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        config = validate_config(TINY_COMPARE.format(duration=0.5, out=out))
        run_model_comparison(config, out)
    for name in ("metrics_single.csv", "metrics_multi_r0.01.csv",
                 "mesh_holed.txt"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_flux_convergence_artifacts(tmp_path):
    config = validate_config(TINY_COMPARE.format(duration=1.0, out=tmp_path))
    manifest = run_flux_convergence(config, tmp_path)
    for mode in (1, 2):
        data = np.genfromtxt(tmp_path / f"flux_time_sweep_n{mode}.csv",
                             delimiter=",", names=True)
        assert set(np.unique(data["t"])) == {0.5, 5.0, 40.0}
        rsweep = np.genfromtxt(tmp_path / f"flux_r_sweep_n{mode}.csv",
                               delimiter=",", names=True)
        # the large-time sweep approaches the prescribed flux as r shrinks
        r_small = rsweep["r"] == rsweep["r"].min()
        target = 1.0 * (1.0 + 1.0 * np.sin(mode * rsweep["theta"][r_small]))
        dev = np.abs(rsweep["value"][r_small] - target).max()
        assert dev < 0.15
    assert "time_sweep_n1" in manifest.files


def test_flux_convergence_flat_for_zero_amplitude(tmp_path):
    text = TINY_COMPARE.format(duration=1.0, out=tmp_path).replace(
        "rho = 1.0", "rho = 0.0")
    config = validate_config(text)
    run_flux_convergence(config, tmp_path)
    data = np.genfromtxt(tmp_path / "flux_time_sweep_n1.csv", delimiter=",",
                         names=True)
    assert np.abs(data["value"] - 1.0).max() < 1e-9


def test_cli_validate_and_exit_codes(tmp_path):
    good = tmp_path / "good.ini"
    good.write_text(_shipped("ci.ini"))
    assert main(["validate", "--config", str(good)]) == EXIT_OK

    bad = tmp_path / "bad.ini"
    bad.write_text(_shipped("ci.ini").replace("rho = 1.0", "rho = 7.0"))
    assert main(["validate", "--config", str(bad)]) == EXIT_CONFIG

    assert main(["compare", "--config", str(tmp_path / "missing.ini")]) \
        == EXIT_CONFIG
    # --config and --preset are mutually exclusive
    assert main(["compare", "--config", str(good), "--preset", "ci"]) \
        == EXIT_CONFIG


def test_cli_mesh_verb(tmp_path):
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(TINY_COMPARE.format(duration=0.5, out=tmp_path))
    assert main(["mesh", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "mesh_holed.txt").exists()
    assert (tmp_path / "mesh_full.txt").exists()


def test_cli_flux_sweep_verb(tmp_path):
    assert main(["flux-sweep", "--preset", "ci", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "manifest.json").exists()
