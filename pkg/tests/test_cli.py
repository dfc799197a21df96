import json

import numpy as np
import pytest

from optransport import cli, models


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = [[float(x) for x in ln.split(",")] for ln in lines[1:] if not ln.startswith("#")]
    return header, np.array(rows), [ln for ln in lines if ln.startswith("#")]


def test_minimal_config_defaults(tmp_path):
    cfg = cli.parse_config(write(tmp_path, "[run]\nmodel = atomic_pair\n"))
    assert cfg.params == models.AtomicPairParams.weak()
    assert cfg.params.omega_e == 0.5 and cfg.params.epsilon == 5e-4
    assert cfg.T == 200.0 and cfg.grid_points == 20001 and cfg.gauge == "analytic"


def test_empty_methods_rejected(tmp_path):
    with pytest.raises(cli.ConfigError, match="methods nonempty"):
        cli.parse_config(write(tmp_path, "[run]\nmethods = []\n"))


def test_unknown_key_named_with_line(tmp_path):
    with pytest.raises(cli.ConfigError, match=r":3: unknown key 'foo'"):
        cli.parse_config(write(tmp_path, "[run]\nT = 10\nfoo = 1\n"))


@pytest.mark.parametrize("text,msg", [
    ("[nope]\n", "unknown section"),
    ("[run]\ngrid_points = 1000\n", "grid_points must be >= 1001"),
    ("[run]\ngrid_points = 2001\noutput_stride = 7\n", "output_stride"),
    ("[run]\nT = abc\n", "bad value 'abc' for key 'T'"),
    ("[run]\nmethods = exact, magic\n", "unknown method"),
    ("[run]\nmethods = thermal\n", r"\[thermal\]"),
    ("T = 1\n", "outside of any section"),
    ("[run]\nT = 1\nT = 2\n", "duplicate key"),
    ("[run]\nmodel = atomic_pair\n[model.spin_chain]\nJ = 1e-3\n", "does not match model"),
    ("[run]\n[model.atomic_pair]\nr_min = 0\n", "r_min must be positive"),
])
def test_config_errors(tmp_path, text, msg):
    with pytest.raises(cli.ConfigError, match=msg):
        cli.parse_config(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(cli.ConfigError, match="not found"):
        cli.parse_config(tmp_path / "absent.cfg")


def test_presets_and_overrides(tmp_path):
    cfg = cli.parse_config(write(tmp_path, "[run]\nmodel = spin_chain\npreset = strong\n[model.spin_chain]\ndelta_s = 0.05\n"))
    assert cfg.T == 5000.0 and cfg.params.Bmin == 0.67 and cfg.params.delta_s == 0.05
    cfg = cli.parse_config(write(tmp_path, "[run]\npreset = strong\nT = 100\ngrid_points = 1001\noutput_stride = 10\n"))
    assert cfg.T == 100.0 and cfg.params == models.AtomicPairParams.strong()


def test_booleans_and_exponents():
    assert cli._convert(bool, "true", "k", 1) is True
    assert cli._convert(float, "1.6e-2", "k", 1) == 1.6e-2
    assert cli._convert(int, "2e3", "k", 1) == 2000
    with pytest.raises(cli.ConfigError):
        cli._convert(bool, "yes", "k", 1)


@pytest.fixture(scope="module")
def atomic_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("atomic")
    cfg = cli.RunConfig(methods=("exact", "alone", "strong", "weak1"), name="aw")
    traj = cli.run_simulation(cfg, out)
    return cfg, traj, out


def test_csv_schema_in_config_order(atomic_run):
    cfg, _, out = atomic_run
    header, table, footer = read_csv(out / "aw_trajectory.csv")
    expected = ["s", "exact_pop00", "exact_coh01"]
    for m in ("alone", "strong", "weak1"):
        expected += [f"{m}_pop00", f"{m}_coh01", f"{m}_err_pop", f"{m}_err_coh"]
    assert header == expected
    assert table.shape == (2001, len(expected))
    assert any(ln.startswith("# max weak1_err_pop") for ln in footer)


def test_atomic_weak_error_column(atomic_run):
    _, _, out = atomic_run
    header, table, _ = read_csv(out / "aw_trajectory.csv")
    assert table[:, header.index("weak1_err_pop")].max() <= 1e-3
    eh, et, _ = read_csv(out / "aw_errors.csv")
    assert np.array_equal(et[:, eh.index("weak1_err_pop")], table[:, header.index("weak1_err_pop")])


def test_seventeen_significant_digits(atomic_run):
    _, traj, out = atomic_run
    header, table, _ = read_csv(out / "aw_trajectory.csv")
    assert np.array_equal(table[:, header.index("exact_pop00")], traj.population("exact"))


def test_byte_determinism(atomic_run, tmp_path):
    cfg, _, out = atomic_run
    cli.run_simulation(cfg, tmp_path)
    for f in out.iterdir():
        assert (tmp_path / f.name).read_bytes() == f.read_bytes(), f.name


def test_plot_script_references_csv(atomic_run):
    _, _, out = atomic_run
    text = (out / "aw_plot.py").read_text()
    assert "aw_trajectory.csv" in text and "semilogy" in text
    compile(text, "aw_plot.py", "exec")


def test_exact_only_has_no_error_columns(tmp_path):
    cfg = cli.RunConfig(methods=("exact",), grid_points=2001, output_stride=10, name="ex")
    cli.run_simulation(cfg, tmp_path)
    header, _, footer = read_csv(tmp_path / "ex_trajectory.csv")
    assert header == ["s", "exact_pop00", "exact_coh01"]
    assert not (tmp_path / "ex_errors.csv").exists()


def test_no_exact_means_no_errors(tmp_path):
    cfg = cli.RunConfig(methods=("alone", "weak0"), grid_points=2001, output_stride=10, name="ne")
    cli.run_simulation(cfg, tmp_path)
    header, _, _ = read_csv(tmp_path / "ne_trajectory.csv")
    assert header == ["s", "alone_pop00", "alone_coh01", "weak0_pop00", "weak0_coh01"]


def test_spin_chain_regime_json(tmp_path):
    cfg_path = write(tmp_path, "[run]\nmodel = spin_chain\npreset = weak\nmethods = weak1\n")
    out = tmp_path / "r.json"
    assert cli.main(["regimes", "--config", str(cfg_path), "--json", str(out)]) == 0
    assert json.loads(out.read_text())["classification"] == "weak"


def test_thermal_and_crossing_runs(tmp_path):
    cfg = cli.RunConfig(methods=("exact", "thermal"), thermal=cli.ThermalConfig(beta_inv=0.3),
                        grid_points=2001, output_stride=10, name="th")
    traj = cli.run_simulation(cfg, tmp_path)
    assert cli.errors_for(traj, "thermal")["max_pop"] < 1e-3
    cfg = cli.RunConfig.preset("crossing", methods=("exact", "crossing"), grid_points=2001, output_stride=10, name="cr")
    traj = cli.run_simulation(cfg, tmp_path)
    p = traj.diagnostics["crossing"]["p"]
    fam = cli.build_model(cfg)
    assert p == pytest.approx(np.exp(-2 * np.pi * 100 * 0.05**2 * fam.info["v_cross"][0] ** 2 / 4.0))


def test_main_verify_and_errors(tmp_path, capsys):
    out = tmp_path / "v.json"
    assert cli.main(["verify", "--suite", "corollary", "--json", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["pass"] and rep["corollary"]["splitting_slope"]["value"] == pytest.approx(2.0, abs=0.3)
    bad = write(tmp_path, "[run]\nfoo = 1\n", "bad.cfg")
    assert cli.main(["simulate", "--config", str(bad)]) == 2
    assert "foo" in capsys.readouterr().err


def test_sweep_isolated_outputs(tmp_path):
    for i, T in enumerate((100, 150)):
        write(tmp_path, f"[run]\nT = {T}\ngrid_points = 1001\noutput_stride = 10\nmethods = alone, weak1\nname = c\n", f"c{i}.cfg")
    done = cli.sweep(tmp_path, jobs=2)
    assert len(done) == 2
    a = (tmp_path / "runs" / "c0" / "c_trajectory.csv").read_text()
    b = (tmp_path / "runs" / "c1" / "c_trajectory.csv").read_text()
    assert a != b
