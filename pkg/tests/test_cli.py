from __future__ import annotations

import dataclasses
import json
import subprocess
import sys

import numpy as np
import pytest

from pimate.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, main
from pimate.cli.config import ConfigError, ExperimentConfig, ExperimentKind, bank_names, load_config, parse_config
from pimate.cli.output import Plot, Series, Table, emit_csv, emit_plot, read_csv, render_svg
from pimate.cli.runner import NumericalFailure, run_experiment

FIGURES = [
    "fig2a", "fig2b", "fig3a", "fig3b", "fig3c", "fig3d", "fig4a", "fig4b",
    "fig5", "fig6a", "fig6b", "fig7a", "fig7b", "figS1a", "figS1b", "figS1c",
]  # fmt: skip


def small(kind: str, extra: str = "") -> ExperimentConfig:
    text = f"""
kind = "{kind}"
label = "t-{kind}"

[sweep]
kind = "coupling"
start = 0.05
stop = 0.5
points = 31

[ensemble]
sigmas = [0.0, 0.3]
realizations = 2
{extra}
"""
    return parse_config(text)


# --------------------------------------------------------------------------
# configuration


def test_defaults_reproduce_the_reference_spectrum():
    c = parse_config("")
    assert c.kind is ExperimentKind.SPECTRUM
    assert c.geometry.n_atoms == 8 and c.geometry.sigma == 0
    assert c.system.detuning == 0.2 and c.system.kappa == 0.2
    assert (c.sweep.kind, c.sweep.start, c.sweep.stop) == ("coupling", 0.0, 0.5)
    p = c.system_params()
    assert p.omega - p.omega0 == pytest.approx(0.2)


def test_bank_has_one_config_per_figure():
    names = bank_names()
    for fig in FIGURES:
        assert fig in names
    for name in names:
        config = load_config(name)
        assert config.label == name


def test_syntax_errors_report_position():
    with pytest.raises(ConfigError, match=r"line 2"):
        parse_config('kind = "spectrum"\nlabel = = 3\n', "bad.toml")


@pytest.mark.parametrize(
    "text,field",
    [
        ('kind = "nope"', "kind"),
        ("[system]\nkapa = 0.2", "kapa"),
        ("bogus = 1", "bogus"),
        ('[geometry]\nn_atoms = "eight"', "geometry.n_atoms"),
        ("[geometry]\nn_atoms = 2.5", "geometry.n_atoms"),
        ("[sweep]\npoints = 1", "sweep.points"),
        ("[sweep]\nstart = 1.0\nstop = 0.5", "sweep.stop"),
        ('[sweep]\nkind = "spacing"\nstart = 0.0', "sweep.start"),
        ("[dynamics]\nsite = 9", "dynamics.site"),
        ("[dynamics]\ntimes = [0.0, 5.0, 1.0]", "dynamics.times"),
        ('[system]\ndissipation = "local"', "system.dissipation"),
        ('[system]\norientation = "diagonal"', "system.orientation"),
        ("[system]\nkappa = [0.1, 0.2]", "system.kappa"),
        ('[geometry]\nnn_disorder = "both"', "geometry.nn_disorder"),
        ('[ensemble]\naggregation = "mean"', "ensemble.aggregation"),
        ("[ensemble]\nrealizations = 0", "ensemble.realizations"),
        ("[geometry]\nsigma = -0.1", "geometry"),
        ("seed = -1", "seed"),
        ('label = "a/b"', "label"),
    ],
)
def test_invalid_fields_are_named(text, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(text)


def test_config_digest_is_stable():
    a, b = parse_config('kind = "spectrum"'), parse_config("")
    assert a.digest() == b.digest()
    assert dataclasses.replace(a, seed=3).digest() != a.digest()
    json.dumps(a.to_dict())


# --------------------------------------------------------------------------
# output primitives


def test_one_row_csv_is_two_lines(tmp_path):
    path = emit_csv(Table(("x (1)", "y (gamma)"), [(0.1, 1 / 3)]), tmp_path / "one.csv")
    lines = path.read_text().splitlines()
    assert lines == ["x (1),y (gamma)", "0.10000000000000001,0.33333333333333331"]
    assert float(lines[1].split(",")[1]) == 1 / 3


def test_csv_comments_and_empty_guard(tmp_path):
    path = emit_csv(Table(("a (1)",), [(1,)]), tmp_path / "c.csv", ["digest: abc"])
    comments, header, rows = read_csv(path)
    assert comments == ["digest: abc"] and header == ["a (1)"] and rows == [["1"]]
    with pytest.raises(ValueError):
        emit_csv(Table(("a (1)",), []), tmp_path / "e.csv")
    emit_csv(Table(("a (1)",), []), tmp_path / "e.csv", allow_empty=True)
    with pytest.raises(ValueError):
        Table(("a", "b"), [(1,)])


def test_svg_has_one_polyline_per_curve(tmp_path):
    x = np.linspace(0, 1, 5)
    plot = Plot("t", "x", "y", [Series(x, x * k) for k in range(9)], markers=[(0.5, 0.5)])
    text = emit_plot(plot, tmp_path / "p.svg").read_text()
    assert text.count("<polyline") == 9
    assert text.count("<circle") == 1
    with pytest.raises(ValueError):
        render_svg(Plot("t", "x", "y", []))


# --------------------------------------------------------------------------
# experiments


def _rows(path):
    return read_csv(path)[2]


def test_spectrum_run(tmp_path):
    manifest = run_experiment(small("spectrum"), tmp_path / "out")
    out = tmp_path / "out"
    comments, header, rows = read_csv(out / "spectrum.csv")
    assert header[0] == "M (gamma)" and header[1:] == [f"eps_{k} (gamma)" for k in range(1, 10)]
    assert any(c.startswith("config-sha256: ") for c in comments)
    crossings = _rows(out / "crossings.csv")
    assert any(r[-1] == "crossing" for r in crossings)
    svg = (out / "spectrum.svg").read_text()
    assert svg.count("<polyline") == 9
    listed = {f.name for f in manifest.files}
    assert listed == {"spectrum.csv", "crossings.csv", "spectrum.svg"}
    data = json.loads((out / "manifest.json").read_text())
    assert data["config"]["kind"] == "spectrum" and data["version"]
    for f in data["files"]:
        from pimate.cli.output import sha256_file

        assert sha256_file(out / f["name"]) == f["sha256"]


def test_dissipative_spectrum_has_complex_columns(tmp_path):
    config = small("spectrum", '[system]\ndissipation = "collective"')
    config = dataclasses.replace(config, sweep=dataclasses.replace(config.sweep, kind="spacing", start=1.0, stop=3.0))
    run_experiment(config, tmp_path)
    header = read_csv(tmp_path / "spectrum.csv")[1]
    assert header[1:3] == ["re_eps_1 (gamma)", "im_eps_1 (gamma)"]


def test_trapping_normalization_only_touches_the_plot(tmp_path):
    raw = run_experiment(small("trapping_sweep"), tmp_path / "raw")
    norm = run_experiment(small("trapping_sweep"), tmp_path / "norm", normalize=True)
    assert raw.digest_of("trapping.csv") == norm.digest_of("trapping.csv")
    assert raw.digest_of("trapping.svg") != norm.digest_of("trapping.svg")
    rows = _rows(tmp_path / "raw" / "trapping.csv")
    p1 = np.array([float(r[1]) for r in rows])
    assert 0 < p1.max() < 1


def test_snapshots_run(tmp_path):
    run_experiment(small("snapshots"), tmp_path)
    rows = _rows(tmp_path / "snapshots.csv")
    assert {r[0] for r in rows} == {"resonant", "off_resonant"}
    assert len(rows) == 10
    first = rows[0]
    assert float(first[3]) == 1.0  # site 1 excited at t = 0
    for r in _rows(tmp_path / "dicke.csv"):
        assert float(r[-1]) == pytest.approx(1.0, abs=1e-10)
    assert "<rect" in (tmp_path / "snapshots.svg").read_text()


def test_fisher_run(tmp_path):
    run_experiment(small("fisher_sweep", "[geometry]\nsigma = 0.3"), tmp_path)
    rows = _rows(tmp_path / "fisher.csv")
    assert {r[0] for r in rows} == {"ordered", "disordered"}
    assert all(float(r[3]) >= 0 for r in rows)


def test_fisher_spacing_run_has_inverse_axis(tmp_path):
    config = small("fisher_sweep")
    config = dataclasses.replace(config, sweep=dataclasses.replace(config.sweep, kind="spacing", start=1.0, stop=3.0, points=21))
    run_experiment(config, tmp_path, plots=False)
    header = read_csv(tmp_path / "fisher.csv")[1]
    assert header[1:3] == ["k0R (1)", "inv_k0R (1)"]
    assert not list(tmp_path.glob("*.svg"))


def test_ensemble_run(tmp_path):
    manifest = run_experiment(small("disorder_ensemble"), tmp_path)
    assert len(_rows(tmp_path / "ensemble.csv")) == 4
    assert len(_rows(tmp_path / "ensemble_summary.csv")) == 2
    assert set(manifest.seeds["realizations"]) == {"0", "0.3"}


def test_two_atom_decoupled_table(tmp_path):
    config = small("two_atom_oracle", "[two_atom]\nw1 = 0.1\nw2 = 0.1\nw = 0.5\nkappa_a = 0.0\nkappa_b = 0.0")
    run_experiment(config, tmp_path)
    for r in _rows(tmp_path / "two_atom.csv"):
        m = float(r[0])
        np.testing.assert_allclose([float(v) for v in r[1:4]], sorted([0.5, 0.1 - m, 0.1 + m]), atol=1e-12)
        assert float(r[-1]) < 1e-12


def test_reruns_are_byte_identical(tmp_path):
    config = small("disorder_ensemble")
    a = run_experiment(config, tmp_path / "a", threads=1)
    b = run_experiment(config, tmp_path / "b", threads=3)
    for name in ("ensemble.csv", "ensemble_summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert a.digest_of(name) == b.digest_of(name)


def test_numerical_failure_leaves_no_output(tmp_path):
    config = parse_config("[geometry]\nn_atoms = 30\nsigma = 5.0\nmin_separation = 0.9\n[sweep]\npoints = 5")
    with pytest.raises(NumericalFailure, match="spectrum"):
        run_experiment(config, tmp_path / "never")
    assert not (tmp_path / "never").exists()


# --------------------------------------------------------------------------
# command line


def _write(tmp_path, text):
    path = tmp_path / "c.toml"
    path.write_text(text)
    return str(path)


def test_main_success_and_seed_override(tmp_path, capsys):
    cfg = _write(tmp_path, 'kind = "two_atom_oracle"\n[sweep]\npoints = 3')
    assert main([cfg, "--out", str(tmp_path / "o"), "--seed", "9", "--no-plots"]) == EXIT_OK
    data = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert data["seeds"]["base"] == 9 and data["config"]["seed"] == 9
    assert "two_atom.csv" in capsys.readouterr().out


def test_main_config_errors(tmp_path, capsys):
    assert main([str(tmp_path / "missing.toml"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main([_write(tmp_path, "[sweep]\npoints = 0"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main([_write(tmp_path, ""), "--threads", "0", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_main_numerical_error(tmp_path):
    cfg = _write(tmp_path, "[geometry]\nn_atoms = 30\nsigma = 5.0\nmin_separation = 0.9\n[sweep]\npoints = 5")
    assert main([cfg, "--out", str(tmp_path / "o")]) == EXIT_NUMERICAL
    assert not (tmp_path / "o").exists()


def test_main_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = _write(tmp_path, 'kind = "two_atom_oracle"\n[sweep]\npoints = 3')
    assert main([cfg, "--out", str(blocker / "sub")]) == EXIT_IO


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, 'kind = "two_atom_oracle"\n[sweep]\npoints = 3')
    proc = subprocess.run([sys.executable, "-m", "pimate", cfg, "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m" / "two_atom.csv").exists()
