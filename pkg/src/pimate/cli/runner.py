"""Run one configured experiment and write its data, plots and manifest."""

from __future__ import annotations

import json
import shutil
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .. import __version__
from ..dynamics import AmplitudeState, PropagationError, dicke_trajectory, evolve, time_averaged_populations
from ..estimation import Aggregation, PopulationModel, derive_seed, disorder_ensemble, fisher_sweep
from ..model import (
    ChainModel,
    ChainRealization,
    ChainSamplingError,
    KernelDomainError,
    NNDisorder,
    SweepKind,
    SystemParams,
    ordered_chain,
    sample_chain,
)
from ..spectral import (
    EigenSolverError,
    PairingError,
    ResidueConditioningError,
    SweepAxis,
    detect_crossings,
    eigen_sweep,
    two_atom_eigenvalues,
)
from .config import ExperimentConfig, ExperimentKind
from .output import Plot, Series, Table, emit_csv, emit_plot, render_heatmap, sha256_file

NUMERICAL_ERRORS = (
    EigenSolverError,
    PairingError,
    ResidueConditioningError,
    PropagationError,
    ChainSamplingError,
    KernelDomainError,
    FloatingPointError,
    np.linalg.LinAlgError,
)

# Counter reserved for the coupling-noise draw, away from ensemble counters.
_KAPPA_STREAM = 1_000_003


class NumericalFailure(RuntimeError):
    """A numerical error, annotated with the experiment that raised it."""


@dataclass(frozen=True)
class OutputFile:
    name: str
    sha256: str
    size: int


@dataclass(frozen=True)
class RunManifest:
    config: dict[str, Any]
    config_digest: str
    version: str
    seeds: dict[str, Any]
    started_at: str
    wall_clock_seconds: float
    out_dir: str
    files: tuple[OutputFile, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "config_sha256": self.config_digest,
            "version": self.version,
            "seeds": self.seeds,
            "started_at": self.started_at,
            "wall_clock_seconds": self.wall_clock_seconds,
            "out_dir": self.out_dir,
            "files": [{"name": f.name, "sha256": f.sha256, "bytes": f.size} for f in self.files],
        }

    def digest_of(self, name: str) -> str:
        for f in self.files:
            if f.name == name:
                return f.sha256
        raise KeyError(name)


# --------------------------------------------------------------------------
# shared helpers


@dataclass
class _Context:
    config: ExperimentConfig
    stage: Path
    plots: bool
    workers: int
    normalize: bool
    seeds: dict[str, Any]

    @property
    def comments(self) -> list[str]:
        c = self.config
        return [
            f"experiment: {c.kind.value}",
            f"label: {c.label}",
            f"config-sha256: {c.digest()}",
            f"seed: {c.seed}",
            "units: frequencies in gamma, lengths in 1/k0",
        ]

    def csv(self, name: str, table: Table, allow_empty: bool = False) -> None:
        emit_csv(table, self.stage / name, self.comments, allow_empty)

    def plot(self, name: str, plot: Plot) -> None:
        if self.plots:
            emit_plot(plot, self.stage / name)

    def heatmap(self, name: str, text: Callable[[], str]) -> None:
        if self.plots:
            (self.stage / name).write_text(text())

    def map(self, fn, items):
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]


def _axis(config: ExperimentConfig) -> SweepAxis:
    sw = config.sweep
    return SweepAxis.linspace(sw.kind, sw.start, sw.stop, sw.points)


def _axis_label(kind: SweepKind) -> str:
    return "M (gamma)" if kind is SweepKind.COUPLING else "k0R (1)"


def _params(ctx: _Context) -> SystemParams:
    c = ctx.config
    params = c.system_params()
    if c.system.kappa_sigma > 0:
        seed = derive_seed(c.seed, _KAPPA_STREAM)
        ctx.seeds["kappa_noise"] = seed
        params = params.with_coupling_noise(c.system.kappa_sigma, seed)
    return params


def _chain(ctx: _Context, sigma: float | None = None) -> ChainRealization:
    """Ordered chain for sigma = 0, otherwise one realization from the run seed."""
    c = ctx.config
    spec = c.geometry_spec(sigma)
    if spec.disorder_sigma == 0:
        return ordered_chain(spec.n_atoms, spec.nominal_spacing)
    seed = derive_seed(c.seed, 0, 0)
    ctx.seeds["chain"] = seed
    return sample_chain(spec, seed)


def _model(ctx: _Context, chain: ChainRealization, params: SystemParams) -> ChainModel:
    c = ctx.config
    return ChainModel(chain, params, SweepKind(c.sweep.kind), c.orientation(), NNDisorder(c.geometry.nn_disorder))


def _crossing_table(report) -> Table:
    rows = [
        (e.parameter, e.curves[0] + 1, e.curves[1] + 1, e.min_gap, e.kind.value)
        for e in report.events
    ]
    return Table(("parameter (axis units)", "curve_a (1)", "curve_b (1)", "min_gap (gamma)", "kind (1)"), rows)


def _normalized(values: np.ndarray) -> np.ndarray:
    top = float(np.max(values))
    return values / top if top > 0 else values


# --------------------------------------------------------------------------
# experiments


def _spectrum(ctx: _Context) -> None:
    axis = _axis(ctx.config)
    model = _model(ctx, _chain(ctx), _params(ctx))
    sweep = eigen_sweep(model, axis)
    report = detect_crossings(sweep)
    label = _axis_label(axis.kind)
    n = sweep.n_curves
    if sweep.hermitian:
        columns = (label, *[f"eps_{c + 1} (gamma)" for c in range(n)])
        rows = [(t, *np.real(v).tolist()) for t, v in zip(sweep.grid, sweep.eigenvalues)]
    else:
        columns = (label, *[f"{part}_eps_{c + 1} (gamma)" for c in range(n) for part in ("re", "im")])
        rows = [
            (t, *[x for z in v for x in (float(z.real), float(z.imag))])
            for t, v in zip(sweep.grid, sweep.eigenvalues)
        ]
    ctx.csv("spectrum.csv", Table(columns, rows))
    ctx.csv("crossings.csv", _crossing_table(report), allow_empty=True)

    curves = [np.real(sweep.curve(c)) for c in range(n)]
    markers = [(e.parameter, float(np.interp(e.parameter, sweep.grid, curves[e.curves[0]]))) for e in report.events]
    ctx.plot(
        "spectrum.svg",
        Plot(
            f"{ctx.config.label}: eigenvalues",
            label,
            "Re eps (gamma)",
            [Series(sweep.grid, y) for y in curves],
            markers,
        ),
    )


def _trapping(ctx: _Context) -> None:
    c = ctx.config
    axis = _axis(c)
    model = _model(ctx, _chain(ctx), _params(ctx))
    site = c.dynamics.site - 1
    initial = AmplitudeState.excited(model.n_atoms, site)

    def averages(theta):
        return time_averaged_populations(model.hamiltonian(float(theta)), initial, c.dynamics.horizon)

    results = ctx.map(averages, axis.grid)
    n = model.n_atoms
    columns = (_axis_label(axis.kind), *[f"pbar_{j + 1} (1)" for j in range(n)], "pbar_photon (1)")
    rows = [(float(t), *r.pbar.tolist(), r.photon) for t, r in zip(axis.grid, results)]
    ctx.csv("trapping.csv", Table(columns, rows))

    own = np.array([r.pbar[site] for r in results])
    shown = _normalized(own) if ctx.normalize else own
    ylabel = f"Pbar_{site + 1}" + (" (normalized)" if ctx.normalize else "")
    ctx.plot("trapping.svg", Plot(f"{c.label}: time-averaged population", _axis_label(axis.kind), ylabel, [Series(axis.grid, shown)]))


def _resonance(ctx: _Context, model: ChainModel) -> float:
    d = ctx.config.dynamics
    if d.resonance is not None:
        return d.resonance
    report = detect_crossings(eigen_sweep(model, _axis(ctx.config)))
    found = report.crossings or report.avoided
    if not found:
        raise NumericalFailure("snapshots: no crossing found on the sweep axis; set dynamics.resonance")
    return found[0].parameter


def _snapshots(ctx: _Context) -> None:
    c = ctx.config
    d = c.dynamics
    chain = _chain(ctx)
    model = _model(ctx, chain, _params(ctx))
    site = d.site - 1
    resonant = _resonance(ctx, model)
    off = d.off_resonance if d.off_resonance is not None else resonant + 0.05
    initial = AmplitudeState.excited(model.n_atoms, site)
    n = model.n_atoms

    pop_rows, dicke_rows, heat = [], [], []
    for name, theta in (("resonant", resonant), ("off_resonant", off)):
        traj = evolve(model.hamiltonian(theta), initial, d.times)
        at = chain.scaled(theta) if model.kind is SweepKind.SPACING else chain
        dicke = np.abs(dicke_trajectory(traj, at, d.k0_phase)) ** 2
        for k, t in enumerate(traj.times):
            pops = traj.site_populations[k]
            pop_rows.append((name, theta, float(t), *pops.tolist(), float(traj.photon_population[k])))
            dicke_rows.append((name, theta, float(t), *dicke[k].tolist(), float(dicke[k].sum())))
            heat.append(pops)

    columns = ("point (1)", _axis_label(model.kind), "t (1/gamma)", *[f"p_{j + 1} (1)" for j in range(n)], "p_photon (1)")
    ctx.csv("snapshots.csv", Table(columns, pop_rows))
    dicke_cols = (
        "point (1)",
        _axis_label(model.kind),
        "t (1/gamma)",
        "p_plus (1)",
        *[f"p_zeta_{j} (1)" for j in range(1, n)],
        "p_photon (1)",
        "p_total (1)",
    )
    ctx.csv("dicke.csv", Table(dicke_cols, dicke_rows))
    ctx.heatmap(
        "snapshots.svg",
        lambda: render_heatmap(
            f"{c.label}: site populations (top: resonant, bottom: off-resonant)",
            [str(j + 1) for j in range(n)],
            "time snapshot",
            np.array(heat),
        ),
    )


def _fisher(ctx: _Context) -> None:
    c = ctx.config
    axis = _axis(c)
    params = _params(ctx)
    site = c.dynamics.site - 1
    chains = [("ordered", ordered_chain(c.geometry.n_atoms, c.geometry.spacing))]
    if c.geometry.sigma > 0:
        chains.append(("disordered", _chain(ctx)))

    rows, series = [], []
    spacing = axis.kind is SweepKind.SPACING
    for name, chain in chains:
        pm = PopulationModel(_model(ctx, chain, params), site, c.dynamics.horizon)
        curve = fisher_sweep(pm, axis, workers=ctx.workers)
        for t, p, f, ok in zip(curve.grid, curve.pbar, curve.fi, curve.smooth):
            extra = (1.0 / t,) if spacing else ()
            rows.append((name, float(t), *extra, float(p), float(f), bool(ok)))
        x = curve.inverse_grid if spacing else curve.grid
        order = np.argsort(x)
        series.append(Series(x[order], curve.fi[order], name))

    columns = ["chain (1)", _axis_label(axis.kind)]
    if spacing:
        columns.append("inv_k0R (1)")
    columns += [f"pbar_{site + 1} (1)", "fisher (axis units^-2)", "smooth (1)"]
    ctx.csv("fisher.csv", Table(tuple(columns), rows))
    xlabel = "1/k0R (1)" if spacing else _axis_label(axis.kind)
    ctx.plot("fisher.svg", Plot(f"{c.label}: Fisher information", xlabel, "FI", series, logy=True))


def _ensemble(ctx: _Context) -> None:
    c = ctx.config
    axis = _axis(c)
    e = c.ensemble
    result = disorder_ensemble(
        c.geometry_spec(),
        e.sigmas,
        _params(ctx),
        axis,
        e.realizations,
        base_seed=c.seed,
        site=c.dynamics.site - 1,
        horizon=c.dynamics.horizon,
        orientation=c.orientation(),
        nn_disorder=NNDisorder(c.geometry.nn_disorder),
        aggregation=Aggregation(e.aggregation),
        workers=ctx.workers,
    )
    ctx.seeds["realizations"] = {f"{s.sigma:g}": list(s.seeds) for s in result.summaries}

    rows = []
    for s in result.summaries:
        for r, (fi, loc) in enumerate(zip(s.peak_fi, s.peak_parameter)):
            seed = s.seeds[r] if r < len(s.seeds) else ""
            rows.append((s.sigma, r, seed, float(loc), float(fi), float(np.log10(fi)) if fi > 0 else -np.inf))
    label = _axis_label(axis.kind)
    ctx.csv(
        "ensemble.csv",
        Table(("sigma (1)", "realization (1)", "seed (1)", f"peak_{label}", "peak_fisher (axis units^-2)", "log10_peak_fisher (1)"), rows),
    )
    summary = [
        (s.sigma, s.median_peak_fi, s.median_log10_peak_fi, s.iqr_peak_fi[0], s.iqr_peak_fi[1], s.peak_location_spread, s.rejections)
        for s in result.summaries
    ]
    ctx.csv(
        "ensemble_summary.csv",
        Table(
            (
                "sigma (1)",
                "median_peak_fisher (axis units^-2)",
                "log10_median_peak_fisher (1)",
                "q1_peak_fisher (axis units^-2)",
                "q3_peak_fisher (axis units^-2)",
                "peak_location_std (axis units)",
                "rejections (1)",
            ),
            summary,
        ),
    )
    ctx.plot(
        "ensemble.svg",
        Plot(
            f"{c.label}: peak Fisher information vs disorder",
            "sigma (1)",
            "median peak FI",
            [Series(result.sigma_grid, [s.median_peak_fi for s in result.summaries], e.aggregation)],
            logy=True,
        ),
    )


def _two_atom(ctx: _Context) -> None:
    c = ctx.config
    t = c.two_atom
    axis = _axis(c)
    rows = []
    for m in axis.grid:
        m = float(m)
        closed = two_atom_eigenvalues(t.w1, t.w2, t.w, m, t.kappa_a, t.kappa_b)
        mat = np.array([[t.w1, m, t.kappa_a], [m, t.w2, t.kappa_b], [t.kappa_a, t.kappa_b, t.w]])
        numeric = np.linalg.eigvalsh(mat)
        rows.append((m, *closed.tolist(), *numeric.tolist(), float(np.max(np.abs(closed - numeric)))))
    columns = (
        "M (gamma)",
        *[f"root_{k} (gamma)" for k in (1, 2, 3)],
        *[f"eig_{k} (gamma)" for k in (1, 2, 3)],
        "max_abs_diff (gamma)",
    )
    ctx.csv("two_atom.csv", Table(columns, rows))
    roots = np.array([r[1:4] for r in rows])
    ctx.plot(
        "two_atom.svg",
        Plot(f"{c.label}: two-atom roots", "M (gamma)", "lambda (gamma)", [Series(axis.grid, roots[:, k], f"root {k + 1}") for k in range(3)]),
    )


_RUNNERS: dict[ExperimentKind, Callable[[_Context], None]] = {
    ExperimentKind.SPECTRUM: _spectrum,
    ExperimentKind.TRAPPING_SWEEP: _trapping,
    ExperimentKind.SNAPSHOTS: _snapshots,
    ExperimentKind.FISHER_SWEEP: _fisher,
    ExperimentKind.DISORDER_ENSEMBLE: _ensemble,
    ExperimentKind.TWO_ATOM_ORACLE: _two_atom,
}


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | Path,
    plots: bool = True,
    threads: int = 1,
    normalize: bool | None = None,
) -> RunManifest:
    """Compute ``config`` and write its outputs into ``out_dir``.

    Everything is produced in a scratch directory first and moved into
    ``out_dir`` only once the whole experiment succeeded, so a failing run
    leaves no partial files behind.  Numerical failures are re-raised as
    :class:`NumericalFailure` naming the experiment.
    """
    if threads < 1:
        raise ValueError("threads must be at least 1")
    out_dir = Path(out_dir)
    normalize = config.normalize if normalize is None else normalize
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    clock = time.perf_counter()

    with tempfile.TemporaryDirectory(prefix="pimate-") as scratch:
        stage = Path(scratch)
        ctx = _Context(config, stage, plots, threads, normalize, {"base": config.seed})
        try:
            _RUNNERS[config.kind](ctx)
        except NUMERICAL_ERRORS as exc:
            raise NumericalFailure(f"{config.kind.value} ({config.label}): {type(exc).__name__}: {exc}") from exc

        names = sorted(p.name for p in stage.iterdir())
        files = tuple(OutputFile(n, sha256_file(stage / n), (stage / n).stat().st_size) for n in names)
        manifest = RunManifest(
            config=config.to_dict(),
            config_digest=config.digest(),
            version=__version__,
            seeds=ctx.seeds,
            started_at=started,
            wall_clock_seconds=round(time.perf_counter() - clock, 3),
            out_dir=str(out_dir),
            files=files,
        )
        (stage / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")

        out_dir.mkdir(parents=True, exist_ok=True)
        for name in [*names, "manifest.json"]:
            shutil.move(str(stage / name), str(out_dir / name))
    return manifest
