"""Run orchestration behind the command-line subcommands.

Each ``run_*`` computes its result, then (when an output directory is given)
writes the tables through :func:`output.write_table` in a fixed order.
"""

from __future__ import annotations

import contextlib
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import find_peaks

from . import fields, gpe, piecewise, tracker
from .config import ConfigError, RunConfig
from .floquet import FloquetProblem, converge_orders, eigh_batch, mode_frequencies
from .output import dump_json, write_table

log = logging.getLogger(__name__)


@dataclass
class Table:
    name: str
    columns: list
    data: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass
class Report:
    """Tables produced by a run plus a run-level summary."""

    kind: str
    tables: list
    summary: dict
    files: list = field(default_factory=list)

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def column(self, table: str, col: str) -> np.ndarray:
        t = self.table(table)
        return t.data[:, t.columns.index(col)]


@contextlib.contextmanager
def worker_pool(threads: int):
    if threads is None or threads <= 1:
        yield None
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            yield ex


def _finish(report: Report, cfg: RunConfig, out) -> Report:
    if out is None:
        return report
    out = Path(out)
    for t in report.tables:
        diag = dict(report.summary)
        diag.update(t.diagnostics)
        report.files += write_table(out, t.name, t.columns, t.data, cfg.output_format,
                                    cfg.resolved, diag)
    summary = out / f"{report.kind}_summary.json"
    dump_json({"resolved_config": cfg.resolved, "diagnostics": report.summary}, summary)
    report.files.append(summary)
    return report


# ---------------------------------------------------------------------------
# shared setup


def build_problem(cfg: RunConfig, drive=None) -> FloquetProblem:
    return FloquetProblem(drive or cfg.drive, cfg.static_field, cfg.truncation.orders,
                          cfg.constants, cfg.spin)


def build_piecewise(cfg: RunConfig) -> piecewise.PiecewiseConfig:
    return piecewise.PiecewiseConfig(cfg.drive, cfg.static_field, spin=cfg.spin,
                                     consts=cfg.constants)


def _line_y(cfg: RunConfig, x):
    return np.zeros_like(x) if isinstance(cfg.static_field, fields.IoffePritchard) else None


def convergence_probes(cfg: RunConfig, x, y=None) -> list:
    """Probe points for the ladder check: five spread along the slice plus resonances."""
    x = np.asarray(x, float)
    pts = list(np.linspace(x.min(), x.max(), 5))
    pw = build_piecewise(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = piecewise.resonance_positions(pw, max(abs(x.min()), abs(x.max())))
    pts += [r for r in res if np.isfinite(r) and x.min() <= r <= x.max()]
    yv = None if y is None else 0.0
    return [(float(p),) if yv is None else (float(p), yv) for p in sorted(set(pts))]


def commensurate(omegas, max_order: int = 20, tol: float = 1e-9) -> bool:
    """True when a omega_1 = b omega_2 for integers with a + b <= ``max_order``.

    Such resonances make distinct ladder copies degenerate within a
    truncation of order ~max_order / 2.
    """
    if len(omegas) < 2:
        return False
    ratio = omegas[1] / omegas[0]
    frac = Fraction(ratio).limit_denominator(max_order)
    if frac.numerator + frac.denominator > max_order:
        return False
    return abs(float(frac) - ratio) <= tol * ratio


def converged_problem(cfg: RunConfig, x, y=None, drive=None) -> tuple:
    problem = build_problem(cfg, drive)
    t = cfg.truncation
    if not t.auto_raise:
        return problem, {"auto_raise": False, "p1": problem.orders.p1,
                         "p2": problem.orders.p2}
    if commensurate(problem.omegas, 2 * t.p_max):
        # ladder copies of commensurate tones are degenerate, the check cannot match them
        log.warning("commensurate tones: truncation kept at p1=%d, p2=%d", problem.orders.p1,
                    problem.orders.p2)
        return problem, {"auto_raise": False, "p1": problem.orders.p1, "p2": problem.orders.p2,
                         "reason": "commensurate tone frequencies"}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fields.ParallelComponentWarning)
        problem, rep = converge_orders(problem, convergence_probes(cfg, x, y), t.p_max,
                                       t.rel_tol)
    rep.update({"auto_raise": True, "p1": problem.orders.p1, "p2": problem.orders.p2})
    if not rep["converged"]:
        log.warning("truncation not converged at p_max=%d (mismatch %.3g rad/s)", t.p_max,
                    rep["orders"][-1]["mismatch_rad_s"])
    return problem, rep


def _clean(diag: dict) -> dict:
    skip = {"seed_vector"}
    return {k: v for k, v in diag.items() if k not in skip}


def _curve_columns(prefix, x, values) -> tuple:
    return ([f"{prefix}x_m", "potential_rad_s", "potential_Hz"],
            np.column_stack([x, values, values / (2 * math.pi)]))


def track_1d(cfg: RunConfig, problem: FloquetProblem, x, executor=None,
             keep_spectra=False) -> tracker.AdiabaticSurface:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fields.ParallelComponentWarning)
        return tracker.track_line(problem, x, _line_y(cfg, x), floor=cfg.tracking.overlap_floor,
                                  keep_spectra=keep_spectra, executor=executor)


# ---------------------------------------------------------------------------
# potential


def run_potential(cfg: RunConfig, out=None, threads: int = 1) -> Report:
    """Adiabatic potential on the configured 1D slice or 2D sheet."""
    x = cfg.x.values()
    tables = []
    summary = {}
    if cfg.is_2d:
        ys = cfg.y.values()
        problem, conv = converged_problem(cfg, x, ys)
        with worker_pool(threads) as ex, warnings.catch_warnings():
            warnings.simplefilter("ignore", fields.ParallelComponentWarning)
            sheet = tracker.stitch_2d(problem, x, ys, floor=cfg.tracking.overlap_floor,
                                      executor=ex)
        # rows lexicographic in (ix, iy)
        X, Y = np.meshgrid(x, ys, indexing="ij")
        V = sheet.values.T
        data = np.column_stack([X.ravel(), Y.ravel(), V.ravel(), V.ravel() / (2 * math.pi)])
        tables.append(Table("potential", ["x_m", "y_m", "potential_rad_s", "potential_Hz"], data,
                            {"tracking": _clean(sheet.diagnostics)}))
        summary["convergence"] = conv
        summary["parallel_ratio_max"] = problem.parallel_ratio
        return _finish(Report("potential", tables, summary), cfg, out)

    if cfg.model in ("floquet", "both"):
        problem, conv = converged_problem(cfg, x)
        with worker_pool(threads) as ex:
            surf = track_1d(cfg, problem, x, ex)
        cols, data = _curve_columns("", x, surf.values)
        name = "potential" if cfg.model == "floquet" else "potential_floquet"
        tables.append(Table(name, cols, data, {"tracking": _clean(surf.diagnostics)}))
        summary["convergence"] = conv
        summary["parallel_ratio_max"] = problem.parallel_ratio
    if cfg.model in ("piecewise", "both"):
        curve = piecewise.adiabatic_potential(x, cfg.tracking.branch, build_piecewise(cfg))
        cols, data = _curve_columns("", x, curve.values)
        name = "potential" if cfg.model == "piecewise" else "potential_piecewise"
        tables.append(Table(name, cols, data, {"piecewise": curve.diagnostics}))
    return _finish(Report("potential", tables, summary), cfg, out)


# ---------------------------------------------------------------------------
# comparison


def _crossing_list(crossings) -> list:
    return [{"position_m": c.position, "gap_rad_s": c.gap, "followed": c.followed}
            for c in crossings]


def resonance_mask(cfg: RunConfig, x, linewidths: float = 3.0) -> np.ndarray:
    """True within ``linewidths`` Rabi frequencies of any tone's resonance."""
    pw = build_piecewise(cfg)
    return np.any(np.abs(pw.detunings(x)) < linewidths * pw.rabi_at(x), axis=1)


def run_compare(cfg: RunConfig, out=None, threads: int = 1) -> Report:
    """Piecewise and Floquet curves on one 1D grid, with their diagnostics."""
    if cfg.is_2d:
        raise ConfigError("comparison needs a 1D grid", key="grid.y")
    x = cfg.x.values()
    problem, conv = converged_problem(cfg, x)
    with worker_pool(threads) as ex:
        surf = track_1d(cfg, problem, x, ex, keep_spectra=True)
    fl = surf.values
    gaps = tracker.gap_profile(surf.spectra, surf)
    signed = tracker.gap_profile(surf.spectra, surf, signed=True)
    prom = cfg.tracking.gap_prominence
    fl_min = tracker.avoided_crossings(gaps, x, rel_prominence=prom, signed=signed)

    pw = build_piecewise(cfg)
    curve = piecewise.adiabatic_potential(x, cfg.tracking.branch, pw)
    pw_gap = piecewise.gap_profile(x, pw)
    pw_min = tracker.avoided_crossings(np.where(curve.masked, np.nan, pw_gap), x,
                                       rel_prominence=prom)
    diff = curve.values - fl
    away = ~resonance_mask(cfg, x) & ~curve.masked
    rng = float(np.ptp(fl))
    inc_fl = np.abs(np.diff(fl))
    med_pw = piecewise.median_increment(curve.values)
    jump = curve.diagnostics["segment_jump_rad_s"]
    summary = {
        "convergence": conv,
        "tracking": _clean(surf.diagnostics),
        "floquet_range_rad_s": rng,
        "max_abs_difference_away_from_resonance_rad_s":
            float(np.max(np.abs(diff[away]))) if away.any() else None,
        "max_abs_difference_away_relative": float(np.max(np.abs(diff[away]))) / rng
            if away.any() and rng > 0 else None,
        "piecewise_segment_jump_rad_s": jump,
        "piecewise_segment_jump_position_m": curve.diagnostics["segment_jump_position_m"],
        "piecewise_median_increment_rad_s": med_pw,
        "piecewise_jump_to_median": jump / med_pw if med_pw > 0 else None,
        "floquet_max_increment_rad_s": float(inc_fl.max()),
        "floquet_median_increment_rad_s": float(np.median(inc_fl)),
        "floquet_max_to_median": float(inc_fl.max() / np.median(inc_fl)),
        "floquet_gap_minima": _crossing_list(fl_min),
        "floquet_gap_minima_count": len(fl_min),
        "piecewise_gap_minima": _crossing_list(pw_min),
        "piecewise_gap_minima_count": len(pw_min),
        "masked_points": int(curve.masked.sum()),
        "masked_positions_m": x[curve.masked].tolist(),
    }
    cols = ["x_m", "floquet_rad_s", "piecewise_rad_s", "difference_rad_s", "floquet_gap_rad_s",
            "piecewise_gap_rad_s", "piecewise_segment_index", "piecewise_masked_flag"]
    data = np.column_stack([x, fl, curve.values, diff, gaps, pw_gap,
                            curve.segment.astype(float), curve.masked.astype(float)])
    return _finish(Report("compare", [Table("compare", cols, data)], summary), cfg, out)


# ---------------------------------------------------------------------------
# spectrum


def run_spectrum(cfg: RunConfig, out=None, threads: int = 1, chunk: int = 32) -> Report:
    """Every quasi-energy (both parity sectors) at each point of the 1D grid."""
    if cfg.is_2d:
        raise ConfigError("spectrum dumps need a 1D grid", key="grid.y")
    x = cfg.x.values()
    y = _line_y(cfg, x)
    problem = build_problem(cfg)
    starts = range(0, x.size, chunk)

    def job(s):
        sl = slice(s, min(s + chunk, x.size))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", fields.ParallelComponentWarning)
            H, _ = problem.matrices(x[sl], None if y is None else y[sl])
        try:
            return np.linalg.eigvalsh(H)
        except np.linalg.LinAlgError:
            eigh_batch(H, points=np.arange(sl.start, sl.stop))
            raise

    with worker_pool(threads) as ex:
        parts = list(ex.map(job, starts) if ex is not None else map(job, starts))
    w = np.concatenate(parts, axis=0)
    d = w.shape[1]
    cols = ["x_m"] + [f"e{k:04d}_rad_s" for k in range(d)]
    summary = {"dimension": d, "p1": problem.orders.p1, "p2": problem.orders.p2,
               "mode_frequencies_rad_s": list(mode_frequencies(problem.omegas))}
    return _finish(Report("spectrum", [Table("spectrum", cols, np.column_stack([x, w]))], summary),
                   cfg, out)


# ---------------------------------------------------------------------------
# GPE


def _symmetric(drive) -> bool:
    return all(isinstance(t, fields.RabiTone) or t.alpha == 0.0 for t in drive)


def gpe_potential(cfg: RunConfig, drive, grid: gpe.Grid2D, executor=None) -> tuple:
    """Potential sheet (rad/s, zero at the trap centre) on the GPE grid.

    Rotationally symmetric drives are tracked along a radius at the grid
    spacing and rotated onto the grid. The spacing matters: crossings much
    narrower than a grid step are passed diabatically, as the condensate does.
    Returns (sheet, (r, v) or None).
    """
    problem = build_problem(cfg, drive)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fields.ParallelComponentWarning)
        if _symmetric(drive):
            r = np.arange(0.0, grid.half_width * math.sqrt(2.0) + 2 * grid.dx, grid.dx)
            surf = tracker.track_line(problem, r, np.zeros_like(r), centre=0,
                                      floor=cfg.tracking.overlap_floor, executor=executor)
            v = surf.values - surf.values[0]
            return gpe.sheet_from_radial(r, v, grid), (r, v)
        x = grid.x
        sheet = tracker.stitch_2d(problem, x, x, floor=cfg.tracking.overlap_floor,
                                  executor=executor)
    V = sheet.values
    return V - V[grid.n // 2, grid.n // 2], None


def _barrier_radius(radial, sheet, grid) -> float:
    """Radius of the barrier separating the central well from the outer ring."""
    if radial is None:
        prof = gpe.radial_profile_of(sheet, grid)
        r, v = prof.r, prof.density
    else:
        r, v = radial
    mins = gpe.radial_minima(r, v)
    tops, _ = find_peaks(np.asarray(v, float))
    if mins.size == 0 or not np.any(tops < mins[-1]):
        return float("nan")
    return float(r[tops[tops < mins[-1]].max()])


def _ring_radius(radial, sheet, grid) -> float:
    if radial is None:
        prof = gpe.radial_profile_of(sheet, grid)
        r, v = prof.r, prof.density
    else:
        r, v = radial
    mins = gpe.radial_minima(r, v)
    return float(r[mins[-1]]) if mins.size else float("nan")


def analyse_state(psi: gpe.Wavefunction2D, barrier: float, radii=()) -> dict:
    """Norm, transferred fraction, central radial maxima and their windings."""
    prof = gpe.radial_density_profile(psi)
    out = {"norm": psi.norm}
    if math.isfinite(barrier):
        inside = prof.r < barrier
        out["inner_fraction"] = float(np.nansum((prof.density * prof.area)[inside]))
        mx = prof.maxima(r_max=0.95 * barrier)
        mx = mx[mx < 0.95 * barrier]
        out["central_maxima_m"] = mx.tolist()
        out["central_maxima_count"] = int(mx.size)
        out["winding_at_maxima"] = [gpe.winding_number(psi, float(r)) for r in mx]
    else:
        out["inner_fraction"] = None
    out["winding"] = {f"{r:.6g}": gpe.winding_number(psi, float(r)) for r in radii}
    edge = np.concatenate([psi.density[0], psi.density[-1], psi.density[:, 0],
                           psi.density[:, -1]])
    out["edge_density_ratio"] = float(edge.max() / psi.density.max())
    return out


def prepare_gpe(cfg: RunConfig, executor=None) -> dict:
    """Grid, keyframe sheets, parameters and relaxed initial state of a GPE scenario."""
    spec = cfg.gpe
    if spec is None:
        raise ConfigError("the gpe subcommand needs a 'gpe' block", key="gpe")
    grid = gpe.Grid2D(spec.points, spec.half_width)
    first = spec.initial_drive or cfg.drive
    s0, rad0 = gpe_potential(cfg, first, grid, executor)
    if spec.initial_drive is not None:
        s1, rad1 = gpe_potential(cfg, cfg.drive, grid, executor)
    else:
        s1, rad1 = s0, rad0
    ring = _ring_radius(rad0, s0, grid)
    if not math.isfinite(ring):
        raise ConfigError("initial potential has no annular minimum", key="gpe")
    rings = [ring, _ring_radius(rad1, s1, grid)]
    outer = max(r for r in rings if math.isfinite(r))
    if 2 * spec.half_width < 3 * outer:
        raise ConfigError(f"grid extent {2 * spec.half_width:.3g} m is below 3x the outer ring "
                          f"radius {outer:.3g} m", key="gpe.half_width")

    def params(g2d):
        return gpe.GPEParams(grid, dt=spec.dt, duration=spec.duration, mass=spec.mass, g2d=g2d)

    def initial(p):
        try:
            return gpe.init_ring_state(s0, grid, spec.winding, p, radial=rad0,
                                       relax_steps=spec.relax_steps, relax_dt=spec.relax_dt)
        except ValueError as e:
            raise ConfigError(str(e), key="gpe") from e

    if spec.g2d is not None:
        g2d = spec.g2d
    elif spec.beta is not None:
        g2d = gpe.GPEParams.dimensionless_to_g2d(spec.beta, spec.mass)
    else:
        # size the nonlinearity so the healing length spans the requested points
        n_peak = float(initial(params(0.0)).density.max())
        beta = 1.0 / (2.0 * n_peak * (spec.healing_points * grid.dx) ** 2)
        g2d = gpe.GPEParams.dimensionless_to_g2d(beta, spec.mass)
    p = params(g2d)
    psi0 = initial(p)
    pts = p.points_per_healing_length(psi0)
    if pts < 8.0:
        raise ConfigError(f"healing length resolved by only {pts:.2f} grid points (need >= 8)",
                          key="gpe")
    barrier = _barrier_radius(rad1, s1, grid)
    return {"grid": grid, "params": p, "psi0": psi0, "sheets": (s0, s1), "radial": (rad0, rad1),
            "ring_radius_m": ring, "barrier_radius_m": barrier, "points_per_healing": pts}


def run_gpe(cfg: RunConfig, out=None, threads: int = 1) -> Report:
    """Evolve the ring state through the keyframed potential and summarise it."""
    spec = cfg.gpe
    with worker_pool(threads) as ex:
        setup = prepare_gpe(cfg, ex)
    grid, p = setup["grid"], setup["params"]
    s0, s1 = setup["sheets"]
    if spec.initial_drive is not None and spec.ramp > 0:
        pot = gpe.KeyframePotential([0.0, spec.ramp], [s0, s1])
    else:
        pot = s1
    snaps = gpe.split_step_evolve(setup["psi0"], pot, p, snapshot_times=spec.snapshots)
    barrier = setup["barrier_radius_m"]
    radii = spec.winding_radii
    tables = []
    X, Y = grid.mesh()
    for k, s in enumerate(snaps):
        a = s.psi.amplitudes
        data = np.column_stack([X.ravel(), Y.ravel(), a.real.ravel(), a.imag.ravel(),
                                s.psi.density.ravel()])
        meta = {"time_s": s.time, "step": s.step, "norm": s.norm,
                "grid": {"points": grid.n, "half_width_m": grid.half_width, "dx_m": grid.dx},
                "winding": {f"{r:.6g}": gpe.winding_number(s.psi, float(r)) for r in radii}}
        tables.append(Table(f"snapshot_{k:04d}",
                            ["x_m", "y_m", "psi_re_per_m", "psi_im_per_m", "density_per_m2"],
                            data, {"snapshot": meta}))
    rad0, rad1 = setup["radial"]
    if rad0 is not None:
        r = rad0[0]
        tables.append(Table("gpe_potential", ["r_m", "initial_rad_s", "final_rad_s"],
                            np.column_stack([r, rad0[1], rad1[1]])))
    final = snaps[-1].psi
    summary = {
        "beta": p.beta, "g2d_J_m2": p.g2d, "points_per_healing_length": setup["points_per_healing"],
        "steps": p.steps, "ring_radius_m": setup["ring_radius_m"], "barrier_radius_m": barrier,
        "initial": analyse_state(setup["psi0"], barrier, radii),
        "final": analyse_state(final, barrier, radii),
        "norm_drift": abs(final.norm - 1.0),
    }
    return _finish(Report("gpe", tables, summary), cfg, out)


RUNNERS = {"potential": run_potential, "compare": run_compare, "spectrum": run_spectrum,
           "gpe": run_gpe}
