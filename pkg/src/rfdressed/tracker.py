"""Adiabatic surfaces from Floquet spectra by eigenvector-overlap continuation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.signal import find_peaks

from .floquet import EigenDecomposition, FloquetProblem, mode_frequencies

log = logging.getLogger(__name__)

OVERLAP_FLOOR = 0.5
_TIE = 1e-12


@dataclass
class AdiabaticSurface:
    """Tracked quasi-energy (rad/s) on a 1D or 2D grid.

    ``overlaps[i]`` is |<v_prev|v_i>| of the step that reached point i (1 for
    seeds); ``flagged`` marks steps that fell below the overlap floor.
    """

    grid: tuple
    values: np.ndarray
    overlaps: np.ndarray
    indices: np.ndarray
    floor: float = OVERLAP_FLOOR
    spectra: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def flagged(self) -> np.ndarray:
        return self.overlaps < self.floor

    def folded(self, omega: float) -> np.ndarray:
        """Values reduced into [-omega/2, omega/2)."""
        return (self.values + omega / 2) % omega - omega / 2


def _as_pair(d):
    if isinstance(d, EigenDecomposition):
        return d.values, d.vectors
    return d[0], d[1]


def select_initial(decomp, bare_energy: float) -> int:
    """Index of the eigenvalue closest to the bare trap energy.

    Exact ties go to the smaller eigenvalue.
    """
    values, _ = _as_pair(decomp)
    dist = np.abs(np.asarray(values) - bare_energy)
    best = np.flatnonzero(dist == dist.min())
    return int(best[np.argmin(np.asarray(values)[best])])


def best_overlap(prev_vec: np.ndarray, prev_val: float, values, vectors) -> tuple:
    """(index, overlap) of the eigenvector closest to ``prev_vec``.

    Overlap ties are resolved toward the eigenvalue nearest ``prev_val``.
    """
    ov = np.abs(prev_vec.conj() @ vectors)
    top = ov.max()
    cands = np.flatnonzero(ov >= top - _TIE)
    if cands.size > 1:
        cands = cands[np.argsort(np.abs(values[cands] - prev_val), kind="stable")]
    k = int(cands[0])
    return k, float(ov[k])


def follow_1d(decomps: Iterable, start: int, floor: float = OVERLAP_FLOOR,
              grid=None, keep_spectra: bool = False) -> AdiabaticSurface:
    """Follow one eigenpair through an ordered sequence of decompositions."""
    vals_out, ov_out, idx_out, spectra = [], [], [], []
    prev_vec = prev_val = None
    for i, d in enumerate(decomps):
        values, vectors = _as_pair(d)
        if i == 0:
            k, ov = start, 1.0
        else:
            k, ov = best_overlap(prev_vec, prev_val, values, vectors)
            if ov < floor:
                log.warning("overlap %.3f below floor at step %d", ov, i)
        prev_vec, prev_val = vectors[:, k], float(values[k])
        vals_out.append(prev_val)
        ov_out.append(ov)
        idx_out.append(k)
        if keep_spectra:
            spectra.append(np.array(values))
    return AdiabaticSurface(
        grid=(np.arange(len(vals_out)) if grid is None else np.asarray(grid),),
        values=np.array(vals_out), overlaps=np.array(ov_out),
        indices=np.array(idx_out), floor=floor,
        spectra=np.array(spectra) if keep_spectra else None)


# ---------------------------------------------------------------------------
# streaming over a FloquetProblem


class _Path:
    """Result of tracking along an ordered list of points."""

    def __init__(self, n):
        self.values = np.empty(n)
        self.overlaps = np.empty(n)
        self.indices = np.empty(n, dtype=int)
        self.spectra = None
        self.first_vector = None
        self.first_value = None


def follow_path(problem: FloquetProblem, x, y, seed_vector, seed_value: float,
                sector: Optional[int], floor: float = OVERLAP_FLOOR,
                chunk: int = 64, keep_spectra: bool = False, executor=None) -> _Path:
    """Track along points given in traversal order.

    At the first point the eigenpair best overlapping ``seed_vector`` is taken;
    afterwards each point continues from the previous one.
    """
    x = np.asarray(x, float)
    y = None if y is None else np.broadcast_to(np.asarray(y, float), x.shape)
    n = x.size
    out = _Path(n)
    prev_vec, prev_val = seed_vector, seed_value
    starts = range(0, n, chunk)

    def job(s):
        sl = slice(s, min(s + chunk, n))
        return problem.decompose(x[sl], None if y is None else y[sl], sector=sector)

    batches = executor.map(job, starts) if executor is not None else map(job, starts)
    for s, (w, v, _) in zip(starts, batches):
        if keep_spectra and out.spectra is None:
            out.spectra = np.empty((n, w.shape[-1]))
        for j in range(w.shape[0]):
            i = s + j
            k, ov = best_overlap(prev_vec, prev_val, w[j], v[j])
            if i == 0:
                out.first_vector = v[j][:, k].copy()
                out.first_value = float(w[j][k])
            prev_vec, prev_val = v[j][:, k], float(w[j][k])
            out.values[i] = prev_val
            out.overlaps[i] = ov
            out.indices[i] = k
            if keep_spectra:
                out.spectra[i] = w[j]
    return out


def _seed_at_centre(problem, x0, y0, sector):
    w, v, _ = problem.decompose([x0], None if y0 is None else [y0], sector=sector)
    k = select_initial((w[0], v[0]), problem.bare_energy(x0, 0.0 if y0 is None else y0))
    return v[0][:, k].copy(), float(w[0][k])


def track_line(problem: FloquetProblem, x, y=None, centre: Optional[int] = None,
               sector="auto", floor: float = OVERLAP_FLOOR, keep_spectra: bool = False,
               chunk: int = 64, executor=None, seed=None) -> AdiabaticSurface:
    """Adiabatic curve along an ordered 1D slice, tracked outward from ``centre``.

    The centre defaults to the grid point of weakest static field. ``seed``
    may supply an (eigenvector, eigenvalue) pair instead of the bare-energy
    selection.
    """
    x = np.asarray(x, float)
    yy = None if y is None else np.broadcast_to(np.asarray(y, float), x.shape)
    if sector == "auto":
        sector = problem.tracked_sector
    if centre is None:
        centre = int(np.argmin(np.abs(problem.larmor(x, yy))))
    if seed is None:
        seed = _seed_at_centre(problem, x[centre], None if yy is None else yy[centre], sector)
    sub = (lambda a, s: None if a is None else a[s])
    right = follow_path(problem, x[centre:], sub(yy, slice(centre, None)), seed[0], seed[1],
                        sector, floor, chunk, keep_spectra, executor)
    n = x.size
    values = np.empty(n)
    overlaps = np.empty(n)
    indices = np.empty(n, dtype=int)
    spectra = None
    values[centre:], overlaps[centre:], indices[centre:] = right.values, right.overlaps, right.indices
    if keep_spectra:
        spectra = np.empty((n, right.spectra.shape[1]))
        spectra[centre:] = right.spectra
    if centre > 0:
        rev = slice(centre - 1, None, -1)
        left = follow_path(problem, x[rev], sub(yy, rev), right.first_vector, right.first_value,
                           sector, floor, chunk, keep_spectra, executor)
        values[:centre] = left.values[::-1]
        overlaps[:centre] = left.overlaps[::-1]
        indices[:centre] = left.indices[::-1]
        if keep_spectra:
            spectra[:centre] = left.spectra[::-1]
    surf = AdiabaticSurface(grid=(x,) if y is None else (x, yy), values=values,
                            overlaps=overlaps, indices=indices, floor=floor, spectra=spectra)
    surf.diagnostics = _diagnostics(surf, problem, sector)
    surf.diagnostics["centre_index"] = centre
    surf.diagnostics["seed_vector"] = right.first_vector
    return surf


def _diagnostics(surf, problem, sector):
    low = np.flatnonzero(surf.overlaps < surf.floor)
    if low.size:
        log.warning("%d tracking steps fell below overlap floor %.2f", low.size, surf.floor)
    return {
        "sector": sector,
        "p1": problem.orders.p1,
        "p2": problem.orders.p2,
        "min_overlap": float(np.min(surf.overlaps)),
        "low_overlap_steps": low.tolist(),
        "mode_frequencies": mode_frequencies(problem.drive.omegas),
        "ladder_reach": 2 * max(problem.orders.p1, problem.orders.p2),
    }


def stitch_2d(problem: FloquetProblem, xs, ys, sector="auto", floor: float = OVERLAP_FLOOR,
              chunk: int = 64, executor=None) -> AdiabaticSurface:
    """Adiabatic sheet on the grid ``xs`` x ``ys`` from stitched x-slices.

    The slice through the trap centre is tracked first from the centre point;
    every later slice (outward in y, both directions) is seeded by overlap with
    the already tracked point adjacent to it in the previous slice.
    """
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    if sector == "auto":
        sector = problem.tracked_sector
    cx = int(np.argmin(np.abs(xs)))
    cy = int(np.argmin(np.abs(ys)))
    ny, nx = ys.size, xs.size
    values = np.empty((ny, nx))
    overlaps = np.empty((ny, nx))
    indices = np.empty((ny, nx), dtype=int)
    seed_overlaps = np.ones(ny)
    seeds = {}

    def run(j, seed):
        surf = track_line(problem, xs, np.full(nx, ys[j]), centre=cx, sector=sector,
                          floor=floor, chunk=chunk, executor=executor, seed=seed)
        values[j], overlaps[j], indices[j] = surf.values, surf.overlaps, surf.indices
        return surf

    first = run(cy, None)
    seeds[cy] = (first.diagnostics["seed_vector"], first.values[cx])
    for step in (1, -1):
        j = cy + step
        while 0 <= j < ny:
            prev_vec, prev_val = seeds[j - step]
            surf = run(j, (prev_vec, prev_val))
            seed_overlaps[j] = surf.overlaps[cx]
            overlaps[j, cx] = surf.overlaps[cx]
            seeds[j] = (surf.diagnostics["seed_vector"], surf.values[cx])
            if seed_overlaps[j] < floor:
                log.warning("slice %d seeded with overlap %.3f below floor", j, seed_overlaps[j])
            j += step
    X, Y = np.meshgrid(xs, ys)
    sheet = AdiabaticSurface(grid=(X, Y), values=values, overlaps=overlaps,
                             indices=indices, floor=floor)
    low = np.argwhere(overlaps < floor)
    sheet.diagnostics = {
        "sector": sector, "p1": problem.orders.p1, "p2": problem.orders.p2,
        "min_overlap": float(overlaps.min()),
        "low_overlap_points": low.tolist(),
        "seed_overlaps": seed_overlaps.tolist(),
        "centre_index": [cy, cx],
    }
    return sheet


# ---------------------------------------------------------------------------
# avoided crossings


@dataclass(frozen=True)
class AvoidedCrossing:
    index: int
    position: float
    gap: float  # rad/s
    # True when the tracked surface stays on its side of the partner level
    # (adiabatic passage), False when it hops across; None if unknown
    followed: Optional[bool] = None


def ladder_offsets(modes, reach) -> np.ndarray:
    """Nonzero photon-shift energies sum_k a_k*modes[k] with |a_k| <= reach."""
    modes = np.atleast_1d(np.asarray(modes, float))
    a = np.arange(-reach, reach + 1)
    grids = np.meshgrid(*([a] * modes.size), indexing="ij")
    off = sum(g.ravel() * m for g, m in zip(grids, modes))
    off = np.unique(off)
    return off[off != 0.0]


def gap_profile(spectra: np.ndarray, surface, modes=None, reach: Optional[int] = None,
                copy_tol: float = 1e-6, signed: bool = False) -> np.ndarray:
    """Distance from the tracked value to the nearest other eigenvalue, per point.

    With ``modes`` given (or recorded on the surface), eigenvalues sitting at a
    photon-shift offset from the tracked value are the tracked state's own
    ladder copies and are skipped; they are not adjacent surfaces. The match
    tolerance is ``copy_tol`` times the smallest mode frequency. With
    ``signed`` the result is (partner - tracked), keeping the side.
    """
    spectra = np.asarray(spectra, float)
    if isinstance(surface, AdiabaticSurface):
        values, idx = surface.values, surface.indices
        if modes is None:
            modes = surface.diagnostics.get("mode_frequencies")
        if reach is None:
            reach = surface.diagnostics.get("ladder_reach")
    else:
        values = np.asarray(surface, float)
        idx = np.argmin(np.abs(spectra - values[:, None]), axis=1)
    diff = spectra - values[:, None]
    dist = np.abs(diff)
    dist[np.arange(len(values)), idx] = np.inf
    if modes is not None:
        off = ladder_offsets(modes, 10 if reach is None else reach)
        tol = copy_tol * float(np.min(modes))
        # nearest offset via sorted search, avoids a (points, states, offsets) cube
        pos = np.clip(np.searchsorted(off, diff), 1, off.size - 1)
        near = np.minimum(np.abs(diff - off[pos - 1]), np.abs(diff - off[pos]))
        dist[near < tol] = np.inf
    k = np.argmin(dist, axis=1)
    rows = np.arange(len(values))
    out = dist[rows, k]
    if signed:
        out = np.where(np.isfinite(out), diff[rows, k], out)
    return out


def avoided_crossings(gaps: np.ndarray, positions, rel_prominence: float = 0.01,
                      min_gap: float = 0.0, signed=None) -> list:
    """Local minima of a gap profile.

    A minimum counts when its prominence (scipy's definition, on the negated
    profile) exceeds ``rel_prominence`` times the finite range of the profile;
    this only drops the flat ripples of imperfect ladder copies. ``min_gap``
    (rad/s) is an optional physical cut. Passing the signed profile fills in
    ``followed`` for each crossing.
    """
    g = np.abs(np.asarray(gaps, float))
    pos = np.asarray(positions, float)
    fin = np.isfinite(g)
    if fin.sum() < 3:
        return []
    span = float(np.ptp(g[fin]))
    h = np.where(fin, -g, -np.max(g[fin]))
    peaks, _ = find_peaks(h, prominence=rel_prominence * span if span > 0 else None)
    found = []
    for i in peaks:
        if g[i] < min_gap:
            continue
        followed = None
        if signed is not None:
            sg = np.sign(np.asarray(signed, float))
            followed = bool(sg[i - 1] == sg[i + 1])
        found.append(AvoidedCrossing(int(i), float(pos[i]), float(g[i]), followed))
    return found
