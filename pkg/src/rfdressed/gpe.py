"""Split-step Fourier evolution of a 2D condensate in a dressed potential.

Units are SI except the potential, which is carried like every other energy
in the package as V/hbar in rad/s. The wavefunction is normalised to one and
the interaction constant ``g2d`` (J m^2) already contains the atom number.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import ndimage
from scipy.signal import find_peaks

from .fields import CONSTANTS

log = logging.getLogger(__name__)

HBAR = CONSTANTS.hbar
RB87_MASS = 1.443e-25  # kg


class GPENumericalError(RuntimeError):
    """Non-finite amplitudes appeared during evolution."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


@dataclass(frozen=True)
class Grid2D:
    """Square periodic grid of ``n`` x ``n`` points spanning [-half_width, half_width)."""

    n: int
    half_width: float

    def __post_init__(self):
        if self.n < 4 or self.n % 2:
            raise ValueError(f"grid size must be an even number >= 4, got {self.n}")
        if not self.half_width > 0:
            raise ValueError("grid half width must be positive")

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def x(self) -> np.ndarray:
        return -self.half_width + self.dx * np.arange(self.n)

    @property
    def area_element(self) -> float:
        return self.dx * self.dx

    def mesh(self):
        """(X, Y) with rows indexed by y and columns by x."""
        return np.meshgrid(self.x, self.x)

    def polar(self):
        X, Y = self.mesh()
        return np.hypot(X, Y), np.arctan2(Y, X)

    def k2(self) -> np.ndarray:
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)
        return k[None, :] ** 2 + k[:, None] ** 2


@dataclass
class GPEParams:
    """Physical and numerical settings of a run.

    ``g2d`` is the 2D interaction constant in J m^2 including atom number;
    :meth:`dimensionless_to_g2d` converts from beta = g2d m / hbar^2.
    """

    grid: Grid2D
    dt: float
    duration: float
    mass: float = RB87_MASS
    g2d: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if self.g2d < 0:
            raise ValueError("g2d must be non-negative")

    @staticmethod
    def dimensionless_to_g2d(beta: float, mass: float = RB87_MASS) -> float:
        return beta * HBAR ** 2 / mass

    @property
    def beta(self) -> float:
        return self.g2d * self.mass / HBAR ** 2

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    def healing_length(self, peak_density: float) -> float:
        """xi = hbar / sqrt(2 m g n) for the given peak areal density (1/m^2)."""
        if self.g2d == 0 or peak_density <= 0:
            return math.inf
        return HBAR / math.sqrt(2.0 * self.mass * self.g2d * peak_density)

    def points_per_healing_length(self, psi: "Wavefunction2D") -> float:
        return self.healing_length(float(psi.density.max())) / self.grid.dx


@dataclass
class Wavefunction2D:
    amplitudes: np.ndarray
    grid: Grid2D

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, complex)
        if self.amplitudes.shape != (self.grid.n, self.grid.n):
            raise ValueError("amplitude array does not match the grid")

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def norm(self) -> float:
        return float(self.density.sum() * self.grid.area_element)

    def normalized(self) -> "Wavefunction2D":
        return Wavefunction2D(self.amplitudes / math.sqrt(self.norm), self.grid)

    def copy(self) -> "Wavefunction2D":
        return Wavefunction2D(self.amplitudes.copy(), self.grid)


class KeyframePotential:
    """Potential sheets at given times, linearly interpolated and held at the ends."""

    def __init__(self, times: Sequence[float], sheets: Sequence[np.ndarray]):
        self.times = np.asarray(times, float)
        self.sheets = [np.asarray(s, float) for s in sheets]
        if self.times.size != len(self.sheets) or self.times.size == 0:
            raise ValueError("need one sheet per keyframe time")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("keyframe times must increase")
        shapes = {s.shape for s in self.sheets}
        if len(shapes) != 1:
            raise ValueError("keyframe sheets differ in shape")

    def __call__(self, t: float) -> np.ndarray:
        ts = self.times
        if t <= ts[0]:
            return self.sheets[0]
        if t >= ts[-1]:
            return self.sheets[-1]
        k = int(np.searchsorted(ts, t, side="right")) - 1
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        return (1.0 - w) * self.sheets[k] + w * self.sheets[k + 1]


PotentialLike = Union[np.ndarray, Callable[[float], np.ndarray]]


def _as_callable(potential: PotentialLike):
    if callable(potential):
        return potential
    sheet = np.asarray(potential, float)
    return lambda t: sheet


@dataclass
class Snapshot:
    time: float
    step: int
    psi: Wavefunction2D
    norm: float
    meta: dict = field(default_factory=dict)


class SplitStep:
    """Strang splitting: half potential+interaction, full kinetic, half again."""

    def __init__(self, params: GPEParams, potential: PotentialLike):
        self.params = params
        self.potential = _as_callable(potential)
        grid = params.grid
        self._kin = np.exp(-0.5j * HBAR * grid.k2() / params.mass * params.dt)
        self._gn = params.g2d / HBAR  # rad/s per unit areal density

    def _half(self, psi: np.ndarray, V: np.ndarray) -> np.ndarray:
        phase = V + self._gn * (psi.real ** 2 + psi.imag ** 2)
        return psi * np.exp(-0.5j * self.params.dt * phase)

    def step(self, psi: np.ndarray, t: float) -> np.ndarray:
        dt = self.params.dt
        psi = self._half(psi, self.potential(t))
        psi = np.fft.ifft2(self._kin * np.fft.fft2(psi))
        return self._half(psi, self.potential(t + dt))


def split_step_evolve(psi: Wavefunction2D, potential: PotentialLike, params: GPEParams,
                      snapshot_times: Sequence[float] = (), t0: float = 0.0,
                      steps: Optional[int] = None) -> list:
    """Evolve ``psi`` for ``params.steps`` steps (or ``steps``).

    Returns snapshots at the requested times (rounded to whole steps) plus the
    final state. Raises :class:`GPENumericalError` with the step index if the
    field stops being finite.
    """
    if psi.grid != params.grid:
        raise ValueError("wavefunction and parameters use different grids")
    nsteps = params.steps if steps is None else int(steps)
    stepper = SplitStep(params, potential)
    marks = {}
    for ts in snapshot_times:
        k = int(round((ts - t0) / params.dt))
        if 0 <= k <= nsteps:
            marks.setdefault(k, float(ts))
    out = []
    a = psi.amplitudes.copy()
    dA = params.grid.area_element

    def record(k):
        w = Wavefunction2D(a.copy(), params.grid)
        out.append(Snapshot(t0 + k * params.dt, k, w, w.norm))

    if 0 in marks:
        record(0)
    for k in range(1, nsteps + 1):
        a = stepper.step(a, t0 + (k - 1) * params.dt)
        if not np.isfinite(a).all():
            raise GPENumericalError(f"non-finite wavefunction at step {k}", step=k,
                                    time=t0 + k * params.dt)
        if k in marks:
            record(k)
    if nsteps not in marks:
        record(nsteps)
    log.debug("evolved %d steps, final norm %.15f", nsteps, (np.abs(a) ** 2).sum() * dA)
    return out


def energy(psi: Wavefunction2D, V: np.ndarray, params: GPEParams) -> float:
    """Mean-field energy functional in J."""
    a = psi.amplitudes
    dA = params.grid.area_element
    ak = np.fft.fft2(a)
    # Parseval: sum |a|^2 = sum |ak|^2 / N^2
    kin = HBAR ** 2 / (2 * params.mass) * float((params.grid.k2() * np.abs(ak) ** 2).sum()) \
        / a.size * dA
    n = np.abs(a) ** 2
    pot = HBAR * float((np.asarray(V) * n).sum()) * dA
    inter = 0.5 * params.g2d * float((n * n).sum()) * dA
    return kin + pot + inter


# ---------------------------------------------------------------------------
# initial states


def radial_minima(r: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Indices of interior local minima of a radial potential profile."""
    peaks, _ = find_peaks(-np.asarray(v, float))
    return peaks[(peaks > 0) & (peaks < len(v) - 1)]


def sheet_from_radial(r: np.ndarray, v: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Rotate a radial curve onto the grid; radii beyond the curve take its last value."""
    R, _ = grid.polar()
    return np.interp(R, r, v)


def init_ring_state(sheet: np.ndarray, grid: Grid2D, winding: int, params: GPEParams,
                    radial: Optional[tuple] = None, width: Optional[float] = None,
                    relax_steps: int = 0, relax_dt: Optional[float] = None) -> Wavefunction2D:
    """Gaussian annulus on the outermost ring minimum with phase e^{i n phi}.

    ``radial`` = (r, V(r)) locates the ring; without it the sheet is
    azimuthally averaged. The radial width defaults to the harmonic length
    of the well. ``relax_steps`` of imaginary-time propagation, confined to
    the outer well and with the winding re-imposed, refine the profile.
    """
    if radial is None:
        prof = radial_profile_of(sheet, grid)
        r, v = prof.r, prof.density
    else:
        r, v = (np.asarray(a, float) for a in radial)
    mins = radial_minima(r, v)
    if mins.size == 0:
        raise ValueError("potential has no annular minimum")
    i = int(mins[-1])
    r0 = float(r[i])
    if width is None:
        h = r[i + 1] - r[i]
        curv = (v[i + 1] - 2 * v[i] + v[i - 1]) / h ** 2  # rad/s per m^2
        omega_t = math.sqrt(max(HBAR * curv / params.mass, 0.0)) if curv > 0 else 0.0
        width = math.sqrt(HBAR / (params.mass * omega_t)) if omega_t > 0 else 4 * grid.dx
    R, PHI = grid.polar()
    phase = np.exp(1j * winding * PHI)
    amp = np.exp(-0.5 * ((R - r0) / width) ** 2)
    psi = Wavefunction2D(amp * phase, grid).normalized()
    if relax_steps > 0:
        # confine to the ring well, between the barrier tops on either side
        tops, _ = find_peaks(np.asarray(v, float))
        inner = r[tops[tops < i].max()] if np.any(tops < i) else 0.0
        outer = r[tops[tops > i].min()] if np.any(tops > i) else np.inf
        mask = (R >= inner) & (R <= outer)
        psi = relax(psi, sheet, params, relax_steps, dt=relax_dt, mask=mask, winding=winding)
    return psi


def relax(psi: Wavefunction2D, sheet: np.ndarray, params: GPEParams, steps: int,
          dt: Optional[float] = None, mask: Optional[np.ndarray] = None,
          winding: Optional[int] = None) -> Wavefunction2D:
    """Imaginary-time split-step relaxation with renormalisation each step."""
    grid = psi.grid
    dt = params.dt if dt is None else dt
    kin = np.exp(-0.5 * HBAR * grid.k2() / params.mass * dt)
    V = np.asarray(sheet, float) - float(np.min(sheet))
    gn = params.g2d / HBAR
    dA = grid.area_element
    a = psi.amplitudes.copy()
    phase = None
    if winding is not None:
        _, PHI = grid.polar()
        phase = np.exp(1j * winding * PHI)
    for _ in range(steps):
        a = a * np.exp(-0.5 * dt * (V + gn * np.abs(a) ** 2))
        a = np.fft.ifft2(kin * np.fft.fft2(a))
        a = a * np.exp(-0.5 * dt * (V + gn * np.abs(a) ** 2))
        if mask is not None:
            a = np.where(mask, a, 0.0)
        if phase is not None:
            a = np.abs(a) * phase
        a /= math.sqrt((np.abs(a) ** 2).sum() * dA)
    return Wavefunction2D(a, grid)


# ---------------------------------------------------------------------------
# diagnostics


def winding_number(psi: Wavefunction2D, radius: float, npts: Optional[int] = None,
                   floor: float = 1e-3) -> Optional[int]:
    """Phase winding around the centred circle of ``radius``.

    Returns None ("undefined") where |psi| on the circle drops below
    ``floor`` times the peak amplitude, or if the circle leaves the grid.
    """
    grid = psi.grid
    if radius <= 0 or radius >= grid.half_width - grid.dx:
        return None
    if npts is None:
        npts = max(64, int(8 * 2 * np.pi * radius / grid.dx))
    phi = np.linspace(0.0, 2 * np.pi, npts, endpoint=False)
    cx = (radius * np.cos(phi) + grid.half_width) / grid.dx
    cy = (radius * np.sin(phi) + grid.half_width) / grid.dx
    coords = np.vstack([cy, cx])
    a = psi.amplitudes
    re = ndimage.map_coordinates(a.real, coords, order=1, mode="grid-wrap")
    im = ndimage.map_coordinates(a.imag, coords, order=1, mode="grid-wrap")
    z = re + 1j * im
    if np.min(np.abs(z)) < floor * np.max(np.abs(a)):
        return None
    d = np.angle(np.roll(z, -1) / z)
    return int(round(d.sum() / (2 * np.pi)))


@dataclass
class RadialProfile:
    """Azimuthal averages in annular bins; ``area`` is the grid area in each bin."""

    r: np.ndarray
    density: np.ndarray
    area: np.ndarray

    def integral(self) -> float:
        return float(np.nansum(self.density * self.area))

    def maxima(self, r_max: Optional[float] = None, rel_prominence: float = 0.02) -> np.ndarray:
        """Radii of density maxima (prominence relative to the peak)."""
        d = np.nan_to_num(self.density)
        sel = np.ones(d.size, bool) if r_max is None else self.r <= r_max
        dd = np.where(sel, d, 0.0)
        top = dd.max()
        # pad so a maximum at the first bin is still detected
        peaks, _ = find_peaks(np.concatenate([[0.0], dd, [0.0]]),
                              prominence=rel_prominence * top if top > 0 else None)
        return self.r[peaks - 1]


def radial_profile_of(field2d: np.ndarray, grid: Grid2D, nbins: Optional[int] = None,
                      r_max: Optional[float] = None) -> RadialProfile:
    """Bin-average any real field on the grid by radius."""
    R, _ = grid.polar()
    r_max = grid.half_width if r_max is None else r_max
    nbins = int(r_max / grid.dx) if nbins is None else nbins
    edges = np.linspace(0.0, r_max, nbins + 1)
    which = np.digitize(R.ravel(), edges) - 1
    ok = (which >= 0) & (which < nbins)
    counts = np.bincount(which[ok], minlength=nbins).astype(float)
    sums = np.bincount(which[ok], weights=np.asarray(field2d, float).ravel()[ok], minlength=nbins)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(counts > 0, sums / counts, np.nan)
    return RadialProfile(0.5 * (edges[1:] + edges[:-1]), avg, counts * grid.area_element)


def radial_density_profile(psi: Wavefunction2D, nbins: Optional[int] = None) -> RadialProfile:
    """Angle-averaged |psi|^2 out to the corner of the grid (all points binned)."""
    grid = psi.grid
    return radial_profile_of(psi.density, grid, nbins=nbins, r_max=grid.half_width * math.sqrt(2.0) + grid.dx)
