"""Piecewise resonance model for multi-tone RF dressing.

Each position is assigned to the tone closest to resonance. That tone is
treated exactly as a two-level problem, every other tone enters through its
second-order light shift, and the segments are glued back together with the
photon-ladder offsets of the dressed-state picture.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import fields
from .fields import CONSTANTS, PhysicalConstants, RFDrive, SpinSystem


class StarkDivergence(ArithmeticError):
    """A non-nearest tone is (almost) exactly resonant; the light-shift sum blows up."""

    def __init__(self, message, positions=None, tone=None):
        super().__init__(message)
        self.positions = positions
        self.tone = tone


@dataclass
class PiecewiseConfig:
    """Drive and trap for the piecewise model.

    ``rabi`` optionally overrides the per-tone Rabi magnitudes (rad/s);
    otherwise they are taken from the drive at each position.
    """

    drive: RFDrive
    model: fields.StaticFieldModel
    rabi: Optional[Sequence[float]] = None
    spin: SpinSystem = field(default_factory=SpinSystem)
    consts: PhysicalConstants = CONSTANTS
    divergence_eps: float = 1e-3  # relative to the smallest Rabi magnitude

    def __post_init__(self):
        if len(self.drive) == 0:
            raise ValueError("drive has no tones")
        if self.rabi is not None:
            r = np.asarray(self.rabi, float)
            if r.shape != (len(self.drive),):
                raise ValueError(f"need one Rabi magnitude per tone, got {r.shape}")
            if np.any(r < 0):
                raise ValueError("Rabi magnitudes must be non-negative")
            self.rabi = r

    @property
    def omegas(self) -> np.ndarray:
        return self.drive.omegas

    def larmor(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, float))
        b = np.abs(fields.static_modulus(self.model, z))
        return self.consts.mu_over_hbar * self.spin.g_F * np.atleast_1d(b)

    def detunings(self, z) -> np.ndarray:
        """delta_j(z) = larmor(z) - omega_j, shape (npoints, ntones)."""
        return self.larmor(z)[:, None] - self.omegas[None, :]

    def rabi_at(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, float))
        if self.rabi is not None:
            return np.broadcast_to(self.rabi, (z.size, len(self.drive)))
        return fields.rabi_magnitudes(self.drive, z, None, self.model, self.consts, self.spin)

    @property
    def epsilon(self) -> float:
        """Absolute detuning (rad/s) below which the light shift counts as divergent."""
        if self.rabi is not None:
            scale = float(np.min(self.rabi))
        elif all(isinstance(t, fields.RabiTone) for t in self.drive):
            scale = min(t.rabi for t in self.drive)
        else:
            # field-specified tones: magnitudes vary in space, flag exact resonance only
            scale = 0.0
        return self.divergence_eps * scale


@dataclass
class PotentialCurve:
    """Piecewise adiabatic potential (rad/s) on an ascending grid.

    ``segment`` holds the 1-based tone index used at each sample; ``masked``
    marks samples where the light-shift sum diverges (values there are NaN).
    """

    grid: np.ndarray
    values: np.ndarray
    branch: str
    segment: np.ndarray
    masked: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return self.grid.size


def _scalar(z, out):
    return float(out[0]) if np.ndim(z) == 0 else out


def nearest_resonance_index(z, cfg: PiecewiseConfig):
    """0-based index of the tone with smallest |detuning|; ties go to the lower index."""
    idx = np.argmin(np.abs(cfg.detunings(z)), axis=1)
    return int(idx[0]) if np.ndim(z) == 0 else idx


def _pick(arr, n):
    n = np.broadcast_to(np.asarray(n), arr.shape[:1])
    return arr[np.arange(arr.shape[0]), n]


def two_level_energies(z, n, cfg: PiecewiseConfig):
    """(E+, E-) = +-(1/2) sqrt(Omega_n^2 + delta_n^2) for tone ``n`` (0-based)."""
    delta = _pick(cfg.detunings(z), n)
    rabi = _pick(cfg.rabi_at(z), n)
    half = 0.5 * np.hypot(rabi, delta)
    return _scalar(z, half), _scalar(z, -half)


def _stark(z, n, cfg):
    delta = cfg.detunings(z)
    rabi = cfg.rabi_at(z)
    npts, ntones = delta.shape
    others = np.ones((npts, ntones), bool)
    others[np.arange(npts), np.broadcast_to(np.asarray(n), (npts,))] = False
    bad = np.any(others & (np.abs(delta) < cfg.epsilon), axis=1) | \
        np.any(others & (delta == 0.0), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(others, rabi ** 2 / (4.0 * delta), 0.0)
    shift = terms.sum(axis=1)
    shift[bad] = np.nan
    return shift, bad


def stark_shift(z, n, cfg: PiecewiseConfig):
    """Light shift L_n/hbar (rad/s) from all tones other than ``n``.

    Raises :class:`StarkDivergence` where another tone is within the
    divergence epsilon of resonance.
    """
    shift, bad = _stark(z, n, cfg)
    if bad.any():
        zz = np.atleast_1d(np.asarray(z, float))[bad]
        raise StarkDivergence(f"light shift diverges at {zz.size} point(s), first z={zz[0]:.6g} m",
                              positions=zz)
    return _scalar(z, shift)


def corrected_energies(z, n, cfg: PiecewiseConfig):
    """Two-level energies with the resonance moved by twice the light shift."""
    shift = np.atleast_1d(stark_shift(z, n, cfg))
    delta = _pick(cfg.detunings(z), n) + 2.0 * shift
    rabi = _pick(cfg.rabi_at(z), n)
    half = 0.5 * np.hypot(rabi, delta)
    return _scalar(z, half), _scalar(z, -half)


def ladder_offset(n, omegas, branch: str = "+"):
    """Constant photon-ladder term for segment ``n`` (1-based)."""
    s = 1.0 if branch == "+" else -1.0
    n = np.asarray(n)
    k = np.arange(1, len(omegas) + 1)
    alt = np.where(k[None, :] < np.atleast_1d(n)[:, None], (-1.0) ** k * omegas[None, :], 0.0)
    return -s * alt.sum(axis=1)


def adiabatic_potential(grid, branch: str, cfg: PiecewiseConfig,
                        stark: bool = True) -> PotentialCurve:
    """Glue the per-segment dressed energies into one potential curve.

    In segment n (1-based) the value is (-1)^n [E -+ omega_n/2] plus the
    ladder offset; divergent samples are masked rather than raised.
    """
    if branch not in ("+", "-"):
        raise ValueError("branch must be '+' or '-'")
    z = np.asarray(grid, float)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("grid must be a non-empty 1D array")
    if np.any(np.diff(z) < 0):
        raise ValueError("grid must be sorted ascending")
    idx = nearest_resonance_index(z, cfg)
    delta = _pick(cfg.detunings(z), idx)
    rabi = _pick(cfg.rabi_at(z), idx)
    if stark:
        shift, bad = _stark(z, idx, cfg)
        delta = delta + 2.0 * np.where(bad, 0.0, shift)
    else:
        bad = np.zeros(z.size, bool)
    half = 0.5 * np.hypot(rabi, delta)
    energy = half if branch == "+" else -half
    s = 1.0 if branch == "+" else -1.0
    n1 = idx + 1
    omegas = cfg.omegas
    values = (-1.0) ** n1 * (energy - s * omegas[idx] / 2.0) + ladder_offset(n1, omegas, branch)
    values = np.where(bad, np.nan, values)
    curve = PotentialCurve(grid=z, values=values, branch=branch, segment=n1, masked=bad)
    jump, where = segment_jump_diagnostic(curve) if z.size > 1 else (0.0, float("nan"))
    curve.diagnostics = {"segment_jump_rad_s": jump, "segment_jump_position_m": where,
                         "masked_points": int(bad.sum())}
    return curve


def segment_jump_diagnostic(curve: PotentialCurve) -> tuple:
    """Largest |V(z_i+1) - V(z_i)| over segment boundaries, and where it sits.

    The position returned is the midpoint of the two samples. Without any
    boundary the result is ``(0.0, nan)``.
    """
    if curve.grid.size < 2:
        raise ValueError("need at least two samples")
    b = np.flatnonzero(np.diff(curve.segment) != 0)
    if b.size == 0:
        return 0.0, float("nan")
    jumps = np.abs(curve.values[b + 1] - curve.values[b])
    if np.all(np.isnan(jumps)):
        return float("nan"), float("nan")
    k = int(np.nanargmax(jumps))
    i = b[k]
    return float(jumps[k]), float(0.5 * (curve.grid[i] + curve.grid[i + 1]))


def median_increment(values) -> float:
    """Median of |V(z_i+1) - V(z_i)| ignoring masked samples."""
    inc = np.abs(np.diff(np.asarray(values, float)))
    return float(np.nanmedian(inc))


def resonance_positions(cfg: PiecewiseConfig, r_max: float) -> np.ndarray:
    """Radii (m) where each tone is resonant, NaN where not reached within ``r_max``."""
    r = np.linspace(0.0, r_max, 20001)
    delta = cfg.detunings(r)
    out = np.full(delta.shape[1], np.nan)
    for j in range(delta.shape[1]):
        s = np.flatnonzero(np.diff(np.sign(delta[:, j])) != 0)
        if s.size:
            i = s[0]
            out[j] = r[i] - delta[i, j] * (r[i + 1] - r[i]) / (delta[i + 1, j] - delta[i, j])
    return out


def gap_profile(z, cfg: PiecewiseConfig, stark: bool = True) -> np.ndarray:
    """E+ - E- of the active segment at each sample."""
    z = np.asarray(z, float)
    idx = nearest_resonance_index(z, cfg)
    delta = _pick(cfg.detunings(z), idx)
    if stark:
        shift, bad = _stark(z, idx, cfg)
        delta = delta + 2.0 * np.where(bad, 0.0, shift)
    return np.hypot(_pick(cfg.rabi_at(z), idx), delta)
