"""Static trap fields, RF tones and the local-frame couplings they produce.

Energies are carried as angular frequencies (energy / hbar, rad/s), magnetic
fields in tesla and positions in metres throughout the package.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

SQRT2 = math.sqrt(2.0)


class DegeneratePointError(ValueError):
    """The local field frame is undefined on the trap axis."""


class ParallelComponentWarning(RuntimeWarning):
    """The RF component along the static field is not small against hbar*omega."""


@dataclass(frozen=True)
class PhysicalConstants:
    mu_B: float = 9.274009994e-24  # J/T
    hbar: float = 1.054571817e-34  # J s

    @property
    def mu_over_hbar(self) -> float:
        """Bohr magneton in rad/s per tesla."""
        return self.mu_B / self.hbar


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class SpinSystem:
    """Spin-1/2 atom: g-factor and the bare sublevel the atom starts in."""

    g_F: float = 1.0
    m_F: float = 0.5

    def __post_init__(self):
        if self.m_F not in (0.5, -0.5):
            raise ValueError(f"m_F must be +1/2 or -1/2, got {self.m_F}")
        if self.g_F == 0:
            raise ValueError("g_F must be nonzero")

    @property
    def sign(self) -> int:
        return 1 if self.m_F > 0 else -1


@dataclass(frozen=True)
class IoffePritchard:
    """Ioffe-Pritchard trap: radial gradient ``G`` (T/m) and bias ``B_I`` (T)."""

    G: float
    B_I: float

    def __post_init__(self):
        if not self.G > 0:
            raise ValueError(f"gradient must be positive, got {self.G}")
        if not self.B_I > 0:
            raise ValueError(f"offset field must be positive, got {self.B_I}")


@dataclass(frozen=True)
class LinearField:
    """1D linear field B_s(z) = G z along a quadrupole axis."""

    G: float

    def __post_init__(self):
        if not self.G > 0:
            raise ValueError(f"gradient must be positive, got {self.G}")


StaticFieldModel = Union[IoffePritchard, LinearField]


@dataclass(frozen=True)
class RFComponent:
    """One linearly polarised RF tone.

    ``omega`` is the angular frequency (rad/s); ``alpha`` and ``theta`` give
    the in-plane amplitude (T) and its orientation; ``b_pi`` is the amplitude
    along the trap axis (T).
    """

    omega: float
    alpha: float = 0.0
    theta: float = 0.0
    b_pi: float = 0.0

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"tone frequency must be positive, got {self.omega}")
        if self.alpha < 0:
            raise ValueError(f"in-plane amplitude must be >= 0, got {self.alpha}")
        if self.alpha == 0 and self.b_pi == 0:
            raise ValueError("tone has no field: alpha and b_pi are both zero")

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.alpha * math.cos(self.theta),
                         self.alpha * math.sin(self.theta),
                         self.b_pi])


POLARIZATIONS = ("linear", "sigma+", "sigma-")


@dataclass(frozen=True)
class RabiTone:
    """A tone described directly by its resonant Rabi frequency.

    Used for 1D slices where the RF field is orthogonal to the static field
    everywhere, so the coupling is position independent. ``rabi`` is the
    two-level gap at resonance (rad/s). A linear tone drives co- and
    counter-rotating terms equally; a circular tone drives only one of them.
    """

    omega: float
    rabi: float
    polarization: str = "linear"

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"tone frequency must be positive, got {self.omega}")
        if self.rabi < 0:
            raise ValueError(f"Rabi frequency must be >= 0, got {self.rabi}")
        if self.polarization not in POLARIZATIONS:
            raise ValueError(f"unknown polarization {self.polarization!r}")


Tone = Union[RFComponent, RabiTone]


@dataclass(frozen=True)
class RFDrive:
    """Ordered set of tones, ascending and distinct in frequency."""

    tones: tuple = field(default_factory=tuple)

    def __post_init__(self):
        tones = tuple(self.tones)
        object.__setattr__(self, "tones", tones)
        if not tones:
            raise ValueError("a drive needs at least one tone")
        omegas = [t.omega for t in tones]
        if any(b <= a for a, b in zip(omegas, omegas[1:])):
            raise ValueError(f"tone frequencies must be strictly ascending: {omegas}")

    @classmethod
    def of(cls, tones: Sequence[Tone]) -> "RFDrive":
        """Build a drive, sorting tones by frequency."""
        return cls(tuple(sorted(tones, key=lambda t: t.omega)))

    def __len__(self):
        return len(self.tones)

    def __iter__(self):
        return iter(self.tones)

    def __getitem__(self, i):
        return self.tones[i]

    @property
    def omegas(self) -> np.ndarray:
        return np.array([t.omega for t in self.tones])


# ---------------------------------------------------------------------------
# static field


def static_modulus(model: StaticFieldModel, r):
    """Field modulus (T). Signed ``G z`` for the linear model."""
    r = np.asarray(r, dtype=float)
    if isinstance(model, IoffePritchard):
        out = np.sqrt((model.G * r) ** 2 + model.B_I ** 2)
    else:
        out = model.G * r
    return out if out.ndim else float(out)


def static_vector(model: StaticFieldModel, x, y) -> np.ndarray:
    """Static field vector (G x, G y, B_I) of the IP trap, last axis xyz."""
    if not isinstance(model, IoffePritchard):
        raise TypeError("the linear 1D field has no 2D vector form")
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    return np.stack([model.G * x, model.G * y, np.full(x.shape, model.B_I)], axis=-1)


def rotation_matrix(model: StaticFieldModel, x, y, strict: bool = False) -> np.ndarray:
    """Rotation taking the local static field onto +z.

    Works elementwise on arrays; the result has shape ``x.shape + (3, 3)``.
    On the trap axis the frame is undefined. With ``strict`` this raises
    :class:`DegeneratePointError`, otherwise the limit approached along +x
    is used.
    """
    if not isinstance(model, IoffePritchard):
        raise TypeError("rotation frames need the 2D Ioffe-Pritchard field")
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    r = np.hypot(x, y)
    on_axis = r == 0
    if strict and np.any(on_axis):
        raise DegeneratePointError("local frame undefined at (x, y) = (0, 0)")
    # the angle keeps (cx, cy) a unit vector even for subnormal coordinates
    phi = np.arctan2(y, x)
    cx, cy = np.cos(phi), np.sin(phi)
    bs = np.sqrt((model.G * r) ** 2 + model.B_I ** 2)
    a = model.B_I / bs
    b = model.G * r / bs
    zero = np.zeros_like(r)
    rows = [
        [cy, -cx, zero],
        [a * cx, a * cy, -b],
        [b * cx, b * cy, a],
    ]
    R = np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)
    return R


def rotated_rf(tone: RFComponent, R: np.ndarray) -> np.ndarray:
    """RF field vector in the local frame, ``R @ B_n``."""
    return np.asarray(R) @ tone.vector


def spherical_components(tone: RFComponent):
    """(B_plus, B_minus, B_pi) of a linear tone with in-plane orientation theta."""
    b_plus = tone.alpha * (math.cos(tone.theta) - 1j * math.sin(tone.theta)) / SQRT2
    b_minus = tone.alpha * (math.cos(tone.theta) + 1j * math.sin(tone.theta)) / SQRT2
    return b_plus, b_minus, tone.b_pi


def cartesian_from_spherical(b_plus, b_minus, b_pi, phase: float = 0.0) -> np.ndarray:
    """Real lab-frame field Re[(B_c) e^{-i phase}] from spherical amplitudes."""
    vec = np.array([(b_plus + b_minus) / SQRT2,
                    1j * (b_plus - b_minus) / SQRT2,
                    b_pi], dtype=complex)
    return np.real(vec * np.exp(-1j * phase))


def rabi_frequency(b_prime, consts: PhysicalConstants = CONSTANTS,
                   spin: SpinSystem = SpinSystem()):
    """Floquet coupling (mu_B g_F / 4 hbar)(B'_x + i B'_y) in rad/s.

    The axial component B'_z is dropped. Accepts a single 3-vector or an array
    with xyz on the last axis.
    """
    b = np.asarray(b_prime)
    out = consts.mu_over_hbar * spin.g_F / 4.0 * (b[..., 0] + 1j * b[..., 1])
    return complex(out) if np.ndim(out) == 0 else out


def parallel_ratio(b_prime, omega: float, consts: PhysicalConstants = CONSTANTS,
                   spin: SpinSystem = SpinSystem()):
    """|mu_B g_F B'_z| / (hbar omega): must be small for B'_z to be dropped."""
    b = np.asarray(b_prime)
    return np.abs(consts.mu_over_hbar * spin.g_F * b[..., 2]) / omega


def warn_parallel(ratio, limit: float = 0.1) -> float:
    """Emit a :class:`ParallelComponentWarning` if the worst ratio exceeds ``limit``."""
    worst = float(np.max(ratio)) if np.size(ratio) else 0.0
    if worst > limit:
        warnings.warn(
            f"axial RF component reaches {worst:.3g} of hbar*omega; "
            "neglecting it is a poor approximation here",
            ParallelComponentWarning, stacklevel=3)
    return worst


def larmor(model: StaticFieldModel, r, consts: PhysicalConstants = CONSTANTS,
           spin: SpinSystem = SpinSystem()):
    """Larmor frequency mu_B g_F B_s / hbar (rad/s)."""
    return consts.mu_over_hbar * spin.g_F * static_modulus(model, r)


def dressed_energies_sigma_plus(larmor_freq, omega: float, rabi: float):
    """Exact rotating-frame energies of a circularly driven spin-1/2.

    Returns ``(E_up, E_down)`` = +-(1/2) sqrt(delta^2 + rabi^2) with
    ``delta = larmor_freq - omega``. Floquet quasi-energies of the same
    problem equal these plus omega/2, modulo omega.
    """
    delta = np.asarray(larmor_freq, float) - omega
    half = 0.5 * np.sqrt(delta ** 2 + rabi ** 2)
    return half, -half


def tone_couplings(drive: RFDrive, x, y=None, model: StaticFieldModel = None,
                   consts: PhysicalConstants = CONSTANTS,
                   spin: SpinSystem = SpinSystem(), warn: bool = True):
    """Co- and counter-rotating matrix elements for every tone at every point.

    Returns two complex arrays of shape ``(npoints, ntones)``: the coefficient
    of e^{-i w t} and of e^{+i w t} in <up|H|down>/hbar. For a linear field
    tone both equal conj of :func:`rabi_frequency`; a Rabi-specified tone
    contributes half its resonant gap to each term it drives.
    """
    x = np.atleast_1d(np.asarray(x, float))
    y = np.zeros_like(x) if y is None else np.broadcast_to(np.asarray(y, float), x.shape)
    co = np.zeros((x.size, len(drive)), complex)
    counter = np.zeros_like(co)
    R = None
    for j, tone in enumerate(drive):
        if isinstance(tone, RabiTone):
            half = tone.rabi / 2.0
            if tone.polarization in ("linear", "sigma+"):
                co[:, j] = half
            if tone.polarization in ("linear", "sigma-"):
                counter[:, j] = half
            continue
        if R is None:
            R = rotation_matrix(model, x.ravel(), y.ravel())
        bp = R @ tone.vector
        if warn:
            warn_parallel(parallel_ratio(bp, tone.omega, consts, spin))
        elem = np.conj(rabi_frequency(bp, consts, spin))
        co[:, j] = elem
        counter[:, j] = elem
    return co, counter


def rabi_magnitudes(drive: RFDrive, x, y=None, model=None,
                    consts: PhysicalConstants = CONSTANTS,
                    spin: SpinSystem = SpinSystem()) -> np.ndarray:
    """Resonant two-level gap of each tone at each point, shape (npoints, ntones)."""
    co, _ = tone_couplings(drive, x, y, model, consts, spin, warn=False)
    return 2.0 * np.abs(co)
