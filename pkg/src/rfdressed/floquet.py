"""Truncated Floquet matrices for a spin-1/2 atom driven by one or two RF tones.

Rows are labelled by (spin, n1, n2). ``n1`` counts quanta of the first mode
(omega_1) and ``n2`` quanta of the second mode, whose frequency is
omega_r = omega_1 + omega_2 in the two-tone case. In that basis absorbing one
omega_2 quantum moves (n1, n2) by (-1, +1). Rows are ordered with photon
numbers descending (n2 outermost), spin up before spin down, so the
single-tone first-order matrix has the familiar 6x6 layout.

Matrix elements are in rad/s. Element <up, m | H | down, m'> is the Fourier
coefficient of <up|H(t)|down> at exp(i (m - m').w t), and the diagonal carries
the static Zeeman energy plus m.w.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np


class EigensolverError(RuntimeError):
    """Dense diagonalisation failed; carries the offending matrix metadata."""

    def __init__(self, message, dim=None, point=None):
        super().__init__(message)
        self.dim = dim
        self.point = point


@dataclass(frozen=True)
class TruncationOrder:
    p1: int
    p2: int = 0

    def __post_init__(self):
        if self.p1 < 0 or self.p2 < 0:
            raise ValueError("truncation orders must be non-negative")

    @property
    def dim(self) -> int:
        return 2 * (2 * self.p1 + 1) * (2 * self.p2 + 1)

    def raised(self, step: int = 1) -> "TruncationOrder":
        return TruncationOrder(self.p1 + step, self.p2 + step if self.p2 else 0)


@dataclass(frozen=True)
class Basis:
    """Row labels and the coupling pattern of a truncated Floquet space."""

    orders: TruncationOrder
    spin: np.ndarray  # (d,) +1 / -1
    n1: np.ndarray
    n2: np.ndarray
    # coupling slots: row (spin up), column (spin down), tone index, kind
    # kind 0: co-rotating term (coefficient of e^{-iwt}); 1: counter-rotating
    up: np.ndarray
    down: np.ndarray
    tone: np.ndarray
    kind: np.ndarray

    @property
    def dim(self) -> int:
        return self.spin.size

    @property
    def parity(self) -> np.ndarray:
        """Conserved sector label: spin flips always change n1 by one."""
        return self.spin * np.where(self.n1 % 2 == 0, 1, -1)


def _tone_vectors(ntones: int):
    if ntones == 1:
        return ((1, 0),)
    if ntones == 2:
        return ((1, 0), (-1, 1))
    raise ValueError(f"only one- and two-tone drives are supported, got {ntones}")


@lru_cache(maxsize=32)
def make_basis(p1: int, p2: int, ntones: int) -> Basis:
    orders = TruncationOrder(p1, p2)
    if ntones == 2 and p2 < 1:
        raise ValueError("a two-tone matrix needs p2 >= 1")
    labels = [(s, a, b)
              for b in range(p2, -p2 - 1, -1)
              for a in range(p1, -p1 - 1, -1)
              for s in (1, -1)]
    index = {lab: i for i, lab in enumerate(labels)}
    spin = np.array([l[0] for l in labels])
    n1 = np.array([l[1] for l in labels])
    n2 = np.array([l[2] for l in labels])
    up, down, tone, kind = [], [], [], []
    for j, (t1, t2) in enumerate(_tone_vectors(ntones)):
        for (s, a, b), i in index.items():
            if s != 1:
                continue
            for k, (da, db) in enumerate(((t1, t2), (-t1, -t2))):
                col = index.get((-1, a + da, b + db))
                if col is not None:
                    up.append(i)
                    down.append(col)
                    tone.append(j)
                    kind.append(k)
    as_arr = lambda v: np.array(v, dtype=np.intp)
    return Basis(orders, spin, n1, n2, as_arr(up), as_arr(down), as_arr(tone), as_arr(kind))


def mode_frequencies(omegas: Sequence[float]) -> tuple:
    """(omega_1, omega_r) for two tones, (omega_1,) for one."""
    if len(omegas) == 1:
        return (float(omegas[0]),)
    return (float(omegas[0]), float(omegas[0] + omegas[1]))


@dataclass(frozen=True)
class FloquetMatrix:
    entries: np.ndarray
    basis: Basis
    omegas: tuple  # tone angular frequencies

    @property
    def dim(self) -> int:
        return self.entries.shape[-1]

    @property
    def spin(self):
        return self.basis.spin

    @property
    def n1(self):
        return self.basis.n1

    @property
    def n2(self):
        return self.basis.n2

    @property
    def orders(self) -> TruncationOrder:
        return self.basis.orders

    def diagonal_offsets(self, larmor: float) -> np.ndarray:
        return _diagonal(self.basis, self.omegas, np.array([larmor]))[0]


def _diagonal(basis: Basis, omegas, larmor: np.ndarray) -> np.ndarray:
    modes = mode_frequencies(omegas)
    ladder = basis.n1 * modes[0]
    if len(modes) == 2:
        ladder = ladder + basis.n2 * modes[1]
    return 0.5 * larmor[:, None] * basis.spin[None, :] + ladder[None, :]


def assemble(larmor, omegas, co, counter, orders: TruncationOrder) -> tuple:
    """Stack of Floquet matrices for many points.

    ``larmor`` has shape (N,) (rad/s); ``co`` and ``counter`` have shape
    (N, ntones) and hold the coefficients of e^{-iwt} and e^{+iwt} in
    <up|H|down>/hbar. Returns ``(H, basis)`` with H of shape (N, d, d).
    """
    larmor = np.atleast_1d(np.asarray(larmor, float))
    co = np.asarray(co, complex).reshape(larmor.size, -1)
    counter = np.asarray(counter, complex).reshape(larmor.size, -1)
    ntones = len(omegas)
    p2 = orders.p2 if ntones == 2 else 0
    basis = make_basis(orders.p1, p2, ntones)
    d = basis.dim
    H = np.zeros((larmor.size, d, d), complex)
    diag = np.arange(d)
    H[:, diag, diag] = _diagonal(basis, omegas, larmor)
    elems = np.where(basis.kind[None, :] == 0, co[:, basis.tone], counter[:, basis.tone])
    H[:, basis.up, basis.down] = elems
    H[:, basis.down, basis.up] = np.conj(elems)
    return H, basis


def floquet_blocks(larmor: float, co: complex, counter: Optional[complex] = None):
    """Fourier blocks (H_0, H_+1, H_-1) of a single tone in the (up, down) basis.

    H_m is the coefficient of e^{i m w t}; the linear-tone default sets the
    counter-rotating element equal to the co-rotating one.
    """
    counter = co if counter is None else counter
    h0 = np.diag([0.5 * larmor, -0.5 * larmor]).astype(complex)
    h_plus = np.array([[0, counter], [np.conj(co), 0]], complex)
    h_minus = np.array([[0, co], [np.conj(counter), 0]], complex)
    return h0, h_plus, h_minus


def build_single(larmor: float, omega: float, co: complex,
                 counter: Optional[complex] = None, p1: int = 5) -> FloquetMatrix:
    """Single-tone Floquet matrix of dimension 2(2 p1 + 1)."""
    counter = co if counter is None else counter
    H, basis = assemble([larmor], (omega,), [[co]], [[counter]], TruncationOrder(p1))
    return FloquetMatrix(H[0], basis, (float(omega),))


def build_two_mode(larmor: float, omegas: Sequence[float], co: Sequence[complex],
                   counter: Optional[Sequence[complex]] = None,
                   p1: int = 5, p2: int = 5) -> FloquetMatrix:
    """Two-tone Floquet matrix of dimension 2(2 p1 + 1)(2 p2 + 1)."""
    counter = co if counter is None else counter
    omegas = tuple(float(w) for w in omegas)
    H, basis = assemble([larmor], omegas, [list(co)], [list(counter)], TruncationOrder(p1, p2))
    return FloquetMatrix(H[0], basis, omegas)


# ---------------------------------------------------------------------------
# eigensolver


@dataclass(frozen=True)
class EigenDecomposition:
    values: np.ndarray
    vectors: np.ndarray  # columns pair with values

    def __len__(self):
        return self.values.size


def _fix_phases(vectors: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Rotate each column so its first non-negligible component is real positive."""
    mag = np.abs(vectors)
    first = np.argmax(mag > tol * mag.max(axis=-2, keepdims=True), axis=-2)
    lead = np.take_along_axis(vectors, first[..., None, :], axis=-2)
    phase = lead / np.abs(lead)
    return vectors / phase


def _break_ties(values: np.ndarray, vectors: np.ndarray):
    """Reorder exactly degenerate eigenpairs lexicographically by their vectors."""
    if not np.any(np.diff(values) == 0):
        return values, vectors
    order = np.arange(values.size)
    groups = np.split(order.copy(), np.flatnonzero(np.diff(values) != 0) + 1)
    for g in groups:
        if g.size < 2:
            continue
        v = np.round(vectors[:, g], 12)
        # lexsort treats the last key as primary: feed rows last-to-first
        keys = []
        for row in range(v.shape[0] - 1, -1, -1):
            keys.extend([-v[row].imag, -v[row].real])
        order[g] = g[np.lexsort(keys)]
    return values[order], vectors[:, order]


def hermitian_eigs(H, check: bool = True, point=None) -> EigenDecomposition:
    """Full spectrum and orthonormal eigenvectors of a Hermitian matrix.

    Eigenvalues are ascending; each eigenvector is phase-fixed so its first
    non-negligible component is real positive, and exactly degenerate pairs
    are ordered lexicographically by their vectors.
    """
    A = H.entries if isinstance(H, FloquetMatrix) else np.asarray(H)
    if check:
        scale = max(np.max(np.abs(A)), 1.0)
        if np.max(np.abs(A - A.conj().T)) > 1e-13 * scale:
            raise ValueError("matrix is not Hermitian")
    if not np.isfinite(A).all():
        raise EigensolverError(f"non-finite matrix entries (dim {A.shape[0]})",
                               dim=A.shape[0], point=point)
    try:
        w, v = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"eigensolver did not converge (dim {A.shape[0]}): {exc}",
                               dim=A.shape[0], point=point) from exc
    v = _fix_phases(v)
    w, v = _break_ties(w, v)
    return EigenDecomposition(w, v)


def eigh_batch(H: np.ndarray, points=None):
    """Diagonalise a stack (N, d, d); returns phase-fixed (values, vectors)."""
    if np.iscomplexobj(H) and not np.any(H.imag):
        # real symmetric stacks (constant Rabi couplings) solve several times faster
        H = np.ascontiguousarray(H.real)
    bad = ~np.isfinite(H).all(axis=(-2, -1))
    if bad.any():
        i = int(np.argmax(bad))
        raise EigensolverError(f"non-finite matrix entries at point index {i}",
                               dim=H.shape[-1], point=None if points is None else points[i])
    try:
        w, v = np.linalg.eigh(H)
    except np.linalg.LinAlgError:
        # locate the failing member for the error report
        for i, A in enumerate(H):
            try:
                np.linalg.eigh(A)
            except np.linalg.LinAlgError as exc:
                pt = None if points is None else points[i]
                raise EigensolverError(
                    f"eigensolver did not converge at point index {i} (dim {A.shape[0]})",
                    dim=A.shape[0], point=pt) from exc
        raise
    return w, _fix_phases(v.astype(complex, copy=False))


def restrict(H: np.ndarray, basis: Basis, sector: int) -> tuple:
    """Sub-block of one parity sector; returns ``(H_sector, row_indices)``."""
    idx = np.flatnonzero(basis.parity == sector)
    return H[..., idx[:, None], idx[None, :]], idx


# ---------------------------------------------------------------------------
# convergence in the truncation order


def centroids(vectors: np.ndarray, basis: Basis, rows=None) -> np.ndarray:
    """Photon-number centroids (<n1>, <n2>) of each eigenvector column."""
    rows = np.arange(basis.dim) if rows is None else rows
    w = np.abs(vectors) ** 2
    c1 = basis.n1[rows] @ w
    c2 = basis.n2[rows] @ w
    return np.stack([c1, c2], axis=-1)


def central_copies(decomp: EigenDecomposition, basis: Basis, rows=None) -> np.ndarray:
    """Indices of eigenpairs whose photon centroid lies in the central zone.

    Every quasi-energy class repeats with shifts of the mode frequencies; the
    central-zone copy is the one furthest from the truncation edge.
    """
    c = centroids(decomp.vectors, basis, rows)
    keep = np.flatnonzero(np.all(np.abs(c) <= 0.5 + 1e-9, axis=-1))
    if keep.size:
        return keep
    # strong mixing can push every centroid out of the zone: take the two nearest
    return np.argsort(np.max(np.abs(c), axis=-1), kind="stable")[:2]


def ladder_check(H: FloquetMatrix, H_next: FloquetMatrix) -> float:
    """Worst mismatch (rad/s) of central quasi-energies against a larger truncation.

    Each central-zone eigenvalue of ``H`` must reappear in ``H_next`` both
    unshifted and shifted by +-omega_1 (and +-omega_r for two tones).
    """
    if H.omegas != H_next.omegas:
        raise ValueError("ladder check needs matrices for the same tones")
    d1 = hermitian_eigs(H, check=False)
    d2 = hermitian_eigs(H_next, check=False)
    c_next = centroids(d2.vectors, H_next.basis)
    c_this = centroids(d1.vectors, H.basis)
    modes = mode_frequencies(H.omegas)
    shifts = [(0, 0), (1, 0), (-1, 0)]
    if len(modes) == 2:
        shifts += [(0, 1), (0, -1)]
    worst = 0.0
    for i in central_copies(d1, H.basis):
        for k in shifts:
            target = d1.values[i] + k[0] * modes[0] + (k[1] * modes[1] if k[1] else 0.0)
            want = c_this[i] + np.array(k)
            near = np.all(np.abs(c_next - want) < 0.25, axis=-1)
            pool = d2.values[near] if near.any() else d2.values
            worst = max(worst, float(np.min(np.abs(pool - target))))
    return worst


# ---------------------------------------------------------------------------
# position-dependent problems


class FloquetProblem:
    """Floquet matrices of a given drive and static field at arbitrary points.

    For the Ioffe-Pritchard model points are (x, y) in the transverse plane;
    a 1D slice uses y = 0. For the linear model ``x`` is the axial coordinate
    and every tone must be Rabi-specified.
    """

    def __init__(self, drive, model, orders: TruncationOrder = TruncationOrder(5, 5),
                 consts=None, spin=None):
        from . import fields

        self.drive = drive
        self.model = model
        self.consts = consts or fields.CONSTANTS
        self.spin = spin or fields.SpinSystem()
        ntones = len(drive)
        if ntones > 2:
            raise ValueError("only one- and two-tone drives are supported")
        p2 = orders.p2 if ntones == 2 else 0
        if ntones == 2 and p2 < 1:
            raise ValueError("a two-tone drive needs p2 >= 1")
        self.orders = TruncationOrder(orders.p1, p2)
        self.omegas = tuple(float(w) for w in drive.omegas)
        self.parallel_ratio = 0.0

    def with_orders(self, orders: TruncationOrder) -> "FloquetProblem":
        return FloquetProblem(self.drive, self.model, orders, self.consts, self.spin)

    @property
    def basis(self) -> Basis:
        return make_basis(self.orders.p1, self.orders.p2, len(self.omegas))

    @property
    def tracked_sector(self) -> int:
        """Parity sector holding the bare trapped state (spin m_F, no quanta)."""
        return self.spin.sign

    def larmor(self, x, y=None):
        from . import fields

        x = np.atleast_1d(np.asarray(x, float))
        if isinstance(self.model, fields.IoffePritchard):
            r = np.hypot(x, 0.0 if y is None else y)
        else:
            r = x
        return fields.larmor(self.model, r, self.consts, self.spin)

    def bare_energy(self, x=0.0, y=0.0) -> float:
        """m_F mu_B g_F B_s / hbar at a point."""
        return float(self.spin.m_F * self.larmor([x], None if y is None else [y])[0])

    def matrices(self, x, y=None) -> tuple:
        from . import fields

        x = np.atleast_1d(np.asarray(x, float))
        co, counter = fields.tone_couplings(self.drive, x, y, self.model,
                                            self.consts, self.spin, warn=False)
        if any(isinstance(t, fields.RFComponent) for t in self.drive):
            R = fields.rotation_matrix(self.model, x, 0.0 if y is None else y)
            for tone in self.drive:
                if isinstance(tone, fields.RFComponent):
                    ratio = fields.parallel_ratio(R @ tone.vector, tone.omega,
                                                  self.consts, self.spin)
                    self.parallel_ratio = max(self.parallel_ratio, float(np.max(ratio)))
                    fields.warn_parallel(ratio)
        return assemble(self.larmor(x, y), self.omegas, co, counter, self.orders)

    def matrix(self, x: float, y: Optional[float] = None) -> FloquetMatrix:
        H, basis = self.matrices([x], None if y is None else [y])
        return FloquetMatrix(H[0], basis, self.omegas)

    def decompose(self, x, y=None, sector: Optional[int] = None):
        """Eigen-decompose at each point; returns ``(values, vectors, rows)``.

        With ``sector`` set only that parity block is diagonalised and ``rows``
        maps its rows back into the full basis.
        """
        H, basis = self.matrices(x, y)
        rows = np.arange(basis.dim)
        if sector is not None:
            H, rows = restrict(H, basis, sector)
        pts = np.atleast_1d(x)
        w, v = eigh_batch(H, points=pts)
        return w, v, rows

    def ladder_mismatch(self, x: float, y: Optional[float] = None) -> float:
        """ladder_check between this order and the next one at a point."""
        nxt = self.with_orders(self.orders.raised())
        return ladder_check(self.matrix(x, y), nxt.matrix(x, y))


def converge_orders(problem: FloquetProblem, probes, p_max: int = 10,
                    rel_tol: float = 1e-8) -> tuple:
    """Raise the truncation until the ladder check passes at every probe point.

    Returns ``(problem_at_converged_order, report)``; the report lists the
    worst mismatch per tried order and whether the tolerance was met.
    """
    tol = rel_tol * min(problem.omegas)
    history = []
    current = problem
    while True:
        worst = max(current.ladder_mismatch(*pt) for pt in probes)
        history.append({"p1": current.orders.p1, "p2": current.orders.p2,
                        "mismatch_rad_s": worst})
        if worst < tol or current.orders.p1 >= p_max:
            break
        current = current.with_orders(current.orders.raised())
    report = {"tolerance_rad_s": tol, "converged": history[-1]["mismatch_rad_s"] < tol,
              "orders": history}
    return current, report
