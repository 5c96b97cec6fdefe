import math

import numpy as np
import pytest

from rfdressed import fields, tracker
from rfdressed.floquet import FloquetProblem, TruncationOrder, hermitian_eigs

IP = fields.IoffePritchard(1.0, 1e-6)
TWO_PI = 2 * math.pi


def two_level(z, g):
    return [hermitian_eigs(np.array([[zz, g], [g, -zz]], complex)) for zz in z]


def test_select_initial_tie_goes_low():
    assert tracker.select_initial((np.array([-1.0, 1.0, 3.0]), None), 0.0) == 0
    assert tracker.select_initial((np.array([-1.0, 1.0, 3.0]), None), 2.2) == 2


def test_best_overlap_tie_by_energy():
    vecs = np.eye(2, dtype=complex) / 1.0
    prev = np.array([1, 1], complex) / math.sqrt(2)
    k, ov = tracker.best_overlap(prev, 0.9, np.array([0.0, 1.0]), vecs)
    assert k == 1 and ov == pytest.approx(1 / math.sqrt(2))


def test_follow_adiabatic_through_wide_crossing():
    z = np.linspace(-1, 1, 201)
    d = two_level(z, 0.3)
    surf = tracker.follow_1d(d, start=1, grid=z)
    assert np.allclose(surf.values, np.hypot(z, 0.3))
    assert surf.flagged.sum() == 0


def test_follow_diabatic_through_narrow_crossing():
    z = np.linspace(-1, 1, 200)  # no sample at z = 0
    d = two_level(z, 1e-9)
    surf = tracker.follow_1d(d, start=1, grid=z)
    # the upper state on the left is the diabatic line -z, kept across the gap
    assert np.allclose(surf.values, -z, atol=1e-6)


def test_low_overlap_flagged():
    a = hermitian_eigs(np.diag([0.0, 1.0]).astype(complex))
    b = hermitian_eigs(np.array([[0.5, 0.5], [0.5, 0.5]], complex) + np.diag([0.0, 1e-3]))
    surf = tracker.follow_1d([a, b], start=0, floor=0.9)
    assert surf.flagged.tolist() == [False, True]


def test_folded_view():
    s = tracker.AdiabaticSurface((np.arange(3),), np.array([0.2, 1.2, -0.9]),
                                 np.ones(3), np.zeros(3, int))
    assert np.allclose(s.folded(1.0), [0.2, 0.2, 0.1])


def test_track_line_sigma_plus_oracle():
    w = TWO_PI * 1.5e5
    drive = fields.RFDrive.of([fields.RabiTone(w, 9.274e4, "sigma+")])
    prob = FloquetProblem(drive, IP, TruncationOrder(5))
    x = np.linspace(0, 30e-6, 400)
    surf = tracker.track_line(prob, x, np.zeros_like(x))
    _, em = fields.dressed_energies_sigma_plus(prob.larmor(x, 0 * x), w, 9.274e4)
    d = (surf.values - em - w / 2 + w / 2) % w - w / 2
    assert np.max(np.abs(d) / np.abs(em)) < 1e-8


def test_track_line_centre_outward_symmetric():
    drive = fields.RFDrive.of([fields.RabiTone(TWO_PI * 1.5e5, 9.274e4)])
    prob = FloquetProblem(drive, IP, TruncationOrder(4))
    x = np.linspace(-20e-6, 20e-6, 201)
    surf = tracker.track_line(prob, x, np.zeros_like(x))
    assert surf.diagnostics["centre_index"] == 100
    assert np.allclose(surf.values, surf.values[::-1], atol=1e-9)


def test_stitch_small_sheet_symmetric():
    drive = fields.RFDrive.of([fields.RFComponent(TWO_PI * 1.5e5, b_pi=4e-6)])
    prob = FloquetProblem(drive, IP, TruncationOrder(4))
    xs = np.linspace(-15e-6, 15e-6, 21)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sheet = tracker.stitch_2d(prob, xs, xs)
    V = sheet.values
    assert np.allclose(V, V.T, atol=1e-6)
    assert np.allclose(V, V[::-1, ::-1], atol=1e-6)
    assert sheet.diagnostics["min_overlap"] > 0.5


def test_ladder_offsets():
    off = tracker.ladder_offsets([1.0, 2.5], 1)
    assert 0.0 not in off
    assert np.allclose(sorted(off), sorted({a + 2.5 * b for a in (-1, 0, 1) for b in (-1, 0, 1)}
                                           - {0.0}))


def test_gap_profile_skips_own_ladder_copies():
    w = 10.0
    tracked = np.array([0.0, 0.1, 0.2])
    # copies of the tracked state at +-w, a genuine partner at 0.5 - z
    spectra = np.stack([tracked - w, tracked, tracked + w, 0.5 - tracked], axis=1)
    surf = tracker.AdiabaticSurface((np.arange(3),), tracked, np.ones(3), np.ones(3, int))
    g = tracker.gap_profile(spectra, surf, modes=(w,), reach=2)
    assert np.allclose(g, [0.5, 0.3, 0.1])
    raw = tracker.gap_profile(spectra, surf)
    assert np.allclose(raw, [0.5, 0.3, 0.1])
    signed = tracker.gap_profile(spectra, surf, modes=(w,), reach=2, signed=True)
    assert np.allclose(signed, [0.5, 0.3, 0.1])


def test_avoided_crossings_minima_and_followed():
    z = np.linspace(-3, 3, 601)
    gaps = np.hypot(z - 1, 0.05) * np.hypot(z + 1, 0.2)
    found = tracker.avoided_crossings(gaps, z)
    assert [round(c.position, 1) for c in found] == [-1.0, 1.0]
    signed = np.where(z < 1, 1.0, -1.0) * gaps
    fl = tracker.avoided_crossings(gaps, z, signed=signed)
    assert [c.followed for c in fl] == [True, False]


def test_avoided_crossings_ignore_ripple():
    z = np.linspace(0, 1, 500)
    gaps = 1.0 + 1e-5 * np.sin(200 * z) + (z - 0.5) ** 2
    assert len(tracker.avoided_crossings(gaps, z)) == 1
