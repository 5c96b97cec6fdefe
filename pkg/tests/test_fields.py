import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfdressed import fields
from rfdressed.fields import (CONSTANTS, IoffePritchard, LinearField, RabiTone, RFComponent,
                              RFDrive, SpinSystem)

IP = IoffePritchard(1.0, 1e-6)


def test_ip_modulus_at_centre_is_offset():
    assert fields.static_modulus(IP, 0.0) == 1e-6
    assert fields.static_modulus(IP, 1e-6) == pytest.approx(math.sqrt(2) * 1e-6)


def test_linear_field_signed():
    lf = LinearField(2.0)
    assert fields.static_modulus(lf, -1e-6) == pytest.approx(-2e-6)


def test_larmor_scale():
    # mu_B * 1 uT / hbar
    assert fields.larmor(IP, 0.0) == pytest.approx(CONSTANTS.mu_B * 1e-6 / CONSTANTS.hbar)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        IoffePritchard(0.0, 1e-6)
    with pytest.raises(ValueError):
        SpinSystem(m_F=1.5)
    with pytest.raises(ValueError):
        RFComponent(1e5)
    with pytest.raises(ValueError):
        RabiTone(1e5, 1.0, "circular")
    with pytest.raises(ValueError):
        RFDrive((RabiTone(2e5, 1.0), RabiTone(1e5, 1.0)))


def test_drive_sorted_by_frequency():
    d = RFDrive.of([RabiTone(2e5, 1.0), RabiTone(1e5, 1.0)])
    assert list(d.omegas) == [1e5, 2e5]


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e-4, 1e-4), st.floats(-1e-4, 1e-4))
def test_rotation_orthogonal_and_aligned(x, y):
    R = fields.rotation_matrix(IP, x, y)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
    b = fields.static_vector(IP, x, y)
    rb = R @ b
    assert np.allclose(rb[:2] / np.linalg.norm(b), 0.0, atol=1e-12)
    assert rb[2] > 0


def test_rotation_degenerate_axis():
    with pytest.raises(fields.DegeneratePointError):
        fields.rotation_matrix(IP, 0.0, 0.0, strict=True)
    R = fields.rotation_matrix(IP, 0.0, 0.0)
    assert np.allclose(R @ fields.static_vector(IP, 0.0, 0.0), [0, 0, 1e-6])


def test_spherical_round_trip():
    tone = RFComponent(1e6, alpha=3e-6, theta=0.7, b_pi=1e-6)
    bp, bm, bz = fields.spherical_components(tone)
    assert np.allclose(fields.cartesian_from_spherical(bp, bm, bz), tone.vector, atol=1e-18)


def test_rabi_of_transverse_field():
    # a field along local x gives coupling mu_B g B / (4 hbar)
    c = fields.rabi_frequency(np.array([2e-6, 0.0, 0.0]))
    assert c == pytest.approx(CONSTANTS.mu_over_hbar * 2e-6 / 4)


def test_b_pi_tone_is_transverse_off_axis():
    tone = RFComponent(2 * math.pi * 3e5, b_pi=8e-6)
    drive = RFDrive.of([tone])
    # on the axis the axial RF is parallel to the static field: no coupling
    assert fields.rabi_magnitudes(drive, [0.0], [0.0], IP)[0, 0] == pytest.approx(0.0, abs=1e-9)
    # far out the static field is nearly radial and the axial RF fully transverse
    far = fields.rabi_magnitudes(drive, [1.0], [0.0], IP)[0, 0]
    assert far == pytest.approx(CONSTANTS.mu_over_hbar * 8e-6 / 2, rel=1e-6)


def test_rabi_tone_couplings():
    drive = RFDrive.of([RabiTone(1e6, 2e4, "sigma+"), RabiTone(2e6, 3e4, "linear")])
    co, counter = fields.tone_couplings(drive, [0.0, 1e-6], None, IP)
    assert np.allclose(co, [[1e4, 1.5e4]] * 2)
    assert np.allclose(counter, [[0.0, 1.5e4]] * 2)


def test_parallel_warning():
    drive = RFDrive.of([RFComponent(1e3, b_pi=1e-3)])
    with pytest.warns(fields.ParallelComponentWarning):
        fields.tone_couplings(drive, [0.0], [0.0], IP)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fields.tone_couplings(drive, [0.0], [0.0], IP, warn=False)


def test_sigma_plus_energies_symmetric():
    ep, em = fields.dressed_energies_sigma_plus([1.0, 3.0], 2.0, 4.0)
    assert np.allclose(ep, -em)
    assert np.allclose(ep, 0.5 * np.sqrt(np.array([1.0, 1.0]) + 16.0))
