"""Crystal physics: refractive index, phase matching, spectra, sweeps."""

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.optimize import brentq

from qalign import spdc
from qalign.spdc import CrystalConfig

# Frozen oracle values: the published Sellmeier fit evaluated directly
# (n^2 = a1 + b1 f + ... with f = (T - 24.5)(T + 570.82)), arbitrary
# precision checked once and pinned.
N_E_1550_25 = 2.130703032091356
N_E_775_25 = 2.170674550641382
N_E_1550_80 = 2.146600118268196

# Degeneracy threshold temperature for the default crystal, frozen from
# a bisection on the collinear mismatch at the degenerate wavelength.
T_DEGENERATE_C = 25.256624550112218


def test_refractive_index_golden_values():
    assert_allclose(spdc.refractive_index(1550.0, 25.0), N_E_1550_25, rtol=0, atol=1e-9)
    assert_allclose(spdc.refractive_index(775.0, 25.0), N_E_775_25, rtol=0, atol=1e-9)
    assert_allclose(spdc.refractive_index(1550.0, 80.0), N_E_1550_80, rtol=0, atol=1e-9)


def test_refractive_index_vectorized():
    lam = np.array([775.0, 1550.0])
    n = spdc.refractive_index(lam, 25.0)
    assert n.shape == (2,)
    assert_allclose(n, [N_E_775_25, N_E_1550_25], atol=1e-12)


@pytest.mark.parametrize("bad", [0.0, -5.0, 100.0, 4500.0, float("nan")])
def test_refractive_index_domain(bad):
    with pytest.raises(ValueError):
        spdc.refractive_index(bad, 25.0)


def test_refractive_index_temperature_domain():
    with pytest.raises(ValueError):
        spdc.refractive_index(1550.0, 500.0)


def test_crystal_config_validation():
    with pytest.raises(ValueError):
        CrystalConfig(poling_period_um=-1.0)
    with pytest.raises(ValueError):
        CrystalConfig(crystal_length_mm=0.0)
    with pytest.raises(ValueError):
        CrystalConfig(pump_wavelength_nm=100.0)


def test_degeneracy_threshold_temperature():
    """The collinear mismatch at the degenerate wavelength crosses zero
    at the frozen threshold temperature (independent bisection)."""
    f = lambda t: spdc.delta_k_collinear(CrystalConfig(temperature_c=t), 1550.0)
    t_star = brentq(f, 10.0, 60.0, xtol=1e-10)
    assert_allclose(t_star, T_DEGENERATE_C, atol=1e-6)
    # Well inside the expected window around room temperature.
    assert 10.0 < t_star < 40.0


def test_solver_degenerate_at_threshold():
    point = spdc.solve_phase_match(CrystalConfig(temperature_c=T_DEGENERATE_C))
    assert abs(point.signal_nm - 1550.0) < 2.0
    assert abs(point.idler_nm - 1550.0) < 2.0


def test_below_threshold_opening_angle():
    cfg = CrystalConfig(temperature_c=20.0)
    point = spdc.solve_phase_match(cfg)
    assert point.delta_k_inv_um < 0
    assert point.opening_angle_rad > 0
    # The reported angle closes the longitudinal gap:
    # delta_k + (k_s + k_i)(1 - cos theta) = 0, recomputed directly.
    k_s = 2e3 * math.pi * spdc.refractive_index(point.signal_nm, 20.0) / point.signal_nm
    k_i = 2e3 * math.pi * spdc.refractive_index(point.idler_nm, 20.0) / point.idler_nm
    residual = point.delta_k_inv_um + (k_s + k_i) * (1 - math.cos(point.opening_angle_rad))
    assert abs(residual) < 1e-10


def test_above_threshold_split():
    cfg = CrystalConfig(temperature_c=30.0)
    point = spdc.solve_phase_match(cfg)
    assert point.opening_angle_rad == 0.0
    assert point.signal_nm < 1550.0 < point.idler_nm
    # Energy conservation of the reported pair.
    assert_allclose(
        1.0 / point.signal_nm + 1.0 / point.idler_nm, 1.0 / 775.0, rtol=1e-12
    )
    # Root verified by a direct sign change of the mismatch around it.
    below = spdc.delta_k_collinear(cfg, point.signal_nm - 2.0)
    above = spdc.delta_k_collinear(cfg, point.signal_nm + 2.0)
    assert below * above < 0
    assert abs(point.delta_k_inv_um) < 1e-8


def test_far_above_threshold_residual_carried():
    """Once both zero crossings leave the grid, the least-mismatched
    edge wavelength is reported with its positive residual."""
    point = spdc.solve_phase_match(CrystalConfig(temperature_c=70.0))
    assert point.opening_angle_rad == 0.0
    assert point.delta_k_inv_um > 0


def test_split_monotone_with_temperature():
    signals, idlers = [], []
    for t in np.linspace(26.0, 42.0, 9):
        p = spdc.solve_phase_match(CrystalConfig(temperature_c=float(t)))
        signals.append(p.signal_nm)
        idlers.append(p.idler_nm)
    assert np.all(np.diff(signals) < 0)
    assert np.all(np.diff(idlers) > 0)


def test_delta_k_continuity_in_wavelength():
    cfg = CrystalConfig(temperature_c=30.0)
    lam = np.linspace(1450.0, 1650.0, 4001)
    dk = spdc.delta_k_collinear(cfg, lam)
    assert np.all(np.isfinite(dk))
    assert np.max(np.abs(np.diff(dk))) < 1e-3
    assert dk.min() < 0 < dk.max()


def test_amplitude_values():
    assert spdc.phase_matching_amplitude(0.0, 10.0) == 1.0
    # First sinc zero: delta_k * L / 2 = pi, i.e. delta_k = 2 pi / L.
    dk_zero = 2.0 * math.pi / 1e4
    assert abs(spdc.phase_matching_amplitude(dk_zero, 10.0)) < 1e-12


def test_wavefunction_normalized_and_real():
    wf = spdc.biphoton_wavefunction(CrystalConfig(temperature_c=30.0))
    dlam = wf.signal_nm[1] - wf.signal_nm[0]
    total = np.sum(wf.amplitude_real**2 + wf.amplitude_imag**2) * dlam
    assert_allclose(total, 1.0, atol=1e-9)
    assert np.max(np.abs(wf.amplitude_imag)) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=10.0, max_value=80.0))
def test_wavefunction_normalization_property(temperature):
    wf = spdc.biphoton_wavefunction(
        CrystalConfig(temperature_c=temperature), grid_points=512
    )
    dlam = wf.signal_nm[1] - wf.signal_nm[0]
    total = np.sum(wf.amplitude_real**2) * dlam
    assert abs(total - 1.0) < 1e-9


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=10.0, max_value=80.0))
def test_mode_inside_support_property(temperature):
    cfg = CrystalConfig(temperature_c=temperature)
    summary = spdc.spectral_summary(cfg, grid_points=512)
    grid = spdc.signal_grid(cfg, 512)
    assert grid[0] <= summary.mode_nm <= grid[-1]
    assert summary.std_nm >= 0
    assert summary.fwhm_nm >= 0


def test_brightness_bounded_and_normalized():
    rows = spdc.temperature_sweep(CrystalConfig(), 10.0, 80.0, steps=71)
    brightness = np.array([r.summary.brightness_rel for r in rows])
    assert np.all(brightness >= 0)
    assert np.all(brightness <= 1 + 1e-12)
    # The sweep shares its grid with the reference sweep, so the peak
    # normalizes to exactly one.
    assert_allclose(brightness.max(), 1.0, atol=1e-12)


def test_brightness_vanishes_cold():
    """Far below threshold emission is a few percent of peak (frozen)."""
    b_cold = spdc.spectral_summary(CrystalConfig(temperature_c=10.0)).brightness_rel
    assert b_cold < 0.05
    assert_allclose(b_cold, 0.0410, atol=0.002)


def test_pump_power_scales_brightness():
    b1 = spdc.spectral_summary(CrystalConfig(temperature_c=30.0)).brightness_rel
    b2 = spdc.spectral_summary(
        CrystalConfig(temperature_c=30.0, pump_power_rel=2.0)
    ).brightness_rel
    assert_allclose(b2, 2.0 * b1, rtol=1e-12)


def test_summary_grid_stability():
    cfg = CrystalConfig(temperature_c=30.0)
    coarse = spdc.spectral_summary(cfg, grid_points=2048)
    fine = spdc.spectral_summary(cfg, grid_points=4096)
    assert abs(fine.mean_nm - coarse.mean_nm) / fine.mean_nm < 1e-3
    assert abs(fine.fwhm_nm - coarse.fwhm_nm) / fine.fwhm_nm < 1e-3


def test_sweep_flags_errors_per_row():
    """Temperatures outside the model's validity are flagged in their
    rows without aborting the sweep."""
    rows = spdc.temperature_sweep(CrystalConfig(), -40.0, 20.0, steps=7)
    flagged = [r for r in rows if r.error is not None]
    clean = [r for r in rows if r.error is None]
    assert flagged and clean
    for r in flagged:
        assert r.point is None and r.summary is None


def test_sweep_csv_round_trip(tmp_path):
    rows = spdc.temperature_sweep(CrystalConfig(), 20.0, 35.0, steps=4)
    path = tmp_path / "sweep.csv"
    spdc.sweep_to_csv(rows, path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        assert ",".join(header) == spdc.SWEEP_CSV_HEADER
        body = list(reader)
    assert len(body) == 4
    assert_allclose(float(body[0][0]), 20.0)


def test_wavefunction_csv(tmp_path):
    wf = spdc.biphoton_wavefunction(CrystalConfig(), grid_points=64)
    path = tmp_path / "wf.csv"
    spdc.wavefunction_to_csv(wf, path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        assert ",".join(header) == spdc.WAVEFUNCTION_CSV_HEADER
        assert len(list(reader)) == 64
