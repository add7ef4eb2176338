"""Temperature-tuned degenerate pair source in periodically poled lithium niobate.

Models collinear type-0 downconversion of a 775 nm pump in a 5% MgO-doped
congruent LiNbO3 crystal with poling period Lambda.  The quasi-phase-matching
mismatch along the crystal axis is

    delta_k(lambda_s, T) = k_p - k_s - k_i - 2 pi / Lambda        [1/um]

with k = 2 pi n_e(lambda, T) / lambda and the idler wavelength fixed by
energy conservation 1/lambda_p = 1/lambda_s + 1/lambda_i.  The emission
amplitude over a crystal of length L is the usual sinc profile

    Phi(lambda_s, T) = sinc(delta_k L / 2),

real-valued by construction, and the joint spectral density is |Phi|^2.

Temperature behaves as an optical parametric oscillator knob: below a
threshold temperature the collinear mismatch is negative everywhere and the
source emits degenerate pairs on a cone whose opening angle compensates the
mismatch; above threshold the collinear mismatch crosses zero at two
energy-conjugate wavelengths and the spectrum splits into distinct signal
and idler lobes that walk apart as the crystal heats further.

The extraordinary refractive index uses the temperature-dependent Sellmeier
fit of Gayer, Sacks, Galun and Arie, Appl. Phys. B 91, 343 (2008), for 5%
MgO-doped congruent LiNbO3:

    n_e^2 = a1 + b1 f + (a2 + b2 f) / (lam^2 - (a3 + b3 f)^2)
                 + (a4 + b4 f) / (lam^2 - a5^2) - a6 lam^2,
    f = (T - 24.5)(T + 570.82),   lam in um, T in deg C.

Units at the API boundary are nanometres for wavelengths, micrometres for
the poling period, millimetres for the crystal length and degrees Celsius
for temperature; wavevectors are 1/um.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from qalign.errors import NumericsError

__all__ = [
    "CrystalConfig",
    "PhaseMatchPoint",
    "SpectralSummary",
    "BiphotonWavefunction",
    "SweepRow",
    "refractive_index",
    "delta_k_collinear",
    "phase_matching_amplitude",
    "solve_phase_match",
    "signal_grid",
    "spectral_summary",
    "biphoton_wavefunction",
    "temperature_sweep",
    "sweep_to_csv",
    "wavefunction_to_csv",
    "SWEEP_CSV_HEADER",
    "WAVEFUNCTION_CSV_HEADER",
]

# =====================================================================
# Sellmeier fit: Gayer et al. 2008, n_e of 5% MgO-doped congruent LiNbO3
# =====================================================================

SELLMEIER_A = (5.756, 0.0983, 0.2020, 189.32, 12.52, 1.32e-2)
SELLMEIER_B = (2.860e-6, 4.700e-8, 6.113e-8, 1.516e-4)

# Validity window of the fit (nm).  The fit was established for
# 0.5-4 um; stay inside it rather than extrapolate.
WAVELENGTH_MIN_NM = 500.0
WAVELENGTH_MAX_NM = 4000.0
TEMPERATURE_MIN_C = -20.0
TEMPERATURE_MAX_C = 200.0

# Signal grid convention: spans the degenerate wavelength +/- this much.
GRID_SPAN_NM = 150.0
DEFAULT_GRID_POINTS = 2048

# Reference sweep over which brightness is normalized (deg C).
REFERENCE_SWEEP_C = np.arange(10.0, 80.0 + 0.5, 1.0)

# Floor applied to |delta_k| before taking log10 in CSV output, so a
# residual of exactly zero at a phase-matched root stays finite.
_LOG_DK_FLOOR = 1e-16


def refractive_index(wavelength_nm, temperature_c):
    """Extraordinary refractive index n_e(lambda, T) of 5% MgO:CLN.

    Parameters
    ----------
    wavelength_nm : float or ndarray
        Vacuum wavelength in nm.  Must lie in [500, 4000] nm.
    temperature_c : float
        Crystal temperature in deg C.

    Returns
    -------
    float or ndarray
        Refractive index, same shape as `wavelength_nm`.

    Raises
    ------
    ValueError
        If the wavelength or temperature leaves the fit's validity
        domain (this includes non-positive wavelengths).
    """
    lam_nm = np.asarray(wavelength_nm, dtype=float)
    if not np.all(np.isfinite(lam_nm)):
        raise ValueError("wavelength must be finite")
    if np.any(lam_nm < WAVELENGTH_MIN_NM) or np.any(lam_nm > WAVELENGTH_MAX_NM):
        raise ValueError(
            f"wavelength outside Sellmeier validity window "
            f"[{WAVELENGTH_MIN_NM:g}, {WAVELENGTH_MAX_NM:g}] nm"
        )
    if not (TEMPERATURE_MIN_C <= temperature_c <= TEMPERATURE_MAX_C):
        raise ValueError(
            f"temperature {temperature_c!r} outside "
            f"[{TEMPERATURE_MIN_C:g}, {TEMPERATURE_MAX_C:g}] C"
        )

    a1, a2, a3, a4, a5, a6 = SELLMEIER_A
    b1, b2, b3, b4 = SELLMEIER_B
    f = (temperature_c - 24.5) * (temperature_c + 570.82)
    lam = lam_nm * 1e-3  # um
    lam2 = lam * lam
    n2 = (
        a1
        + b1 * f
        + (a2 + b2 * f) / (lam2 - (a3 + b3 * f) ** 2)
        + (a4 + b4 * f) / (lam2 - a5**2)
        - a6 * lam2
    )
    n = np.sqrt(n2)
    if lam_nm.ndim == 0:
        return float(n)
    return n


# =====================================================================
# Crystal configuration and phase matching
# =====================================================================


@dataclass(frozen=True)
class CrystalConfig:
    """Geometry and drive of the poled crystal.

    Attributes
    ----------
    poling_period_um : float
        Poling period Lambda in um.
    crystal_length_mm : float
        Interaction length L in mm.
    pump_wavelength_nm : float
        Pump vacuum wavelength in nm.
    temperature_c : float
        Crystal temperature in deg C.
    pump_power_rel : float
        Relative pump power scale (dimensionless, 1.0 = nominal).
        Scales brightness linearly; has no effect on spectral shape.
    """

    poling_period_um: float = 19.388
    crystal_length_mm: float = 10.0
    pump_wavelength_nm: float = 775.0
    temperature_c: float = 25.0
    pump_power_rel: float = 1.0

    def __post_init__(self):
        if self.poling_period_um <= 0:
            raise ValueError("poling_period_um must be positive")
        if self.crystal_length_mm <= 0:
            raise ValueError("crystal_length_mm must be positive")
        if not (WAVELENGTH_MIN_NM <= self.pump_wavelength_nm <= WAVELENGTH_MAX_NM):
            raise ValueError("pump_wavelength_nm outside Sellmeier validity window")
        if not (TEMPERATURE_MIN_C <= self.temperature_c <= TEMPERATURE_MAX_C):
            raise ValueError("temperature_c outside model validity window")
        if self.pump_power_rel < 0:
            raise ValueError("pump_power_rel must be non-negative")

    @property
    def degenerate_wavelength_nm(self) -> float:
        return 2.0 * self.pump_wavelength_nm

    @property
    def crystal_length_um(self) -> float:
        return self.crystal_length_mm * 1e3


@dataclass(frozen=True)
class PhaseMatchPoint:
    """Phase-matched emission pair at one temperature.

    `delta_k_inv_um` is the residual collinear mismatch at the reported
    signal wavelength: ~0 above the degeneracy threshold (a true root),
    negative below it (where the opening angle compensates), positive far
    above threshold once both roots have left the computation grid.
    """

    temperature_c: float
    signal_nm: float
    idler_nm: float
    opening_angle_rad: float
    delta_k_inv_um: float


def idler_wavelength_nm(pump_nm: float, signal_nm: float) -> float:
    """Energy-conjugate idler wavelength, 1/l_p = 1/l_s + 1/l_i."""
    inv = 1.0 / pump_nm - 1.0 / signal_nm
    if inv <= 0:
        raise ValueError("signal wavelength must exceed the pump wavelength")
    return 1.0 / inv


def delta_k_collinear(config: CrystalConfig, signal_nm) -> "np.ndarray | float":
    """Collinear quasi-phase-matching mismatch delta_k (1/um).

    delta_k = k_p - k_s - k_i - 2 pi / Lambda, evaluated with the idler
    wavelength fixed by energy conservation.  Vectorized over
    `signal_nm`.
    """
    lam_s = np.asarray(signal_nm, dtype=float)
    lam_p = config.pump_wavelength_nm
    lam_i = 1.0 / (1.0 / lam_p - 1.0 / lam_s)
    t = config.temperature_c
    # k in 1/um, wavelengths converted from nm.
    k_p = 2e3 * math.pi * refractive_index(lam_p, t) / lam_p
    k_s = 2e3 * np.pi * refractive_index(lam_s, t) / lam_s
    k_i = 2e3 * np.pi * refractive_index(lam_i, t) / lam_i
    dk = k_p - k_s - k_i - 2.0 * math.pi / config.poling_period_um
    if lam_s.ndim == 0:
        return float(dk)
    return dk


def phase_matching_amplitude(delta_k_inv_um, length_mm: float):
    """Real emission amplitude sinc(delta_k L / 2) for mismatch delta_k.

    Uses the normalized numpy sinc, so the argument is divided by pi:
    sinc(x) = sin(x)/x with x = delta_k * L / 2.
    """
    dk = np.asarray(delta_k_inv_um, dtype=float)
    length_um = length_mm * 1e3
    return np.sinc(dk * length_um / (2.0 * math.pi))


def signal_grid(config: CrystalConfig, grid_points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """Uniform signal wavelength grid, degenerate wavelength +/- 150 nm."""
    center = config.degenerate_wavelength_nm
    return np.linspace(center - GRID_SPAN_NM, center + GRID_SPAN_NM, grid_points)


def _wavevector_sum_inv_um(config: CrystalConfig, signal_nm: float) -> float:
    """k_s + k_i at the given signal wavelength (1/um)."""
    lam_i = idler_wavelength_nm(config.pump_wavelength_nm, signal_nm)
    t = config.temperature_c
    k_s = 2e3 * math.pi * refractive_index(signal_nm, t) / signal_nm
    k_i = 2e3 * math.pi * refractive_index(lam_i, t) / lam_i
    return k_s + k_i


def solve_phase_match(
    config: CrystalConfig, grid_points: int = DEFAULT_GRID_POINTS
) -> PhaseMatchPoint:
    """Solve for the phase-matched signal/idler pair at the configured T.

    Above the degeneracy threshold the collinear mismatch crosses zero on
    the signal grid; the root and its energy conjugate are reported with
    opening angle 0.  Below threshold the mismatch is negative everywhere;
    the least-mismatched (degenerate) wavelength is reported together with
    the cone opening angle that closes the longitudinal gap:

        delta_k + (k_s + k_i) (1 - cos theta) = 0.

    Far above threshold both zero crossings leave the +/-150 nm grid; the
    grid point of least positive mismatch is reported with angle 0 and the
    residual mismatch carried in `delta_k_inv_um`.

    Raises
    ------
    NumericsError
        If the mismatch evaluates to non-finite values on the grid.
    """
    lam = signal_grid(config, grid_points)
    dk = delta_k_collinear(config, lam)
    if not np.all(np.isfinite(dk)):
        raise NumericsError("delta_k is non-finite on the signal grid")

    sign = np.sign(dk)
    crossings = np.nonzero(sign[:-1] * sign[1:] < 0)[0]

    if crossings.size > 0:
        # Above threshold: bracket the first zero crossing and refine.
        i = int(crossings[0])
        f = lambda x: delta_k_collinear(config, x)
        try:
            root = brentq(f, lam[i], lam[i + 1], xtol=1e-10, rtol=1e-14)
        except ValueError as exc:  # pragma: no cover - bracket guaranteed
            raise NumericsError(f"root bracketing failed: {exc}") from exc
        residual = float(delta_k_collinear(config, root))
        partner = idler_wavelength_nm(config.pump_wavelength_nm, root)
        signal, idler = sorted((float(root), float(partner)))
        return PhaseMatchPoint(
            temperature_c=config.temperature_c,
            signal_nm=signal,
            idler_nm=idler,
            opening_angle_rad=0.0,
            delta_k_inv_um=residual,
        )

    # No sign change on the grid: all-negative (below threshold) or
    # all-positive (far above threshold).  Find the least-mismatched
    # wavelength, refined off-grid for smooth temperature sweeps.
    i = int(np.argmin(np.abs(dk)))
    lo = lam[max(i - 1, 0)]
    hi = lam[min(i + 1, len(lam) - 1)]
    if lo < hi:
        res = minimize_scalar(
            lambda x: abs(delta_k_collinear(config, x)),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-9},
        )
        best_lam = float(res.x)
    else:  # pragma: no cover - degenerate one-point grid
        best_lam = float(lam[i])
    best_dk = float(delta_k_collinear(config, best_lam))

    partner = idler_wavelength_nm(config.pump_wavelength_nm, best_lam)
    signal, idler = sorted((float(best_lam), float(partner)))

    if best_dk < 0:
        ksum = _wavevector_sum_inv_um(config, best_lam)
        cos_theta = 1.0 + best_dk / ksum
        if not (-1.0 <= cos_theta <= 1.0):
            raise NumericsError("opening angle solve left its domain")
        angle = math.acos(cos_theta)
    else:
        angle = 0.0

    return PhaseMatchPoint(
        temperature_c=config.temperature_c,
        signal_nm=signal,
        idler_nm=idler,
        opening_angle_rad=angle,
        delta_k_inv_um=best_dk,
    )


# =====================================================================
# Joint spectrum, summary statistics, brightness
# =====================================================================


@dataclass(frozen=True)
class SpectralSummary:
    """Moments of the signal-side joint spectral density at one temperature.

    brightness_rel is the grid sum of |Phi|^2 times the grid spacing,
    normalized to its maximum over the reference temperature sweep
    (10..80 C) for the same crystal geometry, then scaled by
    pump_power_rel.  Values are therefore in [0, 1] at nominal pump power.
    """

    temperature_c: float
    mean_nm: float
    mode_nm: float
    std_nm: float
    fwhm_nm: float
    brightness_rel: float


@dataclass(frozen=True)
class BiphotonWavefunction:
    """Normalized joint amplitude on the signal grid.

    The amplitude is real by construction (a sinc of a real mismatch);
    the imaginary part is stored anyway so serialization keeps an
    explicit re/im pair.  Normalization: sum(|psi|^2) * d_lambda = 1.
    """

    temperature_c: float
    signal_nm: np.ndarray
    amplitude_real: np.ndarray
    amplitude_imag: np.ndarray


def _raw_brightness(config: CrystalConfig, grid_points: int) -> float:
    """Unnormalized brightness: sum of |Phi|^2 times grid spacing."""
    lam = signal_grid(config, grid_points)
    dk = delta_k_collinear(config, lam)
    phi = phase_matching_amplitude(dk, config.crystal_length_mm)
    dlam = lam[1] - lam[0]
    return float(np.sum(phi * phi) * dlam)


_REFERENCE_PEAK_CACHE: dict = {}


def _reference_peak_brightness(config: CrystalConfig, grid_points: int) -> float:
    """Peak raw brightness over the reference sweep, cached per geometry."""
    key = (
        config.poling_period_um,
        config.crystal_length_mm,
        config.pump_wavelength_nm,
        grid_points,
    )
    peak = _REFERENCE_PEAK_CACHE.get(key)
    if peak is None:
        best = 0.0
        for t in REFERENCE_SWEEP_C:
            ref = CrystalConfig(
                poling_period_um=config.poling_period_um,
                crystal_length_mm=config.crystal_length_mm,
                pump_wavelength_nm=config.pump_wavelength_nm,
                temperature_c=float(t),
                pump_power_rel=1.0,
            )
            best = max(best, _raw_brightness(ref, grid_points))
        if best <= 0:
            raise NumericsError("reference sweep produced zero brightness")
        peak = best
        _REFERENCE_PEAK_CACHE[key] = peak
    return peak


def spectral_summary(
    config: CrystalConfig, grid_points: int = DEFAULT_GRID_POINTS
) -> SpectralSummary:
    """Summarize the signal-side spectral density at the configured T.

    Mean and standard deviation are taken over the normalized density,
    the mode is the grid argmax, and the FWHM spans the outermost
    half-maximum crossings (linearly interpolated).  Above threshold the
    density has two lobes and the FWHM covers both; this is intentional,
    it tracks the signal/idler separation.
    """
    lam = signal_grid(config, grid_points)
    dk = delta_k_collinear(config, lam)
    phi = phase_matching_amplitude(dk, config.crystal_length_mm)
    dens = phi * phi
    if not np.all(np.isfinite(dens)):
        raise NumericsError("spectral density is non-finite")
    dlam = lam[1] - lam[0]
    raw = float(np.sum(dens) * dlam)
    if raw <= 0.0:
        return SpectralSummary(
            temperature_c=config.temperature_c,
            mean_nm=float("nan"),
            mode_nm=float("nan"),
            std_nm=float("nan"),
            fwhm_nm=float("nan"),
            brightness_rel=0.0,
        )

    w = dens / np.sum(dens)
    mean = float(np.sum(w * lam))
    var = float(np.sum(w * (lam - mean) ** 2))
    mode = float(lam[int(np.argmax(dens))])

    half = float(dens.max()) / 2.0
    above = dens >= half
    idx = np.nonzero(above)[0]
    i0, i1 = int(idx[0]), int(idx[-1])
    if i0 > 0:
        x0, x1 = lam[i0 - 1], lam[i0]
        y0, y1 = dens[i0 - 1], dens[i0]
        left = x0 + (half - y0) * (x1 - x0) / (y1 - y0)
    else:
        left = float(lam[0])
    if i1 < len(lam) - 1:
        x0, x1 = lam[i1], lam[i1 + 1]
        y0, y1 = dens[i1], dens[i1 + 1]
        right = x0 + (half - y0) * (x1 - x0) / (y1 - y0)
    else:
        right = float(lam[-1])

    peak = _reference_peak_brightness(config, grid_points)
    brightness = config.pump_power_rel * raw / peak

    return SpectralSummary(
        temperature_c=config.temperature_c,
        mean_nm=mean,
        mode_nm=mode,
        std_nm=math.sqrt(max(var, 0.0)),
        fwhm_nm=float(right - left),
        brightness_rel=brightness,
    )


def biphoton_wavefunction(
    config: CrystalConfig, grid_points: int = DEFAULT_GRID_POINTS
) -> BiphotonWavefunction:
    """Normalized real biphoton amplitude on the signal grid."""
    lam = signal_grid(config, grid_points)
    dk = delta_k_collinear(config, lam)
    phi = phase_matching_amplitude(dk, config.crystal_length_mm)
    dlam = lam[1] - lam[0]
    norm2 = float(np.sum(phi * phi) * dlam)
    if norm2 <= 0 or not math.isfinite(norm2):
        raise NumericsError("cannot normalize a zero or non-finite amplitude")
    psi = phi / math.sqrt(norm2)
    return BiphotonWavefunction(
        temperature_c=config.temperature_c,
        signal_nm=lam,
        amplitude_real=psi,
        amplitude_imag=np.zeros_like(psi),
    )


# =====================================================================
# Temperature sweeps and CSV serialization
# =====================================================================


@dataclass(frozen=True)
class SweepRow:
    """One temperature point of a sweep; `error` is set instead of data
    when that temperature failed to evaluate."""

    temperature_c: float
    point: Optional[PhaseMatchPoint]
    summary: Optional[SpectralSummary]
    error: Optional[str] = None


def temperature_sweep(
    config: CrystalConfig,
    t_min_c: float = 10.0,
    t_max_c: float = 80.0,
    steps: int = 141,
    grid_points: int = DEFAULT_GRID_POINTS,
) -> list[SweepRow]:
    """Sweep crystal temperature, solving phase matching and spectral
    summaries at each point.  Per-temperature failures are recorded in
    the row's `error` field; they do not abort the sweep."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    rows: list[SweepRow] = []
    for t in np.linspace(t_min_c, t_max_c, steps):
        try:
            cfg = CrystalConfig(
                poling_period_um=config.poling_period_um,
                crystal_length_mm=config.crystal_length_mm,
                pump_wavelength_nm=config.pump_wavelength_nm,
                temperature_c=float(t),
                pump_power_rel=config.pump_power_rel,
            )
            point = solve_phase_match(cfg, grid_points)
            summary = spectral_summary(cfg, grid_points)
            rows.append(SweepRow(float(t), point, summary))
        except (NumericsError, ValueError) as exc:
            rows.append(SweepRow(float(t), None, None, error=str(exc)))
    return rows


SWEEP_CSV_HEADER = (
    "temperature_C,signal_nm,idler_nm,opening_angle_rad,log10_abs_dk,"
    "mean_nm,mode_nm,std_nm,fwhm_nm,brightness_rel"
)

WAVEFUNCTION_CSV_HEADER = "lambda_nm,re_psi,im_psi"


def _fmt(x: float) -> str:
    return repr(float(x))


def sweep_to_csv(rows: Sequence[SweepRow], path) -> None:
    """Write a temperature sweep as CSV, one row per temperature.

    Failed rows serialize as NaN columns.  log10_abs_dk floors |dk| at
    1e-16 so exact roots stay finite.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_HEADER.split(","))
        for row in rows:
            if row.error is not None or row.point is None or row.summary is None:
                writer.writerow([_fmt(row.temperature_c)] + ["nan"] * 9)
                continue
            p, s = row.point, row.summary
            log_dk = math.log10(max(abs(p.delta_k_inv_um), _LOG_DK_FLOOR))
            writer.writerow(
                [
                    _fmt(row.temperature_c),
                    _fmt(p.signal_nm),
                    _fmt(p.idler_nm),
                    _fmt(p.opening_angle_rad),
                    _fmt(log_dk),
                    _fmt(s.mean_nm),
                    _fmt(s.mode_nm),
                    _fmt(s.std_nm),
                    _fmt(s.fwhm_nm),
                    _fmt(s.brightness_rel),
                ]
            )


def wavefunction_to_csv(wf: BiphotonWavefunction, path) -> None:
    """Write a biphoton amplitude as CSV: lambda_nm, re_psi, im_psi."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(WAVEFUNCTION_CSV_HEADER.split(","))
        for lam, re, im in zip(wf.signal_nm, wf.amplitude_real, wf.amplitude_imag):
            writer.writerow([_fmt(lam), _fmt(re), _fmt(im)])
