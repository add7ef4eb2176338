"""
Temperature scan of the photon-pair source
==========================================

A periodically poled crystal pumped at 775 nm emits photon pairs only
where quasi-phase matching is satisfied.  Sweeping the crystal
temperature walks the matched signal/idler wavelengths through the
telecom band: the pair spectrum is degenerate at 1550 nm near 25 C,
splits into distinct signal/idler branches above, and the source goes
dark below threshold as the phase mismatch grows.

Run:  python3 demos/01_source_temperature_scan.py
"""

import numpy as np

from qalign.spdc import (
    CrystalConfig,
    solve_phase_match,
    spectral_summary,
    temperature_sweep,
)

config = CrystalConfig()  # 19.388 um poling, 10 mm length, 775 nm pump
print(f"crystal: poling {config.poling_period_um} um, "
      f"length {config.crystal_length_mm} mm, pump {config.pump_wavelength_nm} nm")

# Where exactly is the source degenerate?  Among collinear solutions,
# scan for the temperature where the signal/idler split closes (below
# it emission turns non-collinear, so those points are excluded).
ts = np.linspace(20.0, 32.0, 241)
gaps = []
for t in ts:
    point = solve_phase_match(CrystalConfig(temperature_c=float(t)))
    collinear = point.opening_angle_rad == 0.0
    gaps.append(abs(point.signal_nm - point.idler_nm) if collinear else np.inf)
t_star = float(ts[int(np.argmin(gaps))])
print(f"\ndegeneracy temperature: about {t_star:.2f} C "
      f"(signal/idler split {min(gaps):.3f} nm)")

# The coarse sweep tells the full story: matched wavelengths, opening
# angle, and relative brightness at each temperature.
rows = temperature_sweep(config, t_min_c=10.0, t_max_c=80.0, steps=15)
print(f"\n{'T (C)':>6} {'signal (nm)':>12} {'idler (nm)':>11} "
      f"{'angle (rad)':>12} {'brightness':>11}")
for row in rows:
    if row.point is None:
        print(f"{row.temperature_c:6.1f}  (no phase match: {row.error})")
        continue
    s = row.summary
    print(f"{row.temperature_c:6.1f} {row.point.signal_nm:12.2f} "
          f"{row.point.idler_nm:11.2f} {row.point.opening_angle_rad:12.4f} "
          f"{s.brightness_rel:11.4f}")

low = spectral_summary(CrystalConfig(temperature_c=t_star - 15.0))
peak = spectral_summary(CrystalConfig(temperature_c=t_star))
print(f"\nbrightness at {t_star - 15.0:.1f} C is "
      f"{low.brightness_rel / peak.brightness_rel:.1%} of the peak: "
      "below threshold the source is effectively off.")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    dense = temperature_sweep(config, t_min_c=10.0, t_max_c=80.0, steps=141)
    t = [r.temperature_c for r in dense if r.point is not None]
    sig = [r.point.signal_nm for r in dense if r.point is not None]
    idl = [r.point.idler_nm for r in dense if r.point is not None]
    bright = [r.summary.brightness_rel for r in dense if r.point is not None]

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    ax1.plot(t, sig, label="signal")
    ax1.plot(t, idl, label="idler")
    ax1.axhline(1550.0, color="gray", lw=0.5)
    ax1.set_ylabel("matched wavelength (nm)")
    ax1.legend()
    ax2.plot(t, bright)
    ax2.set_xlabel("crystal temperature (C)")
    ax2.set_ylabel("relative brightness")
    fig.tight_layout()
    fig.savefig("temperature_scan.png", dpi=120)
    print("\nwrote temperature_scan.png")
except ImportError:
    print("\n(matplotlib not installed; skipping the plot)")
