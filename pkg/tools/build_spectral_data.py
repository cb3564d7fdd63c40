"""Regenerate the CSV tables under src/rawild/data/.

ColorChecker reflectances (BabelColor average) and the CIE D65 SPD are
copied from the colour-science package at their tabulated 10 nm samples; no
interpolation is involved. The camera table is a synthetic 28-camera
surrogate built from a seeded lobe model, because no network route to the
measured camera database exists in the build environment. Drop a measured
table in the same CSV layout into RAWILD_SPECTRAL_DIR to replace it.

Usage:  PYTHONPATH=<dir with colour> python tools/build_spectral_data.py
"""

from pathlib import Path

import numpy as np

WAVELENGTHS = np.arange(400, 721, 10)
OUT = Path(__file__).resolve().parents[1] / "src" / "rawild" / "data"


def _gauss(mu, sigma):
    return np.exp(-0.5 * ((WAVELENGTHS - mu) / sigma) ** 2)


def _logistic_cut(edge, width):
    return 1.0 / (1.0 + np.exp((WAVELENGTHS - edge) / width))


def surrogate_camera(rng):
    cut = _logistic_cut(rng.uniform(640, 675), rng.uniform(6, 12))
    r = (_gauss(rng.uniform(590, 615), rng.uniform(20, 34))
         + rng.uniform(0.02, 0.12) * _gauss(rng.uniform(430, 455), 18.0)) * cut
    g = (_gauss(rng.uniform(515, 545), rng.uniform(30, 45))
         + rng.uniform(0.0, 0.08) * _gauss(620.0, 25.0)) * cut
    b = (_gauss(rng.uniform(440, 470), rng.uniform(22, 36))
         + rng.uniform(0.0, 0.06) * _gauss(rng.uniform(580, 620), 30.0)) * cut
    curves = np.stack([r, g, b], axis=1)
    return curves / curves.max(axis=0)


def main():
    import colour

    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20130101)
    with open(OUT / "camera_sensitivities.csv", "w") as fh:
        fh.write("wavelength,R,G,B\n")
        for i in range(28):
            curves = surrogate_camera(rng)
            fh.write(f"# camera: surrogate-{i:02d}\n")
            for wl, row in zip(WAVELENGTHS, curves):
                fh.write(f"{wl},{row[0]:.10f},{row[1]:.10f},{row[2]:.10f}\n")

    checker = colour.SDS_COLOURCHECKERS["BabelColor Average"]
    names = list(checker.keys())
    with open(OUT / "colorchecker_reflectance.csv", "w") as fh:
        fh.write("wavelength," + ",".join(n.replace(",", " ") for n in names) + "\n")
        for wl in WAVELENGTHS:
            vals = [checker[n][float(wl)] for n in names]
            fh.write(f"{wl}," + ",".join(f"{v:.6f}" for v in vals) + "\n")

    d65 = colour.SDS_ILLUMINANTS["D65"]
    with open(OUT / "d65.csv", "w") as fh:
        fh.write("wavelength,power\n")
        for wl in WAVELENGTHS:
            fh.write(f"{wl},{d65[float(wl)]:.6f}\n")


if __name__ == "__main__":
    main()
