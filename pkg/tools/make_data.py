"""Regenerate the bundled spectrum and mass-attenuation tables.

Needs ``xraydb`` (Elam/Ravel/Sieber tables, consistent with NIST XCOM in
the diagnostic range) and ``spekpy``. Neither is a runtime dependency.

    python tools/make_data.py
"""

from pathlib import Path

import numpy as np
import spekpy
import xraydb

DATA = Path(__file__).resolve().parents[1] / "src" / "densimar" / "data"

# mass fractions; 304 stainless per ASTM A240 nominal composition
MATERIALS = {
    "water": {"H": 2 * 1.008 / 18.015, "O": 15.999 / 18.015},
    "titanium": {"Ti": 1.0},
    "chromium": {"Cr": 1.0},
    "steel": {"Fe": 0.695, "Cr": 0.19, "Ni": 0.095, "Mn": 0.02},
    "gold": {"Au": 1.0},
}
EDGES = {"gold": [80.725]}


def mac_curve(fractions, energies_kev):
    mu = np.zeros_like(energies_kev)
    for element, w in fractions.items():
        mu += w * xraydb.mu_elam(element, energies_kev * 1e3)
    return mu


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(header)
        for e, v in rows:
            fh.write(f"{e:.4f},{v:.6e}\n")


def main():
    energies = np.arange(10.0, 151.0, 1.0)
    for name, fractions in MATERIALS.items():
        e = energies
        for edge in EDGES.get(name, []):
            e = np.sort(np.concatenate([e, [edge - 1e-3, edge + 1e-3]]))
        mac = mac_curve(fractions, e)
        write_csv(DATA / "mac" / f"{name}.csv",
                  f"# {name} mass attenuation coefficient (total, with coherent)\n"
                  "# source: xraydb mu_elam, mixture rule over mass fractions\n"
                  "# energy_keV,mac_cm2_per_g\n",
                  zip(e, mac))

    for kvp in (120, 80):
        s = spekpy.Spek(kvp=kvp, th=12, dk=1.0)
        s.filter("Al", 2.5)
        k, fluence = s.get_spectrum()
        keep = k >= 20.0
        write_csv(DATA / "spectra" / f"tungsten_{kvp}kvp.csv",
                  f"# tungsten anode {kvp} kVp, 12 deg anode, 2.5 mm Al filtration\n"
                  "# source: spekpy; 1 keV bins (bin centres), counts per keV at 1 m\n"
                  "# energy_keV,photons\n",
                  zip(k[keep], fluence[keep]))


if __name__ == "__main__":
    main()
