"""Regenerate the shipped spectral tables under src/unobs/data/.

Pulls CIE illuminants A, D65, F6 and the Nikon 5100 (NPL) camera
sensitivities from colour-science, resampled to 400-700 nm at 10 nm.
colour-science is only needed to run this script:

    pip install colour-science
    python tools/fetch_cie_tables.py
"""
from pathlib import Path

import colour
import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "unobs" / "data"
GRID = np.arange(400, 701, 10)

ILLUMINANTS = {"A": "cie_a.csv", "D65": "cie_d65.csv", "FL6": "cie_f6.csv"}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, fname in ILLUMINANTS.items():
        sd = colour.SDS_ILLUMINANTS[name]
        with open(OUT / fname, "w") as fh:
            fh.write("wavelength,power\n")
            for w in GRID:
                fh.write(f"{w},{float(sd[w]):.6f}\n")
    cam = colour.MSDS_CAMERA_SENSITIVITIES["Nikon 5100 (NPL)"]
    vals = cam[GRID]
    with open(OUT / "ssf_nikon5100.csv", "w") as fh:
        fh.write("wavelength,r,g,b\n")
        for w, (r, g, b) in zip(GRID, vals):
            # the tabulation carries a few -0.0 entries
            r, g, b = (max(float(v), 0.0) for v in (r, g, b))
            fh.write(f"{w},{r:.6f},{g:.6f},{b:.6f}\n")


if __name__ == "__main__":
    main()
