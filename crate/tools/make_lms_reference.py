"""Generate the bundled synthetic BMI-for-age LMS reference.

The output follows the CDC bmiagerev.csv row convention (sex, agemos 24 and
24.5..240.5) but the L, M, S curves are smooth synthetic approximations of
the published shape, not the CDC values. Replace the asset with the real CDC
table for any substantive use; the loader reads both.
"""

import sys

import numpy as np
from scipy.interpolate import PchipInterpolator

AGES = np.array([2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20.1])

CURVES = {
    "male": {
        "M": [16.58, 16.02, 15.70, 15.47, 15.38, 15.50, 15.78, 16.14, 16.60, 17.17,
              17.78, 18.46, 19.16, 19.82, 20.48, 21.10, 21.67, 22.20, 22.65],
        "L": [-2.01, -2.18, -2.35, -2.55, -2.72, -2.85, -2.92, -2.90, -2.80, -2.62,
              -2.42, -2.22, -2.04, -1.90, -1.80, -1.74, -1.72, -1.75, -1.80],
        "S": [0.0806, 0.0790, 0.0810, 0.0870, 0.0950, 0.1050, 0.1160, 0.1270, 0.1360, 0.1430,
              0.1470, 0.1480, 0.1470, 0.1450, 0.1420, 0.1390, 0.1370, 0.1360, 0.1350],
    },
    "female": {
        "M": [16.42, 15.84, 15.42, 15.20, 15.20, 15.40, 15.80, 16.30, 16.90, 17.50,
              18.05, 18.70, 19.35, 19.90, 20.40, 20.85, 21.25, 21.55, 21.72],
        "L": [-0.99, -1.35, -1.70, -1.98, -2.18, -2.30, -2.35, -2.32, -2.24, -2.14,
              -2.06, -2.00, -1.98, -1.99, -2.02, -2.06, -2.10, -2.14, -2.18],
        "S": [0.0855, 0.0870, 0.0910, 0.0990, 0.1090, 0.1200, 0.1310, 0.1400, 0.1470, 0.1510,
              0.1530, 0.1530, 0.1520, 0.1510, 0.1500, 0.1490, 0.1480, 0.1475, 0.1470],
    },
}


def main(path):
    agemos = np.concatenate([[24.0], np.arange(24.5, 241.0, 1.0)])
    years = agemos / 12.0
    lines = ["sex,agemos,L,M,S"]
    for sex in ("male", "female"):
        params = {
            key: PchipInterpolator(AGES, np.array(vals))(years)
            for key, vals in CURVES[sex].items()
        }
        for i, age in enumerate(agemos):
            lines.append(
                f"{sex},{age:.1f},{params['L'][i]:.8f},{params['M'][i]:.8f},{params['S'][i]:.9f}"
            )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
