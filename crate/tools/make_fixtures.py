"""Author the synthetic fixture corpus used by tests and the example pipeline.

Everything here is synthetic: NHANES-shaped demographics and body measures,
county-level USDA/EPA-shaped indicator rows with a built-in regional gradient,
simple rectangular state boundaries, and the expected ingest counts. The
schema and pipeline config under fixtures/ are written by hand.

Usage: python3 tools/make_fixtures.py <repo-root>
"""

import csv
import json
import math
import os
import sys

import numpy as np
import pandas as pd
from scipy.stats import norm

sys.path.insert(0, os.path.dirname(__file__))
import xport_writer  # noqa: E402

SEED = 20240611

# name, postal code, grid column, grid row, latent vulnerability in [0, 1]
STATES = [
    ("Alabama", "AL", 8, 5, 0.86), ("Alaska", "AK", 0, 7, 0.30), ("Arizona", "AZ", 2, 5, 0.50),
    ("Arkansas", "AR", 6, 4, 0.88), ("California", "CA", 0, 4, 0.42), ("Colorado", "CO", 3, 3, 0.22),
    ("Connecticut", "CT", 11, 2, 0.12), ("Delaware", "DE", 11, 4, 0.25), ("District of Columbia", "DC", 10, 4, 0.30),
    ("Florida", "FL", 9, 6, 0.48), ("Georgia", "GA", 9, 5, 0.62), ("Hawaii", "HI", 1, 7, 0.20),
    ("Idaho", "ID", 1, 2, 0.28), ("Illinois", "IL", 6, 2, 0.35), ("Indiana", "IN", 7, 2, 0.42),
    ("Iowa", "IA", 5, 2, 0.25), ("Kansas", "KS", 4, 4, 0.32), ("Kentucky", "KY", 7, 3, 0.66),
    ("Louisiana", "LA", 6, 6, 0.90), ("Maine", "ME", 12, 0, 0.18), ("Maryland", "MD", 10, 3, 0.20),
    ("Massachusetts", "MA", 11, 1, 0.10), ("Michigan", "MI", 7, 1, 0.40), ("Minnesota", "MN", 5, 1, 0.12),
    ("Mississippi", "MS", 7, 5, 1.00), ("Missouri", "MO", 5, 3, 0.45), ("Montana", "MT", 2, 1, 0.30),
    ("Nebraska", "NE", 4, 3, 0.22), ("Nevada", "NV", 1, 3, 0.40), ("New Hampshire", "NH", 12, 1, 0.05),
    ("New Jersey", "NJ", 10, 2, 0.15), ("New Mexico", "NM", 3, 5, 0.70), ("New York", "NY", 10, 1, 0.30),
    ("North Carolina", "NC", 9, 4, 0.52), ("North Dakota", "ND", 4, 1, 0.15), ("Ohio", "OH", 8, 2, 0.42),
    ("Oklahoma", "OK", 5, 5, 0.74), ("Oregon", "OR", 0, 2, 0.20), ("Pennsylvania", "PA", 9, 2, 0.32),
    ("Rhode Island", "RI", 12, 2, 0.22), ("South Carolina", "SC", 10, 5, 0.64), ("South Dakota", "SD", 4, 2, 0.28),
    ("Tennessee", "TN", 7, 4, 0.62), ("Texas", "TX", 4, 6, 0.60), ("Utah", "UT", 2, 3, 0.10),
    ("Vermont", "VT", 11, 0, 0.08), ("Virginia", "VA", 9, 3, 0.30), ("Washington", "WA", 0, 1, 0.15),
    ("West Virginia", "WV", 8, 3, 0.72), ("Wisconsin", "WI", 6, 1, 0.22), ("Wyoming", "WY", 2, 2, 0.20),
]

RACE_CODES = [1, 2, 3, 4, 6, 7]
RACE_SHARES = [0.17, 0.08, 0.45, 0.14, 0.06, 0.10]
RACE_EFFECT = {1: 0.45, 2: 0.30, 3: 0.0, 4: 0.40, 6: -0.45, 7: 0.10}


def load_lms(path):
    df = pd.read_csv(path)
    return {sex: g.sort_values("agemos") for sex, g in df.groupby("sex")}


def lms_at(lms, sex, agemos):
    g = lms[sex]
    return tuple(np.interp(agemos, g["agemos"], g[c]) for c in ("L", "M", "S"))


def forward_lms(z, l, m, s):
    if abs(l) < 1e-12:
        return m * math.exp(s * z)
    return m * (1.0 + l * s * z) ** (1.0 / l)


def nhanes(root, rng, lms):
    n = 1800
    seqn = np.arange(130000, 130000 + n)
    # mostly children, with adults and infants to exercise the age filter
    age = np.where(rng.random(n) < 0.82, rng.integers(2, 20, n), rng.choice([0, 1, 20, 25, 38, 55, 71], n))
    sex = rng.choice([1, 2], n)
    race = rng.choice(RACE_CODES, n, p=RACE_SHARES)
    race_shift = np.array([0.0 if r == 3 else (-0.9 if r in (1, 4) else -0.4) for r in race])
    income = np.clip(np.round(np.exp(rng.normal(0.75 + race_shift * 0.6, 0.6)), 2), 0.0, 5.0)
    hhsize = np.clip(rng.poisson(3.2, n) + 1, 1, 7)
    educ = np.clip(np.digitize(income + rng.normal(0, 0.8, n), [1.2, 2.8]) + 1, 1, 3)
    born = np.where(rng.random(n) < 0.12, 2, 1)

    # latent body-size z-score with nonlinear structure
    child_age = np.clip(age, 2, 19)
    z = (
        1.15
        + 0.06 * (child_age - 8)
        - 0.045 * (child_age - 8) ** 2 / 4
        - 0.32 * np.minimum(income, 3.5)
        + np.array([RACE_EFFECT[r] for r in race])
        + 0.55 * ((child_age >= 11) & (income < 1.3))
        - 0.12 * (educ - 2)
        + 0.05 * (hhsize - 4)
        + 0.20 * (born == 2) * (child_age < 10)
        + rng.normal(0, 0.95, n)
    )

    height = np.empty(n)
    weight = np.empty(n)
    for i in range(n):
        a = float(age[i])
        sexname = "male" if sex[i] == 1 else "female"
        agemos = math.floor(min(max(a, 2.0), 19.0) * 12) + 0.5
        l, m, s = lms_at(lms, sexname, agemos)
        bmi = forward_lms(float(np.clip(z[i], -3.0, 2.3)), l, m, s)
        h = 86.0 + 6.1 * min(a, 17.0) + rng.normal(0, 5.0) if a >= 2 else 75.0
        height[i] = round(h, 1)
        weight[i] = round(bmi * (height[i] / 100.0) ** 2, 1)

    # missingness, refused / don't know codes
    income_obj = income.astype(object)
    income_obj[rng.random(n) < 0.07] = "."
    educ_obj = educ.astype(object)
    flip = rng.random(n)
    educ_obj[flip < 0.015] = 9
    educ_obj[(flip >= 0.015) & (flip < 0.025)] = 7
    born_obj = born.astype(object)
    born_obj[rng.random(n) < 0.01] = 99

    demo_cols = [
        ("SEQN", "Respondent sequence number", "num", 8),
        ("RIAGENDR", "Gender", "num", 8),
        ("RIDAGEYR", "Age in years at screening", "num", 8),
        ("RIDRETH3", "Race/Hispanic origin w/ NH Asian", "num", 8),
        ("DMDBORN4", "Country of birth", "num", 8),
        ("DMDHHSIZ", "Total number of people in the Household", "num", 8),
        ("DMDHREDZ", "Education level of HH reference person", "num", 8),
        ("INDFMPIR", "Ratio of family income to poverty", "num", 8),
    ]
    demo_rows = [
        [float(seqn[i]), float(sex[i]), float(age[i]), float(race[i]),
         born_obj[i] if isinstance(born_obj[i], str) else float(born_obj[i]),
         float(hhsize[i]),
         educ_obj[i] if isinstance(educ_obj[i], str) else float(educ_obj[i]),
         income_obj[i] if isinstance(income_obj[i], str) else float(income_obj[i])]
        for i in range(n)
    ]
    xport_writer.write_xport(os.path.join(root, "fixtures", "nhanes", "DEMO_SYN.xpt"), "DEMO_SYN", demo_cols, demo_rows)

    # body measures: some participants absent, some with missing weight/height
    bmx_cols = [
        ("SEQN", "Respondent sequence number", "num", 8),
        ("BMXWT", "Weight (kg)", "num", 8),
        ("BMXHT", "Standing Height (cm)", "num", 8),
    ]
    present = rng.random(n) >= 0.03
    wt_missing = rng.random(n) < 0.02
    bmx_rows = []
    for i in range(n):
        if not present[i]:
            continue
        bmx_rows.append([float(seqn[i]), "." if wt_missing[i] else float(weight[i]), float(height[i])])
    xport_writer.write_xport(os.path.join(root, "fixtures", "nhanes", "BMX_SYN.xpt"), "BMX_SYN", bmx_cols, bmx_rows)

    # expected ingest counts, mirroring the documented check order
    counts = {"age_out_of_range": 0, "missing_predictor": 0, "missing_anthropometry": 0}
    kept = 0
    for i in range(n):
        if age[i] < 2 or age[i] > 19:
            counts["age_out_of_range"] += 1
        elif isinstance(income_obj[i], str) or educ_obj[i] in (7, 9) or born_obj[i] == 99:
            counts["missing_predictor"] += 1
        elif not present[i] or wt_missing[i]:
            counts["missing_anthropometry"] += 1
        else:
            kept += 1
    return {"input_rows": n, "kept": kept, "dropped": counts}


def county_tables(root, rng):
    usda, epa = [], []
    for name, _abbr, _c, _r, v in STATES:
        n_counties = int(rng.integers(3, 9))
        for j in range(n_counties):
            cv = float(np.clip(v + rng.normal(0, 0.08), 0, 1.1))
            county = f"{name} County {j + 1}"
            pov = 9.0 + 15.0 * cv + rng.normal(0, 1.2)
            inc = 98000 - 48000 * cv + rng.normal(0, 4000)
            lila = np.clip(0.07 + 0.33 * cv + rng.normal(0, 0.03), 0, 1)
            hunv = np.clip(0.05 + 0.20 * cv + rng.normal(0, 0.03), 0, 1)
            lalowi = np.clip(0.04 + 0.16 * cv + rng.normal(0, 0.02), 0, 1)
            pop = int(rng.integers(8000, 600000))
            row = {
                "State": name, "County": county,
                "Pop2010": pop,
                "PovertyRate": round(pov, 3),
                "MedianFamilyIncome": round(inc, 2),
                "LILATracts_1And10": round(float(lila), 4),
                "HUNVFlag": round(float(hunv), 4),
                "LALOWI1_10": round(float(lalowi), 4),
            }
            if rng.random() < 0.04:
                row["HUNVFlag"] = ""
            usda.append(row)

            days = int(rng.integers(300, 366))
            good = int(np.clip(days * (0.85 - 0.35 * cv + rng.normal(0, 0.05)), 0, days))
            unhealthy = int(np.clip(rng.poisson(1 + 6 * cv), 0, days - good))
            moderate = days - good - unhealthy
            epa.append({
                "State": name, "County": county, "Year": 2023,
                "Days with AQI": days,
                "Good Days": good,
                "Moderate Days": moderate,
                "Unhealthy Days": unhealthy,
                "Max AQI": int(90 + 120 * cv + rng.normal(0, 25)),
                "Median AQI": int(round(28 + 18 * cv + rng.normal(0, 2.5))),
                "Days Ozone": int(np.clip(10 + 120 * cv + rng.normal(0, 20), 0, days)),
                "Days PM2.5": int(np.clip(40 + 100 * cv + rng.normal(0, 25), 0, days)),
            })
    for fname, rows in (("usda_food_access_county.csv", usda), ("epa_annual_aqi_county.csv", epa)):
        with open(os.path.join(root, "fixtures", "macro", fname), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)


def boundaries(root):
    features = []
    for name, abbr, c, r, _v in STATES + [("Puerto Rico", "PR", 11, 7, 0.0)]:
        x0, y0 = -125.0 + 4.5 * c, 49.0 - 4.0 * r
        ring = [[x0, y0], [x0 + 4.5, y0], [x0 + 4.5, y0 - 4.0], [x0, y0 - 4.0], [x0, y0]]
        features.append({
            "type": "Feature",
            "properties": {"NAME": name, "STUSPS": abbr},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    with open(os.path.join(root, "fixtures", "geo", "state_boundaries.geojson"), "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=1)
        fh.write("\n")


def xport_unit_fixtures(root):
    base = os.path.join(root, "crates", "core", "tests", "fixtures", "xport")
    os.makedirs(base, exist_ok=True)
    cols = [("HEIGHT", "Height", "num", 8), ("RATIO", "Ratio", "num", 8)]
    rows = [[1.5, 0.1], [-2.0, 1.0 / 3.0], [123456.789, 1e-70]]
    path = os.path.join(base, "two_by_three.xpt")
    xport_writer.write_xport(path, "TWOBY3", cols, rows)
    decoded = pd.read_sas(path, format="xport")
    reference = {
        "decoder": f"pandas {pd.__version__} read_sas(format='xport')",
        "columns": list(decoded.columns),
        "rows": [[float(v).hex() for v in rec] for rec in decoded.itertuples(index=False)],
    }
    with open(os.path.join(base, "two_by_three.reference.json"), "w") as fh:
        json.dump(reference, fh, indent=2)
        fh.write("\n")

    cols = [("ID", "Id", "num", 8), ("CODE", "Coded value", "num", 8), ("NAME", "Name", "char", 6)]
    rows = [[1.0, ".", "alpha"], [2.0, "A", "beta"], [3.0, "Z", "gam"], [4.0, "_", "delta"], [5.0, 0.0, "eps"]]
    xport_writer.write_xport(os.path.join(base, "sentinels.xpt"), "SENTINEL", cols, rows)


def main(root):
    for sub in ("nhanes", "macro", "geo"):
        os.makedirs(os.path.join(root, "fixtures", sub), exist_ok=True)
    rng = np.random.default_rng(SEED)
    lms = load_lms(os.path.join(root, "assets", "lms_bmi_for_age_synthetic_v1.csv"))
    counts = nhanes(root, rng, lms)
    county_tables(root, rng)
    boundaries(root)
    xport_unit_fixtures(root)
    with open(os.path.join(root, "fixtures", "expected_counts.json"), "w") as fh:
        json.dump(counts, fh, indent=2)
        fh.write("\n")
    print(json.dumps(counts))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else ".")
