"""Regenerate the bundled 48-node synthetic state features.

The file mimics a state-level census extract: 15 standardised indicators
(eight demographic, seven economic) driven by a few regional factors, plus
raw population and median-income columns used for arrival weights.

    python3 scripts/make_synthetic_states.py src/sarpricing/data/synthetic_states.csv
"""

import sys

import numpy as np

DEMOGRAPHIC = [
    "age_5_17_pct", "age_18_64_pct", "age_65_plus_pct", "urban_pct",
    "foreign_born_pct", "bachelors_pct", "household_size", "pop_density_log",
]
ECONOMIC = [
    "median_income_log", "unemployment_pct", "poverty_pct", "homeownership_pct",
    "manufacturing_pct", "gdp_per_capita_log", "median_rent_log",
]
SEED = 20_080_101


def generate(seed: int = SEED):
    rng = np.random.default_rng(seed)
    L, regions = 48, 5
    region = np.repeat(np.arange(regions), [10, 10, 10, 9, 9])
    centres = rng.normal(0.0, 1.0, (regions, 3))
    factors = centres[region] + 0.45 * rng.normal(size=(L, 3))
    load_d = rng.normal(0.0, 1.0, (3, len(DEMOGRAPHIC)))
    load_e = rng.normal(0.0, 1.0, (3, len(ECONOMIC)))
    demo = factors @ load_d + 0.35 * rng.normal(size=(L, len(DEMOGRAPHIC)))
    econ = factors @ load_e + 0.35 * rng.normal(size=(L, len(ECONOMIC)))
    X = np.hstack([demo, econ])
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    population = np.round(np.exp(rng.normal(15.0, 1.0, L)))
    income = np.round(55_000 * np.exp(0.15 * X[:, len(DEMOGRAPHIC)]), -1)
    ids = [f"S{i + 1:02d}" for i in range(L)]
    return ids, X, population, income


def main(path: str) -> None:
    ids, X, pop, inc = generate()
    header = ["segment"] + DEMOGRAPHIC + ECONOMIC + ["population", "median_income"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i, sid in enumerate(ids):
            cells = [sid] + [f"{v:.6f}" for v in X[i]] + [f"{pop[i]:.0f}", f"{inc[i]:.0f}"]
            fh.write(",".join(cells) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "synthetic_states.csv")
