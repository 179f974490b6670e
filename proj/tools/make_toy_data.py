"""Generate the bundled toy price file: three assets on business days with two crash episodes."""

import argparse

import numpy as np
import pandas as pd

CRASHES = [
    ("2020-02-20", "2020-03-23", -0.012, 2.5),
    ("2025-04-01", "2025-04-10", -0.020, 2.5),
]


def make_prices(seed: int = 2024) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    dates = pd.bdate_range("2019-01-02", "2025-07-31")
    n = len(dates)
    factor_drift = np.full(n, 0.0004)
    vol_scale = np.ones(n)
    for start, end, drift, scale in CRASHES:
        mask = (dates >= start) & (dates <= end)
        factor_drift[mask] = drift
        vol_scale[mask] = scale
    factor = factor_drift + 0.008 * vol_scale * rng.standard_normal(n)
    betas = np.array([1.2, 0.8, 0.5])
    alphas = np.array([0.0002, 0.0001, 0.0])
    idio = np.array([0.012, 0.009, 0.006])
    log_ret = alphas + factor[:, None] * betas + idio * vol_scale[:, None] * rng.standard_normal((n, 3))
    log_ret[0] = 0.0
    closes = np.array([80.0, 120.0, 50.0]) * np.exp(np.cumsum(log_ret, axis=0))
    frame = pd.DataFrame(closes.round(4), index=dates.strftime("%Y-%m-%d"), columns=["AAA", "BBB", "CCC"])
    frame.index.name = "date"
    return frame


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/toy_prices.csv")
    parser.add_argument("--seed", type=int, default=2024)
    args = parser.parse_args()
    make_prices(args.seed).to_csv(args.out)


if __name__ == "__main__":
    main()
