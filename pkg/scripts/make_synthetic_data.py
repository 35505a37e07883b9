"""Regenerate the bundled synthetic dataset in src/dlcrem/data/synthetic/.

Twelve actors with yearly actor covariates (cinc, democracy) and dyad
covariates (major_power, alliance, contiguity, trade); events come from a
two-class model that uses every supported statistic.  Times are rounded to
0.01 so that some events share a timestamp.
"""

import csv
import json
from pathlib import Path

import numpy as np

from dlcrem.events import CovariateTable, build_riskset, make_history, write_events
from dlcrem.simulate import GenSpec, generate

OUT = Path(__file__).resolve().parents[1] / "src" / "dlcrem" / "data" / "synthetic"
N_ACTORS = 12
YEARS = np.arange(0, 201, dtype=float)
LABELS = [f"S{k:02d}" for k in range(1, N_ACTORS + 1)]

RATE_STATISTICS = [
    "inertia",
    "reciprocity",
    "rrank_send",
    "rrank_receive",
    "pshift_abby",
    "pshift_abay",
    "itp",
    "otp",
    {"name": "dyad_covariate", "covariate": "major_power"},
    {"name": "dyad_covariate", "covariate": "alliance"},
    {"name": "dyad_covariate", "covariate": "contiguity"},
    {"name": "actor_covariate", "covariate": "cinc", "direction": "send"},
    {"name": "actor_covariate", "covariate": "cinc", "direction": "receive"},
    {"name": "covariate_log_ratio", "covariate": "cinc"},
    {"name": "actor_covariate", "covariate": "democracy", "direction": "send", "standardize": "interval"},
    {"name": "actor_covariate", "covariate": "democracy", "direction": "receive", "standardize": "interval"},
    {"name": "covariate_abs_difference", "covariate": "democracy", "standardize": "interval"},
    {"name": "dyad_covariate", "covariate": "trade", "standardize": "interval"},
]

BETA = {
    "intercept": [-6.0, -3.5],
    "inertia": [0.02, 0.04],
    "reciprocity": [0.03, 0.01],
    "rrank_send": [0.8, 0.3],
    "rrank_receive": [0.4, 0.2],
    "pshift_abby": [0.3, -0.2],
    "pshift_abay": [0.2, 0.4],
    "itp": [0.01, -0.01],
    "otp": [-0.01, 0.01],
    "major_power": [0.8, 0.2],
    "alliance": [0.3, -0.3],
    "contiguity": [1.2, 0.4],
    "cinc_send": [2.0, -1.0],
    "cinc_receive": [1.0, 0.5],
    "log_ratio_cinc": [0.1, 0.05],
    "democracy_send": [-0.2, 0.1],
    "democracy_receive": [-0.1, 0.1],
    "abs_difference_democracy": [0.3, -0.1],
    "trade": [-0.1, 0.1],
}


def covariates(rng):
    cinc = np.abs(rng.normal(0.08, 0.05, N_ACTORS)) + 0.01
    demo = rng.uniform(-1, 1, N_ACTORS)
    major = np.zeros(N_ACTORS, dtype=bool)
    major[:3] = True
    actor, dyad = [], []
    for a in range(N_ACTORS):
        c, d = cinc[a], demo[a]
        for t in YEARS:
            c = max(0.005, c * np.exp(rng.normal(0, 0.03)))
            d = float(np.clip(d + rng.normal(0, 0.05), -1, 1))
            actor += [(a, t, "cinc", c), (a, t, "democracy", d)]
    position = rng.uniform(0, 1, (N_ACTORS, 2))
    rs = build_riskset(N_ACTORS, "full")
    for i, j in rs.dyads:
        dyad.append((i, j, 0.0, "major_power", float(major[i] or major[j])))
        dyad.append((i, j, 0.0, "contiguity", float(np.linalg.norm(position[i] - position[j]) < 0.35)))
        allied = float(rng.random() < 0.2)
        flow = rng.lognormal(0, 1)
        for t in YEARS[::10]:
            if rng.random() < 0.1:
                allied = 1.0 - allied
            flow *= np.exp(rng.normal(0, 0.1))
            dyad += [(i, j, t, "alliance", allied), (i, j, t, "trade", flow)]
    return CovariateTable.from_records(actor, dyad), actor, dyad


def main():
    rng = np.random.default_rng(20240601)
    table, actor, dyad = covariates(rng)
    rs = build_riskset(N_ACTORS, "full")
    # class 2: dyads among the first six actors plus every pair with a major power
    cmap = np.array([int((i < 6 and j < 6) or i < 3 or j < 3) for i, j in rs.dyads])
    spec = GenSpec(N_ACTORS, cmap, BETA, statistics=RATE_STATISTICS, n_events=800, seed=7, covariates=table)
    history, _ = generate(spec)
    times = np.round(history.times, 2)
    burn = float(times[149])
    history = make_history(history.senders, history.receivers, times, actors=LABELS, burn_in_end=burn)
    OUT.mkdir(parents=True, exist_ok=True)
    write_events(history, OUT / "events.csv")
    with open(OUT / "actor_covariates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["actor", "time", "name", "value"])
        w.writerows((LABELS[a], repr(float(t)), n, repr(float(v))) for a, t, n, v in actor)
    with open(OUT / "dyad_covariates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sender", "receiver", "time", "name", "value"])
        w.writerows((LABELS[i], LABELS[j], repr(float(t)), n, repr(float(v))) for i, j, t, n, v in dyad)
    with open(OUT / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dyad", "sender", "receiver", "true_class"])
        w.writerows((d, LABELS[i], LABELS[j], int(cmap[d]) + 1) for d, (i, j) in enumerate(rs.dyads))
    concomitant = [
        {"statistic": {"name": "dyad_covariate", "covariate": "major_power"}, "aggregate": "max"},
        {"statistic": {"name": "dyad_covariate", "covariate": "alliance"}, "aggregate": "max"},
        {"statistic": {"name": "dyad_covariate", "covariate": "contiguity"}, "aggregate": "median"},
        {"statistic": {"name": "actor_covariate", "covariate": "cinc", "direction": "send"}, "aggregate": "median"},
        {"statistic": {"name": "actor_covariate", "covariate": "cinc", "direction": "receive"}, "aggregate": "median"},
        {"statistic": {"name": "covariate_abs_difference", "covariate": "democracy"}, "aggregate": "median"},
    ]
    config = {
        "seed": 1,
        "data": {
            "events": "events.csv",
            "actors": LABELS,
            "burn_in_end": burn,
            "actor_covariates": "actor_covariates.csv",
            "dyad_covariates": "dyad_covariates.csv",
        },
        "statistics": RATE_STATISTICS,
        "concomitant": concomitant,
        "model": {"K": 2, "n_starts": 4},
        "assessment": {"thresholds": [0.95, 0.99]},
        "sweep": {"k_values": [1, 2, 3]},
    }
    (OUT / "config.json").write_text(json.dumps(config, indent=1) + "\n")
    print(f"{history.n_events} events, {history.n_modeled} modeled, span {times[0]:.2f}..{times[-1]:.2f}")


if __name__ == "__main__":
    main()
