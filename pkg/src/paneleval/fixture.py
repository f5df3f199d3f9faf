"""The bundled synthetic fixture: a small dual-pilot panel with raw inputs.

``build_fixture`` regenerates the files shipped under ``data/fixture``; a
test checks that the two agree byte for byte.
"""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .dgp import DgpConfig, MediatorSpec, generate
from .did import write_schedules
from .panel import write_csv

SEED = 42
CONTROLS = ["GDP_per", "industrial_structure", "Internet", "RD_capital"]


def fixture_dgp() -> DgpConfig:
    return DgpConfig(
        n_entities=60, n_years=10, start_year=2011, noise_sd=0.5,
        treatment="selection", selection_intercept=-0.5, selection_coefs=(1.0, 0.5),
        n_controls=2, control_gamma=(0.5, 0.3),
        mediator=MediatorSpec(phi=0.8, delta=0.6, theta=1.0, noise_sd=0.5, name="mediator"),
        groups={"EAST": (0.3, 1.0), "MIDDLE": (0.3, 1.0), "WEST": (0.2, 1.0), "NOR_EAST": (0.2, 1.0)},
        n_indicators=4, raw_sources=True, seed=SEED,
    )


def fixture_config() -> dict:
    indicators = [{"name": f"ind{j}", "direction": "positive"} for j in range(1, 5)]
    return {
        "panel": {"path": "panel.csv"},
        "schedules": {"path": "schedule.csv", "policies": ["Innovation", "Smart"]},
        "groups": {"path": "groups.csv", "column": "group"},
        "preprocess": {
            "fill_missing": ["ind2"],
            "fill_order": "raw_first",
            "variables": [
                {"name": "GDP_per", "source": "gdp_per_capita", "transform": "log", "role": "control"},
                {"name": "Internet", "source": "internet_users", "transform": "share",
                 "denominator": "population", "role": "control"},
                {"name": "RD_capital", "source": "rd_capital", "transform": "log", "role": "control"},
            ],
            "industrial_structure": {"name": "industrial_structure",
                                     "shares": ["ind_primary", "ind_secondary", "ind_tertiary"]},
            "mediators": {"build": ["vcpe", "talents", "technology"]},
        },
        "indices": [
            {"name": "DEI", "method": "entropy", "scale": 100, "indicators": indicators},
            {"name": "DEI_pca", "method": "pca", "scale": 100, "indicators": indicators},
        ],
        "outcome": "DEI",
        "controls": CONTROLS,
        "analyses": ["baseline", "trim", "alt_index", "heterogeneity", "event_study",
                     "psm_did", "placebo", "mediation"],
        "event_study": {"pre": 2, "post": 6, "reference": "Before_0"},
        "psm": {"covariates": CONTROLS, "modes": ["period", "pooled"], "k": 1,
                "with_replacement": True, "scale": "probability"},
        "trim": {"drop_years": [2011, 2012]},
        "placebo": {"replications": 200, "year_rule": "uniform"},
        "mediation": {"mediators": ["vcpe", "talents", "technology"], "alpha": 0.1},
        "alt_index": {"outcome": "DEI_pca"},
        "seed": SEED,
        "se": "cluster",
    }


def build_fixture(out) -> list:
    """Write panel.csv, schedule.csv, groups.csv and config.json into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data, dual, truth = generate(fixture_dgp())
    # knock out a sparse, deterministic set of indicator cells to exercise interpolation
    ind2 = np.array(data["ind2"])
    flat = ind2.reshape(-1)
    flat[::23] = np.nan
    data = data.with_variable("ind2", ind2, mask=np.isnan(ind2))
    cols = [v for v in data.variables if v not in ("group", "y", "mediator")]
    write_csv(data, out / "panel.csv", columns=cols)
    write_schedules(dual, out / "schedule.csv")
    with open(out / "groups.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity", "group"])
        for e in data.entities:
            w.writerow([e, truth["groups"]["labels"][e]])
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(fixture_config(), fh, indent=2)
        fh.write("\n")
    return ["config.json", "groups.csv", "panel.csv", "schedule.csv"]


def fixture_dir() -> Path:
    """Location of the installed fixture files."""
    return Path(str(resources.files("paneleval") / "data" / "fixture"))
