"""Named model and reaction presets.

Model presets are full run configurations (merge user config on top).
``anderson`` runs with beta = 0, where the diffusion-limit guarantee does
not apply; loading it raises the corresponding advisory.
"""

from __future__ import annotations

import copy

MODEL_PRESETS: dict[str, dict] = {
    # single site, linear drift, square-root noise
    "feller": {
        "model": {"alpha": 1.0, "beta": 1.0, "k": 1, "ell": 1, "n": 100},
        "kernel": [[0.0]],
        "rho0": [1.0],
        "run": {"horizon": 1.0, "sample_dt": 0.01, "replicas": 1, "seed": 0,
                "max_events": 100_000_000},
        "sde": {"dt": 0.001},
    },
    # quadratic drift with square-root noise, two coupled sites
    "quadratic": {
        "model": {"alpha": 1.0, "beta": 1.0, "k": 2, "ell": 1, "n": 100},
        "kernel": [[0.0, 1.0], [1.0, 0.0]],
        "rho0": [1.0, 0.5],
        "run": {"horizon": 1.0, "sample_dt": 0.01, "replicas": 1, "seed": 0,
                "max_events": 100_000_000},
        "sde": {"dt": 0.001},
    },
    # drift and noise both quadratic
    "critical": {
        "model": {"alpha": 1.0, "beta": 1.0, "k": 2, "ell": 2, "n": 100},
        "kernel": [[0.0, 1.0], [1.0, 0.0]],
        "rho0": [1.0, 1.0],
        "run": {"horizon": 1.0, "sample_dt": 0.01, "replicas": 1, "seed": 0,
                "max_events": 100_000_000},
        "sde": {"dt": 0.001},
    },
    # zero net drift, branching-style noise; flagged (no limit guarantee)
    "anderson": {
        "model": {"alpha": 1.0, "beta": 0.0, "k": 1, "ell": 2, "n": 100},
        "kernel": [[0.0, 1.0], [1.0, 0.0]],
        "rho0": [1.0, 1.0],
        "run": {"horizon": 1.0, "sample_dt": 0.01, "replicas": 1, "seed": 0,
                "max_events": 100_000_000},
        "sde": {"dt": 0.001},
    },
}

# (f_plus coefficients, f_minus coefficients), index = power of the density
REACTION_PRESETS: dict[str, tuple[list[float], list[float]]] = {
    "pure_death": ([0.0], [0.0, 1.0]),                     # k = ell = 1
    "quadratic_decay": ([0.0, 0.5], [0.0, 0.5, 1.0]),      # k = 2, ell = 1
    "cubic_decay": ([0.0, 0.0, 1.0], [0.0, 0.0, 1.0, 1.0]),  # k = 3, ell = 2
}


def model_preset(name: str) -> dict:
    if name not in MODEL_PRESETS:
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(sorted(MODEL_PRESETS))}"
        )
    return copy.deepcopy(MODEL_PRESETS[name])


def reaction_preset(name: str) -> tuple[list[float], list[float]]:
    if name not in REACTION_PRESETS:
        raise KeyError(
            f"unknown reaction preset {name!r}; available: "
            f"{', '.join(sorted(REACTION_PRESETS))}"
        )
    fp, fm = REACTION_PRESETS[name]
    return list(fp), list(fm)
