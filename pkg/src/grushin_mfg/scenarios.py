"""Named regression problems, as flat config maps.

lqr        h = 1, f = 0, g = |x|^2/2: u = |x|^2 / (2 (1 + T - t)).
hopf_lax   h = 1, f = 0, smooth bounded g: u is the Hopf-Lax inf-convolution.
sine       h = sin, decoupled cosine running cost and Gaussian terminal cost.
benchmark  the sine problem with F coupled through c_F = 0.2.
decoupled  the benchmark with c_F = c_G = 0.
"""

from __future__ import annotations

import numpy as np

from grushin_mfg.config import Config, from_mapping

_LQR = {
    "h.kind": "constant",
    "h.param": 1.0,
    "G.potential": "quadratic:1,0,0",
    "m0.center": [0.0, 0.0],
    "m0.radius": 0.5,
    "T": 1.0,
    "A_max": 4.0,
    "box.x1_min": -5.0,
    "box.x1_max": 5.0,
    "box.x2_min": -5.0,
    "box.x2_max": 5.0,
    "grid.n1": 201,
    "grid.n2": 201,
    "time.n_steps": 200,
    "controls.n_radial": 8,
    "controls.n_angular": 32,
}

_HOPF_LAX = {
    **_LQR,
    "G.potential": "cosine:0.5,1,1.5",
    "T": 0.5,
    "A_max": 2.5,
    "box.x1_min": -3.0,
    "box.x1_max": 3.0,
    "box.x2_min": -3.0,
    "box.x2_max": 3.0,
    "grid.n1": 121,
    "grid.n2": 121,
    "time.n_steps": 60,
}

_SINE = {
    "h.kind": "sine",
    "h.param": 1.0,
    "F.potential": "cosine:0.2,1,1",
    "F.strength": 0.0,
    "F.mollifier_radius": 1.0,
    "G.potential": "gaussian:-0.8,-0.5,0.8,0.8",
    "G.strength": 0.0,
    "G.mollifier_radius": 1.0,
    "m0.center": [0.5, 0.0],
    "m0.radius": 0.6,
    "T": 1.0,
    "A_max": 3.0,
    "box.x1_min": -4.2,
    "box.x1_max": 4.2,
    "box.x2_min": -4.2,
    "box.x2_max": 4.2,
    "grid.n1": 85,
    "grid.n2": 85,
    "time.n_steps": 40,
}

SCENARIOS = {
    "lqr": _LQR,
    "hopf_lax": _HOPF_LAX,
    "sine": _SINE,
    "benchmark": {**_SINE, "F.strength": 0.2},
    "decoupled": _SINE,
}


def scenario_values(name: str, **overrides) -> dict:
    """Flat key map of a named scenario; ``__`` in override names stands for '.'."""
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    vals = dict(SCENARIOS[name])
    for k, v in overrides.items():
        vals[k.replace("__", ".")] = v
    return vals


def scenario(name: str, **overrides) -> Config:
    return from_mapping(scenario_values(name, **overrides))


def resolution(name: str, n: int, n_steps: int | None = None, **overrides) -> Config:
    """Scenario on an n x n grid with n_steps (default n - 1) time steps."""
    return scenario(
        name, grid__n1=n, grid__n2=n, time__n_steps=n - 1 if n_steps is None else n_steps, **overrides
    )


def lqr_value(x1, x2, t, T: float = 1.0):
    return 0.5 * (np.asarray(x1) ** 2 + np.asarray(x2) ** 2) / (1.0 + T - t)


def lqr_costate(x, t, T: float = 1.0):
    return -np.asarray(x, dtype=np.float64) / (1.0 + T - t)


def lqr_flow(x, s, T: float = 1.0):
    """Optimal state from x at time 0, at time s."""
    return np.asarray(x, dtype=np.float64) * (1.0 + T - s) / (1.0 + T)
