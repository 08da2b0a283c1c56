"""TOML problem configs: parsing, validation, canonical form and hashing.

A config is a TOML file whose keys flatten to dotted names, e.g.

    T = 1.0
    A_max = 3.0
    h.kind = "sine"
    m0.center = [0.5, 0.0]
    box.x1_min = -4.2

Tables (``[h]``) and dotted keys are interchangeable. The canonical form lists
every key, defaults filled in, one ``key = value`` line per key in sorted
order; its SHA-256 is the config hash.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from grushin_mfg.domain import Box
from grushin_mfg.errors import ConfigError
from grushin_mfg.hjb import check_step_size
from grushin_mfg.model import (
    Coupling,
    DegeneracyProfile,
    InitialDensity,
    Potential,
    ProblemSpec,
    SolverSettings,
)

REQUIRED = (
    "A_max",
    "T",
    "box.x1_max",
    "box.x1_min",
    "box.x2_max",
    "box.x2_min",
    "grid.n1",
    "grid.n2",
    "h.kind",
    "m0.center",
    "m0.radius",
    "time.n_steps",
)

DEFAULTS: dict[str, Any] = {
    "h.param": 1.0,
    "F.potential": "zero",
    "F.strength": 0.0,
    "F.mollifier_radius": 1.0,
    "G.potential": "zero",
    "G.strength": 0.0,
    "G.mollifier_radius": 1.0,
    "seed": 0,
    "controls.n_radial": 8,
    "controls.n_angular": 32,
    "controls.refine": True,
    "particles.n": 400,
}

KNOWN = frozenset(REQUIRED) | frozenset(DEFAULTS)


@dataclass(frozen=True)
class Config:
    """A validated config: the flat key map and the problem it describes."""

    values: dict[str, Any]
    spec: ProblemSpec

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def canonical(self) -> str:
        return canonical_text(self.values)

    @property
    def hash(self) -> str:
        return config_hash(self.values)

    def with_overrides(self, **kv) -> Config:
        """Same config with some dotted keys replaced (use ``__`` for dots)."""
        vals = dict(self.values)
        for k, v in kv.items():
            vals[k.replace("__", ".")] = v
        return from_mapping(vals)


def flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ConfigError(f"non-finite value {v!r}")
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"unsupported value {v!r}")


def canonical_text(values: dict[str, Any]) -> str:
    return "".join(f"{k} = {_toml_value(values[k])}\n" for k in sorted(values))


def config_hash(values: dict[str, Any]) -> str:
    return hashlib.sha256(canonical_text(values).encode()).hexdigest()


# ---------------------------------------------------------------------------
# typed access with the key in every message


def _num(vals, key, *, positive=False, integer=False, minimum=None):
    v = vals[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    if integer:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(f"{key}: expected an integer, got {v!r}")
        v = int(v)
    else:
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(f"{key}: must be finite")
    if positive and v <= 0:
        raise ConfigError(f"{key}: must be > 0, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}, got {v!r}")
    return v


def _point(vals, key):
    v = vals[key]
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{key}: expected a pair [x1, x2], got {v!r}")
    try:
        p = tuple(float(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected numbers, got {v!r}") from None
    if not all(math.isfinite(x) for x in p):
        raise ConfigError(f"{key}: must be finite")
    return p


def _build(key, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ConfigError, ValueError, TypeError) as exc:
        msg = str(exc)
        if msg.startswith(f"{key}:") or (isinstance(exc, ConfigError) and ":" in msg.split(" ")[0]):
            raise ConfigError(msg) from None
        raise ConfigError(f"{key}: {msg}") from None


def _coupling(vals, name) -> Coupling:
    text = vals[f"{name}.potential"]
    if not isinstance(text, str):
        raise ConfigError(f"{name}.potential: expected a string such as 'quadratic:1,0,0'")
    pot = _build(f"{name}.potential", Potential.parse, text)
    strength = _num(vals, f"{name}.strength", minimum=0.0)
    eps = _num(vals, f"{name}.mollifier_radius", positive=True)
    return _build(name, Coupling, pot, strength, eps)


def from_mapping(raw: dict[str, Any]) -> Config:
    """Validate a (nested or flat) key map and build the problem."""
    vals = flatten(raw)
    unknown = sorted(set(vals) - KNOWN)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    for key in REQUIRED:
        if key not in vals:
            raise ConfigError(f"{key}: missing key")
    for key, d in DEFAULTS.items():
        vals.setdefault(key, d)

    kind = vals["h.kind"]
    if not isinstance(kind, str):
        raise ConfigError(f"h.kind: expected a string, got {kind!r}")
    if kind == "custom":
        raise ConfigError("h.kind: custom profiles cannot be given in a config file")
    h = _build("h.kind", DegeneracyProfile, kind, _num(vals, "h.param"))
    if not h.has_disconnected_zeros():
        raise ConfigError("h.param: zero set of h must be totally disconnected")
    F = _coupling(vals, "F")
    G = _coupling(vals, "G")
    m0 = _build("m0.radius", InitialDensity, _point(vals, "m0.center"), _num(vals, "m0.radius", positive=True))
    box = _build(
        "box",
        Box,
        _num(vals, "box.x1_min"),
        _num(vals, "box.x1_max"),
        _num(vals, "box.x2_min"),
        _num(vals, "box.x2_max"),
    )
    settings = SolverSettings(
        n1=_num(vals, "grid.n1", integer=True, minimum=5),
        n2=_num(vals, "grid.n2", integer=True, minimum=5),
        n_steps=_num(vals, "time.n_steps", integer=True, minimum=1),
        n_radial=_num(vals, "controls.n_radial", integer=True, minimum=1),
        n_angular=_num(vals, "controls.n_angular", integer=True, minimum=4),
        refine_controls=_flag(vals, "controls.refine"),
        n_particles=_num(vals, "particles.n", integer=True, minimum=1),
        seed=_num(vals, "seed", integer=True, minimum=0),
    )
    T = _num(vals, "T", positive=True)
    A_max = _num(vals, "A_max", positive=True)
    spec = _build("box", ProblemSpec, h, F, G, m0, T, box, A_max, settings)
    _build("time.n_steps", check_step_size, spec, spec.grid, spec.time_grid.dt)
    bound = spec.control_bound()
    if A_max < 2 * bound:
        warnings.warn(
            f"A_max = {A_max:g} is below twice the a-priori control bound {bound:.3g}; "
            "optimal controls may be clipped",
            stacklevel=2,
        )
    # store normalised values so that the canonical text is type-stable
    norm = dict(vals)
    for key in ("T", "A_max", "h.param", "m0.radius", "F.strength", "G.strength",
                "F.mollifier_radius", "G.mollifier_radius",
                "box.x1_min", "box.x1_max", "box.x2_min", "box.x2_max"):
        norm[key] = float(vals[key])
    for key in ("grid.n1", "grid.n2", "time.n_steps", "controls.n_radial", "controls.n_angular",
                "particles.n", "seed"):
        norm[key] = int(vals[key])
    norm["m0.center"] = [float(c) for c in vals["m0.center"]]
    norm["F.potential"] = str(F.potential)
    norm["G.potential"] = str(G.potential)
    return Config(norm, spec)


def _flag(vals, key) -> bool:
    v = vals[key]
    if not isinstance(v, bool):
        raise ConfigError(f"{key}: expected true or false, got {v!r}")
    return v


def parse_config(path: str | Path) -> Config:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_mapping(raw)


def parse_text(text: str) -> Config:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(exc)) from None
    return from_mapping(raw)
