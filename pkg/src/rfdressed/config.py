"""JSON run configuration with unit-tagged quantities.

Every physical scalar is written as a string ``"<number> <unit>"``. Values are
converted to SI on load (angular frequencies in rad/s, a ``Hz`` tag multiplies
by 2*pi). Dimensionless settings (orders, point counts, flags) are plain JSON
values. Unknown keys are rejected and the error names the key and its line.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import fields
from .floquet import TruncationOrder

TWO_PI = 2.0 * math.pi

UNITS = {
    "frequency": {"rad/s": 1.0, "krad/s": 1e3, "Mrad/s": 1e6,
                  "Hz": TWO_PI, "kHz": TWO_PI * 1e3, "MHz": TWO_PI * 1e6},
    "field": {"T": 1.0, "mT": 1e-3, "uT": 1e-6, "μT": 1e-6, "nT": 1e-9, "G": 1e-4, "mG": 1e-7},
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "μm": 1e-6, "nm": 1e-9},
    "gradient": {"T/m": 1.0, "G/cm": 1e-2},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "μs": 1e-6, "ns": 1e-9},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0},
    "mass": {"kg": 1.0, "amu": 1.66053906660e-27},
    "interaction": {"J m^2": 1.0},
    "magneton": {"J/T": 1.0},
    "action": {"J s": 1.0},
}
# unit used when echoing resolved values
SI_UNIT = {"frequency": "rad/s", "field": "T", "length": "m", "gradient": "T/m", "time": "s",
           "angle": "rad", "mass": "kg", "interaction": "J m^2", "magneton": "J/T",
           "action": "J s"}

MODELS = ("floquet", "piecewise", "both")
FORMATS = ("csv", "bin")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` and ``line`` locate the offending entry."""

    def __init__(self, message, key: Optional[str] = None, line: Optional[int] = None):
        where = ""
        if key is not None:
            where = f"key '{key}'" + (f" (line {line})" if line else "") + ": "
        super().__init__(where + message)
        self.key = key
        self.line = line


# ---------------------------------------------------------------------------
# schema

class _Choice(tuple):
    pass


def choice(*options):
    return _Choice(options)


_TONE = {"omega": "frequency", "rabi": "frequency", "polarization": choice(*fields.POLARIZATIONS),
         "alpha": "field", "theta": "angle", "b_pi": "field"}
_AXIS = {"start": "length", "stop": "length", "points": int}

SCHEMA = {
    "description": str,
    "constants": {"mu_B": "magneton", "hbar": "action"},
    "spin": {"g_F": float, "m_F": float},
    "static_field": {"type": choice("ioffe_pritchard", "linear"), "G": "gradient", "B_I": "field"},
    "drive": [_TONE],
    "model": choice(*MODELS),
    "truncation": {"p1": int, "p2": int, "auto_raise": bool, "p_max": int, "rel_tol": float},
    "grid": {"x": _AXIS, "y": _AXIS},
    "tracking": {"overlap_floor": float, "branch": choice("+", "-"), "gap_prominence": float},
    "gpe": {
        "mass": "mass", "g2d": "interaction", "beta": float, "healing_points": float,
        "points": int, "half_width": "length", "dt": "time", "duration": "time",
        "winding": int, "initial_drive": [_TONE], "ramp": "time", "snapshots": ["time"],
        "relax_steps": int, "relax_dt": "time", "winding_radii": ["length"],
    },
    "output": {"directory": str, "format": choice(*FORMATS)},
}
REQUIRED = ("static_field", "drive", "grid")

_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s+(\S(?:.*\S)?)\s*$")


def _line_of(text: Optional[str], path) -> Optional[int]:
    """Line of the last string component of ``path`` in the raw JSON text."""
    if not text:
        return None
    pos, found = 0, None
    for comp in path:
        if not isinstance(comp, str):
            continue
        i = text.find(f'"{comp}"', pos)
        if i < 0:
            break
        pos = found = i
    return None if found is None else text.count("\n", 0, found) + 1


class _Checker:
    def __init__(self, text):
        self.text = text

    def fail(self, path, msg):
        key = ".".join(str(p) for p in path) or "<root>"
        raise ConfigError(msg, key=key, line=_line_of(self.text, path))

    def quantity(self, value, dim, path) -> float:
        if isinstance(value, bool) or not isinstance(value, (str, int, float)):
            self.fail(path, f"expected a {dim} quantity string like '1.5 {SI_UNIT[dim]}'")
        if not isinstance(value, str):
            self.fail(path, f"missing unit tag on {value!r} (expected {dim}, e.g. "
                            f"'{value} {SI_UNIT[dim]}')")
        m = _QTY.match(value)
        if not m:
            self.fail(path, f"cannot read {value!r}; write '<number> <unit>'")
        unit = m.group(2)
        table = UNITS[dim]
        if unit not in table:
            self.fail(path, f"unit '{unit}' is not a {dim} unit; allowed: {', '.join(table)}")
        v = float(m.group(1)) * table[unit]
        if not math.isfinite(v):
            self.fail(path, "value is not finite")
        return v

    def check(self, value, spec, path):
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                self.fail(path, "expected an object")
            out = {}
            for k, v in value.items():
                if k not in spec:
                    self.fail(path + [k], f"unknown key; allowed here: {', '.join(spec)}")
                out[k] = self.check(v, spec[k], path + [k])
            return out
        if isinstance(spec, list):
            if not isinstance(value, list):
                self.fail(path, "expected a list")
            return [self.check(v, spec[0], path + [i]) for i, v in enumerate(value)]
        if isinstance(spec, _Choice):
            if value not in spec:
                self.fail(path, f"must be one of {list(spec)}, got {value!r}")
            return value
        if spec is int:
            if isinstance(value, bool) or not isinstance(value, int):
                self.fail(path, f"expected an integer, got {value!r}")
            return value
        if spec is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.fail(path, f"expected a number, got {value!r}")
            return float(value)
        if spec is bool:
            if not isinstance(value, bool):
                self.fail(path, f"expected true/false, got {value!r}")
            return value
        if spec is str:
            if not isinstance(value, str):
                self.fail(path, f"expected a string, got {value!r}")
            return value
        return self.quantity(value, spec, path)


# ---------------------------------------------------------------------------
# resolved configuration


@dataclass(frozen=True)
class AxisSpec:
    start: float
    stop: float
    points: int

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.points)


@dataclass(frozen=True)
class TruncationSpec:
    p1: int = 5
    p2: int = 5
    auto_raise: bool = True
    p_max: int = 10
    rel_tol: float = 1e-8

    @property
    def orders(self) -> TruncationOrder:
        return TruncationOrder(self.p1, self.p2)


@dataclass(frozen=True)
class TrackingSpec:
    overlap_floor: float = 0.5
    branch: str = "+"
    gap_prominence: float = 0.01


@dataclass(frozen=True)
class GPESpec:
    mass: float = 1.443e-25
    g2d: Optional[float] = None
    beta: Optional[float] = None
    healing_points: float = 8.0
    points: int = 256
    half_width: float = 6e-6
    dt: float = 1e-7
    duration: float = 800e-6
    winding: int = 1
    initial_drive: Optional[fields.RFDrive] = None
    ramp: float = 0.0
    snapshots: tuple = ()
    relax_steps: int = 1000
    relax_dt: float = 1e-6
    winding_radii: tuple = ()


@dataclass
class RunConfig:
    """Validated run configuration, all quantities in SI (frequencies in rad/s)."""

    constants: fields.PhysicalConstants
    spin: fields.SpinSystem
    static_field: Any
    drive: fields.RFDrive
    model: str
    truncation: TruncationSpec
    x: AxisSpec
    y: Optional[AxisSpec]
    tracking: TrackingSpec
    gpe: Optional[GPESpec]
    output_directory: str = "out"
    output_format: str = "csv"
    description: str = ""
    source: Optional[str] = None
    resolved: dict = field(default_factory=dict)

    @property
    def is_2d(self) -> bool:
        return self.y is not None

    def with_output(self, directory=None, fmt=None) -> "RunConfig":
        from dataclasses import replace

        cfg = replace(self, output_directory=directory or self.output_directory,
                      output_format=fmt or self.output_format)
        cfg.resolved = resolve_dict(cfg)
        return cfg


def _q(v: float, dim: str) -> str:
    return f"{v:.17g} {SI_UNIT[dim]}"


def _tone_dict(t) -> dict:
    if isinstance(t, fields.RabiTone):
        return {"omega": _q(t.omega, "frequency"), "rabi": _q(t.rabi, "frequency"),
                "polarization": t.polarization}
    return {"omega": _q(t.omega, "frequency"), "alpha": _q(t.alpha, "field"),
            "theta": _q(t.theta, "angle"), "b_pi": _q(t.b_pi, "field")}


def resolve_dict(cfg: RunConfig) -> dict:
    """Canonical JSON form of ``cfg`` with every default written out.

    Feeding this back to :func:`parse_config` reproduces the same run.
    """
    sf = cfg.static_field
    if isinstance(sf, fields.IoffePritchard):
        static = {"type": "ioffe_pritchard", "G": _q(sf.G, "gradient"), "B_I": _q(sf.B_I, "field")}
    else:
        static = {"type": "linear", "G": _q(sf.G, "gradient")}
    axis = (lambda a: {"start": _q(a.start, "length"), "stop": _q(a.stop, "length"),
                       "points": a.points})
    grid = {"x": axis(cfg.x)}
    if cfg.y is not None:
        grid["y"] = axis(cfg.y)
    t = cfg.truncation
    out = {
        "description": cfg.description,
        "constants": {"mu_B": _q(cfg.constants.mu_B, "magneton"),
                      "hbar": _q(cfg.constants.hbar, "action")},
        "spin": {"g_F": cfg.spin.g_F, "m_F": cfg.spin.m_F},
        "static_field": static,
        "drive": [_tone_dict(tone) for tone in cfg.drive],
        "model": cfg.model,
        "truncation": {"p1": t.p1, "p2": t.p2, "auto_raise": t.auto_raise, "p_max": t.p_max,
                       "rel_tol": t.rel_tol},
        "grid": grid,
        "tracking": {"overlap_floor": cfg.tracking.overlap_floor,
                     "branch": cfg.tracking.branch,
                     "gap_prominence": cfg.tracking.gap_prominence},
        "output": {"directory": cfg.output_directory, "format": cfg.output_format},
    }
    g = cfg.gpe
    if g is not None:
        blk = {"mass": _q(g.mass, "mass")}
        if g.g2d is not None:
            blk["g2d"] = _q(g.g2d, "interaction")
        elif g.beta is not None:
            blk["beta"] = g.beta
        else:
            blk["healing_points"] = g.healing_points
        blk.update({"points": g.points, "half_width": _q(g.half_width, "length"),
                    "dt": _q(g.dt, "time"), "duration": _q(g.duration, "time"),
                    "winding": g.winding})
        if g.initial_drive is not None:
            blk["initial_drive"] = [_tone_dict(tone) for tone in g.initial_drive]
        blk.update({"ramp": _q(g.ramp, "time"),
                    "snapshots": [_q(s, "time") for s in g.snapshots],
                    "relax_steps": g.relax_steps, "relax_dt": _q(g.relax_dt, "time"),
                    "winding_radii": [_q(r, "length") for r in g.winding_radii]})
        out["gpe"] = blk
    return out


# ---------------------------------------------------------------------------
# building


def _build_drive(items, chk: _Checker, path) -> fields.RFDrive:
    if not items:
        chk.fail(path, "need at least one tone")
    if len(items) > 2:
        chk.fail(path, "at most two tones are supported")
    tones = []
    for i, t in enumerate(items):
        p = path + [i]
        if "omega" not in t:
            chk.fail(p + ["omega"], "tone frequency is required")
        field_keys = {"alpha", "theta", "b_pi"} & set(t)
        try:
            if "rabi" in t:
                if field_keys:
                    chk.fail(p, "give either 'rabi' or field amplitudes, not both")
                tones.append(fields.RabiTone(t["omega"], t["rabi"],
                                             t.get("polarization", "linear")))
            else:
                if "polarization" in t:
                    chk.fail(p + ["polarization"], "polarization applies to Rabi tones only")
                if not field_keys:
                    chk.fail(p, "tone needs 'rabi' or field amplitudes 'alpha'/'b_pi'")
                tones.append(fields.RFComponent(t["omega"], t.get("alpha", 0.0),
                                                t.get("theta", 0.0), t.get("b_pi", 0.0)))
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            chk.fail(p, str(e))
    try:
        return fields.RFDrive.of(tones)
    except ValueError as e:
        chk.fail(path, str(e))


def _axis(d, chk, path) -> AxisSpec:
    for k in ("start", "stop", "points"):
        if k not in d:
            chk.fail(path + [k], "required")
    if d["points"] < 2:
        chk.fail(path + ["points"], "need at least 2 points")
    if not d["stop"] > d["start"]:
        chk.fail(path + ["stop"], "stop must exceed start")
    return AxisSpec(d["start"], d["stop"], d["points"])


def config_from_dict(raw: dict, text: Optional[str] = None, source=None) -> RunConfig:
    """Validate a decoded JSON document. ``text`` is only used for line numbers."""
    chk = _Checker(text)
    if isinstance(raw, dict) and "resolved_config" in raw:
        # a metadata sidecar: re-run what it records
        raw = raw["resolved_config"]
        chk = _Checker(text)
    d = chk.check(raw, SCHEMA, [])
    for k in REQUIRED:
        if k not in d:
            chk.fail([k], "required key is missing")

    c = d.get("constants", {})
    consts = fields.PhysicalConstants(c.get("mu_B", fields.CONSTANTS.mu_B),
                                      c.get("hbar", fields.CONSTANTS.hbar))
    s = d.get("spin", {})
    try:
        spin = fields.SpinSystem(s.get("g_F", 1.0), s.get("m_F", 0.5))
    except ValueError as e:
        chk.fail(["spin"], str(e))

    sf = d["static_field"]
    kind = sf.get("type", "ioffe_pritchard")
    if "G" not in sf:
        chk.fail(["static_field", "G"], "required")
    try:
        if kind == "ioffe_pritchard":
            if "B_I" not in sf:
                chk.fail(["static_field", "B_I"], "required for an Ioffe-Pritchard trap")
            static = fields.IoffePritchard(sf["G"], sf["B_I"])
        else:
            if "B_I" in sf:
                chk.fail(["static_field", "B_I"], "a linear field has no offset")
            static = fields.LinearField(sf["G"])
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        chk.fail(["static_field"], str(e))

    drive = _build_drive(d["drive"], chk, ["drive"])
    if kind == "linear" and not all(isinstance(t, fields.RabiTone) for t in drive):
        chk.fail(["drive"], "a linear static field needs Rabi-specified tones")

    t = d.get("truncation", {})
    trunc = TruncationSpec(**t)
    if trunc.p1 < 1:
        chk.fail(["truncation", "p1"], "orders must be >= 1")
    if len(drive) == 2 and trunc.p2 < 1:
        chk.fail(["truncation", "p2"], "orders must be >= 1")
    if trunc.p_max < max(trunc.p1, trunc.p2):
        chk.fail(["truncation", "p_max"], "p_max is below the starting order")
    if not trunc.rel_tol > 0:
        chk.fail(["truncation", "rel_tol"], "must be positive")

    g = d["grid"]
    if "x" not in g:
        chk.fail(["grid", "x"], "required")
    x = _axis(g["x"], chk, ["grid", "x"])
    y = _axis(g["y"], chk, ["grid", "y"]) if "y" in g else None
    if y is not None and kind == "linear":
        chk.fail(["grid", "y"], "2D grids need an Ioffe-Pritchard trap")

    tr = d.get("tracking", {})
    branch = tr.get("branch", "+" if spin.sign > 0 else "-")
    tracking = TrackingSpec(tr.get("overlap_floor", 0.5), branch, tr.get("gap_prominence", 0.01))
    if not 0 < tracking.overlap_floor <= 1:
        chk.fail(["tracking", "overlap_floor"], "must lie in (0, 1]")

    model = d.get("model", "floquet")
    if model in ("piecewise", "both") and y is not None:
        chk.fail(["model"], "the piecewise model is 1D only")

    gpe = None
    if "gpe" in d:
        gpe = _build_gpe(d["gpe"], chk, kind)

    out = d.get("output", {})
    cfg = RunConfig(constants=consts, spin=spin, static_field=static, drive=drive, model=model,
                    truncation=trunc, x=x, y=y, tracking=tracking, gpe=gpe,
                    output_directory=out.get("directory", "out"),
                    output_format=out.get("format", "csv"),
                    description=d.get("description", ""),
                    source=None if source is None else str(source))
    cfg.resolved = resolve_dict(cfg)
    return cfg


def _build_gpe(g, chk, kind) -> GPESpec:
    path = ["gpe"]
    if kind != "ioffe_pritchard":
        chk.fail(path, "GPE scenarios need an Ioffe-Pritchard trap")
    nl = [k for k in ("g2d", "beta", "healing_points") if k in g]
    if len(nl) > 1:
        chk.fail(path + [nl[1]], "give only one of g2d, beta, healing_points")
    init = None
    if "initial_drive" in g:
        init = _build_drive(g["initial_drive"], chk, path + ["initial_drive"])
        if "ramp" not in g:
            chk.fail(path + ["ramp"], "a ramp time is required with initial_drive")
    kw = {k: v for k, v in g.items() if k not in ("initial_drive", "snapshots", "winding_radii")}
    spec = GPESpec(initial_drive=init, snapshots=tuple(g.get("snapshots", ())),
                   winding_radii=tuple(g.get("winding_radii", ())), **kw)
    if spec.points < 4 or spec.points % 2:
        chk.fail(path + ["points"], "must be an even number >= 4")
    for k in ("dt", "duration", "half_width", "mass", "relax_dt"):
        if not getattr(spec, k) > 0:
            chk.fail(path + [k], "must be positive")
    if spec.dt > spec.duration:
        chk.fail(path + ["dt"], "time step exceeds the duration")
    if spec.ramp < 0 or spec.ramp > spec.duration:
        chk.fail(path + ["ramp"], "must lie within [0, duration]")
    if any(s < 0 or s > spec.duration for s in spec.snapshots):
        chk.fail(path + ["snapshots"], "snapshot times must lie within [0, duration]")
    if spec.healing_points <= 0 or (spec.beta is not None and spec.beta < 0):
        chk.fail(path, "nonlinearity must be non-negative")
    if spec.relax_steps < 0:
        chk.fail(path + ["relax_steps"], "must be >= 0")
    return spec


def parse_config(path) -> RunConfig:
    """Read and validate a JSON config (or a metadata sidecar of an earlier run)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", key="<syntax>", line=e.lineno) from e
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", key="<root>", line=1)
    return config_from_dict(raw, text, source=path)


def loads_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", key="<syntax>", line=e.lineno) from e
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", key="<root>", line=1)
    return config_from_dict(raw, text)
