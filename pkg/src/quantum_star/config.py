"""Run configuration: JSON schema, scenario presets and validation.

A config file is a JSON object.  ``preset`` (optional) names a scenario whose
values are filled in first; every other key overrides the preset field by
field.  After loading, all defaults are expanded so that the stored config is
fully explicit.
"""

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import SchemaError, UnknownPreset

PI = math.pi
V0_PAPER = 16.7875
LINE_ARMS = [20.0 + math.sqrt(3.0), 100.0 + math.sqrt(2.0)]
STAR_ARMS = [40.0, 40.0 + math.sqrt(2.0), 40.0 + math.sqrt(3.0)]
SWEEP_TIME = 94.25


def _sin(f, phi=0.0):
    return {"law": "sinusoidal", "f": f, "phi": phi}


def _const(f):
    return {"law": "constant", "f": f}


_LINE_BASE = {
    "graph": {"arm_lengths": LINE_ARMS},
    "potential": {"V0": V0_PAPER, "d": 1.0, "modulation": None},
    "packet": {"arm": 2, "x0": 78.0, "sigma": 6.0, "q": 0.0},
    "analysis": {"line_signs": [-1.0, 1.0]},
}

_STAR_BASE = {
    "graph": {"arm_lengths": STAR_ARMS},
    "potential": {"V0": V0_PAPER, "d": 1.0, "modulation": None},
    "drives": {"omega": 0.2, "fields": [_sin(PI / 10), _sin(-PI / 10), _sin(-PI / 10)]},
    "packet": {"arm": 1, "x0": 22.0, "sigma": 6.0, "q": 0.0},
    "numerics": {"t_end": SWEEP_TIME},
    "analysis": {"line_signs": None, "width": True},
    "assumptions": [
        "star arm lengths (40, 40+sqrt2, 40+sqrt3) chosen; not stated for the star scenarios",
        "star packet width sigma=6 taken from the line scenarios",
    ],
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


PRESETS = {
    "fig1": _merge(_LINE_BASE, {
        "scenario": "fig1",
        "drives": {"omega": None, "fields": [_const(-0.2), _const(0.2)]},
        "numerics": {"t_end": 3 * 2 * PI / 0.2},
        "analysis": {"bloch": True},
    }),
    "fig2": _merge(_LINE_BASE, {
        "scenario": "fig2",
        "potential": {"modulation": {"a": 0.85, "omega": 0.2, "phi": 0.0}},
        "drives": {"omega": None, "fields": [_const(-0.2), _const(0.2)]},
        "numerics": {"t_end": 2 * 2 * PI / 0.2},
    }),
    "fig3": _merge(_LINE_BASE, {
        "scenario": "fig3",
        "drives": {"omega": 0.2, "fields": [_sin(-PI / 10), _sin(PI / 10)]},
        "numerics": {"t_end": 2 * PI / 0.2},
        "analysis": {"width": True},
    }),
    "fig4": _merge(_STAR_BASE, {"scenario": "fig4"}),
    "fig6": _merge(_STAR_BASE, {
        "scenario": "fig6",
        "drives": {"fields": [_sin(PI / 10), _sin(-PI / 10, PI / 2), _sin(-PI / 10)]},
    }),
    "fig7": _merge(_STAR_BASE, {
        "scenario": "fig7",
        "drives": {"fields": [_sin(PI / 10), _sin(-PI / 10, PI / 2), _sin(-PI / 10)]},
        "analysis": {"sweep_points": 33},
    }),
}


@dataclass
class FieldLaw:
    law: str
    f: float
    phi: float = 0.0


@dataclass
class Numerics:
    k_max: float
    t_end: float
    dt_sample: float
    points_per_arm: int
    rtol: float = 1e-9
    norm_budget: float = 1e-6
    density_stride: int = 5
    verify: bool = False


@dataclass
class Analysis:
    line_signs: list = None
    bloch: bool = False
    width: bool = False
    sweep_points: int = 33


@dataclass
class RunConfig:
    scenario: str
    arm_lengths: list
    V0: float
    d: float
    modulation: dict
    omega: float
    fields: list
    packet: dict
    numerics: Numerics
    analysis: Analysis
    output_dir: str = "out"
    preset: str = None
    assumptions: list = field(default_factory=list)

    @property
    def arm_count(self):
        return len(self.arm_lengths)

    @property
    def reference_field(self):
        return max(abs(f.f) for f in self.fields)

    def bloch_period(self):
        f_ref = self.reference_field
        return 2 * PI / (self.d * f_ref) if f_ref else None

    def to_dict(self):
        """Nested JSON form; ``load_config`` of this dict reproduces the config."""
        return {
            "scenario": self.scenario,
            "preset": self.preset,
            "graph": {"arm_lengths": list(self.arm_lengths)},
            "potential": {"V0": self.V0, "d": self.d, "modulation": self.modulation},
            "drives": {"omega": self.omega, "fields": [asdict(f) for f in self.fields]},
            "packet": dict(self.packet),
            "numerics": asdict(self.numerics),
            "analysis": asdict(self.analysis),
            "output": {"directory": self.output_dir},
            "assumptions": list(self.assumptions),
        }


def _get(section, key, path, kind, required=True, default=None):
    if not isinstance(section, dict):
        raise SchemaError(f"{path}: expected an object")
    if key not in section or section[key] is None:
        if required:
            raise SchemaError(f"missing required field `{path}.{key}`".replace("`.", "`"))
        return default
    value = section[key]
    where = f"{path}.{key}".lstrip(".")
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise SchemaError(f"`{where}` must be a finite number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"`{where}` must be an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise SchemaError(f"`{where}` must be true or false, got {value!r}")
        return value
    if not isinstance(value, kind):
        raise SchemaError(f"`{where}` has the wrong type: {type(value).__name__}")
    return value


def _positive(value, where):
    if not value > 0:
        raise SchemaError(f"`{where}` must be positive, got {value}")
    return value


def from_dict(raw):
    """Validate a raw (already preset-merged) dict and fill every default."""
    if not isinstance(raw, dict):
        raise SchemaError("config root must be a JSON object")

    graph = _get(raw, "graph", "", dict)
    lengths = _get(graph, "arm_lengths", "graph", list)
    if not lengths:
        raise SchemaError("`graph.arm_lengths` must list at least one arm")
    arm_lengths = []
    for i, L in enumerate(lengths):
        arm_lengths.append(_positive(_get({"v": L}, "v", f"graph.arm_lengths[{i}]", float),
                                     f"graph.arm_lengths[{i}]"))

    pot = _get(raw, "potential", "", dict)
    V0 = _get(pot, "V0", "potential", float)
    d = _positive(_get(pot, "d", "potential", float, required=False, default=1.0), "potential.d")
    modulation = _get(pot, "modulation", "potential", dict, required=False)
    if modulation is not None:
        a = _get(modulation, "a", "potential.modulation", float)
        if not 0.0 <= a <= 1.0:
            raise SchemaError(f"`potential.modulation.a` must lie in [0, 1], got {a}")
        modulation = {
            "a": a,
            "omega": _positive(_get(modulation, "omega", "potential.modulation", float),
                               "potential.modulation.omega"),
            "phi": _get(modulation, "phi", "potential.modulation", float, required=False, default=0.0),
        }

    drives = _get(raw, "drives", "", dict)
    omega = _get(drives, "omega", "drives", float, required=False)
    raw_fields = _get(drives, "fields", "drives", list)
    if len(raw_fields) != len(arm_lengths):
        raise SchemaError(
            f"`drives.fields` has {len(raw_fields)} entries for {len(arm_lengths)} arms"
        )
    fields = []
    for i, entry in enumerate(raw_fields):
        where = f"drives.fields[{i}]"
        law = _get(entry, "law", where, str)
        if law not in ("constant", "sinusoidal"):
            raise SchemaError(f"`{where}.law` must be 'constant' or 'sinusoidal', got {law!r}")
        f = _get(entry, "f", where, float)
        phi = _get(entry, "phi", where, float, required=False, default=0.0)
        if law == "sinusoidal" and (omega is None or not omega > 0):
            raise SchemaError("`drives.omega` must be a positive number for sinusoidal fields")
        fields.append(FieldLaw(law, f, phi if law == "sinusoidal" else 0.0))

    pk = _get(raw, "packet", "", dict)
    arm = _get(pk, "arm", "packet", int)
    if not 1 <= arm <= len(arm_lengths):
        raise SchemaError(f"`packet.arm` must be between 1 and {len(arm_lengths)}, got {arm}")
    packet = {
        "arm": arm,
        "x0": _get(pk, "x0", "packet", float),
        "sigma": _positive(_get(pk, "sigma", "packet", float), "packet.sigma"),
        "q": _get(pk, "q", "packet", float, required=False, default=0.0),
    }

    num = _get(raw, "numerics", "", dict, required=False, default={})
    k_max = _positive(
        _get(num, "k_max", "numerics", float, required=False, default=4 * 2 * PI / d), "numerics.k_max"
    )
    t_end = _positive(_get(num, "t_end", "numerics", float), "numerics.t_end")
    f_ref = max(abs(f.f) for f in fields)
    default_dt = (2 * PI / (d * f_ref)) / 200 if f_ref else t_end / 200
    numerics = Numerics(
        k_max=k_max,
        t_end=t_end,
        dt_sample=_positive(_get(num, "dt_sample", "numerics", float, required=False, default=default_dt),
                            "numerics.dt_sample"),
        points_per_arm=_get(num, "points_per_arm", "numerics", int, required=False,
                            default=int(math.ceil(8 * k_max * max(arm_lengths) / (2 * PI))) + 1),
        rtol=_positive(_get(num, "rtol", "numerics", float, required=False, default=1e-9), "numerics.rtol"),
        norm_budget=_positive(_get(num, "norm_budget", "numerics", float, required=False, default=1e-6),
                              "numerics.norm_budget"),
        density_stride=_positive(_get(num, "density_stride", "numerics", int, required=False, default=5),
                                 "numerics.density_stride"),
        verify=_get(num, "verify", "numerics", bool, required=False, default=False),
    )

    an = _get(raw, "analysis", "", dict, required=False, default={})
    signs = _get(an, "line_signs", "analysis", list, required=False)
    if signs is not None and len(signs) != len(arm_lengths):
        raise SchemaError("`analysis.line_signs` needs one sign per arm")
    analysis = Analysis(
        line_signs=[float(s) for s in signs] if signs is not None else None,
        bloch=_get(an, "bloch", "analysis", bool, required=False, default=False),
        width=_get(an, "width", "analysis", bool, required=False, default=False),
        sweep_points=_positive(_get(an, "sweep_points", "analysis", int, required=False, default=33),
                               "analysis.sweep_points"),
    )

    out = _get(raw, "output", "", dict, required=False, default={})
    return RunConfig(
        scenario=_get(raw, "scenario", "", str, required=False, default=raw.get("preset") or "custom"),
        arm_lengths=arm_lengths,
        V0=V0,
        d=d,
        modulation=modulation,
        omega=omega,
        fields=fields,
        packet=packet,
        numerics=numerics,
        analysis=analysis,
        output_dir=_get(out, "directory", "output", str, required=False, default="out"),
        preset=raw.get("preset"),
        assumptions=list(raw.get("assumptions") or []),
    )


def expand(raw):
    """Merge a raw config dict onto its preset (if any) and validate."""
    if not isinstance(raw, dict):
        raise SchemaError("config root must be a JSON object")
    if "config" in raw and "files" in raw:
        # a run manifest: rerun its fully expanded config
        raw = raw["config"]
    preset = raw.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise UnknownPreset(f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
        raw = _merge(PRESETS[preset], raw)
    return from_dict(raw)


def load_config(path):
    """Read, preset-expand and validate a JSON config (or run manifest)."""
    text = Path(path).read_text()
    if not text.strip():
        raw = {}
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return expand(raw)


def preset_config(name, **overrides):
    """Expanded config for a named preset with optional nested overrides."""
    return expand(_merge({"preset": name}, overrides))
