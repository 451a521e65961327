"""YAML experiment configuration: schema, defaults, validation, builders.

Units in the file are the laboratory ones (GHz as ``w/2pi``, ps, MHz, K);
builders convert to the SI/angular units used by the simulation.  The full
key list lives in ``CONFIG.md`` and in :data:`SCHEMA`.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .detchain import KINDS, ChainConfig, DetectorSpec, FilterSpec
from .physmodel import EmitterModel, LaserPulse, PhononEnv, ghz
from .trajectory import SimConfig


class ConfigError(ValueError):
    """Raised with the full list of violations (``.violations``)."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("\n".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class Violation:
    path: str
    message: str
    line: int | None = None
    column: int | None = None

    def __str__(self):
        where = f" (line {self.line}, column {self.column})" if self.line is not None else ""
        return f"{self.path}: {self.message}{where}"


def _pos(v):
    return isinstance(v, (int, float)) and v > 0


def _nonneg(v):
    return isinstance(v, (int, float)) and v >= 0


def _unit(v):
    return isinstance(v, (int, float)) and 0 <= v <= 1


def _open_unit(v):
    return isinstance(v, (int, float)) and 0 < v < 1


def _at_least_one(v):
    return isinstance(v, (int, float)) and v >= 1


def _channel(v):
    return isinstance(v, int) and 0 <= v < 256


# leaf spec: (type, default, check or None, message)
FILTER_KEYS = {
    "kind": (str, None, lambda v: v in KINDS, f"must be one of {', '.join(KINDS)}"),
    "center": (float, 0.0, None, ""),
    "fwhm": (float, None, _pos, "must be > 0"),
    "fsr": (float, 0.0, _nonneg, "must be >= 0"),
    "floor": (float, 0.0, _unit, "must lie in [0, 1]"),
}
DETECTOR_KEYS = {
    "efficiency": (float, 1.0, _unit, "must lie in [0, 1]"),
    "dark_rate": (float, 0.0, _nonneg, "must be >= 0"),
    "jitter_fwhm": (float, 0.0, _nonneg, "must be >= 0"),
    "dead_time": (float, 0.0, _nonneg, "must be >= 0"),
}

SCHEMA = {
    "preset": (str, "", None, ""),
    "output_dir": (str, "out", None, ""),
    "seed": (int, 1, _nonneg, "must be >= 0"),
    "laser": {
        "detuning": (float, 125.0, None, ""),
        "pulse_fwhm": (float, 80.0, _pos, "must be > 0"),
        "peak_rabi": (float, 115.2, _nonneg, "must be >= 0"),
        "rep_rate": (float, 75.95, _pos, "must be > 0"),
        "pulse_center": (float, 200.0, _pos, "must be > 0"),
    },
    "emitter": {
        "lifetime": (float, 465.0, _pos, "must be > 0"),
        "diffusion_sigma": (float, 1.7, _nonneg, "must be >= 0"),
        "fourier_broadening_coeff": (float, 1.0, _nonneg, "must be >= 0"),
        "transition_freq": (float, 0.0, None, ""),
    },
    "phonons": {
        "coupling": (float, 0.1, _nonneg, "must be >= 0"),
        "cutoff": (float, 180.0, _pos, "must be > 0"),
        "temperature": (float, 4.0, _nonneg, "must be >= 0"),
    },
    "simulation": {
        "n_pulses": (int, 1_000_000, _at_least_one, "must be >= 1"),
        "laser_off_threshold": (float, 1e-3, _open_unit, "must lie in (0, 1)"),
        "max_photons_per_pulse": (int, 4, _at_least_one, "must be >= 1"),
        "thinning_margin": (float, 1.2, _at_least_one, "must be >= 1"),
        "n_workers": (int, 1, _at_least_one, "must be >= 1"),
        "block_size": (int, 250_000, _at_least_one, "must be >= 1"),
    },
    "detection": {
        "splitter_ratio": (float, 0.5, _unit, "must lie in [0, 1]"),
        "clock_channel": (int, 0, _channel, "must be a channel id in [0, 255]"),
        "arm_a_channel": (int, 1, _channel, "must be a channel id in [0, 255]"),
        "arm_b_channel": (int, 2, _channel, "must be a channel id in [0, 255]"),
        "add_filter_delay": (bool, True, None, ""),
        "shared_filters": ("filters", [], None, ""),
        "arm_a_filters": ("filters", [], None, ""),
        "arm_b_filters": ("filters", [], None, ""),
        "detectors": ("detectors", None, None, ""),
    },
    "analysis": {
        "bin_width": (int, 1, _at_least_one, "must be >= 1"),
        "g2_side_peaks": ("ints", [-1, 1], None, ""),
        "coincidence_window": (float, 3000.0, _nonneg, "must be >= 0"),
        "first_photon_gate": ("floats", [350.0, 3000.0], None, ""),
        "time_bin": (int, 10, _at_least_one, "must be >= 1"),
        "time_range": ("floats", [0.0, 3000.0], None, ""),
        "hist2d_bin": (int, 5, _at_least_one, "must be >= 1"),
        "hist2d_range": ("floats", [0.0, 1500.0], None, ""),
        "side_peak_exclusion": (float, 10.0, _nonneg, "must be >= 0"),
        "side_peak_method": (str, "parabola", lambda v: v in ("parabola", "gaussian"), "must be parabola or gaussian"),
    },
    "experiments": {
        "scan_filters": ("filters", None, None, ""),
        "purity_filter": ("filter", None, None, ""),
        "spectrum_start": (float, -100.0, None, ""),
        "spectrum_stop": (float, 30.0, None, ""),
        "spectrum_step": (float, 1.0, _pos, "must be > 0"),
        "pulse_lengths": ("floats", [10.0, 20.0, 40.0, 60.0, 80.0], None, ""),
        "power_reference_rabi": (float, 99.1, _pos, "must be > 0"),
        "power_reference_fwhm": (float, 80.0, _pos, "must be > 0"),
        "field_scales": ("floats", [0.4, 0.6, 0.8, 1.0, 1.2], None, ""),
        "power_scan_exclusion": (float, 3.0, _nonneg, "must be >= 0"),
        "trace_filters": ("floats", [0.0, -10.0, -20.0, -30.0, -45.0], None, ""),
        "red_detuning": (float, -125.0, lambda v: isinstance(v, (int, float)) and v < 0, "must be < 0"),
    },
}

DEFAULT_DETECTORS = [
    {"efficiency": 1.0, "dark_rate": 0.0, "jitter_fwhm": 26.0, "dead_time": 0.0},
    {"efficiency": 1.0, "dark_rate": 0.0, "jitter_fwhm": 29.0, "dead_time": 0.0},
]
DEFAULT_SCAN_FILTERS = [
    {"kind": "lorentzian_etalon", "center": 0.0, "fwhm": 5.5, "fsr": 125.0, "floor": 0.0},
    {"kind": "lorentzian_etalon", "center": 0.0, "fwhm": 16.4, "fsr": 292.0, "floor": 0.0},
]
DEFAULT_PURITY_FILTER = {"kind": "lorentzian_etalon", "center": 0.0, "fwhm": 6.0, "fsr": 125.0, "floor": 0.0}


def default_text() -> str:
    return resources.files("reexsim").joinpath("data/default.yaml").read_text(encoding="utf-8")


# --------------------------------------------------------------------------
# loading


class _Reader:
    """Walks a composed YAML node tree against :data:`SCHEMA`."""

    def __init__(self):
        self.violations = []

    def fail(self, path, msg, node=None):
        line = col = None
        if node is not None:
            line, col = node.start_mark.line + 1, node.start_mark.column + 1
        self.violations.append(Violation(path, msg, line, col))

    def scalar(self, node, typ, path):
        if not isinstance(node, yaml.ScalarNode):
            self.fail(path, f"expected a {typ.__name__} scalar", node)
            return None
        value = yaml.safe_load(yaml.serialize(node))
        if typ is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if typ is float and isinstance(value, str):
            # YAML 1.1 leaves '1e-3' as a string
            try:
                value = float(value)
            except ValueError:
                pass
        if not isinstance(value, typ) or (typ is not bool and isinstance(value, bool)):
            self.fail(path, f"expected {typ.__name__}, got {value!r}", node)
            return None
        return value

    def seq(self, node, path, item):
        if not isinstance(node, yaml.SequenceNode):
            self.fail(path, "expected a list", node)
            return None
        return [item(child, f"{path}[{i}]") for i, child in enumerate(node.value)]

    def mapping(self, node, spec, path, defaults=None):
        if not isinstance(node, yaml.MappingNode):
            self.fail(path or "<root>", "expected a mapping", node)
            return {}
        out = {}
        seen = {}
        for key_node, val_node in node.value:
            key = key_node.value
            sub = f"{path}.{key}" if path else key
            if key not in spec:
                self.fail(sub, "unknown key", key_node)
                continue
            if key in seen:
                self.fail(sub, "duplicate key", key_node)
            seen[key] = key_node
            out[key] = self.value(val_node, spec[key], sub)
        for key, leaf in spec.items():
            if key in out:
                continue
            sub = f"{path}.{key}" if path else key
            if isinstance(leaf, dict):
                out[key] = self.mapping(yaml.MappingNode("tag:yaml.org,2002:map", []), leaf, sub)
            elif leaf[1] is None and leaf[0] not in ("filters", "filter", "detectors"):
                self.fail(sub, "required key missing", node)
            else:
                out[key] = copy.deepcopy(leaf[1])
        return out

    def value(self, node, leaf, path):
        if isinstance(leaf, dict):
            return self.mapping(node, leaf, path)
        typ, _, check, msg = leaf
        if typ in ("filters", "filter") and isinstance(node, yaml.ScalarNode) and node.tag.endswith(":null"):
            return [] if typ == "filters" else {}
        if typ == "filters":
            return self.seq(node, path, lambda n, p: self.mapping(n, FILTER_KEYS, p))
        if typ == "filter":
            return self.mapping(node, FILTER_KEYS, path)
        if typ == "detectors":
            return self.seq(node, path, lambda n, p: self.mapping(n, DETECTOR_KEYS, p))
        if typ in ("floats", "ints"):
            t = float if typ == "floats" else int
            return self.seq(node, path, lambda n, p: self.scalar(n, t, p))
        value = self.scalar(node, typ, path)
        if value is not None and check is not None and not check(value):
            self.fail(path, f"{msg} (got {value!r})", node)
        return value


def _apply_defaults(data):
    det = data["detection"]
    if det.get("detectors") is None:
        det["detectors"] = copy.deepcopy(DEFAULT_DETECTORS)
    exp = data["experiments"]
    if exp.get("scan_filters") is None:
        exp["scan_filters"] = copy.deepcopy(DEFAULT_SCAN_FILTERS)
    if exp.get("purity_filter") is None:
        exp["purity_filter"] = copy.deepcopy(DEFAULT_PURITY_FILTER)


def _check_filter(f, path, out):
    if f.get("kind") == "lorentzian_etalon" and f.get("fsr") and f.get("fwhm") and not f["fsr"] > f["fwhm"]:
        out.append(Violation(f"{path}.fsr", f"etalon fsr {f['fsr']} must exceed fwhm {f['fwhm']}"))


def _cross_checks(data, marks):
    out = []
    las, sim = data["laser"], data["simulation"]
    period_ps = 1e6 / las["rep_rate"]
    exp = data["experiments"]
    widths = [las["pulse_fwhm"]] + [w for w in exp["pulse_lengths"] if isinstance(w, (int, float))]
    if any(not w > 0 for w in widths):
        out.append(Violation("experiments.pulse_lengths", "pulse lengths must be > 0"))
        widths = [w for w in widths if w > 0]
    longest = max(widths)
    if not period_ps > 4 * longest:
        out.append(Violation("laser.pulse_fwhm", f"repetition period {period_ps:.0f} ps must exceed 4 x pulse length"))
    eps = sim["laser_off_threshold"]
    if 0 < eps < 1:
        half = longest * math.sqrt(-math.log(eps) / (2 * math.log(2)))
        if las["pulse_center"] <= half:
            out.append(
                Violation(
                    "laser.pulse_center",
                    f"pulse centre must exceed the drive half-window {half:.1f} ps so the pulse starts after its clock",
                )
            )
        if las["pulse_center"] + half >= period_ps:
            out.append(Violation("laser.pulse_center", "drive window extends past the repetition period"))
    det = data["detection"]
    chans = [det["clock_channel"], det["arm_a_channel"], det["arm_b_channel"]]
    if None not in chans and len(set(chans)) != 3:
        out.append(Violation("detection.clock_channel", "clock and arm channel ids must be distinct"))
    if len(det["detectors"] or []) != 2:
        out.append(Violation("detection.detectors", "exactly two detectors are required"))
    for key in ("shared_filters", "arm_a_filters", "arm_b_filters"):
        for i, f in enumerate(det[key] or []):
            _check_filter(f, f"detection.{key}[{i}]", out)
    for i, f in enumerate(exp["scan_filters"] or []):
        _check_filter(f, f"experiments.scan_filters[{i}]", out)
    if exp["purity_filter"]:
        _check_filter(exp["purity_filter"], "experiments.purity_filter", out)
    ana = data["analysis"]
    for key in ("first_photon_gate", "time_range", "hist2d_range"):
        v = ana[key]
        if v is not None and (len(v) != 2 or None in v or not v[0] < v[1]):
            out.append(Violation(f"analysis.{key}", "expected [min, max] with min < max"))
    if not exp["spectrum_start"] < exp["spectrum_stop"]:
        out.append(Violation("experiments.spectrum_start", "spectrum_start must be < spectrum_stop"))
    if any(s is not None and s < 0 for s in exp["field_scales"] or []):
        out.append(Violation("experiments.field_scales", "field scales must be >= 0"))
    return [Violation(v.path, v.message, *marks.get(v.path, (None, None))) if v.line is None else v for v in out]


def _marks(node, path="", out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            sub = f"{path}.{k.value}" if path else k.value
            out[sub] = (k.start_mark.line + 1, k.start_mark.column + 1)
            _marks(v, sub, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            sub = f"{path}[{i}]"
            out[sub] = (v.start_mark.line + 1, v.start_mark.column + 1)
            _marks(v, sub, out)
    return out


def check_text(text: str):
    """Parse and validate; returns ``(data, violations)``."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        return None, [Violation("<file>", f"YAML parse error: {getattr(exc, 'problem', exc)}", line, col)]
    if node is None:
        node = yaml.MappingNode("tag:yaml.org,2002:map", [])
    reader = _Reader()
    data = reader.mapping(node, SCHEMA, "")
    if reader.violations:
        return None, reader.violations
    _apply_defaults(data)
    violations = _cross_checks(data, _marks(node))
    return (None if violations else data), violations


def validate_config(path) -> list:
    """Violation report for a config file (empty when valid)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        return [Violation("<file>", f"cannot read: {exc}")]
    return check_text(text)[1]


def load_config(path=None, text=None) -> "ExperimentConfig":
    if text is None:
        text = default_text() if path is None else Path(path).read_text(encoding="utf-8")
    data, violations = check_text(text)
    if violations:
        raise ConfigError(violations)
    return ExperimentConfig(data)


# --------------------------------------------------------------------------
# builders


def filter_from(d) -> FilterSpec:
    return FilterSpec(d["kind"], ghz(d["center"]), ghz(d["fwhm"]), ghz(d["fsr"]), d["floor"])


class ExperimentConfig:
    """Validated configuration with builders for the simulation records."""

    def __init__(self, data: dict):
        self.data = data

    def __getitem__(self, key):
        return self.data[key]

    def snapshot(self) -> dict:
        return copy.deepcopy(self.data)

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """Copy with dotted-path overrides (``{"laser.pulse_fwhm": 40}``),
        revalidated like a freshly loaded file."""
        data = self.snapshot()
        for dotted, value in overrides.items():
            node = data
            *parents, leaf = dotted.split(".")
            for key in parents:
                node = node[key]
            node[leaf] = value
        return load_config(text=yaml.safe_dump(data, sort_keys=False))

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def rep_period(self) -> float:
        return 1.0 / (self.data["laser"]["rep_rate"] * 1e6)

    def laser(self, pulse_fwhm_ps=None, peak_rabi_ghz=None, detuning_ghz=None) -> LaserPulse:
        las = self.data["laser"]
        return LaserPulse(
            detuning=ghz(las["detuning"] if detuning_ghz is None else detuning_ghz),
            pulse_fwhm=1e-12 * (las["pulse_fwhm"] if pulse_fwhm_ps is None else pulse_fwhm_ps),
            peak_rabi=ghz(las["peak_rabi"] if peak_rabi_ghz is None else peak_rabi_ghz),
            rep_period=self.rep_period,
            pulse_center=1e-12 * las["pulse_center"],
        )

    def emitter(self) -> EmitterModel:
        em = self.data["emitter"]
        return EmitterModel(
            lifetime=1e-12 * em["lifetime"],
            diffusion_sigma=ghz(em["diffusion_sigma"]),
            fourier_broadening_coeff=em["fourier_broadening_coeff"],
            transition_freq=ghz(em["transition_freq"]),
        )

    def phonons(self) -> PhononEnv:
        ph = self.data["phonons"]
        return PhononEnv(coupling=1e-24 * ph["coupling"], cutoff=ghz(ph["cutoff"]), temperature=ph["temperature"])

    def sim(self, seed=None, n_pulses=None) -> SimConfig:
        s = dict(self.data["simulation"])
        if n_pulses is not None:
            s["n_pulses"] = n_pulses
        return SimConfig(rng_seed=self.seed if seed is None else seed, **s)

    def chain(self, shared=(), arm_a=(), arm_b=(), splitter=None, jitter=True, shared_override=None) -> ChainConfig:
        det = self.data["detection"]
        detectors = []
        for d in det["detectors"]:
            detectors.append(
                DetectorSpec(
                    efficiency=d["efficiency"],
                    dark_rate=d["dark_rate"],
                    jitter_fwhm=1e-12 * d["jitter_fwhm"] if jitter else 0.0,
                    dead_time=1e-12 * d["dead_time"],
                )
            )
        base = [filter_from(f) for f in det["shared_filters"]] if shared_override is None else list(shared_override)
        return ChainConfig(
            shared_filters=tuple(base) + tuple(shared),
            arm_a_filters=tuple(filter_from(f) for f in det["arm_a_filters"]) + tuple(arm_a),
            arm_b_filters=tuple(filter_from(f) for f in det["arm_b_filters"]) + tuple(arm_b),
            splitter_ratio=det["splitter_ratio"] if splitter is None else splitter,
            detectors=tuple(detectors),
            clock_channel=det["clock_channel"],
            arm_a_channel=det["arm_a_channel"],
            arm_b_channel=det["arm_b_channel"],
            rep_period=self.rep_period,
            add_filter_delay=det["add_filter_delay"],
        )

    def scan_filters(self, center_ghz: float):
        return tuple(filter_from(dict(f, center=f["center"] + center_ghz)) for f in self.data["experiments"]["scan_filters"])

    def purity_filter(self):
        f = self.data["experiments"]["purity_filter"]
        return filter_from(f) if f else None
