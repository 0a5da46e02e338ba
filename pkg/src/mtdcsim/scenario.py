"""Scenario files: a small sectioned key = value format with explicit units.

Example::

    mtdc-scenario 1
    # four terminals, five lines
    [grid]
    terminals = 4
    capacitance = 0.01 F                 # one value is broadcast
    [lines]
    1-2 = 3.7 ohm
    1-3 = 3.7 ohm
    [controller]
    kind = deadband-pi                   # droop | pi | deadband-pi
    k_p = 10 S
    k_i = 10 A/Vs
    v_nom = 100 kV
    v_lo = 95 kV
    v_hi = 105 kV
    [injection]
    current = -60 kA, -50 kA, -50 kA, -50 kA
    [initial]
    voltage = 105 kV, 104.96 kV, 104.9 kV, 105.07 kV
    z = 0 Vs
    [integrator]
    step = 1 us
    horizon = 1.5 ms
    steady_state_tol = 1e-3 V/s
    record_stride = 1
    until_steady = yes
    max_time = 60 s

The first non-blank, non-comment line is the version header. Terminal
numbers are 1-based. Every physical value needs a unit; a list with a single
entry is broadcast to all terminals. Sections ``[initial]`` and
``[integrator]`` are optional (defaults: V = V_nom, z = 0 and the
:class:`~mtdcsim.integrator.IntegratorConfig` defaults). Unknown sections
and keys are errors.

Overlay files (header ``mtdc-overlay 1``) may contain only ``[injection]``
and ``[initial]`` and replace those parts of a base scenario.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .controllers import ControllerConfig, ControllerKind
from .errors import MTDCError, ScenarioError
from .grid import GridTopology
from .integrator import IntegratorConfig, SystemState

SCENARIO_HEADER = "mtdc-scenario"
OVERLAY_HEADER = "mtdc-overlay"
FORMAT_VERSION = 1

_MICRO = ("us", "µs", "μs")
UNITS = {
    "voltage": {"V": 1.0, "kV": 1e3, "MV": 1e6},
    "current": {"A": 1.0, "kA": 1e3, "mA": 1e-3},
    "resistance": {"ohm": 1.0, "Ω": 1.0, "mohm": 1e-3, "kohm": 1e3},
    "capacitance": {"F": 1.0, "mF": 1e-3, "uF": 1e-6, "µF": 1e-6, "μF": 1e-6},
    "conductance": {"S": 1.0, "A/V": 1.0, "mS": 1e-3, "kS": 1e3},
    "integral_gain": {"A/Vs": 1.0, "A/(V*s)": 1.0, "A/(V s)": 1.0, "S/s": 1.0},
    "time": {"s": 1.0, "ms": 1e-3, **{u: 1e-6 for u in _MICRO}},
    "rate": {"V/s": 1.0, "kV/s": 1e3},
    "integral": {"Vs": 1.0, "V*s": 1.0, "kVs": 1e3},
}
# units used when writing files; parse(emit(x)) is exact because they are SI
BASE_UNIT = {"voltage": "V", "current": "A", "resistance": "ohm", "capacitance": "F",
             "conductance": "S", "integral_gain": "A/Vs", "time": "s", "rate": "V/s",
             "integral": "Vs"}

_SECTIONS = {
    "grid": {"terminals": None, "capacitance": "capacitance"},
    "lines": None,
    "controller": {"kind": None, "k_p": "conductance", "k_i": "integral_gain",
                   "v_nom": "voltage", "v_lo": "voltage", "v_hi": "voltage"},
    "injection": {"current": "current"},
    "initial": {"voltage": "voltage", "z": "integral"},
    "integrator": {"step": "time", "horizon": "time", "steady_state_tol": "rate",
                   "record_stride": None, "stop_at_steady": None, "until_steady": None,
                   "max_time": "time", "tail_stride": None},
}
_REQUIRED = {"grid": ("terminals", "capacitance"), "controller": ("kind", "k_p", "v_nom"),
             "injection": ("current",)}
_LINE_KEY = re.compile(r"^(\d+)\s*-\s*(\d+)$")
_QUANTITY = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S.*)?$")


@dataclass(frozen=True, eq=False)
class Scenario:
    topology: GridTopology
    controller: ControllerConfig
    I_inj: np.ndarray
    initial: SystemState
    integrator: IntegratorConfig
    version: int = FORMAT_VERSION

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (self.topology == other.topology and self.controller == other.controller
                and np.array_equal(self.I_inj, other.I_inj)
                and self.initial.t == other.initial.t
                and np.array_equal(self.initial.V, other.initial.V)
                and np.array_equal(self.initial.z, other.initial.z)
                and self.integrator == other.integrator and self.version == other.version)

    @property
    def n_terminals(self) -> int:
        return self.topology.n_terminals

    def with_controller(self, kind) -> "Scenario":
        return replace(self, controller=self.controller.with_kind(kind))

    def with_injection(self, I_inj) -> "Scenario":
        return replace(self, I_inj=np.array(I_inj, dtype=float))


class _Entry:
    __slots__ = ("value", "line")

    def __init__(self, value, line):
        self.value = value
        self.line = line


def _tokenize(text: str, path, headers):
    sections: dict[str, dict[str, _Entry]] = {}
    section_lines: dict[str, int] = {}
    version = None
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if version is None:
            parts = line.split()
            if len(parts) != 2 or parts[0] not in headers:
                raise ScenarioError(f"expected header '{headers[0]} {FORMAT_VERSION}', got {line!r}",
                                    path, lineno)
            try:
                version = int(parts[1])
            except ValueError:
                raise ScenarioError(f"bad format version {parts[1]!r}", path, lineno) from None
            if version != FORMAT_VERSION:
                raise ScenarioError(f"unsupported format version {version}", path, lineno)
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioError(f"malformed section header {line!r}", path, lineno)
            current = line[1:-1].strip().lower()
            if current not in _SECTIONS:
                raise ScenarioError(f"unknown section [{current}]", path, lineno)
            if current in sections:
                raise ScenarioError(f"section [{current}] appears twice", path, lineno)
            sections[current] = {}
            section_lines[current] = lineno
            continue
        if current is None:
            raise ScenarioError("key outside of any section", path, lineno)
        if "=" not in line:
            raise ScenarioError(f"expected 'key = value', got {line!r}", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if current != "lines":
            key = key.lower()
            if key not in _SECTIONS[current]:
                raise ScenarioError(f"unknown key {key!r} in [{current}]", path, lineno)
        if key in sections[current]:
            raise ScenarioError(f"duplicate key {key!r} in [{current}]", path, lineno)
        sections[current][key] = _Entry(value, lineno)
    if version is None:
        raise ScenarioError("empty file", path, None)
    return version, sections, section_lines


def _quantities(entry: _Entry, quantity: str, path, n: int | None = None) -> np.ndarray:
    table = UNITS[quantity]
    out = []
    for item in entry.value.split(","):
        item = item.strip()
        m = _QUANTITY.match(item)
        if not m:
            raise ScenarioError(f"cannot parse {item!r} as a number with a unit", path, entry.line)
        number, unit = m.group(1), (m.group(2) or "").strip()
        if not unit:
            raise ScenarioError(f"missing unit in {item!r} (expected {quantity}: "
                                f"{', '.join(table)})", path, entry.line)
        if unit not in table:
            raise ScenarioError(f"unit {unit!r} is not a {quantity} unit (expected one of "
                                f"{', '.join(table)})", path, entry.line)
        out.append(float(number) * table[unit])
    arr = np.array(out)
    if not np.all(np.isfinite(arr)):
        raise ScenarioError("non-finite value", path, entry.line)
    if n is not None:
        if arr.size == 1:
            arr = np.full(n, arr[0])
        elif arr.size != n:
            raise ScenarioError(f"expected 1 or {n} values, got {arr.size}", path, entry.line)
    return arr


def _scalar(entry, quantity, path) -> float:
    arr = _quantities(entry, quantity, path)
    if arr.size != 1:
        raise ScenarioError("expected a single value", path, entry.line)
    return float(arr[0])


def _integer(entry, path) -> int:
    try:
        return int(entry.value)
    except ValueError:
        raise ScenarioError(f"expected an integer, got {entry.value!r}", path, entry.line) from None


def _boolean(entry, path) -> bool:
    v = entry.value.lower()
    if v in ("yes", "true", "on", "1"):
        return True
    if v in ("no", "false", "off", "0"):
        return False
    raise ScenarioError(f"expected yes/no, got {entry.value!r}", path, entry.line)


def _check_required(sections, section_lines, path):
    for sec, keys in _REQUIRED.items():
        if sec not in sections:
            raise ScenarioError(f"missing section [{sec}]", path, None)
        for key in keys:
            if key not in sections[sec]:
                raise ScenarioError(f"missing key {key!r} in [{sec}]", path, section_lines[sec])
    if "lines" not in sections:
        raise ScenarioError("missing section [lines]", path, None)


def _parse_lines(sections, section_lines, n, path):
    lines = []
    seen = {}
    for key, entry in sections["lines"].items():
        m = _LINE_KEY.match(key)
        if not m:
            raise ScenarioError(f"line key must look like 'i-j', got {key!r}", path, entry.line)
        i, j = int(m.group(1)), int(m.group(2))
        if not (1 <= i <= n and 1 <= j <= n):
            raise ScenarioError(f"line {i}-{j} references a terminal outside 1..{n}", path, entry.line)
        if i == j:
            raise ScenarioError(f"self-loop at terminal {i}", path, entry.line)
        pair = (min(i, j), max(i, j))
        if pair in seen:
            raise ScenarioError(f"duplicate line {pair[0]}-{pair[1]} (first given on line "
                                f"{seen[pair]})", path, entry.line)
        seen[pair] = entry.line
        r = _scalar(entry, "resistance", path)
        if not r > 0:
            raise ScenarioError(f"resistance of line {i}-{j} must be > 0", path, entry.line)
        lines.append((i - 1, j - 1, r))
    return lines


def _parse_initial(sec, controller, n, path):
    V = controller.V_nom.copy()
    z = np.zeros(n)
    if sec is not None:
        if "voltage" in sec:
            V = _quantities(sec["voltage"], "voltage", path, n)
        if "z" in sec:
            z = _quantities(sec["z"], "integral", path, n)
    return SystemState(0.0, V, z)


def _parse_integrator(sec, path) -> IntegratorConfig:
    if sec is None:
        return IntegratorConfig()
    kwargs = {}
    for key, entry in sec.items():
        quantity = _SECTIONS["integrator"][key]
        if quantity is not None:
            kwargs[key] = _scalar(entry, quantity, path)
        elif key in ("record_stride", "tail_stride"):
            kwargs[key] = _integer(entry, path)
        else:
            kwargs[key] = _boolean(entry, path)
    try:
        return IntegratorConfig(**kwargs)
    except MTDCError as exc:
        raise ScenarioError(str(exc), path, min(e.line for e in sec.values())) from None


def parse_scenario_text(text: str, path=None) -> Scenario:
    version, sections, section_lines = _tokenize(text, path, (SCENARIO_HEADER,))
    _check_required(sections, section_lines, path)

    grid = sections["grid"]
    n = _integer(grid["terminals"], path)
    if n < 1:
        raise ScenarioError("terminals must be >= 1", path, grid["terminals"].line)
    caps = _quantities(grid["capacitance"], "capacitance", path, n)
    if np.any(caps <= 0):
        raise ScenarioError("capacitances must be > 0", path, grid["capacitance"].line)
    lines = _parse_lines(sections, section_lines, n, path)
    try:
        topology = GridTopology(n, tuple(lines), tuple(caps))
    except MTDCError as exc:
        raise ScenarioError(str(exc), path, section_lines["lines"]) from None

    ctl = sections["controller"]
    kind_entry = ctl["kind"]
    try:
        kind = ControllerKind.parse(kind_entry.value)
    except MTDCError as exc:
        raise ScenarioError(str(exc), path, kind_entry.line) from None
    if kind is not ControllerKind.DROOP and "k_i" not in ctl:
        raise ScenarioError(f"missing key 'k_i' in [controller] (required for {kind.value})",
                            path, section_lines["controller"])
    if kind is ControllerKind.DEADBAND_PI:
        for key in ("v_lo", "v_hi"):
            if key not in ctl:
                raise ScenarioError(f"missing key {key!r} in [controller] (required for deadband-pi)",
                                    path, section_lines["controller"])
    values = {key: _quantities(entry, _SECTIONS["controller"][key], path, n)
              for key, entry in ctl.items() if key != "kind"}
    if "v_lo" in values and "v_hi" in values:
        bad = np.flatnonzero(values["v_lo"] > values["v_hi"])
        if bad.size:
            k = int(bad[0])
            raise ScenarioError(f"terminal {k + 1}: v_lo ({values['v_lo'][k]} V) exceeds "
                                f"v_hi ({values['v_hi'][k]} V)", path, ctl["v_lo"].line)
    try:
        controller = ControllerConfig(kind, values["k_p"], values["v_nom"],
                                      K_I=values.get("k_i", 0.0), V_lo=values.get("v_lo"),
                                      V_hi=values.get("v_hi"), n_terminals=n)
    except MTDCError as exc:
        raise ScenarioError(str(exc), path, section_lines["controller"]) from None

    I_inj = _quantities(sections["injection"]["current"], "current", path, n)
    initial = _parse_initial(sections.get("initial"), controller, n, path)
    integrator = _parse_integrator(sections.get("integrator"), path)
    return Scenario(topology, controller, I_inj, initial, integrator, version)


def parse_scenario(path) -> Scenario:
    """Read and validate a scenario file; units are converted to SI."""
    path = os.fspath(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", path, None) from None
    return parse_scenario_text(text, path)


def _fmt(values, quantity) -> str:
    unit = BASE_UNIT[quantity]
    return ", ".join(f"{float(v)!r} {unit}" for v in np.atleast_1d(values))


def emit_scenario(s: Scenario) -> str:
    """Serialise in SI units with full-precision floats."""
    c = s.controller
    out = [f"{SCENARIO_HEADER} {s.version}", "", "[grid]",
           f"terminals = {s.topology.n_terminals}",
           f"capacitance = {_fmt(s.topology.capacitances, 'capacitance')}", "", "[lines]"]
    out += [f"{i + 1}-{j + 1} = {_fmt(r, 'resistance')}" for i, j, r in s.topology.lines]
    out += ["", "[controller]", f"kind = {c.kind.value}",
            f"k_p = {_fmt(c.K_P, 'conductance')}",
            f"k_i = {_fmt(c.K_I, 'integral_gain')}",
            f"v_nom = {_fmt(c.V_nom, 'voltage')}",
            f"v_lo = {_fmt(c.V_lo, 'voltage')}",
            f"v_hi = {_fmt(c.V_hi, 'voltage')}", ""]
    out += _emit_injection(s.I_inj) + _emit_initial(s.initial)
    ic = s.integrator
    out += ["[integrator]", f"step = {_fmt(ic.step, 'time')}",
            f"horizon = {_fmt(ic.horizon, 'time')}",
            f"steady_state_tol = {_fmt(ic.steady_state_tol, 'rate')}",
            f"record_stride = {ic.record_stride}",
            f"stop_at_steady = {'yes' if ic.stop_at_steady else 'no'}",
            f"until_steady = {'yes' if ic.until_steady else 'no'}",
            f"max_time = {_fmt(ic.max_time, 'time')}"]
    if ic.tail_stride is not None:
        out.append(f"tail_stride = {ic.tail_stride}")
    return "\n".join(out) + "\n"


def _emit_injection(I_inj):
    return ["[injection]", f"current = {_fmt(I_inj, 'current')}", ""]


def _emit_initial(state):
    return ["[initial]", f"voltage = {_fmt(state.V, 'voltage')}",
            f"z = {_fmt(state.z, 'integral')}", ""]


def write_scenario(s: Scenario, path) -> None:
    Path(path).write_text(emit_scenario(s), encoding="utf-8")


def emit_overlay(I_inj=None, initial: SystemState | None = None, comment: str | None = None) -> str:
    out = [f"{OVERLAY_HEADER} {FORMAT_VERSION}"]
    if comment:
        out += [f"# {line}" for line in comment.splitlines()]
    out.append("")
    if I_inj is not None:
        out += _emit_injection(I_inj)
    if initial is not None:
        out += _emit_initial(initial)
    return "\n".join(out)


def apply_overlay_text(base: Scenario, text: str, path=None) -> Scenario:
    _, sections, section_lines = _tokenize(text, path, (OVERLAY_HEADER,))
    for sec in sections:
        if sec not in ("injection", "initial"):
            raise ScenarioError(f"section [{sec}] is not allowed in an overlay", path, section_lines[sec])
    n = base.n_terminals
    s = base
    if "injection" in sections:
        inj = sections["injection"]
        if "current" not in inj:
            raise ScenarioError("missing key 'current' in [injection]", path, section_lines["injection"])
        s = replace(s, I_inj=_quantities(inj["current"], "current", path, n))
    if "initial" in sections:
        sec = sections["initial"]
        V = _quantities(sec["voltage"], "voltage", path, n) if "voltage" in sec else s.initial.V
        z = _quantities(sec["z"], "integral", path, n) if "z" in sec else s.initial.z
        s = replace(s, initial=SystemState(s.initial.t, V, z))
    return s


def apply_overlay(base: Scenario, path) -> Scenario:
    path = os.fspath(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read overlay: {exc.strerror}", path, None) from None
    return apply_overlay_text(base, text, path)


def bundled_scenario_path(name: str = "paper_fig1.scn") -> Path:
    """Path of a scenario shipped inside the package."""
    return Path(str(resources.files("mtdcsim") / "data" / name))
