"""Scenario configuration: dataclass, flat key=value file format, defaults.

The file format is line-oriented `section.key = value` with `#` comments.
Matrices are flat row-major lists of reals, setpoints are per-channel
descriptors like `constant(1)` or `exponential(1, 0.01)`. Unknown and
duplicate keys are rejected. `config_reference()` generates the key table
with defaults, which is the single source of truth for both the parser and
the documentation.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

import numpy as np

from .closed_loop import PlantSpec, ReferenceSpec, Setpoint
from .drem import FilterBank
from .errors import ConfigError

_SETPOINT_RE = re.compile(r"^([a-z]+)\s*\(([^)]*)\)$")


def parse_setpoint(text: str) -> Setpoint:
    match = _SETPOINT_RE.match(text.strip())
    if not match:
        raise ConfigError(f"malformed setpoint descriptor {text!r}")
    kind, args = match.group(1), match.group(2)
    try:
        params = tuple(float(a) for a in args.replace(",", " ").split())
        return Setpoint(kind=kind, params=params)
    except ValueError as exc:
        raise ConfigError(f"invalid setpoint {text!r}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Complete description of one deterministic scenario."""

    a: np.ndarray
    b: np.ndarray
    a_ref: np.ndarray
    b_ref: np.ndarray
    setpoints: tuple
    pole: float = 100.0             # error-filter constant l
    bank_gains: np.ndarray = None   # extension filter gains, default all 1
    bank_poles: np.ndarray = None   # extension filter poles, default 1..n+m-1
    sigma: float = 0.125            # memory factor
    gamma0: float = 0.1             # initial adaptation gain
    forgetting: float = 1000.0      # least-squares forgetting factor
    nd_floor: float = 0.025         # dead-zone radius
    gamma_max: float = 1e300        # adaptation gain clamp (overflow guard)
    eps_omega: float = 1e-10        # excitation detection threshold
    monitor_level: float = 1e-20    # excitation degree for the excited flag
    monitor_window: float | None = None  # None = full horizon
    x0: np.ndarray = None
    x_ref0: np.ndarray = None
    kx0: np.ndarray = None          # m x n, default zero
    na0: np.ndarray = None          # m x m, default identity
    nd0: float = -0.125
    dt: float = 1e-4
    t_end: float = 50.0
    decimate: int = 10

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        n = a.shape[0]
        b = np.asarray(self.b, dtype=float)
        m = b.shape[1]
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a_ref", np.asarray(self.a_ref, dtype=float))
        object.__setattr__(self, "b_ref", np.asarray(self.b_ref, dtype=float))
        object.__setattr__(self, "setpoints", tuple(self.setpoints))
        defaults = {
            "bank_gains": np.ones(n + m - 1),
            "bank_poles": np.arange(1.0, n + m),
            "x0": np.zeros(n),
            "x_ref0": np.zeros(n),
            "kx0": np.zeros((m, n)),
            "na0": np.eye(m),
        }
        for name, value in defaults.items():
            current = getattr(self, name)
            object.__setattr__(
                self, name, value if current is None else np.asarray(current, dtype=float)
            )
        self.validate()

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    def plant(self) -> PlantSpec:
        return PlantSpec(self.a, self.b)

    def reference(self) -> ReferenceSpec:
        return ReferenceSpec(self.a_ref, self.b_ref)

    def bank(self) -> FilterBank:
        return FilterBank.initial(self.n, self.m, self.bank_gains, self.bank_poles)

    def validate(self) -> None:
        """Run every load-time invariant; raise ConfigError on the first failure."""
        try:
            plant = self.plant()
            self.reference()
            self.bank()
            n, m = plant.n, plant.m
            if self.a_ref.shape != (n, n) or self.b_ref.shape != (n, m):
                raise ConfigError("reference matrices do not match plant dimensions")
            if len(self.setpoints) != m:
                raise ConfigError(f"need {m} setpoint channels, got {len(self.setpoints)}")
            if self.pole <= 0:
                raise ConfigError("filter.l must be positive")
            if self.sigma <= 0:
                raise ConfigError("memory.sigma must be positive")
            if self.gamma0 <= 0 or self.forgetting <= 0 or self.nd_floor <= 0:
                raise ConfigError("adaptation gains and dead-zone radius must be positive")
            if self.gamma_max < self.gamma0:
                raise ConfigError("adaptation.gamma_max must be at least gamma0")
            if self.eps_omega <= 0 or self.monitor_level <= 0:
                raise ConfigError("detection thresholds must be positive")
            if self.monitor_window is not None and self.monitor_window <= 0:
                raise ConfigError("monitor.window must be positive when given")
            if self.x0.shape != (n,) or self.x_ref0.shape != (n,):
                raise ConfigError("initial states must be n-vectors")
            if self.kx0.shape != (m, n):
                raise ConfigError("init.kx0 must be an m x n matrix")
            if self.na0.shape != (m, m):
                raise ConfigError("init.Na0 must be an m x m matrix")
            if not (self.dt > 0):
                raise ConfigError("integration.dt must be positive")
            if not (self.t_end > self.dt):
                raise ConfigError("integration.t_end must exceed dt")
            if int(self.decimate) != self.decimate or self.decimate < 1:
                raise ConfigError("output.decimate must be a positive integer")
        except ConfigError:
            raise
        except Exception as exc:  # dimension/rank/Hurwitz failures at load time
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, **kwargs) -> "SimConfig":
        return replace(self, **kwargs)


# Key table: name -> (kind, required, default-as-text, description).
# Kinds: int, float, floats (flat list), setpoint. Matrix keys give their
# shape in the description; dimensions come from plant.n / plant.m.
_KEYS = {
    "plant.n": ("int", True, None, "state dimension n"),
    "plant.m": ("int", True, None, "input dimension m (m <= n)"),
    "plant.A": ("floats", True, None, "plant state matrix, n*n row-major"),
    "plant.B": ("floats", True, None, "plant input matrix, n*m row-major, full column rank"),
    "reference.A_ref": ("floats", True, None, "reference state matrix, n*n row-major, Hurwitz"),
    "reference.B_ref": ("floats", True, None, "reference input matrix, n*m row-major, full column rank"),
    "setpoint.<k>": ("setpoint", True, None,
                     "channel k in 1..m: constant(c) | exponential(c, a) | sine(amp, freq, phase) | step(level, time)"),
    "filter.l": ("float", False, "100", "error-filter constant, 1/s"),
    "drem.alpha": ("floats", False, "1 ... 1", "extension filter gains, n+m-1 positive values"),
    "drem.beta": ("floats", False, "1 2 ... n+m-1", "extension filter poles, positive and distinct"),
    "memory.sigma": ("float", False, "0.125", "memory (forgetting) factor of the regression accumulators, 1/s"),
    "adaptation.gamma0": ("float", False, "0.1", "initial adaptation gain"),
    "adaptation.lambda": ("float", False, "1000", "least-squares forgetting factor, 1/s"),
    "adaptation.nd_floor": ("float", False, "0.025", "dead-zone radius for the determinant inverse"),
    "adaptation.gamma_max": ("float", False, "1e300", "adaptation gain clamp (overflow guard)"),
    "adaptation.eps_omega": ("float", False, "1e-10", "excitation detection threshold on |omega|"),
    "monitor.level": ("float", False, "1e-20", "excitation degree for the excited flag"),
    "monitor.window": ("float", False, "full horizon", "excitation accumulation window, s"),
    "init.x0": ("floats", False, "0 ... 0", "plant initial state, n values"),
    "init.x_ref0": ("floats", False, "0 ... 0", "reference initial state, n values"),
    "init.kx0": ("floats", False, "0 ... 0", "initial feedback gain estimate, m*n row-major"),
    "init.Na0": ("floats", False, "identity", "initial adjugate estimate, m*m row-major"),
    "init.Nd0": ("float", False, "-0.125", "initial determinant estimate"),
    "integration.dt": ("float", False, "1e-4", "fixed integration step, s"),
    "integration.t_end": ("float", False, "50", "simulation horizon, s"),
    "output.decimate": ("int", False, "10", "record every k-th step"),
}


def config_reference() -> str:
    """Generated reference of every configuration key and its default."""
    lines = ["Configuration keys (line format: key = value, '#' starts a comment)", ""]
    for key, (kind, required, default, desc) in _KEYS.items():
        status = "required" if required else f"default {default}"
        lines.append(f"  {key:24s} {kind:9s} {status:22s} {desc}")
    return "\n".join(lines) + "\n"


def _parse_floats(text: str, key: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.replace(",", " ").split()])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a list of reals, got {text!r}") from exc


def _parse_scalar(text: str, key: str, kind: str):
    try:
        return int(text) if kind == "int" else float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a {kind}, got {text!r}") from exc


def parse_config_text(text: str) -> SimConfig:
    """Parse the key=value scenario format into a validated SimConfig."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    known = set(_KEYS) - {"setpoint.<k>"}
    for key in raw:
        if key in known or re.fullmatch(r"setpoint\.\d+", key):
            continue
        raise ConfigError(f"unknown key {key!r}")

    for key, (_, required, _, _) in _KEYS.items():
        if required and key != "setpoint.<k>" and key not in raw:
            raise ConfigError(f"missing required key {key!r}")

    n = _parse_scalar(raw["plant.n"], "plant.n", "int")
    m = _parse_scalar(raw["plant.m"], "plant.m", "int")
    if n < 1 or m < 1:
        raise ConfigError("plant.n and plant.m must be positive")

    def matrix(key: str, rows: int, cols: int) -> np.ndarray:
        values = _parse_floats(raw[key], key)
        if values.size != rows * cols:
            raise ConfigError(f"{key}: expected {rows * cols} entries ({rows}x{cols} row-major), got {values.size}")
        return values.reshape(rows, cols)

    setpoints = []
    for k in range(1, m + 1):
        key = f"setpoint.{k}"
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
        setpoints.append(parse_setpoint(raw[key]))
    extra = [k for k in raw if re.fullmatch(r"setpoint\.\d+", k) and not 1 <= int(k.split(".")[1]) <= m]
    if extra:
        raise ConfigError(f"setpoint channel out of range: {extra[0]!r} (channels are 1..{m})")

    kwargs = {}
    scalar_map = {
        "filter.l": ("pole", "float"),
        "memory.sigma": ("sigma", "float"),
        "adaptation.gamma0": ("gamma0", "float"),
        "adaptation.lambda": ("forgetting", "float"),
        "adaptation.nd_floor": ("nd_floor", "float"),
        "adaptation.gamma_max": ("gamma_max", "float"),
        "adaptation.eps_omega": ("eps_omega", "float"),
        "monitor.level": ("monitor_level", "float"),
        "monitor.window": ("monitor_window", "float"),
        "init.Nd0": ("nd0", "float"),
        "integration.dt": ("dt", "float"),
        "integration.t_end": ("t_end", "float"),
        "output.decimate": ("decimate", "int"),
    }
    for key, (attr, kind) in scalar_map.items():
        if key in raw:
            kwargs[attr] = _parse_scalar(raw[key], key, kind)
    if "drem.alpha" in raw:
        kwargs["bank_gains"] = _parse_floats(raw["drem.alpha"], "drem.alpha")
    if "drem.beta" in raw:
        kwargs["bank_poles"] = _parse_floats(raw["drem.beta"], "drem.beta")
    for key, attr, rows, cols in (
        ("init.kx0", "kx0", m, n),
        ("init.Na0", "na0", m, m),
    ):
        if key in raw:
            kwargs[attr] = matrix(key, rows, cols)
    for key, attr in (("init.x0", "x0"), ("init.x_ref0", "x_ref0")):
        if key in raw:
            values = _parse_floats(raw[key], key)
            if values.size != n:
                raise ConfigError(f"{key}: expected {n} entries, got {values.size}")
            kwargs[attr] = values

    return SimConfig(
        a=matrix("plant.A", n, n),
        b=matrix("plant.B", n, m),
        a_ref=matrix("reference.A_ref", n, n),
        b_ref=matrix("reference.B_ref", n, m),
        setpoints=tuple(setpoints),
        **kwargs,
    )


def load_config(path) -> SimConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)
