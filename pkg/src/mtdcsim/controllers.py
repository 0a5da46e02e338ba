"""Decentralized voltage controllers: droop, PI and deadband PI.

Each controller maps the local terminal voltage V_i and integrator state z_i
to a controlled current u_i; the integrator derivative is likewise local.
The three kinds share one law,

    u_i = -K_P,i (V_i - V_nom,i) - K_I,i z_i

and differ only in what drives z_i:

* droop: nothing, z stays at zero;
* PI: the voltage error V_i - V_nom,i;
* deadband PI: the excursion of V_i outside [V_lo,i, V_hi,i].
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError


class ControllerKind(enum.Enum):
    DROOP = "droop"
    PI = "pi"
    DEADBAND_PI = "deadband-pi"

    @classmethod
    def parse(cls, text: str) -> "ControllerKind":
        key = text.strip().lower().replace("_", "-")
        aliases = {"deadbandpi": "deadband-pi", "deadband": "deadband-pi"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown controller kind {text!r} (expected one of {choices})") from None

    @property
    def code(self) -> int:
        """Integer tag understood by the integration kernels."""
        return _KIND_CODES[self]


_KIND_CODES = {ControllerKind.DROOP: 0, ControllerKind.PI: 1, ControllerKind.DEADBAND_PI: 2}


def _as_array(value, name):
    arr = np.array(value, dtype=float, ndmin=1)
    if arr.ndim != 1:
        raise ConfigError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ControllerConfig:
    """Per-terminal gains, nominal voltage and operating band.

    Scalars are broadcast to ``n_terminals`` entries. ``K_I`` is ignored by the
    droop controller and the band ``[V_lo, V_hi]`` is only used by deadband PI
    (it is still validated when given).
    """

    kind: ControllerKind
    K_P: np.ndarray
    K_I: np.ndarray
    V_nom: np.ndarray
    V_lo: np.ndarray
    V_hi: np.ndarray

    def __init__(self, kind, K_P, V_nom, K_I=0.0, V_lo=None, V_hi=None, n_terminals=None):
        if not isinstance(kind, ControllerKind):
            kind = ControllerKind.parse(str(kind))
        fields = {"K_P": K_P, "K_I": K_I, "V_nom": V_nom,
                  "V_lo": V_nom if V_lo is None else V_lo,
                  "V_hi": V_nom if V_hi is None else V_hi}
        arrays = {k: _as_array(v, k) for k, v in fields.items()}
        n = n_terminals or max(a.size for a in arrays.values())
        for k, a in arrays.items():
            if a.size == 1 and n > 1:
                a = np.full(n, a[0])
                a.flags.writeable = False
            elif a.size != n:
                raise ConfigError(f"{k} has {a.size} entries, expected {n}")
            arrays[k] = a
        object.__setattr__(self, "kind", kind)
        for k, a in arrays.items():
            object.__setattr__(self, k, a)
        self._validate()

    def _validate(self):
        if np.any(self.K_P <= 0):
            raise ConfigError("all K_P must be > 0")
        if self.kind is not ControllerKind.DROOP and np.any(self.K_I <= 0):
            raise ConfigError(f"all K_I must be > 0 for the {self.kind.value} controller")
        if np.any(self.K_I < 0):
            raise ConfigError("K_I must be >= 0")
        if not np.all(self.V_nom == self.V_nom[0]):
            raise ConfigError("V_nom must be identical at every terminal")
        bad = np.flatnonzero(self.V_lo > self.V_hi)
        if bad.size:
            k = int(bad[0])
            raise ConfigError(f"terminal {k + 1}: V_lo={self.V_lo[k]} exceeds V_hi={self.V_hi[k]}")
        if self.kind is ControllerKind.DEADBAND_PI:
            bad = np.flatnonzero((self.V_nom < self.V_lo) | (self.V_nom > self.V_hi))
            if bad.size:
                k = int(bad[0])
                raise ConfigError(f"terminal {k + 1}: V_nom={self.V_nom[k]} lies outside "
                                  f"[{self.V_lo[k]}, {self.V_hi[k]}]")

    @property
    def n_terminals(self) -> int:
        return self.K_P.size

    @property
    def uniform_bounds(self) -> bool:
        lo, hi = self.effective_band()
        return bool(np.all(lo == lo[0]) and np.all(hi == hi[0]))

    def effective_band(self) -> tuple[np.ndarray, np.ndarray]:
        """Band that gates the integrator: the degenerate band {V_nom} for PI."""
        if self.kind is ControllerKind.PI:
            return self.V_nom, self.V_nom
        return self.V_lo, self.V_hi

    def with_kind(self, kind) -> "ControllerConfig":
        if not isinstance(kind, ControllerKind):
            kind = ControllerKind.parse(str(kind))
        return ControllerConfig(kind, self.K_P, self.V_nom, K_I=self.K_I, V_lo=self.V_lo, V_hi=self.V_hi)

    def __eq__(self, other):
        if not isinstance(other, ControllerConfig):
            return NotImplemented
        return self.kind is other.kind and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("K_P", "K_I", "V_nom", "V_lo", "V_hi"))

    def __repr__(self):
        return (f"ControllerConfig(kind={self.kind.value!r}, K_P={self.K_P.tolist()}, "
                f"K_I={self.K_I.tolist()}, V_nom={self.V_nom.tolist()}, "
                f"V_lo={self.V_lo.tolist()}, V_hi={self.V_hi.tolist()})")


def _check(cfg: ControllerConfig, x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (cfg.n_terminals,):
        raise ValidationError(f"{name} must have shape ({cfg.n_terminals},), got {arr.shape}")
    return arr


def control_output(cfg: ControllerConfig, V, z) -> np.ndarray:
    """Controlled current u in amperes."""
    V = _check(cfg, V, "V")
    u = -cfg.K_P * (V - cfg.V_nom)
    if cfg.kind is ControllerKind.DROOP:
        return u
    z = _check(cfg, z, "z")
    return u - cfg.K_I * z


def deadband(V, V_lo, V_hi) -> np.ndarray:
    """Signed excursion of V outside [V_lo, V_hi]; zero inside the band."""
    V = np.asarray(V, dtype=float)
    V_lo = np.broadcast_to(np.asarray(V_lo, dtype=float), V.shape)
    V_hi = np.broadcast_to(np.asarray(V_hi, dtype=float), V.shape)
    bad = np.flatnonzero(V_lo > V_hi)
    if bad.size:
        raise ConfigError(f"terminal {int(bad[0]) + 1}: lower bound exceeds upper bound")
    return np.maximum(V - V_hi, 0.0) - np.maximum(V_lo - V, 0.0)


def state_derivative(cfg: ControllerConfig, V) -> np.ndarray:
    """Integrator derivative dz/dt in volts."""
    V = _check(cfg, V, "V")
    if cfg.kind is ControllerKind.DROOP:
        return np.zeros_like(V)
    if cfg.kind is ControllerKind.PI:
        return V - cfg.V_nom
    return deadband(V, cfg.V_lo, cfg.V_hi)
