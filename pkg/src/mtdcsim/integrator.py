"""Fixed-step RK4 integration of the closed-loop grid and controller dynamics.

The joint state is (V, z). ``step`` is a readable vectorised reference that
reuses :func:`mtdcsim.grid.dynamics_rhs`; ``simulate`` runs the long loop in
the compiled ``_rk4`` kernel when it is available and falls back to the
pure-Python ``_rk4_py`` loop otherwise. Set ``MTDCSIM_PURE_PYTHON=1`` to
force the fallback.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from . import _rk4_py
from .controllers import ControllerConfig, ControllerKind, control_output, state_derivative
from .errors import ConfigError, NumericalBlowupError, ValidationError
from .grid import GridTopology, dynamics_rhs

log = logging.getLogger(__name__)

try:
    from . import _rk4 as _compiled
except ImportError:  # extension not built
    _compiled = None

KERNELS = {"python": _rk4_py}
if _compiled is not None:
    KERNELS["cython"] = _compiled

if os.environ.get("MTDCSIM_PURE_PYTHON") or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "cython"


@dataclass(frozen=True, eq=False)
class SystemState:
    """Voltages (V) and integrator states (V*s) at time ``t`` (s)."""

    t: float
    V: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        z = np.array(self.z, dtype=float)
        if V.ndim != 1 or z.shape != V.shape:
            raise ValidationError(f"V and z must be 1-D of equal length, got {V.shape} and {z.shape}")
        if not (np.isfinite(self.t) and np.all(np.isfinite(V)) and np.all(np.isfinite(z))):
            raise ValidationError("state contains non-finite values")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "z", z)

    @classmethod
    def at_rest(cls, V, t: float = 0.0) -> "SystemState":
        """State with zero integrator contents."""
        V = np.asarray(V, dtype=float)
        return cls(t, V, np.zeros_like(V))


@dataclass(frozen=True)
class IntegratorConfig:
    """Step size, horizon and recording policy.

    Samples are recorded every ``record_stride`` steps up to ``horizon``. With
    ``until_steady`` the run continues past the horizon (up to ``max_time``)
    until the steady-state test passes, recording every ``tail_stride`` steps
    in that extension (default: one sample per millisecond).
    """

    step: float = 1e-6
    horizon: float = 1.5e-3
    steady_state_tol: float = 1e-3
    record_stride: int = 1
    stop_at_steady: bool = True
    until_steady: bool = False
    max_time: float = 60.0
    tail_stride: int | None = None

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError(f"step must be > 0, got {self.step}")
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be > 0, got {self.horizon}")
        if self.step > self.horizon:
            raise ConfigError("step must not exceed the horizon")
        if not self.steady_state_tol > 0:
            raise ConfigError("steady_state_tol must be > 0")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ConfigError("record_stride must be a positive integer")
        if self.tail_stride is not None and (int(self.tail_stride) != self.tail_stride or self.tail_stride < 1):
            raise ConfigError("tail_stride must be a positive integer")
        if self.until_steady and self.max_time < self.horizon:
            raise ConfigError("max_time must be at least the horizon")

    @property
    def horizon_steps(self) -> int:
        return max(1, int(round(self.horizon / self.step)))

    @property
    def tail_steps(self) -> int:
        return max(0, int(round(self.max_time / self.step)) - self.horizon_steps)

    @property
    def effective_tail_stride(self) -> int:
        if self.tail_stride is not None:
            return int(self.tail_stride)
        return max(int(self.record_stride), int(round(1e-3 / self.step)))


@dataclass(eq=False)
class Trajectory:
    """Recorded samples of one closed-loop run.

    Sample times are strictly increasing. Spacing is ``step * record_stride``
    inside the horizon and ``step * tail_stride`` in an ``until_steady``
    extension; the last sample is always the final state.
    """

    topology: GridTopology
    controller: ControllerConfig
    I_inj: np.ndarray
    t: np.ndarray
    V: np.ndarray
    z: np.ndarray
    converged: bool
    steps: int
    backend: str
    config: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __len__(self):
        return self.t.size

    @property
    def final(self) -> SystemState:
        return SystemState(self.t[-1], self.V[-1], self.z[-1])

    @cached_property
    def u(self) -> np.ndarray:
        cfg = self.controller
        u = -cfg.K_P * (self.V - cfg.V_nom)
        if cfg.kind is not ControllerKind.DROOP:
            u = u - cfg.K_I * self.z
        return u

    @cached_property
    def line_currents(self) -> np.ndarray:
        i, j = self.topology.endpoints
        return (self.V[:, i] - self.V[:, j]) / self.topology.resistances

    def state(self, k: int) -> SystemState:
        return SystemState(self.t[k], self.V[k], self.z[k])

    def derivatives(self, k: int = -1) -> tuple[np.ndarray, np.ndarray]:
        """(dV/dt, dz/dt) at sample ``k``."""
        return closed_loop_rhs(self.topology, self.controller, self.I_inj, self.V[k], self.z[k])


def closed_loop_rhs(topology: GridTopology, cfg: ControllerConfig, I_inj, V, z):
    """Right-hand side (dV/dt, dz/dt) of the controlled grid."""
    u = control_output(cfg, V, z)
    return dynamics_rhs(topology, V, I_inj, u), state_derivative(cfg, V)


def rk4_step(f: Callable, x, h: float, names=("k1", "k2", "k3", "k4")):
    """One classical RK4 step of the autonomous ODE x' = f(x).

    Raises :class:`NumericalBlowupError` naming the first non-finite stage.
    """
    x = np.asarray(x, dtype=float)
    hh = 0.5 * h

    def stage(arg, name):
        k = np.asarray(f(arg), dtype=float)
        if not np.all(np.isfinite(k)):
            raise NumericalBlowupError(f"non-finite derivative in RK4 stage {name}", stage=name)
        return k

    # overflow is reported through the stage check, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = stage(x, names[0])
        k2 = stage(x + hh * k1, names[1])
        k3 = stage(x + hh * k2, names[2])
        k4 = stage(x + h * k3, names[3])
        out = x + (h / 6.0) * (((k1 + 2.0 * k2) + 2.0 * k3) + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalBlowupError("non-finite state after RK4 update", stage="update")
    return out


def step(topology: GridTopology, cfg: ControllerConfig, I_inj, state: SystemState, h: float) -> SystemState:
    """Advance the closed loop by one RK4 step of size ``h``."""
    if not h > 0:
        raise ValidationError(f"step must be > 0, got {h}")
    n = topology.n_terminals
    if state.V.size != n or cfg.n_terminals != n:
        raise ValidationError("state, controller and topology disagree on the number of terminals")

    def f(x):
        dV, dz = closed_loop_rhs(topology, cfg, I_inj, x[:n], x[n:])
        return np.concatenate([dV, dz])

    try:
        x = rk4_step(f, np.concatenate([state.V, state.z]), h)
    except NumericalBlowupError as exc:
        raise NumericalBlowupError(f"{exc} at t={state.t:.9g} s", t=state.t, stage=exc.stage) from None
    return SystemState(state.t + h, x[:n], x[n:])


def _kernel_args(topology: GridTopology, cfg: ControllerConfig, I_inj: np.ndarray):
    i, j = topology.endpoints
    return (np.ascontiguousarray(i, dtype=np.intp), np.ascontiguousarray(j, dtype=np.intp),
            np.ascontiguousarray(topology.conductances), np.ascontiguousarray(topology.elastance),
            cfg.kind.code, np.ascontiguousarray(cfg.K_P), np.ascontiguousarray(cfg.K_I),
            np.ascontiguousarray(cfg.V_nom), np.ascontiguousarray(cfg.V_lo),
            np.ascontiguousarray(cfg.V_hi), np.ascontiguousarray(I_inj, dtype=float))


def simulate(topology: GridTopology, cfg: ControllerConfig, I_inj, initial: SystemState,
             icfg: IntegratorConfig | None = None, backend: str | None = None) -> Trajectory:
    """Integrate the closed loop from ``initial``.

    Stops early once both max|dV/dt| and max|dz/dt| drop below
    ``steady_state_tol`` (unless ``stop_at_steady`` is off). A non-finite step
    raises :class:`NumericalBlowupError` carrying the failing time, stage and
    the samples recorded so far (``exc.trajectory``).
    """
    icfg = icfg or IntegratorConfig()
    backend = backend or BACKEND
    try:
        kernel = KERNELS[backend]
    except KeyError:
        raise ConfigError(f"backend {backend!r} unavailable (have {sorted(KERNELS)})") from None

    n = topology.n_terminals
    if cfg.n_terminals != n or initial.V.size != n:
        raise ValidationError("controller, initial state and topology disagree on the number of terminals")
    I_inj = np.array(I_inj, dtype=float)
    if I_inj.shape != (n,) or not np.all(np.isfinite(I_inj)):
        raise ValidationError(f"I_inj must be a finite vector of length {n}")

    args = _kernel_args(topology, cfg, I_inj)
    v = initial.V.copy()
    z = np.zeros(n) if cfg.kind is ControllerKind.DROOP else initial.z.copy()
    h = float(icfg.step)
    tol = float(icfg.steady_state_tol) if icfg.stop_at_steady else -1.0

    phases = [(icfg.horizon_steps, int(icfg.record_stride))]
    if icfg.until_steady and icfg.tail_steps:
        phases.append((icfg.tail_steps, icfg.effective_tail_stride))

    t_parts, v_parts, z_parts = [], [], []
    k0 = 0
    status = 0
    for n_steps, stride in phases:
        n_rec = -(-n_steps // stride)
        rec_v = np.empty((n_rec, n))
        rec_z = np.empty((n_rec, n))
        done, got, status = kernel.integrate(*args, v, z, h, n_steps, stride, tol, rec_v, rec_z)
        t_parts.append(initial.t + (k0 + stride * np.arange(got)) * h)
        v_parts.append(rec_v[:got])
        z_parts.append(rec_z[:got])
        k0 += done
        if status != 0:
            break

    t_end = initial.t + k0 * h
    t_parts.append(np.array([t_end]))
    v_parts.append(v[None, :].copy())
    z_parts.append(z[None, :].copy())
    t = np.concatenate(t_parts)
    V = np.concatenate(v_parts)
    Z = np.concatenate(z_parts)
    if t.size > 1 and t[-2] == t[-1]:
        t, V, Z = t[:-1], V[:-1], Z[:-1]

    traj = Trajectory(topology, cfg, I_inj, t, V, Z, converged=(status == 1), steps=k0,
                      backend=backend, config=icfg)
    if status == 2:
        try:
            step(topology, cfg, I_inj, SystemState(t_end, v, z), h)
        except NumericalBlowupError as exc:
            exc.trajectory = traj
            raise
        exc = NumericalBlowupError(f"non-finite state after step at t={t_end:.9g} s", t=t_end, stage="update")
        exc.trajectory = traj
        raise exc
    log.debug("simulated %d steps with %s backend, converged=%s", k0, backend, traj.converged)
    return traj
