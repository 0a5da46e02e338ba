"""Closed-form results and numerical checks for the three controllers.

Covers the droop equilibrium, the optimal current sharing of the quadratic
cost problem (closed form plus an independent KKT solve), construction of a
disturbance that pushes droop-controlled voltages out of range, the
vanishing-resistance sharing sweep, the local compensation property of PI
control, the Lyapunov function of the deadband PI loop and the small-signal
equivalence of deadband PI and droop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controllers import ControllerConfig, ControllerKind, deadband
from .errors import ConfigError, NotAtSteadyStateError, RankError, ValidationError
from .grid import GridTopology
from .integrator import IntegratorConfig, SystemState, Trajectory, simulate


def _vec(x, n, name):
    arr = np.array(x, dtype=float, ndmin=1)
    if arr.size == 1 and n > 1:
        arr = np.full(n, arr[0])
    if arr.shape != (n,):
        raise ValidationError(f"{name} must have {n} entries, got shape {arr.shape}")
    return arr


# -- droop equilibrium ------------------------------------------------------

def droop_equilibrium(topology: GridTopology, K_P, V_nom, I_inj) -> np.ndarray:
    """Steady-state voltages under droop control, V_nom + (L + K_P)^-1 I_inj."""
    n = topology.n_terminals
    K_P = _vec(K_P, n, "K_P")
    V_nom = _vec(V_nom, n, "V_nom")
    I_inj = _vec(I_inj, n, "I_inj")
    if np.any(K_P < 0):
        raise ValidationError("K_P must be nonnegative")
    if not np.any(K_P > 0):
        raise RankError("L + K_P is singular when every droop gain is zero")
    A = topology.laplacian + np.diag(K_P)
    try:
        dV = np.linalg.solve(A, I_inj)
    except np.linalg.LinAlgError as exc:
        raise RankError(str(exc)) from None
    return V_nom + dV


def droop_residual(topology: GridTopology, K_P, V_nom, I_inj, V) -> float:
    """Relative residual ||(L + K_P)(V - V_nom) - I_inj|| / ||I_inj||."""
    n = topology.n_terminals
    A = topology.laplacian + np.diag(_vec(K_P, n, "K_P"))
    I_inj = _vec(I_inj, n, "I_inj")
    r = A @ (np.asarray(V, dtype=float) - _vec(V_nom, n, "V_nom")) - I_inj
    scale = np.linalg.norm(I_inj)
    return float(np.linalg.norm(r) / scale) if scale > 0 else float(np.linalg.norm(r))


# -- optimal current sharing --------------------------------------------------

@dataclass(frozen=True, eq=False)
class SharingVerdict:
    """Optimal controlled currents for cost sum(f_i u_i^2 / 2), and how close
    an achieved ``u`` came to them (``None`` fields when nothing was given)."""

    mu: float
    u_optimal: np.ndarray
    u_achieved: np.ndarray | None = None
    max_relative_residual: float | None = None
    satisfied: bool | None = None
    tolerance: float | None = None


def optimal_sharing(f, I_inj, u_achieved=None, tolerance: float = 0.01) -> SharingVerdict:
    """Minimum-cost controlled currents: u* = mu F^-1 1 with
    mu = -sum(I_inj) / sum(1/f).

    When ``u_achieved`` is given, the residual is max|u - u*| / max|u*|
    (absolute, in amperes, if u* is zero).
    """
    f = np.array(f, dtype=float, ndmin=1)
    I_inj = _vec(I_inj, f.size, "I_inj")
    if np.any(~np.isfinite(f)) or np.any(f <= 0):
        raise ValidationError("cost coefficients must be finite and > 0")
    inv_f = 1.0 / f
    mu = -float(np.sum(I_inj)) / float(np.sum(inv_f))
    u_opt = mu * inv_f
    if u_achieved is None:
        return SharingVerdict(mu, u_opt)
    u = _vec(u_achieved, f.size, "u_achieved")
    scale = float(np.max(np.abs(u_opt)))
    resid = float(np.max(np.abs(u - u_opt)))
    if scale > 0:
        resid /= scale
    return SharingVerdict(mu, u_opt, u, resid, resid <= tolerance, tolerance)


def qp_oracle(f, I_inj, topology: GridTopology) -> np.ndarray:
    """Solve min sum(f_i u_i^2)/2 s.t. L V = I_inj + u numerically.

    Works on the full problem in (u, V): the KKT system
    [[H, A^T], [A, 0]] with H = diag(F, 0) and A = [-I, L] is singular (V is
    fixed only up to a constant and one constraint is redundant), so it is
    solved in the least-squares sense. The u-part of any solution is unique.
    """
    n = topology.n_terminals
    f = _vec(f, n, "f")
    I_inj = _vec(I_inj, n, "I_inj")
    if np.any(f <= 0):
        raise ValidationError("cost coefficients must be > 0")
    H = np.zeros((2 * n, 2 * n))
    H[:n, :n] = np.diag(f)
    A = np.hstack([-np.eye(n), topology.laplacian])
    K = np.block([[H, A.T], [A, np.zeros((n, n))]])
    rhs = np.concatenate([np.zeros(2 * n), I_inj])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return sol[:n]


# -- droop counterexample ---------------------------------------------------

def band_violation(V, V_lo, V_hi) -> np.ndarray:
    """Distance outside [V_lo, V_hi] per terminal (0 inside, always >= 0)."""
    return np.abs(deadband(V, V_lo, V_hi))


def violating_injection(topology: GridTopology, K_P, V_nom, V_lo, V_hi, direction=None,
                        margin_fraction: float = 0.01, sign: float = -1.0) -> np.ndarray:
    """Disturbance whose droop equilibrium leaves the voltage band.

    Uses I_inj = c (L + K_P) w, for which the equilibrium deviation is exactly
    c w. ``c`` (with the sign of ``sign``) is the smallest magnitude that puts
    some terminal outside its band by ``margin_fraction`` of the band width,
    enlarged by 0.1 %. The result is checked against a fresh linear solve.
    """
    n = topology.n_terminals
    K_P, V_nom, V_lo, V_hi = (_vec(x, n, name) for x, name in
                              ((K_P, "K_P"), (V_nom, "V_nom"), (V_lo, "V_lo"), (V_hi, "V_hi")))
    if np.any(V_lo > V_hi):
        raise ConfigError("V_lo exceeds V_hi")
    if not (np.all(np.isfinite(V_lo)) and np.all(np.isfinite(V_hi))):
        raise ConfigError("voltage bounds must be finite")
    w = np.ones(n) if direction is None else _vec(direction, n, "direction")
    if not np.any(w != 0):
        raise ValidationError("direction must be nonzero")
    s = 1.0 if sign > 0 else -1.0
    margin = margin_fraction * (V_hi - V_lo)

    needed = []
    for i in range(n):
        step = s * w[i]
        if step > 0:
            needed.append((V_hi[i] + margin[i] - V_nom[i]) / step)
        elif step < 0:
            needed.append((V_nom[i] - V_lo[i] + margin[i]) / -step)
    c = max(min(needed), 0.0) * 1.001
    if c == 0.0:
        c = 1.0 / np.max(np.abs(w))
    c *= s

    I_inj = c * ((topology.laplacian + np.diag(K_P)) @ w)
    V_eq = droop_equilibrium(topology, K_P, V_nom, I_inj)
    viol = band_violation(V_eq, V_lo, V_hi)
    if not np.any((viol >= margin) & (viol > 0)):
        raise ArithmeticError("constructed injection failed to violate the band")
    return I_inj


# -- resistance scaling sweep -----------------------------------------------

@dataclass(frozen=True, eq=False)
class SweepPoint:
    """Droop steady state for one resistance scale ``gamma``.

    ``dispersion`` is max_ij |u_i/K_i - u_j/K_j| / |mean(u/K)| (NaN when the
    disturbance is balanced, in which case the optimum is u = 0 and
    ``optimum_deviation`` is the absolute max|u| in amperes).
    """

    gamma: float
    u: np.ndarray
    dispersion: float
    optimum_deviation: float
    balanced: bool


def gamma_sweep(topology: GridTopology, K_P, V_nom, I_inj, gammas) -> list[SweepPoint]:
    """Droop current sharing as all line resistances shrink by ``gammas``."""
    gammas = [float(g) for g in gammas]
    if not gammas or any(not g > 0 for g in gammas):
        raise ValidationError("gammas must be a nonempty list of positive scale factors")
    if any(a < b for a, b in zip(gammas, gammas[1:])):
        raise ValidationError("gammas must be sorted in descending order")
    n = topology.n_terminals
    K_P = _vec(K_P, n, "K_P")
    V_nom = _vec(V_nom, n, "V_nom")
    I_inj = _vec(I_inj, n, "I_inj")
    balanced = float(np.sum(I_inj)) == 0.0
    ref = optimal_sharing(1.0 / K_P, I_inj)

    points = []
    for g in gammas:
        V = droop_equilibrium(topology.scaled(g), K_P, V_nom, I_inj)
        u = -K_P * (V - V_nom)
        share = u / K_P
        if balanced:
            disp = float("nan")
            dev = float(np.max(np.abs(u)))
        else:
            disp = float((share.max() - share.min()) / abs(share.mean()))
            dev = float(np.max(np.abs(u - ref.u_optimal)) / np.max(np.abs(ref.u_optimal)))
        points.append(SweepPoint(g, u, disp, dev, balanced))
    return points


# -- PI locality ------------------------------------------------------------

def pi_locality_check(trajectory: Trajectory, I_inj=None) -> float:
    """max|u + I_inj| at the end of a converged run (PI compensates locally)."""
    if not trajectory.converged:
        raise NotAtSteadyStateError("trajectory did not reach steady state")
    I_inj = trajectory.I_inj if I_inj is None else _vec(I_inj, trajectory.topology.n_terminals, "I_inj")
    return float(np.max(np.abs(trajectory.u[-1] + I_inj)))


# -- Lyapunov function ------------------------------------------------------

@dataclass(frozen=True)
class LyapunovSample:
    t: float
    W: float


def lyapunov_reference_state(topology: GridTopology, cfg: ControllerConfig, I_inj) -> np.ndarray:
    """Integrator state z0 balancing the grid at V = V_nom:
    -L V_nom - K_I z0 + I_inj = 0."""
    if np.any(cfg.K_I == 0):
        raise ConfigError("K_I has zero entries; the reference integrator state is undefined")
    I_inj = _vec(I_inj, topology.n_terminals, "I_inj")
    return (I_inj - topology.laplacian @ cfg.V_nom) / cfg.K_I


def lyapunov_values(cfg: ControllerConfig, topology: GridTopology, V, z, z0) -> np.ndarray:
    """W for one state or a stack of states (rows)."""
    if np.any(cfg.K_I == 0):
        raise ConfigError("K_I has zero entries; the Lyapunov function is undefined")
    lo, hi = cfg.effective_band()
    d = deadband(np.asarray(V, dtype=float), lo, hi)
    dz = np.asarray(z, dtype=float) - z0
    C = topology.capacitance_vector
    return 0.5 * np.sum(d * C * d, axis=-1) + 0.5 * np.sum(dz * cfg.K_I * dz, axis=-1)


def lyapunov_value(cfg: ControllerConfig, topology: GridTopology, state: SystemState, z0) -> LyapunovSample:
    """Evaluate W = 1/2 d^T C d + 1/2 (z - z0)^T K_I (z - z0), where d is the
    band excursion of V."""
    return LyapunovSample(state.t, float(lyapunov_values(cfg, topology, state.V, state.z, z0)))


@dataclass(frozen=True)
class MonotonicityVerdict:
    nonincreasing: bool
    max_increase: float
    tolerance: float
    W0: float
    W_final: float


def lyapunov_monotonicity(trajectory: Trajectory, rel_tol: float = 1e-9) -> MonotonicityVerdict:
    """Check W(t_{k+1}) <= W(t_k) + rel_tol * max(1, W(t_0)) on every sample."""
    cfg = trajectory.controller
    z0 = lyapunov_reference_state(trajectory.topology, cfg, trajectory.I_inj)
    W = lyapunov_values(cfg, trajectory.topology, trajectory.V, trajectory.z, z0)
    tol = rel_tol * max(1.0, float(W[0]))
    inc = float(np.max(np.diff(W))) if W.size > 1 else 0.0
    return MonotonicityVerdict(inc <= tol, inc, tol, float(W[0]), float(W[-1]))


# -- operating range --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RangeVerdict:
    V_final: np.ndarray
    lower_margin: np.ndarray
    upper_margin: np.ndarray
    satisfied: bool
    tolerance: float

    @property
    def worst_terminal(self) -> int:
        """0-based index of the terminal with the smallest margin."""
        return int(np.argmin(np.minimum(self.lower_margin, self.upper_margin)))


def range_verdict(trajectory, V_lo, V_hi, tolerance: float = 1.0) -> RangeVerdict:
    """Final voltages against [V_lo - tol, V_hi + tol].

    ``trajectory`` may also be a plain voltage vector.
    """
    V = trajectory.V[-1] if isinstance(trajectory, Trajectory) else np.asarray(trajectory, dtype=float)
    n = V.size
    V_lo = _vec(V_lo, n, "V_lo")
    V_hi = _vec(V_hi, n, "V_hi")
    lower = V - V_lo
    upper = V_hi - V
    ok = bool(np.all(lower >= -tolerance) and np.all(upper >= -tolerance))
    return RangeVerdict(V.copy(), lower, upper, ok, tolerance)


# -- deadband PI vs droop ---------------------------------------------------

@dataclass(frozen=True)
class EquivalenceReport:
    precondition_met: bool
    max_deviation: float
    relative_deviation: float
    max_abs_z: float
    n_samples: int


def deadband_droop_equivalence(topology: GridTopology, cfg: ControllerConfig, I_inj,
                               initial: SystemState, icfg: IntegratorConfig | None = None,
                               backend: str | None = None) -> EquivalenceReport:
    """Run deadband PI and droop side by side from the same initial voltages.

    While every voltage stays inside the band the integrators never move, so
    the two closed loops coincide. A band exit makes the comparison
    meaningless and is reported via ``precondition_met=False``.
    """
    if cfg.kind is not ControllerKind.DEADBAND_PI:
        raise ConfigError("equivalence check needs a deadband-pi controller")
    icfg = icfg or IntegratorConfig()
    start = SystemState(initial.t, initial.V, np.zeros_like(initial.V))
    db = simulate(topology, cfg, I_inj, start, icfg, backend=backend)
    dr = simulate(topology, cfg.with_kind(ControllerKind.DROOP), I_inj, start, icfg, backend=backend)
    inside = bool(np.all(band_violation(db.V, cfg.V_lo, cfg.V_hi) == 0.0))
    m = min(len(db), len(dr))
    dev = float(np.max(np.abs(db.V[:m] - dr.V[:m])))
    scale = float(np.max(np.abs(dr.V[:m])))
    rel = dev / scale if scale > 0 else dev
    return EquivalenceReport(inside, dev, rel, float(np.max(np.abs(db.z))), m)
