"""Resistive MTDC grid: topology, weighted Laplacian and voltage dynamics.

All quantities are SI (volts, amperes, ohms, farads, seconds). Terminals are
indexed from 0 internally; scenario files and CSV headers use 1-based labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import TopologyError, ValidationError

DEFAULT_CAPACITANCE = 0.01  # F, gives C/K_P = 1 ms at K_P = 10 S


@dataclass(frozen=True)
class GridTopology:
    """Terminals joined by purely resistive lines.

    Lines are canonicalised to ``i < j`` and sorted, so line order (and the
    sign convention of line currents, positive from lower to higher index) is
    deterministic regardless of input order.

    Parameters
    ----------
    n_terminals : int
    lines : sequence of (i, j, resistance)
        0-based endpoints, resistance in ohms.
    capacitances : sequence of float
        Lumped terminal capacitance in farads, one per terminal.
    """

    n_terminals: int
    lines: tuple[tuple[int, int, float], ...]
    capacitances: tuple[float, ...]

    def __post_init__(self):
        n = self.n_terminals
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
            raise ValidationError(f"n_terminals must be a positive integer, got {n!r}")
        object.__setattr__(self, "n_terminals", int(n))

        caps = tuple(float(c) for c in self.capacitances)
        if len(caps) != n:
            raise ValidationError(f"expected {n} capacitances, got {len(caps)}")
        for k, c in enumerate(caps):
            if not np.isfinite(c) or c <= 0:
                raise ValidationError(f"capacitance of terminal {k + 1} must be > 0, got {c}")
        object.__setattr__(self, "capacitances", caps)

        canon = {}
        for line in self.lines:
            i, j, r = line
            i, j, r = int(i), int(j), float(r)
            if not (0 <= i < n and 0 <= j < n):
                raise TopologyError(f"line ({i + 1}, {j + 1}) references a terminal outside 1..{n}")
            if i == j:
                raise TopologyError(f"self-loop at terminal {i + 1}")
            if not np.isfinite(r) or r <= 0:
                raise ValidationError(f"resistance of line ({i + 1}, {j + 1}) must be > 0, got {r}")
            key = (min(i, j), max(i, j))
            if key in canon:
                raise TopologyError(f"duplicate line between terminals {key[0] + 1} and {key[1] + 1}")
            canon[key] = r
        object.__setattr__(self, "lines", tuple((i, j, canon[(i, j)]) for i, j in sorted(canon)))

        if not _is_connected(n, [(i, j) for i, j, _ in self.lines]):
            raise TopologyError("grid graph is not connected")

    @classmethod
    def uniform(cls, n_terminals: int, edges: Iterable[tuple[int, int]], resistance: float,
                capacitance: float = DEFAULT_CAPACITANCE) -> "GridTopology":
        """Build a grid where every line has the same resistance."""
        return cls(n_terminals, tuple((i, j, resistance) for i, j in edges),
                   (capacitance,) * n_terminals)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @cached_property
    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        i = np.array([ln[0] for ln in self.lines], dtype=np.intp)
        j = np.array([ln[1] for ln in self.lines], dtype=np.intp)
        return i, j

    @cached_property
    def resistances(self) -> np.ndarray:
        return np.array([ln[2] for ln in self.lines], dtype=float)

    @cached_property
    def conductances(self) -> np.ndarray:
        return 1.0 / self.resistances

    @cached_property
    def capacitance_vector(self) -> np.ndarray:
        return np.array(self.capacitances, dtype=float)

    @cached_property
    def elastance(self) -> np.ndarray:
        """Diagonal of E = diag(1/C_i)."""
        return 1.0 / self.capacitance_vector

    @cached_property
    def incidence(self) -> np.ndarray:
        """Vertex-edge incidence matrix B (n x m), +1 at the lower endpoint."""
        B = np.zeros((self.n_terminals, self.n_lines))
        i, j = self.endpoints
        cols = np.arange(self.n_lines)
        B[i, cols] = 1.0
        B[j, cols] = -1.0
        return B

    @cached_property
    def laplacian(self) -> np.ndarray:
        L = build_laplacian(self)
        L.flags.writeable = False
        return L

    def line_labels(self) -> list[str]:
        """1-based labels such as ``"1_2"`` in canonical line order."""
        return [f"{i + 1}_{j + 1}" for i, j, _ in self.lines]

    def scaled(self, gamma: float) -> "GridTopology":
        """Copy with every line resistance multiplied by ``gamma``."""
        if not gamma > 0:
            raise ValidationError(f"resistance scale must be > 0, got {gamma}")
        return GridTopology(self.n_terminals,
                            tuple((i, j, gamma * r) for i, j, r in self.lines),
                            self.capacitances)


def _is_connected(n: int, edges: Sequence[tuple[int, int]]) -> bool:
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        k = stack.pop()
        for m in adj[k]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return len(seen) == n


def build_laplacian(topology: GridTopology) -> np.ndarray:
    """Weighted Laplacian with edge weights 1/R_ij (siemens).

    Stamped entry by entry: each line adds its conductance to both diagonal
    entries and subtracts it from the two off-diagonal entries.
    """
    n = topology.n_terminals
    L = np.zeros((n, n))
    for i, j, r in topology.lines:
        g = 1.0 / r
        L[i, i] += g
        L[j, j] += g
        L[i, j] -= g
        L[j, i] -= g
    return L


def _vector(x, n: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (n,):
        raise ValidationError(f"{name} must have shape ({n},), got {arr.shape}")
    return arr


def line_currents(topology: GridTopology, V) -> np.ndarray:
    """Current on every line, (V_i - V_j)/R_ij, in canonical line order."""
    V = _vector(V, topology.n_terminals, "V")
    i, j = topology.endpoints
    return (V[i] - V[j]) / topology.resistances


def dynamics_rhs(topology: GridTopology, V, I_inj, u) -> np.ndarray:
    """Terminal voltage derivative E(-L V + I_inj + u) in V/s.

    L V is evaluated in the factored form B W B^T V, which is exactly zero
    for uniform V.
    """
    n = topology.n_terminals
    V = _vector(V, n, "V")
    I_inj = _vector(I_inj, n, "I_inj")
    u = _vector(u, n, "u")
    return (-laplacian_apply(topology, V) + I_inj + u) * topology.elastance


def laplacian_apply(topology: GridTopology, V) -> np.ndarray:
    """L V as the net current leaving each terminal through its lines."""
    return topology.incidence @ (topology.conductances * (topology.incidence.T @ V))


def charge_balance_residual(topology: GridTopology, V, I_inj, u) -> float:
    """Relative mismatch between sum(C_i dV_i/dt) and sum(I_inj + u).

    Line currents cancel pairwise, so the two sums agree up to roundoff. The
    mismatch is scaled by the total absolute current magnitude at the
    terminals (injections plus the net line outflow).
    """
    dV = dynamics_rhs(topology, V, I_inj, u)
    I_inj = np.asarray(I_inj, dtype=float)
    u = np.asarray(u, dtype=float)
    lhs = float(np.sum(topology.capacitance_vector * dV))
    rhs = float(np.sum(I_inj + u))
    scale = float(np.sum(np.abs(I_inj)) + np.sum(np.abs(u))
                  + np.sum(np.abs(laplacian_apply(topology, np.asarray(V, dtype=float)))))
    if scale == 0.0:
        return abs(lhs - rhs)
    return abs(lhs - rhs) / scale
