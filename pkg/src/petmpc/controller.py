"""Tube MPC with a persistently exciting input component.

The joint problem over (v, w) splits exactly: the nominal dynamics and the
state/input constraints never involve the exciting input, and the cost is
additively separable.  So each step solves one condensed QP in v and one
finite search over w0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import excitation
from .errors import ContractViolation, FeasibilityLoss
from .excitation import PeBuffer, PeParams
from .polytope import Polytope
from .qp import solve_qp
from .sets import TubeIngredients, terminal_ingredients

log = logging.getLogger(__name__)


@dataclass
class MpcConfig:
    N: int
    Q: np.ndarray
    R: np.ndarray
    ingredients: TubeIngredients
    pe: PeParams
    W: Polytope
    grid_density: int = excitation.GRID_DENSITY
    qp_tol: float = 1e-8

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if self.N < 1:
            raise ContractViolation("horizon N must be >= 1")
        if np.min(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))) < -1e-12:
            raise ContractViolation("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (self.R + self.R.T))) <= 0:
            raise ContractViolation("R must be positive definite")


@dataclass
class MpcSolution:
    v_seq: np.ndarray | None  # (N, m)
    z_pred: np.ndarray | None  # (N+1, n)
    w0: np.ndarray | None
    cost_z: float
    cost_w: float
    feasible: bool
    kkt_residual: float = np.nan
    qp_feasible: bool = False
    selection: excitation.Selection | None = None
    message: str = ""

    @property
    def v0(self):
        return None if self.v_seq is None else self.v_seq[0]

    @property
    def total_cost(self) -> float:
        return self.cost_z + self.cost_w


class CondensedQP:
    """Nominal MPC problem with the states eliminated, for a fixed model."""

    def __init__(self, A, B, Q, R, P_f, N, Z: Polytope, V: Polytope, Z_f: Polytope):
        A = np.atleast_2d(A)
        B = np.atleast_2d(B)
        n, m = B.shape
        self.A, self.B, self.N, self.n, self.m = A, B, N, n, m
        # z_k = Phi_k z0 + Gam_k v
        Phi = np.zeros(((N + 1) * n, n))
        Gam = np.zeros(((N + 1) * n, N * m))
        Ak = np.eye(n)
        for k in range(N + 1):
            Phi[k * n:(k + 1) * n] = Ak
            for j in range(k):
                Gam[k * n:(k + 1) * n, j * m:(j + 1) * m] = np.linalg.matrix_power(A, k - 1 - j) @ B
            Ak = A @ Ak
        Qbar = np.zeros(((N + 1) * n, (N + 1) * n))
        for k in range(N):
            Qbar[k * n:(k + 1) * n, k * n:(k + 1) * n] = Q
        Qbar[N * n:, N * n:] = P_f
        Rbar = np.kron(np.eye(N), R)
        self.Phi, self.Gam, self.Qbar, self.Rbar = Phi, Gam, Qbar, Rbar
        self.H = 2.0 * (Gam.T @ Qbar @ Gam + Rbar)
        self.F = 2.0 * Gam.T @ Qbar @ Phi  # linear term = F z0

        rows, offs, dep = [], [], []
        for k in range(1, N):
            rows.append(Z.H @ Gam[k * n:(k + 1) * n])
            offs.append(Z.h)
            dep.append(Z.H @ Phi[k * n:(k + 1) * n])
        rows.append(Z_f.H @ Gam[N * n:])
        offs.append(Z_f.h)
        dep.append(Z_f.H @ Phi[N * n:])
        for k in range(N):
            blk = np.zeros((V.n_rows, N * m))
            blk[:, k * m:(k + 1) * m] = V.H
            rows.append(blk)
            offs.append(V.h)
            dep.append(np.zeros((V.n_rows, n)))
        self.G = np.vstack(rows)
        self.g0 = np.concatenate(offs)
        self.E = np.vstack(dep)  # constraint offsets = g0 - E z0
        self.Z = Z

    def solve(self, z0, member_tol: float = 1e-9):
        z0 = np.asarray(z0, dtype=float).ravel()
        N, n, m = self.N, self.n, self.m
        if not self.Z.contains(z0, member_tol):
            return None
        res = solve_qp(self.H, self.F @ z0, self.G, self.g0 - self.E @ z0)
        if res.status != "optimal":
            return None
        v = res.x
        zs = self.Phi @ z0 + self.Gam @ v
        cost = float(zs @ self.Qbar @ zs + v @ self.Rbar @ v)
        return v.reshape(N, m), zs.reshape(N + 1, n), cost, res.kkt_residual


def solve_nominal_qp(cfg: MpcConfig, model, z0):
    """(v_seq, z_pred, cost_z, kkt) or None when the nominal problem is infeasible."""
    A, B = model
    ing = cfg.ingredients
    qp = CondensedQP(A, B, cfg.Q, cfg.R, ing.P_f, cfg.N, ing.Z, ing.V, ing.Z_f)
    return qp.solve(z0)


def excitation_cost(cfg: MpcConfig, buf: PeBuffer, w0) -> float:
    """w0'Rw0 plus the cost of the forced repeats w(i+k-lp), k = 1..min(Np, N)-1."""
    R = cfg.R
    cost = float(w0 @ R @ w0)
    for k in range(1, min(cfg.pe.Np, cfg.N)):
        wk = buf.lagged(cfg.pe.lp - k)
        cost += float(wk @ R @ wk)
    return cost


def _compose(cfg, qp_out, buf, grid) -> MpcSolution:
    if qp_out is None:
        return MpcSolution(None, None, None, np.inf, np.inf, False,
                           message="nominal QP infeasible")
    v_seq, z_pred, cost_z, kkt = qp_out
    try:
        sel = excitation.select_candidate(buf, cfg.W, cfg.R, cfg.grid_density, grid=grid)
    except FeasibilityLoss as exc:
        return MpcSolution(v_seq, z_pred, None, cost_z, np.inf, False, kkt, True,
                           message=str(exc))
    return MpcSolution(v_seq, z_pred, sel.w0, cost_z, excitation_cost(cfg, buf, sel.w0),
                       True, kkt, True, sel)


def solve(cfg: MpcConfig, model, z0, buf: PeBuffer) -> MpcSolution:
    """One step of the PE tube MPC at nominal state z0."""
    return _compose(cfg, solve_nominal_qp(cfg, model, z0), buf, None)


def control_input(v0, K_t, x, z, w0):
    """u = v0 + K_t (x - z) + w0."""
    K_t = np.atleast_2d(np.asarray(K_t, dtype=float))
    return (np.atleast_1d(v0) + K_t @ (np.asarray(x, dtype=float) - np.asarray(z, dtype=float))
            + np.atleast_1d(w0))


def advance_nominal(model, z, v0):
    A, B = model
    return np.atleast_2d(A) @ np.asarray(z, dtype=float) + np.atleast_2d(B) @ np.atleast_1d(v0)


@dataclass
class PeTubeMpc:
    """Stateful wrapper that caches the QP and terminal ingredients per model."""

    cfg: MpcConfig
    A: np.ndarray
    B: np.ndarray
    recompute_terminal: bool = True
    _qp: CondensedQP | None = field(default=None, init=False, repr=False)
    _grid: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self._grid = excitation.candidate_grid(self.cfg.W, self.cfg.grid_density)
        self._rebuild()

    @property
    def model(self):
        return self.A, self.B

    def _rebuild(self):
        ing = self.cfg.ingredients
        self._qp = CondensedQP(self.A, self.B, self.cfg.Q, self.cfg.R, ing.P_f, self.cfg.N,
                               ing.Z, ing.V, ing.Z_f)

    def set_model(self, A, B):
        """Adopt a new prediction model; terminal ingredients follow it."""
        self.A = np.atleast_2d(np.asarray(A, dtype=float)).copy()
        self.B = np.atleast_2d(np.asarray(B, dtype=float)).copy()
        if self.recompute_terminal:
            ing = self.cfg.ingredients
            P_f, K_f, Z_f = terminal_ingredients(self.A, self.B, self.cfg.Q, self.cfg.R,
                                                 ing.Z, ing.V)
            self.cfg.ingredients = ing.with_terminal(P_f, K_f, Z_f)
        self._rebuild()

    def solve(self, z0, buf: PeBuffer) -> MpcSolution:
        return _compose(self.cfg, self._qp.solve(z0), buf, self._grid)
