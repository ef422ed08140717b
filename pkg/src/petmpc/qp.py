"""Dense primal active-set solver for small strictly convex QPs.

    minimise 0.5 x'Hx + f'x  subject to  G x <= g

Sized for condensed MPC problems with a handful of variables, where an exact
active-set answer (KKT residual at round-off level) is worth more than speed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import ContractViolation, NumericalFailure

FEAS_TOL = 1e-9


@dataclass
class QPResult:
    x: np.ndarray | None
    obj: float
    multipliers: np.ndarray | None
    status: str  # "optimal" | "infeasible"
    kkt_residual: float
    iterations: int


def kkt_residual(H, f, G, g, x, mu) -> float:
    stat = H @ x + f + G.T @ mu
    slack = g - G @ x
    return float(max(
        np.max(np.abs(stat)) if stat.size else 0.0,
        np.max(np.maximum(-slack, 0.0), initial=0.0),
        np.max(np.maximum(-mu, 0.0), initial=0.0),
        np.max(np.abs(mu * slack), initial=0.0),
    ))


def _feasible_point(G, g):
    n = G.shape[1]
    res = linprog(np.zeros(n), A_ub=G, b_ub=g, bounds=[(None, None)] * n,
                  method="highs", options={"primal_feasibility_tolerance": FEAS_TOL})
    if res.status == 2:
        return None
    if res.status != 0:
        raise NumericalFailure(f"QP phase-1 LP failed: {res.message}", status=res.status)
    return res.x


def _independent(rows, G, tol=1e-10):
    kept = []
    for i in rows:
        cand = G[kept + [i]]
        if np.linalg.matrix_rank(cand, tol=tol) == len(kept) + 1:
            kept.append(i)
    return kept


def solve_qp(H, f, G, g, max_iter: int = 500, tol: float = 1e-12) -> QPResult:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    f = np.asarray(f, dtype=float).ravel()
    n = f.size
    G = np.asarray(G, dtype=float).reshape(-1, n)
    g = np.asarray(g, dtype=float).ravel()
    if H.shape != (n, n) or G.shape[0] != g.size:
        raise ContractViolation("QP data have inconsistent shapes")
    H = 0.5 * (H + H.T)
    if np.min(np.linalg.eigvalsh(H)) <= 0:
        raise ContractViolation("QP Hessian must be positive definite")

    x = np.linalg.solve(H, -f)
    if G.shape[0] and np.any(G @ x > g + FEAS_TOL):
        x = _feasible_point(G, g)
        if x is None:
            return QPResult(None, np.inf, None, "infeasible", np.inf, 0)
    scale = 1.0 + np.max(np.abs(g), initial=0.0)
    active = _independent(
        [i for i in range(G.shape[0]) if G[i] @ x >= g[i] - FEAS_TOL * scale], G
    )

    for it in range(1, max_iter + 1):
        k = len(active)
        Ga = G[active]
        K = np.zeros((n + k, n + k))
        K[:n, :n] = H
        K[:n, n:] = Ga.T
        K[n:, :n] = Ga
        rhs = np.concatenate([-(H @ x + f), np.zeros(k)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"singular KKT system: {exc}") from exc
        p, lam = sol[:n], sol[n:]
        if np.max(np.abs(p)) <= tol * (1.0 + np.max(np.abs(x))):
            x = x + p
            if k == 0 or np.min(lam) >= -tol:
                mu = np.zeros(G.shape[0])
                mu[active] = lam
                mu = np.maximum(mu, 0.0)
                return QPResult(x, float(0.5 * x @ H @ x + f @ x), mu, "optimal",
                                kkt_residual(H, f, G, g, x, mu), it)
            active.pop(int(np.argmin(lam)))
            continue
        alpha, block = 1.0, None
        Gp = G @ p
        for i in range(G.shape[0]):
            if i in active or Gp[i] <= 1e-14:
                continue
            step = max((g[i] - G[i] @ x) / Gp[i], 0.0)
            if step < alpha:
                alpha, block = step, i
        x = x + alpha * p
        if block is not None:
            active.append(block)
    raise NumericalFailure(f"active-set QP did not converge in {max_iter} iterations")
