"""Recursive least squares with constant forgetting for x+ = A x + B u.

Each state component is an ARX(1,1) row sharing the regressor phi = [x; u],
so all rows share one information matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation

INVERTIBLE_EIG = 1e-10


@dataclass(frozen=True)
class RlsState:
    theta: np.ndarray  # (n, n+m); row j is [A_j, B_j]
    R_id: np.ndarray  # (n+m, n+m)
    lam: float
    phi_prev: np.ndarray
    update_count: int = 0
    n: int = 0
    literal_timing: bool = False

    @property
    def m(self) -> int:
        return self.theta.shape[1] - self.n


def init(A0, B0, lam: float, literal_timing: bool = False) -> RlsState:
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    B0 = np.atleast_2d(np.asarray(B0, dtype=float))
    n = A0.shape[0]
    if A0.shape != (n, n) or B0.shape[0] != n:
        raise ContractViolation(f"shape mismatch: A0 {A0.shape}, B0 {B0.shape}")
    if not 0.0 < lam <= 1.0:
        raise ContractViolation(f"forgetting factor must lie in (0, 1], got {lam}")
    p = n + B0.shape[1]
    return RlsState(
        theta=np.hstack([A0, B0]),
        R_id=np.zeros((p, p)),
        lam=float(lam),
        phi_prev=np.zeros(p),
        n=n,
        literal_timing=literal_timing,
    )


def predict(s: RlsState) -> np.ndarray:
    """One-step prediction x_hat_j = phi_prev . theta_j."""
    return s.theta @ s.phi_prev


def _gain_solve(R, rhs):
    """R^-1 rhs once R is safely invertible, minimum-norm least squares before."""
    evals, evecs = np.linalg.eigh(R)
    if evals[0] > INVERTIBLE_EIG:
        return np.linalg.solve(R, rhs)
    keep = evals > INVERTIBLE_EIG
    V = evecs[:, keep]
    return V @ ((V.T @ rhs) / evals[keep])


def update(s: RlsState, x_new, phi_new) -> RlsState:
    """Absorb the measurement x_new; phi_new becomes the next regressor.

    Standard timing pairs x_new with the previous regressor everywhere.
    ``literal_timing`` reproduces the textbook-as-printed variant in which the
    gain direction and the information update use phi_new instead.
    """
    x_new = np.atleast_1d(np.asarray(x_new, dtype=float)).ravel()
    phi_new = np.atleast_1d(np.asarray(phi_new, dtype=float)).ravel()
    if x_new.size != s.n or phi_new.size != s.theta.shape[1]:
        raise ContractViolation("x_new / phi_new have the wrong dimension")
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(phi_new))):
        raise ContractViolation("non-finite data passed to RLS update")

    phi_gain = phi_new if s.literal_timing else s.phi_prev
    R = s.lam * s.R_id + np.outer(phi_gain, phi_gain)
    R = 0.5 * (R + R.T)
    innovation = x_new - s.theta @ s.phi_prev
    theta = s.theta
    if np.any(phi_gain) and np.any(innovation):
        g = _gain_solve(R, phi_gain)
        theta = s.theta + np.outer(innovation, g)
    return replace(s, theta=theta, R_id=R, phi_prev=phi_new.copy(),
                   update_count=s.update_count + 1)


def current_model(s: RlsState):
    return s.theta[:, : s.n].copy(), s.theta[:, s.n:].copy()


def parameter_error_pct(s: RlsState, A_true, B_true):
    """Entrywise 100 (estimate - true) / true.

    Returns (errors, zero_mask); where the true entry is 0 the absolute error
    is reported instead and flagged in zero_mask.
    """
    est = s.theta
    true = np.hstack([np.atleast_2d(A_true), np.atleast_2d(B_true)]).astype(float)
    if true.shape != est.shape:
        raise ContractViolation("true model shape does not match the estimate")
    zero = true == 0.0
    diff = est - true
    err = np.where(zero, diff, 100.0 * diff / np.where(zero, 1.0, true))
    return err, zero
