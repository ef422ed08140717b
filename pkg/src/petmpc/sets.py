"""Derived sets for the tube controller.

Builds the parametric-mismatch disturbance bound, the RPI tube cross-section,
the tightened nominal constraints and the terminal cost/set pair.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ContractViolation, InfeasibleDesign, NonConvergence
from .polytope import (
    Polytope,
    is_empty,
    linear_map,
    minkowski_sum,
    pontryagin_diff,
    reduce,
    support_many,
    vertices,
)

log = logging.getLogger(__name__)

ALPHA_MAX = 0.05
S_MAX = 200
SET_CONVERGENCE_TOL = 1e-9


def _mat(a, ndim=2):
    a = np.asarray(a, dtype=float)
    return np.atleast_2d(a) if ndim == 2 else np.atleast_1d(a)


@dataclass(frozen=True)
class UncertainModel:
    """Affine parameter family A(d) = A_nom + d A_dir, B(d) = B_nom + d B_dir, |d| <= delta_max."""

    A_nom: np.ndarray
    B_nom: np.ndarray
    A_dir: np.ndarray
    B_dir: np.ndarray
    delta_max: float

    def __post_init__(self):
        for name in ("A_nom", "B_nom", "A_dir", "B_dir"):
            object.__setattr__(self, name, _mat(getattr(self, name)))
        n, m = self.B_nom.shape
        if self.A_nom.shape != (n, n) or self.A_dir.shape != (n, n) or self.B_dir.shape != (n, m):
            raise ContractViolation("inconsistent model matrix shapes")
        if self.delta_max < 0:
            raise ContractViolation("delta_max must be >= 0")

    @property
    def n(self) -> int:
        return self.A_nom.shape[0]

    @property
    def m(self) -> int:
        return self.B_nom.shape[1]

    def plant(self, delta: float):
        """(A(delta), B(delta))."""
        if abs(delta) > self.delta_max + 1e-12:
            raise ContractViolation(f"|delta|={abs(delta)} exceeds delta_max={self.delta_max}")
        return self.A_nom + delta * self.A_dir, self.B_nom + delta * self.B_dir

    def to_dict(self):
        return {
            "A_nom": self.A_nom.tolist(),
            "B_nom": self.B_nom.tolist(),
            "A_dir": self.A_dir.tolist(),
            "B_dir": self.B_dir.tolist(),
            "delta_max": float(self.delta_max),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["A_nom"], d["B_nom"], d["A_dir"], d["B_dir"], float(d["delta_max"]))


def compute_ws(model: UncertainModel, X: Polytope, U: Polytope,
               mismatch_multiplier: float = 1.0) -> Polytope:
    """Bound on dd * (A_dir x + B_dir u) over x in X, u in U, |dd| <= multiplier * delta_max.

    The expression is linear in (x, u) for fixed dd and linear in dd, so the
    hull of its values at the vertex combinations is the tightest convex cover.
    """
    if mismatch_multiplier <= 0:
        raise ContractViolation("mismatch_multiplier must be positive")
    bound = mismatch_multiplier * model.delta_max
    if bound == 0.0:
        return Polytope.origin(model.n)
    VX, VU = vertices(X), vertices(U)
    if VX.shape[0] == 0 or VU.shape[0] == 0:
        raise ContractViolation("X and U must be bounded and nonempty")
    images = []
    for x, u in itertools.product(VX, VU):
        y = model.A_dir @ x + model.B_dir @ u
        images.extend([bound * y, -bound * y])
    return Polytope.from_vertices(np.array(images))


def _has_interior_origin(W: Polytope, tol=1e-12) -> bool:
    return bool(np.all(W.h > tol))


def compute_mrpi(A_K, W_total: Polytope, alpha_max: float = ALPHA_MAX,
                 s_max: int = S_MAX) -> Polytope:
    """Outer approximation of the minimal RPI set of e+ = A_K e + w, w in W_total.

    Finds the smallest s with A_K^s W subset alpha W (alpha <= alpha_max) and
    returns (1 - alpha)^-1 (W + A_K W + ... + A_K^(s-1) W).
    """
    A_K = _mat(A_K)
    if np.max(np.abs(np.linalg.eigvals(A_K))) >= 1.0:
        raise ContractViolation("A_K must be Schur stable")
    W = reduce(W_total)
    n = A_K.shape[0]
    extent = np.max(np.abs(np.concatenate(W.bounding_box())))
    if extent <= 1e-14:
        return Polytope.origin(n)
    if not _has_interior_origin(W):
        # flat disturbance sets admit no alpha test; push every row out a little
        # (a superset, so the result is still an outer bound)
        pad = 1e-7 * max(1.0, extent)
        log.info("W_total has empty interior; padding rows by %.1e", pad)
        W = Polytope(W.H, W.h + pad * np.linalg.norm(W.H, axis=1))

    best = np.inf
    Ak = np.eye(n)
    for s in range(1, s_max + 1):
        Ak = Ak @ A_K
        alpha = float(np.max(support_many(W, W.H @ Ak) / W.h))
        best = min(best, alpha)
        if alpha <= alpha_max:
            break
    else:
        raise NonConvergence(
            f"no s <= {s_max} with A_K^s W inside alpha W; best alpha {best:.4g}", last=best
        )

    F = W
    Aj = np.eye(n)
    for _ in range(1, s):
        Aj = Aj @ A_K
        F = minkowski_sum(F, linear_map(Aj, W))
    log.debug("mRPI: s=%d alpha=%.4g rows=%d", s, alpha, F.n_rows)
    return F.scale(1.0 / (1.0 - alpha))


def rpi_slack(A_K, S: Polytope, W: Polytope) -> float:
    """min over facets k of S of  h_k - (h_S(A_K^T H_k) + h_W(H_k)).

    Nonnegative iff A_K S + W is inside S.
    """
    A_K = _mat(A_K)
    lhs = support_many(S, S.H @ A_K) + support_many(W, S.H)
    return float(np.min(S.h - lhs))


def tighten(X: Polytope, U_hat: Polytope, S: Polytope, K_t):
    """Z = X - S and V = U_hat - K_t S (Pontryagin differences)."""
    K_t = _mat(K_t)
    Z = pontryagin_diff(X, S)
    KS = linear_map(K_t, S)
    V = pontryagin_diff(U_hat, KS)
    if is_empty(Z):
        raise InfeasibleDesign("Z = X - S is empty: tube cross-section violates S subset X")
    if is_empty(V):
        raise InfeasibleDesign("V = U_hat - K_t S is empty: K_t S not inside U_hat")
    return Z, V


def solve_dare(A, B, Q, R, refine: int = 20):
    """Discrete-time Riccati solution P and gain K (u = K x)."""
    A, B, Q, R = map(_mat, (A, B, Q, R))
    try:
        P = scipy.linalg.solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NonConvergence(f"Riccati equation has no stabilising solution: {exc}") from exc
    for _ in range(refine):
        P_next = riccati_map(P, A, B, Q, R)
        if np.max(np.abs(P_next - P)) == 0.0:
            break
        P = P_next
    P = 0.5 * (P + P.T)
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return P, K


def riccati_map(P, A, B, Q, R):
    return Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def maximal_invariant_set(A_cl, C: Polytope, iter_max: int = 100,
                          tol: float = SET_CONVERGENCE_TOL) -> Polytope:
    """Largest subset of C that is positively invariant under z+ = A_cl z.

    O_k = {z : H_C A_cl^t z <= h_C, t = 0..k}; stops once the rows for t = k+1
    are implied by O_k (successive iterates coincide up to ``tol`` on support
    values).
    """
    A_cl = _mat(A_cl)
    O = reduce(C)
    At = np.eye(A_cl.shape[0])
    for _ in range(iter_max):
        At = At @ A_cl
        new_H = C.H @ At
        if np.all(support_many(O, new_H) <= C.h + tol):
            return O
        O = reduce(Polytope(np.vstack([O.H, new_H]), np.concatenate([O.h, C.h])))
    raise NonConvergence(f"invariant-set recursion not converged in {iter_max} iterations", last=O)


def terminal_ingredients(A, B, Q, R, Z: Polytope, V: Polytope, iter_max: int = 100):
    """Terminal weight P_f, LQR gain K_f and invariant terminal set Z_f."""
    P_f, K_f = solve_dare(A, B, Q, R)
    A_cl = _mat(A) + _mat(B) @ K_f
    C = Polytope(np.vstack([Z.H, V.H @ K_f]), np.concatenate([Z.h, V.h]))
    Z_f = maximal_invariant_set(A_cl, C, iter_max)
    return P_f, K_f, Z_f


@dataclass
class TubeIngredients:
    K_t: np.ndarray
    S: Polytope
    W_S: Polytope
    W_hat: Polytope
    Z: Polytope
    V: Polytope
    Z_f: Polytope
    P_f: np.ndarray
    K_f: np.ndarray
    U_hat: Polytope | None = None
    input_hash: str = ""
    extra: dict = field(default_factory=dict)

    def with_terminal(self, P_f, K_f, Z_f) -> "TubeIngredients":
        return TubeIngredients(self.K_t, self.S, self.W_S, self.W_hat, self.Z, self.V,
                               Z_f, P_f, K_f, self.U_hat, self.input_hash, dict(self.extra))

    def to_dict(self):
        out = {
            "K_t": _mat(self.K_t).tolist(),
            "P_f": self.P_f.tolist(),
            "K_f": self.K_f.tolist(),
            "input_hash": self.input_hash,
        }
        for name in ("S", "W_S", "W_hat", "Z", "V", "Z_f", "U_hat"):
            P = getattr(self, name)
            out[name] = None if P is None else P.to_dict()
        return out

    @classmethod
    def from_dict(cls, d):
        poly = {k: (None if d.get(k) is None else Polytope.from_dict(d[k]))
                for k in ("S", "W_S", "W_hat", "Z", "V", "Z_f", "U_hat")}
        return cls(
            K_t=_mat(d["K_t"]), P_f=_mat(d["P_f"]), K_f=_mat(d["K_f"]),
            input_hash=d.get("input_hash", ""), **poly,
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def ingredients_hash(model: UncertainModel, X, U, W, K_t, Q, R, **params) -> str:
    payload = {
        "model": model.to_dict(),
        "X": X.to_dict(), "U": U.to_dict(), "W": W.to_dict(),
        "K_t": _mat(K_t).tolist(), "Q": _mat(Q).tolist(), "R": _mat(R).tolist(),
        "params": {k: params[k] for k in sorted(params)},
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def build_tube_ingredients(model: UncertainModel, X: Polytope, U: Polytope, W: Polytope,
                           K_t, Q, R, mismatch_multiplier: float = 1.0,
                           alpha_max: float = ALPHA_MAX, s_max: int = S_MAX,
                           iter_max: int = 100) -> TubeIngredients:
    """All tube sets for the nominal model; S and K_t are fixed from here on."""
    K_t = _mat(K_t)
    U_hat = pontryagin_diff(U, W)
    if is_empty(U_hat):
        raise InfeasibleDesign("U_hat = U - W is empty")
    W_hat = linear_map(model.B_nom, W)
    W_S = compute_ws(model, X, U, mismatch_multiplier)
    A_K = model.A_nom + model.B_nom @ K_t
    S = compute_mrpi(A_K, minkowski_sum(W_hat, W_S), alpha_max, s_max)
    Z, V = tighten(X, U_hat, S, K_t)
    P_f, K_f, Z_f = terminal_ingredients(model.A_nom, model.B_nom, Q, R, Z, V, iter_max)
    h = ingredients_hash(model, X, U, W, K_t, Q, R, mismatch_multiplier=mismatch_multiplier,
                         alpha_max=alpha_max, s_max=s_max, iter_max=iter_max)
    return TubeIngredients(K_t, S, W_S, W_hat, Z, V, Z_f, P_f, K_f, U_hat, h)
