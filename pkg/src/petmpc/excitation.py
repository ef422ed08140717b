"""Persistence-of-excitation bookkeeping for the exciting input component w.

The information matrix at time i is

    M_i = sum_{j=0}^{lp-1} w_{i-j} w_{i-j}^T - rho0 I,
    w_{i-j} = [w(i-j); w(i-j-1); ...; w(i-j-Np+1)],

and the controller only accepts a new w(i) if M stays positive definite for
the next Np steps, assuming w repeats its value from lp steps earlier.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, FeasibilityLoss, InitializationError
from .polytope import Polytope, vertices

EPS_PD = 1e-8
GRID_DENSITY = 41


@dataclass(frozen=True)
class PeParams:
    Np: int
    lp: int
    rho0: float
    rho1: float | None = None
    eps_pd: float = EPS_PD

    def __post_init__(self):
        if self.Np < 1 or self.lp < 1:
            raise ContractViolation("Np and lp must be >= 1")
        if not self.rho0 > 0:
            raise ContractViolation("rho0 must be positive")
        if not self.eps_pd > 0:
            raise ContractViolation("eps_pd must be positive")
        if self.rho1 is not None and not self.rho1 > self.rho0:
            raise ContractViolation("rho1 must exceed rho0")

    @property
    def history_length(self) -> int:
        return self.lp + self.Np - 1


class PeBuffer:
    """Most recent exciting inputs, newest last."""

    def __init__(self, params: PeParams, history=()):
        self.params = params
        self.history = deque((np.atleast_1d(np.asarray(w, dtype=float)).copy() for w in history),
                             maxlen=params.history_length)

    @property
    def m(self) -> int:
        return self.history[-1].size

    def __len__(self):
        return len(self.history)

    def copy(self) -> "PeBuffer":
        return PeBuffer(self.params, list(self.history))

    def append(self, w):
        self.history.append(np.atleast_1d(np.asarray(w, dtype=float)).copy())

    def lagged(self, lag: int) -> np.ndarray:
        """w(i - lag) where i is the instant about to be decided (lag >= 1)."""
        return self.history[-lag].copy()

    def as_array(self) -> np.ndarray:
        return np.array(self.history)


def stacked_information(seq, Np: int, lp: int) -> np.ndarray:
    """sum_{j<lp} s_{i-j} s_{i-j}^T over Np-stacked windows; seq newest last."""
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    L = seq.shape[0]
    if L < lp + Np - 1:
        raise ContractViolation(f"need {lp + Np - 1} samples, have {L}")
    rows = []
    for j in range(lp):
        end = L - j
        rows.append(seq[end - Np:end][::-1].ravel())
    Wm = np.array(rows)
    return Wm.T @ Wm


def build_M(buf: PeBuffer, candidate=None) -> np.ndarray:
    """Information matrix with ``candidate`` as w(i), or the newest entry if None."""
    p = buf.params
    seq = list(buf.history)
    if candidate is not None:
        seq.append(np.atleast_1d(np.asarray(candidate, dtype=float)))
    if len(seq) < p.history_length:
        raise ContractViolation(
            f"PE history too short: {len(seq)} < {p.history_length}"
        )
    G = stacked_information(np.array(seq), p.Np, p.lp)
    return G - p.rho0 * np.eye(G.shape[0])


def min_eig(M) -> float:
    M = np.asarray(M, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def is_pe(M, eps_pd: float = EPS_PD) -> bool:
    return min_eig(M) >= eps_pd


def lookahead_min_eigs(buf: PeBuffer, w0) -> list[float]:
    """Smallest eigenvalue of M at instants i..i+Np-1 under the repeat-lp-back continuation."""
    p = buf.params
    seq = list(buf.history)
    if len(seq) < p.history_length:
        raise ContractViolation(f"PE history too short: {len(seq)} < {p.history_length}")
    seq.append(np.atleast_1d(np.asarray(w0, dtype=float)))
    eye = p.rho0 * np.eye(p.Np * seq[-1].size)
    out = []
    for k in range(p.Np):
        if k > 0:
            seq.append(seq[-p.lp])
        out.append(min_eig(stacked_information(np.array(seq[-p.history_length:]), p.Np, p.lp) - eye))
    return out


def lookahead_feasible(buf: PeBuffer, w0) -> bool:
    eps = buf.params.eps_pd
    return all(e >= eps for e in lookahead_min_eigs(buf, w0))


def candidate_grid(W: Polytope, grid_density: int = GRID_DENSITY) -> np.ndarray:
    """Equispaced grid over W's bounding box, filtered by membership."""
    lo, hi = W.bounding_box()
    axes = [np.linspace(a, b, grid_density) for a, b in zip(lo, hi)]
    pts = np.array(list(itertools.product(*axes)))
    return np.array([p for p in pts if W.contains(p)]).reshape(-1, W.dim)


@dataclass
class Selection:
    w0: np.ndarray
    cost: float
    n_feasible: int
    n_candidates: int
    trivial_used: bool


def _rank_key(w, R):
    # cost, then norm, then lexicographically largest (so +c beats -c)
    return (float(w @ R @ w), float(np.linalg.norm(w)), tuple(-w))


def select_candidate(buf: PeBuffer, W: Polytope, R, grid_density: int = GRID_DENSITY,
                     grid=None) -> Selection:
    R = np.atleast_2d(np.asarray(R, dtype=float))
    trivial = buf.lagged(buf.params.lp)
    if grid is None:
        grid = candidate_grid(W, grid_density)
    cands = [trivial] + [g for g in grid]
    feasible = [w for w in cands if lookahead_feasible(buf, w)]
    if not feasible:
        raise FeasibilityLoss(
            "no persistently exciting candidate passes the lookahead test "
            "(the previous step's PE guarantee was broken)"
        )
    best = min(feasible, key=lambda w: _rank_key(w, R))
    return Selection(
        w0=best.copy(),
        cost=float(best @ R @ best),
        n_feasible=len(feasible),
        n_candidates=len(cands),
        trivial_used=bool(np.array_equal(best, trivial)),
    )


def select_w0(buf: PeBuffer, W: Polytope, R, grid_density: int = GRID_DENSITY) -> np.ndarray:
    """Cheapest exciting input among the grid points and w(i-lp) that keeps M > 0 ahead."""
    return select_candidate(buf, W, R, grid_density).w0


def init_buffer(W: Polytope, params: PeParams, seed: int = 0,
                attempts_max: int = 1000) -> PeBuffer:
    """Random seeded PE history that satisfies M > 0 and the lookahead for w(i-lp).

    Entries are vertices of W scaled by a factor drawn from [0.5, 1].
    """
    if attempts_max < 1:
        raise ContractViolation("attempts_max must be >= 1")
    V = vertices(W)
    m = W.dim
    max_norm2 = float(np.max(np.sum(V**2, axis=1)))
    if params.rho0 * m >= params.lp * max_norm2:
        raise InitializationError(
            f"rho0={params.rho0} cannot be reached: trace bound lp*max|w|^2 = "
            f"{params.lp * max_norm2:.4g} is too small; lower rho0 or enlarge W"
        )
    rng = np.random.default_rng(seed)
    L = params.history_length
    for _ in range(attempts_max):
        idx = rng.integers(0, V.shape[0], size=L)
        scale = rng.uniform(0.5, 1.0, size=L)
        buf = PeBuffer(params, V[idx] * scale[:, None])
        if is_pe(build_M(buf), params.eps_pd) and lookahead_feasible(buf, buf.lagged(params.lp)):
            return buf
    raise InitializationError(
        f"no PE history found in {attempts_max} attempts; increase the slack "
        "between rho0 and the amplitude of W"
    )


def trace_bound(W: Polytope, params: PeParams) -> float:
    """Upper bound lp * Np * max |w|^2 on trace(M + rho0 I)."""
    V = vertices(W)
    return params.lp * params.Np * float(np.max(np.sum(V**2, axis=1)))
