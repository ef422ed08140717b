"""Halfspace-representation polytopes {x : H x <= h} and the set algebra on them.

Every query that needs optimisation goes through a small LP (scipy/HiGHS).
Vertex enumeration and hulls are only offered for dimension <= 3, which is
all the tube construction needs.
"""
from __future__ import annotations

import itertools
import json

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    ContractViolation,
    NumericalFailure,
    UnboundedError,
    UnsupportedOperation,
)

MEMBERSHIP_TOL = 1e-9
LP_TOL = 1e-9
MAX_VERTEX_DIM = 3

_LP_OPTIONS = {
    "primal_feasibility_tolerance": LP_TOL,
    "dual_feasibility_tolerance": LP_TOL,
}


def _lp(c, H, h):
    """Minimise c @ x over {H x <= h}; returns the scipy result."""
    res = linprog(
        c,
        A_ub=H,
        b_ub=h,
        bounds=[(None, None)] * H.shape[1],
        method="highs",
        options=_LP_OPTIONS,
    )
    if res.status not in (0, 2, 3):
        raise NumericalFailure(f"LP failed: {res.message}", status=res.status)
    return res


class Polytope:
    """Convex set {x : H x <= h}.

    Instances are treated as immutable values; all operations return new
    polytopes.
    """

    # let ``ndarray @ Polytope`` fall through to __rmatmul__
    __array_ufunc__ = None

    def __init__(self, H, h):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        h = np.atleast_1d(np.asarray(h, dtype=float)).ravel()
        if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] < 1:
            raise ContractViolation(f"H must be a non-empty matrix, got shape {H.shape}")
        if H.shape[0] != h.shape[0]:
            raise ContractViolation(
                f"H has {H.shape[0]} rows but h has {h.shape[0]} entries"
            )
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(h))):
            raise ContractViolation("H and h must be finite")
        self.H = H
        self.h = h
        self.H.setflags(write=False)
        self.h.setflags(write=False)
        self._cache = {}

    # -- constructors -----------------------------------------------------

    @classmethod
    def box(cls, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        d = lower.size
        return cls(np.vstack([np.eye(d), -np.eye(d)]), np.concatenate([upper, -lower]))

    @classmethod
    def symmetric_box(cls, bounds):
        bounds = np.atleast_1d(np.asarray(bounds, dtype=float))
        return cls.box(-bounds, bounds)

    @classmethod
    def point(cls, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls.box(x, x)

    @classmethod
    def origin(cls, dim):
        return cls.point(np.zeros(dim))

    @classmethod
    def from_vertices(cls, points):
        """Convex hull of a finite point set (dimension <= 3)."""
        H, h, ext = _hull_halfspaces(np.atleast_2d(np.asarray(points, dtype=float)))
        P = cls(H, h)
        P._cache["bounded"] = True
        if ext is not None:
            P._cache["vertices"] = ext
        return P

    # -- basic properties -------------------------------------------------

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_rows(self) -> int:
        return self.H.shape[0]

    def __repr__(self):
        return f"Polytope(dim={self.dim}, rows={self.n_rows})"

    # -- serialisation ----------------------------------------------------

    def to_dict(self):
        return {"H": self.H.tolist(), "h": self.h.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(data["H"], data["h"])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    # -- queries ----------------------------------------------------------

    def is_empty(self) -> bool:
        return is_empty(self)

    def contains(self, x, tol=MEMBERSHIP_TOL) -> bool:
        return contains(self, x, tol)

    def __contains__(self, x):
        return contains(self, x)

    def support(self, a) -> float:
        return support(self, a)

    def supports(self, directions):
        return support_many(self, directions)

    def vertices(self):
        return vertices(self)

    def reduce(self):
        return reduce(self)

    def bounding_box(self):
        """Return (lower, upper) corner arrays."""
        eye = np.eye(self.dim)
        upper = support_many(self, eye)
        lower = -support_many(self, -eye)
        return lower, upper

    def interior_point(self):
        """Any point of the set (the feasibility LP's solution), or None if empty."""
        res = _lp(np.zeros(self.dim), self.H, self.h)
        return None if res.status == 2 else res.x

    def is_subset(self, other: "Polytope", tol=1e-8) -> bool:
        """True iff self is contained in other (support comparison on other's rows)."""
        return bool(np.all(support_many(self, other.H) <= other.h + tol))

    def equals(self, other: "Polytope", tol=1e-8) -> bool:
        return self.is_subset(other, tol) and other.is_subset(self, tol)

    def scale(self, alpha: float):
        """alpha * P for alpha > 0."""
        if alpha <= 0:
            raise ContractViolation("scale factor must be positive")
        return Polytope(self.H, alpha * self.h)

    def intersect(self, other: "Polytope"):
        _check_same_dim(self, other)
        return Polytope(np.vstack([self.H, other.H]), np.concatenate([self.h, other.h]))

    def __add__(self, other):
        return minkowski_sum(self, other)

    def __sub__(self, other):
        return pontryagin_diff(self, other)

    def __rmatmul__(self, M):
        return linear_map(M, self)


def _check_same_dim(P: Polytope, Q: Polytope):
    if P.dim != Q.dim:
        raise ContractViolation(f"dimension mismatch: {P.dim} vs {Q.dim}")


def is_empty(P: Polytope) -> bool:
    """Decide emptiness with a single feasibility LP."""
    return _lp(np.zeros(P.dim), P.H, P.h).status == 2


def contains(P: Polytope, x, tol=MEMBERSHIP_TOL) -> bool:
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if x.size != P.dim:
        raise ContractViolation(f"point has dimension {x.size}, polytope {P.dim}")
    return bool(np.all(P.H @ x <= P.h + tol))


def support(P: Polytope, a) -> float:
    """max a @ x over P, via one LP."""
    a = np.atleast_1d(np.asarray(a, dtype=float)).ravel()
    if a.size != P.dim:
        raise ContractViolation(f"direction has dimension {a.size}, polytope {P.dim}")
    if not np.any(a):
        if is_empty(P):
            raise ContractViolation("support of an empty polytope")
        return 0.0
    res = _lp(-a, P.H, P.h)
    if res.status == 2:
        raise ContractViolation("support of an empty polytope")
    if res.status == 3:
        raise UnboundedError(f"polytope unbounded in direction {a}")
    return float(-res.fun)


def support_many(P: Polytope, directions) -> np.ndarray:
    """Support values for each row of ``directions``.

    Uses the vertex list when the dimension allows it (exact and much cheaper
    than one LP per row); falls back to LPs otherwise.
    """
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    if P.dim <= MAX_VERTEX_DIM:
        V = vertices(P)
        if V.shape[0] > 0 and _vertices_cover(P, V):
            return np.max(D @ V.T, axis=1)
    return np.array([support(P, a) for a in D])


def _vertices_cover(P, V):
    # a bounded polytope is the hull of its vertices
    return _is_bounded(P)


def _is_bounded(P: Polytope) -> bool:
    if "bounded" not in P._cache:
        P._cache["bounded"] = _recession_is_trivial(P)
    return P._cache["bounded"]


def _recession_is_trivial(P: Polytope) -> bool:
    # bounded iff no nonzero recession direction: {d : H d <= 0} = {0}
    d = P.dim
    for sign in (1.0, -1.0):
        for k in range(d):
            c = np.zeros(d)
            c[k] = -sign
            res = _lp(c, np.vstack([P.H, np.eye(d), -np.eye(d)]),
                      np.concatenate([np.zeros(P.n_rows), np.ones(2 * d)]))
            if res.status == 0 and -res.fun > 1e-9:
                return False
    return True


# -- vertex machinery (d <= 3) --------------------------------------------

def _dedupe(points, tol):
    out = []
    for p in points:
        if not any(np.max(np.abs(p - q)) <= tol for q in out):
            out.append(p)
    return np.array(out).reshape(len(out), -1)


def vertices(P: Polytope) -> np.ndarray:
    """Vertices of a bounded polytope by enumerating d-subsets of active rows."""
    if "vertices" not in P._cache:
        P._cache["vertices"] = _enumerate_vertices(P)
    return P._cache["vertices"].copy()


def _enumerate_vertices(P: Polytope) -> np.ndarray:
    d = P.dim
    if d > MAX_VERTEX_DIM:
        raise UnsupportedOperation(f"vertex enumeration only for dim <= {MAX_VERTEX_DIM}")
    H, h = _normalized_rows(P)
    scale = 1.0 + np.max(np.abs(h)) if h.size else 1.0
    tol = 1e-9 * scale
    pts = []
    for rows in itertools.combinations(range(H.shape[0]), d):
        A = H[list(rows)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        x = np.linalg.solve(A, h[list(rows)])
        if np.all(H @ x <= h + tol):
            pts.append(x)
    if not pts:
        return np.zeros((0, d))
    return _dedupe(pts, 1e-8 * scale)


def _normalized_rows(P: Polytope):
    norms = np.linalg.norm(P.H, axis=1)
    keep = norms > 1e-14
    return P.H[keep] / norms[keep, None], P.h[keep] / norms[keep]


def _merge_coplanar(H, h, tol=1e-10):
    """Drop rows that repeat an earlier (normal, offset) pair; qhull splits 3-D facets."""
    keep = []
    for k in range(H.shape[0]):
        if not any(np.max(np.abs(H[k] - H[j])) <= tol and abs(h[k] - h[j]) <= tol * (1 + abs(h[j]))
                   for j in keep):
            keep.append(k)
    return H[keep], h[keep]


def _hull_halfspaces(points):
    """H-rep of conv(points), handling lower-dimensional point clouds.

    Returns (H, h, extreme_points); extreme_points is None when the cloud is
    not full-dimensional.
    """
    points = np.atleast_2d(points)
    k, d = points.shape
    if k == 0:
        raise ContractViolation("convex hull of an empty point set")
    if d > MAX_VERTEX_DIM:
        raise UnsupportedOperation(f"convex hull only for dim <= {MAX_VERTEX_DIM}")
    c = points.mean(axis=0)
    Y = points - c
    scale = max(1.0, float(np.max(np.abs(points))))
    _, s, Vt = np.linalg.svd(Y, full_matrices=True)
    r = int(np.sum(s > 1e-10 * scale))
    basis, comp = Vt[:r], Vt[r:]
    ext = None
    if r == 0:
        H_sub = np.zeros((0, 0))
        h_sub = np.zeros(0)
    elif r == 1:
        y = Y @ basis.T
        H_sub = np.array([[1.0], [-1.0]])
        h_sub = np.array([y.max(), -y.min()])
    else:
        y = Y @ basis.T
        try:
            hull = ConvexHull(y)
        except QhullError as exc:
            raise NumericalFailure(f"qhull failed: {exc}") from exc
        H_sub = hull.equations[:, :-1]
        h_sub = -hull.equations[:, -1]
        H_sub, h_sub = _merge_coplanar(H_sub, h_sub)
        if r == d:
            ext = points[np.sort(hull.vertices)]
    rows = []
    offs = []
    if r > 0:
        rows.append(H_sub @ basis)
        offs.append(h_sub + H_sub @ basis @ c)
    if d - r > 0:
        rows.extend([comp, -comp])
        offs.extend([comp @ c, -comp @ c])
    return np.vstack(rows), np.concatenate(offs), ext


# -- set algebra ------------------------------------------------------------

def reduce(P: Polytope, tol=LP_TOL) -> Polytope:
    """Drop redundant rows; the result describes the same set.

    A row survives only if maximising its normal over the other surviving rows
    exceeds its offset (rows are tested one at a time, so exact duplicates
    lose exactly one copy).
    """
    H, h = P.H, P.h
    norms = np.linalg.norm(H, axis=1)
    zero = norms <= 1e-14
    if np.any(zero & (h < -tol)):
        raise ContractViolation("reduce() needs a nonempty polytope")
    H, h = H[~zero] / norms[~zero, None], h[~zero] / norms[~zero]
    if H.shape[0] == 0:
        raise ContractViolation("polytope has no nontrivial rows")
    if is_empty(Polytope(H, h)):
        raise ContractViolation("reduce() needs a nonempty polytope")
    keep = np.ones(H.shape[0], dtype=bool)
    for k in range(H.shape[0]):
        keep[k] = False
        if not np.any(keep):
            keep[k] = True
            continue
        res = _lp(-H[k], H[keep], h[keep])
        if res.status == 3 or (res.status == 0 and -res.fun > h[k] + tol):
            keep[k] = True
    return Polytope(H[keep], h[keep])


def minkowski_sum(P: Polytope, Q: Polytope) -> Polytope:
    """P + Q as the convex hull of pairwise vertex sums (exact for bounded sets, dim <= 3)."""
    _check_same_dim(P, Q)
    d = P.dim
    if is_empty(P) or is_empty(Q):
        raise ContractViolation("Minkowski sum of an empty polytope")
    if d > MAX_VERTEX_DIM:
        raise UnsupportedOperation(f"Minkowski sum only for dim <= {MAX_VERTEX_DIM}")
    if not (_is_bounded(P) and _is_bounded(Q)):
        raise UnboundedError("Minkowski sum needs bounded operands")
    VP, VQ = vertices(P), vertices(Q)
    sums = (VP[:, None, :] + VQ[None, :, :]).reshape(-1, d)
    return Polytope.from_vertices(sums)


def pontryagin_diff(P: Polytope, Q: Polytope) -> Polytope:
    """{x : x + Q subset of P}; may be empty (callers check with is_empty)."""
    _check_same_dim(P, Q)
    offsets = support_many(Q, P.H)
    R = Polytope(P.H, P.h - offsets)
    if is_empty(R):
        return R
    return reduce(R)


def linear_map(M, P: Polytope) -> Polytope:
    """Image {M x : x in P}.

    Bounded low-dimensional sets go through their vertices (exact even for
    nearly singular M); otherwise an invertible M is substituted into the rows.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != P.dim:
        raise ContractViolation(f"map has {M.shape[1]} columns, polytope dim {P.dim}")
    low_dim = P.dim <= MAX_VERTEX_DIM and M.shape[0] <= MAX_VERTEX_DIM
    if low_dim and _is_bounded(P):
        V = vertices(P)
        if V.shape[0] == 0:
            raise ContractViolation("linear map of an empty polytope")
        return Polytope.from_vertices(V @ M.T)
    if M.shape[0] == M.shape[1] and np.linalg.cond(M) < 1e12:
        H = P.H @ np.linalg.inv(M)
        nrm = np.linalg.norm(H, axis=1)
        nrm[nrm == 0] = 1.0
        return Polytope(H / nrm[:, None], P.h / nrm)
    if not low_dim:
        raise UnsupportedOperation(
            f"non-invertible linear map only for dim <= {MAX_VERTEX_DIM}"
        )
    raise UnboundedError("non-invertible linear map of an unbounded polytope")
