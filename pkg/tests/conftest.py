import numpy as np
import pytest

from petmpc.config import builtin_config
from petmpc.polytope import Polytope


def random_polytope(rng, dim=2, n_points=None):
    """Hull of random points around a random centre (bounded, full-dimensional)."""
    n_points = n_points or rng.integers(dim + 2, 10)
    centre = rng.uniform(-1, 1, dim)
    pts = centre + rng.uniform(-1, 1, (n_points, dim)) * rng.uniform(0.2, 2.0, dim)
    return Polytope.from_vertices(pts), pts


def random_box(rng, dim=2, centred=False):
    half = rng.uniform(0.1, 3.0, dim)
    c = np.zeros(dim) if centred else rng.uniform(-1, 1, dim)
    return Polytope.box(c - half, c + half)


def sample_points(P, rng, n=200, pad=0.2):
    lo, hi = P.bounding_box()
    span = hi - lo
    return rng.uniform(lo - pad * span, hi + pad * span, (n, P.dim))


@pytest.fixture(scope="session")
def ident_cfg():
    return builtin_config("identification")


@pytest.fixture(scope="session")
def reg_cfg():
    return builtin_config("regulation")


@pytest.fixture(scope="session")
def ref_ingredients(ident_cfg):
    return ident_cfg.build_ingredients()


@pytest.fixture(scope="session")
def ident_run(ident_cfg, ref_ingredients):
    from petmpc.simulator import run
    return run(ident_cfg, ingredients=ref_ingredients)


@pytest.fixture(scope="session")
def reg_run(reg_cfg, ref_ingredients):
    from petmpc.simulator import run
    return run(reg_cfg, ingredients=ref_ingredients)


def joint_enumeration(A, B, Q, R, ing, cfg, buf, z0, n_grid=161):
    """Brute-force the joint (v, w0) problem for a scalar input over a grid.

    Returns (best total cost, v_best (N, 1), w_best, grid spacing h).
    """
    from petmpc import excitation as ex
    from petmpc.controller import excitation_cost

    N = cfg.N
    lo, hi = ing.V.bounding_box()
    axis = np.linspace(lo[0], hi[0], n_grid)
    h = axis[1] - axis[0]
    V = np.array(np.meshgrid(*[axis] * N, indexing="ij")).reshape(N, -1).T  # (G, N)
    z = np.tile(z0, (V.shape[0], 1))
    cost = np.zeros(V.shape[0])
    ok = np.ones(V.shape[0], dtype=bool)
    for k in range(N):
        if k > 0:
            ok &= np.all(z @ ing.Z.H.T <= ing.Z.h + 1e-9, axis=1)
        cost += np.einsum("gi,ij,gj->g", z, Q, z) + R[0, 0] * V[:, k] ** 2
        z = z @ A.T + np.outer(V[:, k], B[:, 0])
    ok &= np.all(z @ ing.Z_f.H.T <= ing.Z_f.h + 1e-9, axis=1)
    cost += np.einsum("gi,ij,gj->g", z, ing.P_f, z)
    cost = np.where(ok, cost, np.inf)

    w_cands = list(ex.candidate_grid(cfg.W, cfg.grid_density)) + [buf.lagged(cfg.pe.lp)]
    w_ok = [w for w in w_cands if ex.lookahead_feasible(buf, w)]
    w_cost = np.array([excitation_cost(cfg, buf, w) for w in w_ok])
    total = cost[:, None] + w_cost[None, :]
    g, j = np.unravel_index(np.argmin(total), total.shape)
    return float(total[g, j]), V[g].reshape(N, 1), w_ok[j], h
