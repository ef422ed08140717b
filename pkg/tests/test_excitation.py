import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from petmpc import excitation as ex
from petmpc.errors import ContractViolation, FeasibilityLoss, InitializationError
from petmpc.excitation import PeBuffer, PeParams
from petmpc.polytope import Polytope

BUILTIN = PeParams(Np=6, lp=11, rho0=0.05)
W1 = Polytope.box([-0.2], [0.2])


def direct_M(seq, Np, lp, rho0):
    """Double loop over window entries; seq newest last, shape (L, m)."""
    seq = np.asarray(seq, dtype=float).reshape(len(seq), -1)
    L, m = seq.shape
    M = -rho0 * np.eye(Np * m)
    for j in range(lp):
        for a in range(Np):
            for b in range(Np):
                wa, wb = seq[L - 1 - j - a], seq[L - 1 - j - b]
                for p in range(m):
                    for q in range(m):
                        M[a * m + p, b * m + q] += wa[p] * wb[q]
    return M


def lookahead_oracle(history, w0, params):
    """Continue the sequence explicitly and test every future M with a Cholesky attempt."""
    seq = [np.atleast_1d(h) for h in history] + [np.atleast_1d(w0)]
    for k in range(params.Np):
        if k > 0:
            seq.append(seq[len(seq) - params.lp])
        M = direct_M(seq[-params.history_length:], params.Np, params.lp, params.rho0)
        try:
            np.linalg.cholesky(M - params.eps_pd * np.eye(M.shape[0]))
        except np.linalg.LinAlgError:
            return False
    return True


# -- information matrix ----------------------------------------------------

def test_build_M_examples():
    buf = PeBuffer(BUILTIN, np.zeros((16, 1)))
    M = ex.build_M(buf)
    assert np.allclose(M, -0.05 * np.eye(6))
    assert ex.min_eig(M) == pytest.approx(-0.05)
    tiny = PeBuffer(PeParams(1, 1, 0.05), [[0.3]])
    assert np.allclose(ex.build_M(tiny), [[0.04]])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_build_M_direct_sum_oracle(seed):
    rng = np.random.default_rng(seed)
    m, Np, lp = int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(rng.integers(1, 8))
    params = PeParams(Np, lp, float(rng.uniform(0.01, 0.1)))
    hist = rng.uniform(-1, 1, (params.history_length, m))
    buf = PeBuffer(params, hist)
    assert np.max(np.abs(ex.build_M(buf) - direct_M(hist, Np, lp, params.rho0))) <= 1e-12
    # candidate variant equals appending the candidate
    w = rng.uniform(-1, 1, m)
    assert np.allclose(ex.build_M(buf, w),
                       direct_M(np.vstack([hist, w])[1:], Np, lp, params.rho0), atol=1e-12)


def test_build_M_short_history():
    with pytest.raises(ContractViolation):
        ex.build_M(PeBuffer(BUILTIN, np.zeros((5, 1))))


def test_is_pe_examples_and_factorization_oracle():
    assert not ex.is_pe(-0.05 * np.eye(3))
    assert ex.is_pe(np.eye(3))
    rng = np.random.default_rng(3)
    for _ in range(200):
        A = rng.normal(size=(4, 4))
        M = A @ A.T * rng.uniform(0, 1) - rng.uniform(0, 0.5) * np.eye(4)
        try:
            np.linalg.cholesky(M - ex.EPS_PD * np.eye(4))
            oracle = True
        except np.linalg.LinAlgError:
            oracle = False
        assert ex.is_pe(M) == oracle


def test_trace_bound():
    rng = np.random.default_rng(4)
    bound = ex.trace_bound(W1, BUILTIN)
    assert bound == pytest.approx(11 * 6 * 0.04)
    for _ in range(50):
        buf = PeBuffer(BUILTIN, rng.uniform(-0.2, 0.2, (16, 1)))
        assert np.trace(ex.build_M(buf)) + BUILTIN.rho0 * 6 <= bound + 1e-12


# -- lookahead feasibility -------------------------------------------------

def test_lookahead_zero_buffer_rejects_zero():
    buf = PeBuffer(BUILTIN, np.zeros((16, 1)))
    assert not ex.lookahead_feasible(buf, [0.0])


@pytest.mark.parametrize("seed", range(5))
def test_lookahead_grid_oracle(seed):
    buf = ex.init_buffer(W1, BUILTIN, seed)
    hist = buf.as_array()
    grid = np.round(np.arange(-0.2, 0.2 + 5e-4, 1e-3), 10)
    accept = [ex.lookahead_feasible(buf, [w]) for w in grid]
    oracle = [lookahead_oracle(hist, w, BUILTIN) for w in grid]
    assert accept == oracle
    assert any(accept)


def excitation_only_loop(buf, W, R, steps, grid_density=21):
    """Run select_w0 -> append repeatedly; returns per-step (trivial ok, min eig M)."""
    out = []
    grid = ex.candidate_grid(W, grid_density)
    for _ in range(steps):
        trivial_ok = ex.lookahead_feasible(buf, buf.lagged(buf.params.lp))
        sel = ex.select_candidate(buf, W, R, grid=grid)
        out.append((trivial_ok, ex.min_eig(ex.build_M(buf, sel.w0))))
        buf.append(sel.w0)
    return out


@given(st.integers(0, 10_000))
@settings(max_examples=8, deadline=None)
def test_trivial_candidate_stays_feasible(seed):
    # buffers produced by the algorithm itself keep the periodic candidate admissible
    buf = ex.init_buffer(W1, BUILTIN, seed)
    for trivial_ok, me in excitation_only_loop(buf, W1, np.eye(1), 25):
        assert trivial_ok
        assert me >= BUILTIN.eps_pd


def test_trivial_candidate_two_inputs():
    W2 = Polytope.symmetric_box([0.2, 0.3])
    params = PeParams(Np=2, lp=5, rho0=0.02)
    buf = ex.init_buffer(W2, params, seed=1)
    for trivial_ok, me in excitation_only_loop(buf, W2, np.diag([1.0, 2.0]), 20, 9):
        assert trivial_ok and me >= params.eps_pd


def test_trivial_feasible_along_closed_loop(ident_run, reg_run):
    for run in (ident_run, reg_run):
        assert all(r.n_feasible >= 1 for r in run.records)
        assert all(r.min_eig_M >= 1e-8 for r in run.records)


# -- selection -------------------------------------------------------------

def test_select_only_trivial_feasible():
    params = PeParams(Np=1, lp=3, rho0=0.03)
    # M(w0) = w0^2 + 0.1^2 + 0 - 0.03, so only |w0| >= ~0.1414 is admissible
    buf = PeBuffer(params, [[0.15], [0.1], [0.0]])
    grid = np.array([[0.0], [0.05], [-0.1], [0.14]])
    sel = ex.select_candidate(buf, W1, np.eye(1), grid=grid)
    assert sel.w0[0] == pytest.approx(0.15) and sel.trivial_used and sel.n_feasible == 1


def test_select_symmetric_tie_prefers_positive():
    params = PeParams(Np=1, lp=3, rho0=0.03)
    buf = PeBuffer(params, [[0.0], [0.1], [0.1]])
    # feasible iff w^2 >= 0.01 + eps
    grid = np.array([[-0.15], [-0.05], [0.05], [0.15]])
    sel = ex.select_candidate(buf, W1, np.eye(1), grid=grid)
    assert sel.w0[0] == pytest.approx(0.15)
    assert sel.n_feasible == 2


def test_select_raises_on_broken_precondition():
    buf = PeBuffer(BUILTIN, np.zeros((16, 1)))
    with pytest.raises(FeasibilityLoss):
        ex.select_w0(buf, W1, np.eye(1))


def test_selection_within_dense_grid_cell(ident_cfg, ref_ingredients):
    from petmpc.simulator import Simulation
    sim = Simulation(ident_cfg, ref_ingredients)
    dense = ex.candidate_grid(ident_cfg.W, 10 * (ident_cfg.grid_density - 1) + 1)
    h = 0.4 / (ident_cfg.grid_density - 1)
    R = ident_cfg.R
    for _ in range(15):
        buf = sim.buffer.copy()
        rec = sim.step()
        chosen = float(rec.w @ R @ rec.w)
        costs = [float(w @ R @ w) for w in dense if ex.lookahead_feasible(buf, w)]
        best = min(costs + [float(buf.lagged(11) @ R @ buf.lagged(11))])
        w_best = np.sqrt(best / R[0, 0])
        cell = R[0, 0] * ((w_best + h) ** 2 - w_best**2)
        assert best - 1e-12 <= chosen <= best + cell + 1e-12


# -- initialisation --------------------------------------------------------

def test_init_buffer_builtin_params():
    buf = ex.init_buffer(W1, BUILTIN, seed=0)
    assert len(buf) == 16
    assert ex.min_eig(ex.build_M(buf)) >= BUILTIN.eps_pd
    assert all(W1.contains(w) for w in buf.as_array())


def test_init_buffer_deterministic():
    a = ex.init_buffer(W1, BUILTIN, seed=7).as_array()
    b = ex.init_buffer(W1, BUILTIN, seed=7).as_array()
    assert np.array_equal(a, b)


def test_init_buffer_impossible_rho0():
    too_big = PeParams(6, 11, rho0=11 * 0.04 * 6 + 0.1)
    with pytest.raises(InitializationError):
        ex.init_buffer(W1, too_big)
    with pytest.raises(InitializationError):
        ex.init_buffer(W1, PeParams(6, 11, rho0=0.39), attempts_max=5)


def test_params_domain():
    with pytest.raises(ContractViolation):
        PeParams(6, 11, rho0=0.0)
    with pytest.raises(ContractViolation):
        PeParams(0, 11, rho0=0.05)
    with pytest.raises(ContractViolation):
        PeParams(6, 11, rho0=0.05, rho1=0.01)
