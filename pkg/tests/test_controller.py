import numpy as np
import pytest

from petmpc import excitation as ex
from petmpc.controller import (
    CondensedQP,
    MpcConfig,
    PeTubeMpc,
    advance_nominal,
    control_input,
    excitation_cost,
    solve,
    solve_nominal_qp,
)
from petmpc.errors import ContractViolation

from conftest import joint_enumeration


@pytest.fixture(scope="module")
def setup(ident_cfg, ref_ingredients):
    cfg = MpcConfig(ident_cfg.N, ident_cfg.Q, ident_cfg.R, ref_ingredients, ident_cfg.pe,
                    ident_cfg.W, ident_cfg.grid_density)
    model = (ident_cfg.model.A_nom, ident_cfg.model.B_nom)
    buf = ex.init_buffer(ident_cfg.W, ident_cfg.pe, 0)
    return cfg, model, buf


def rollout_cost(A, B, Q, R, P_f, z0, v):
    z, cost, zs = z0, 0.0, [z0]
    for vk in v:
        cost += z @ Q @ z + vk @ R @ vk
        z = A @ z + B @ vk
        zs.append(z)
    return cost + z @ P_f @ z, np.array(zs)


def test_origin_gives_zero(setup):
    cfg, model, buf = setup
    v, z, cost, kkt = solve_nominal_qp(cfg, model, np.zeros(2))
    assert np.allclose(v, 0) and cost == pytest.approx(0.0, abs=1e-14)
    sol = solve(cfg, model, np.zeros(2), buf)
    assert sol.feasible and np.allclose(sol.v_seq, 0)
    # w0 is the cheapest admissible candidate (grid plus the periodic one)
    cands = list(ex.candidate_grid(cfg.W, cfg.grid_density)) + [buf.lagged(cfg.pe.lp)]
    best = min(abs(w[0]) for w in cands if ex.lookahead_feasible(buf, w))
    assert abs(sol.w0[0]) == pytest.approx(best)


def test_far_state_is_infeasible(setup):
    cfg, model, buf = setup
    sol = solve(cfg, model, np.array([1000.0, 1000.0]), buf)
    assert not sol.feasible and sol.v_seq is None


def test_unconstrained_region_matches_lqr(setup):
    cfg, model, _ = setup
    A, B = model
    ing = cfg.ingredients
    z0 = np.array([0.5, -0.3])
    assert ing.Z_f.contains(z0)
    v, zs, cost, _ = solve_nominal_qp(cfg, model, z0)
    # with P_f the Riccati solution, the finite-horizon optimum is the LQR rollout
    z = z0
    for k in range(cfg.N):
        assert v[k] == pytest.approx(ing.K_f @ z, abs=1e-9)
        z = A @ z + B @ v[k]
    assert cost == pytest.approx(z0 @ ing.P_f @ z0, rel=1e-9)
    ref, ref_z = rollout_cost(A, B, cfg.Q, cfg.R, ing.P_f, z0, v)
    assert cost == pytest.approx(ref, rel=1e-12) and np.allclose(zs, ref_z)


def test_kkt_and_constraints_on_random_states(setup):
    cfg, model, _ = setup
    A, B = model
    ing = cfg.ingredients
    rng = np.random.default_rng(8)
    lo, hi = ing.Z.bounding_box()
    solved = 0
    for z0 in rng.uniform(lo, hi, (60, 2)):
        out = solve_nominal_qp(cfg, model, z0)
        if out is None:
            continue
        solved += 1
        v, zs, _, kkt = out
        assert kkt <= 1e-8
        for k in range(1, cfg.N):
            assert ing.Z.contains(zs[k], 1e-8)
        assert ing.Z_f.contains(zs[-1], 1e-8)
        assert all(ing.V.contains(vk, 1e-8) for vk in v)
    assert solved > 10


def test_nominal_cost_decreases(setup):
    cfg, model, _ = setup
    A, B = model
    z = np.array([8.0, 8.0])
    prev = None
    for _ in range(25):
        v, _, cost, _ = solve_nominal_qp(cfg, model, z)
        if prev is not None:
            assert cost <= prev[0] - prev[1] + 1e-9
        prev = (cost, z @ cfg.Q @ z + v[0] @ cfg.R @ v[0])
        z = advance_nominal(model, z, v[0])
    assert np.linalg.norm(z) < 1e-3


def test_control_input_examples():
    K_t = np.array([[-0.112, 0.354]])
    assert control_input([0.1], K_t, [1.0, 2.0], [1.0, 2.0], [0.05]) == pytest.approx(0.15)
    assert control_input([0.0], K_t, [1.0, 1.0], [0.0, 0.0], [0.0]) == pytest.approx(0.242)
    assert control_input([0.0], K_t, [3.0, 3.0], [3.0, 3.0], [0.2]) == pytest.approx(0.2)


def test_advance_nominal_examples(ident_cfg):
    model = (ident_cfg.model.A_nom, ident_cfg.model.B_nom)
    assert np.array_equal(advance_nominal(model, np.zeros(2), [0.0]), np.zeros(2))
    assert np.allclose(advance_nominal(model, np.array([1.0, 0.0]), [0.0]), [0.42, 0.02])


def test_excitation_cost_counts_forced_repeats(setup):
    cfg, _, buf = setup
    w0 = np.array([0.1])
    forced = sum(float(buf.lagged(cfg.pe.lp - k) @ buf.lagged(cfg.pe.lp - k))
                 for k in range(1, min(cfg.pe.Np, cfg.N)))
    assert excitation_cost(cfg, buf, w0) == pytest.approx(0.01 + forced)


def test_config_contracts(setup):
    cfg, _, _ = setup
    with pytest.raises(ContractViolation):
        MpcConfig(0, cfg.Q, cfg.R, cfg.ingredients, cfg.pe, cfg.W)
    with pytest.raises(ContractViolation):
        MpcConfig(3, cfg.Q, [[0.0]], cfg.ingredients, cfg.pe, cfg.W)


def test_model_update_rebuilds_terminal(setup, ident_cfg):
    cfg, model, buf = setup
    from dataclasses import replace
    mpc = PeTubeMpc(replace(cfg), *model)
    A_true, B_true = ident_cfg.plant()
    mpc.set_model(A_true, B_true)
    ing = mpc.cfg.ingredients
    A_cl = A_true + B_true @ ing.K_f
    for z in ing.Z_f.vertices():
        assert ing.Z_f.contains(A_cl @ z, 1e-8)
    assert mpc.solve(np.zeros(2), buf).feasible


# -- decomposition versus joint enumeration ---------------------------------

@pytest.mark.parametrize("z0", [[0.0, 0.0], [3.0, -2.0], [6.0, 5.0], [-9.0, 4.0], [11.0, 8.0]])
def test_decomposition_matches_joint_enumeration(ident_cfg, ref_ingredients, z0):
    cfg = MpcConfig(2, ident_cfg.Q, ident_cfg.R, ref_ingredients, ident_cfg.pe, ident_cfg.W,
                    grid_density=11)
    A, B = ident_cfg.model.A_nom, ident_cfg.model.B_nom
    ing = ref_ingredients
    buf = ex.init_buffer(ident_cfg.W, ident_cfg.pe, 3)
    z0 = np.array(z0)
    sol = solve(cfg, (A, B), z0, buf)
    assert sol.feasible
    best, v_best, w_best, h = joint_enumeration(A, B, cfg.Q, cfg.R, ing, cfg, buf, z0)
    # the decomposed answer is never worse than any grid point
    assert sol.total_cost <= best + 1e-9
    # and the grid optimum lies within one cell of it (quadratic growth bound)
    qp = CondensedQP(A, B, cfg.Q, cfg.R, ing.P_f, cfg.N, ing.Z, ing.V, ing.Z_f)
    grad = qp.H @ sol.v_seq.ravel() + qp.F @ z0
    lam_max = float(np.max(np.linalg.eigvalsh(qp.H))) / 2
    gap = np.linalg.norm(grad) * h * np.sqrt(2) + lam_max * 2 * h * h
    assert best - sol.total_cost <= gap + 1e-9
    # the exciting part of both answers coincides
    assert excitation_cost(cfg, buf, w_best) == pytest.approx(sol.cost_w)
