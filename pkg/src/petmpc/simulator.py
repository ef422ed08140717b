"""Closed-loop harness: true plant, PE tube MPC, RLS identifier and runtime monitors."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import excitation, sysid
from .config import ScenarioConfig
from .controller import MpcConfig, PeTubeMpc, advance_nominal, control_input
from .errors import PetmpcError
from .excitation import build_M, min_eig, stacked_information
from .sets import TubeIngredients

log = logging.getLogger(__name__)

MONITORS = ("x_in_X", "u_in_U", "w_in_W", "e_in_S", "ws_in_WS", "qp_feasible", "pe")


class MonitorFailure(PetmpcError, RuntimeError):
    pass


@dataclass
class Plant:
    A_true: np.ndarray
    B_true: np.ndarray
    delta: float

    def step(self, x, u):
        return self.A_true @ x + self.B_true @ u


@dataclass
class StepRecord:
    i: int
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    e: np.ndarray
    w_S: np.ndarray
    min_eig_M: float
    min_eig_M_u: float
    cost_z: float
    cost_w: float
    kkt_residual: float
    n_candidates: int
    n_feasible: int
    trivial_used: bool
    model_published: bool
    pe_transmitted: bool
    theta: np.ndarray
    param_err_pct: np.ndarray
    monitors: dict


@dataclass
class RunResult:
    records: list
    status: str = "ok"  # "ok" | "infeasible"
    message: str = ""
    ingredients: TubeIngredients | None = None
    x_final: np.ndarray | None = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, k):
        return self.records[k]

    @property
    def monitors_ok(self) -> bool:
        return all(all(r.monitors.values()) for r in self.records)

    def summary(self) -> dict:
        recs = self.records
        out = {"status": self.status, "message": self.message, "steps": len(recs)}
        if not recs:
            return out
        out["final_param_err_pct"] = recs[-1].param_err_pct.tolist()
        out["min_eig_M"] = float(min(r.min_eig_M for r in recs))
        out["monitor_failures"] = {
            k: int(sum(not r.monitors[k] for r in recs)) for k in MONITORS
        }
        out["monitors_ok"] = self.monitors_ok
        out["pe_not_transmitted_steps"] = [r.i for r in recs if not r.pe_transmitted]
        out["max_norm_e"] = float(max(np.linalg.norm(r.e) for r in recs))
        return out


def csv_header(n: int, m: int):
    p = n * (n + m)
    cols = ["i"]
    cols += [f"x{j + 1}" for j in range(n)] + [f"z{j + 1}" for j in range(n)]
    cols += [f"u{j + 1}" for j in range(m)] + [f"v{j + 1}" for j in range(m)]
    cols += [f"w{j + 1}" for j in range(m)] + [f"e{j + 1}" for j in range(n)]
    cols += [f"ws{j + 1}" for j in range(n)]
    cols += ["min_eig_M", "min_eig_M_u", "n_candidates", "n_feasible", "trivial_used",
             "cost_z", "cost_w", "kkt_residual", "model_published", "pe_transmitted"]
    cols += [f"theta{k + 1}" for k in range(p)] + [f"err_pct{k + 1}" for k in range(p)]
    cols += [f"mon_{k}" for k in MONITORS]
    return cols


def _f(x) -> str:
    return format(float(x), ".17g")


def csv_row(r: StepRecord):
    row = [str(r.i)]
    for arr in (r.x, r.z, r.u, r.v, r.w, r.e, r.w_S):
        row += [_f(a) for a in arr]
    row += [_f(r.min_eig_M), _f(r.min_eig_M_u), str(r.n_candidates), str(r.n_feasible),
            str(int(r.trivial_used)), _f(r.cost_z), _f(r.cost_w), _f(r.kkt_residual),
            str(int(r.model_published)), str(int(r.pe_transmitted))]
    row += [_f(a) for a in r.theta.ravel()] + [_f(a) for a in r.param_err_pct.ravel()]
    row += [str(int(r.monitors[k])) for k in MONITORS]
    return row


class Simulation:
    """Mutable closed-loop state; ``step`` advances one sampling instant."""

    def __init__(self, cfg: ScenarioConfig, ingredients: TubeIngredients | None = None,
                 fail_fast: bool = False, noise=None):
        self.cfg = cfg
        self.fail_fast = fail_fast
        self.noise = noise
        self.rng = np.random.default_rng(cfg.seed)
        self.ingredients = ingredients if ingredients is not None else cfg.build_ingredients()
        A_true, B_true = cfg.plant()
        self.plant = Plant(A_true, B_true, cfg.delta)
        mcfg = MpcConfig(cfg.N, cfg.Q, cfg.R, self.ingredients, cfg.pe, cfg.W,
                         cfg.grid_density, cfg.qp_tol)
        self.controller = PeTubeMpc(mcfg, cfg.model.A_nom, cfg.model.B_nom)
        self.rls = sysid.init(cfg.model.A_nom, cfg.model.B_nom, cfg.lam, cfg.literal_timing)
        self.buffer = excitation.init_buffer(cfg.W, cfg.pe, cfg.seed, cfg.buffer_attempts)
        self.x = cfg.x0.copy()
        self.z = cfg.x0.copy()  # e(0) = 0
        self.i = 0
        self.u_hist = []

    def _u_information(self):
        p = self.cfg.pe
        if len(self.u_hist) < p.history_length:
            return np.nan
        G = stacked_information(np.array(self.u_hist[-p.history_length:]), p.Np, p.lp)
        return min_eig(G - p.rho0 * np.eye(G.shape[0]))

    def step(self):
        """Advance one instant; returns the StepRecord or None if the MPC is infeasible."""
        cfg, ing, tol = self.cfg, self.ingredients, self.cfg.monitor_tol
        i, x, z = self.i, self.x, self.z
        A_pred, B_pred = self.controller.model

        sol = self.controller.solve(z, self.buffer)
        if not sol.feasible:
            return None
        v0, w0 = sol.v0, sol.w0
        u = control_input(v0, ing.K_t, x, z, w0)
        x_meas = x if self.noise is None else x + self.noise(self.rng, i)
        x_next = self.plant.step(x, u)

        M_i = build_M(self.buffer, w0)
        self.rls = sysid.update(self.rls, x_meas, np.concatenate([x_meas, u]))
        self.buffer.append(w0)
        self.u_hist.append(u.copy())
        z_next = advance_nominal((A_pred, B_pred), z, v0)

        published = i > 0 and i % cfg.update_period == 0
        if published:
            self.controller.set_model(*sysid.current_model(self.rls))
            ing = self.ingredients = self.controller.cfg.ingredients

        w_S = (self.plant.A_true - A_pred) @ x + (self.plant.B_true - B_pred) @ u
        e = x - z
        mu = self._u_information()
        me = min_eig(M_i)
        monitors = {
            "x_in_X": cfg.X.contains(x, tol),
            "u_in_U": cfg.U.contains(u, tol),
            "w_in_W": cfg.W.contains(w0, tol),
            "e_in_S": ing.S.contains(e, tol),
            "ws_in_WS": ing.W_S.contains(w_S, tol),
            "qp_feasible": sol.kkt_residual <= cfg.qp_tol,
            "pe": me >= cfg.pe.eps_pd,
        }
        # diagnostic only: u exciting whenever w is (nan = u history still too short)
        transmitted = bool(np.isnan(mu) or mu >= cfg.pe.eps_pd or me < cfg.pe.eps_pd)
        err, _ = sysid.parameter_error_pct(self.rls, self.plant.A_true, self.plant.B_true)
        sel = sol.selection
        rec = StepRecord(
            i=i, x=x.copy(), z=z.copy(), u=u, v=np.atleast_1d(v0).copy(), w=w0.copy(), e=e,
            w_S=w_S, min_eig_M=me, min_eig_M_u=mu, cost_z=sol.cost_z, cost_w=sol.cost_w,
            kkt_residual=sol.kkt_residual, n_candidates=sel.n_candidates,
            n_feasible=sel.n_feasible, trivial_used=sel.trivial_used,
            model_published=published, pe_transmitted=transmitted,
            theta=self.rls.theta.copy(), param_err_pct=err, monitors=monitors,
        )
        failed = [k for k, ok in monitors.items() if not ok]
        if failed:
            log.warning("step %d: monitors failed: %s", i, ", ".join(failed))
            if self.fail_fast:
                raise MonitorFailure(f"step {i}: monitors failed: {', '.join(failed)}")
        self.x, self.z, self.i = x_next, z_next, i + 1
        return rec


def run(cfg: ScenarioConfig, csv_path=None, ingredients=None, fail_fast: bool = False,
        noise=None) -> RunResult:
    """Simulate ``cfg.steps`` instants; deterministic given the config (seed included)."""
    sim = Simulation(cfg, ingredients, fail_fast, noise)
    result = RunResult([], ingredients=sim.ingredients)
    writer = fh = None
    if csv_path is not None:
        fh = open(csv_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(csv_header(cfg.model.n, cfg.model.m))
    try:
        for _ in range(cfg.steps):
            try:
                rec = sim.step()
            except PetmpcError as exc:
                raise type(exc)(f"step {sim.i}: {exc}") from exc
            if rec is None:
                result.status = "infeasible"
                result.message = f"controller infeasible at step {sim.i}"
                log.error(result.message)
                break
            result.records.append(rec)
            if writer is not None:
                writer.writerow(csv_row(rec))
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    result.x_final = sim.x.copy()
    return result


def write_summary(result: RunResult, path):
    Path(path).write_text(json.dumps(result.summary(), indent=2))


def write_columns(result: RunResult, out_dir):
    """Whitespace-separated column files (gnuplot friendly) for states and inputs."""
    out_dir = Path(out_dir)
    with open(out_dir / "states.dat", "w") as fh:
        fh.write("# i x... z...\n")
        for r in result.records:
            fh.write(" ".join([str(r.i)] + [_f(a) for a in np.concatenate([r.x, r.z])]) + "\n")
    with open(out_dir / "inputs.dat", "w") as fh:
        fh.write("# i u... v... w...\n")
        for r in result.records:
            fh.write(" ".join([str(r.i)] + [_f(a) for a in np.concatenate([r.u, r.v, r.w])]) + "\n")
