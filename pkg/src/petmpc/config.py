"""Scenario configuration: JSON (de)serialisation and assumption checks."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ContractViolation, PetmpcError
from .excitation import GRID_DENSITY, PeParams
from .polytope import Polytope, is_empty, linear_map, minkowski_sum, pontryagin_diff
from .sets import UncertainModel, build_tube_ingredients, ingredients_hash, solve_dare

SCHEMA_VERSION = 1
BUILTIN = {
    "identification": "identification.json",
    "regulation": "regulation.json",
}


def _arr(x):
    return np.atleast_2d(np.asarray(x, dtype=float))


@dataclass
class ScenarioConfig:
    model: UncertainModel
    X: Polytope
    U: Polytope
    W: Polytope
    N: int
    Q: np.ndarray
    R: np.ndarray
    K_t: np.ndarray
    pe: PeParams
    x0: np.ndarray
    steps: int
    delta: float = 0.0
    seed: int = 0
    grid_density: int = GRID_DENSITY
    lam: float = 0.97
    update_period: int = 3
    literal_timing: bool = False
    mismatch_multiplier: float = 1.0
    alpha_max: float = 0.05
    s_max: int = 200
    iter_max: int = 100
    monitor_tol: float = 1e-7
    qp_tol: float = 1e-8
    buffer_attempts: int = 1000
    name: str = "scenario"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Q, self.R, self.K_t = _arr(self.Q), _arr(self.R), _arr(self.K_t)
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.steps < 0:
            raise ContractViolation("steps must be >= 0")
        if self.update_period < 1:
            raise ContractViolation("update_period must be >= 1")
        if not 0.0 < self.lam <= 1.0:
            raise ContractViolation("forgetting factor must lie in (0, 1]")
        if self.x0.size != self.model.n:
            raise ContractViolation("x0 has the wrong dimension")

    def plant(self):
        return self.model.plant(self.delta)

    def _tube_params(self):
        return {"mismatch_multiplier": self.mismatch_multiplier, "alpha_max": self.alpha_max,
                "s_max": self.s_max, "iter_max": self.iter_max}

    def build_ingredients(self):
        return build_tube_ingredients(self.model, self.X, self.U, self.W, self.K_t, self.Q,
                                      self.R, **self._tube_params())

    def ingredients_hash(self) -> str:
        """Hash a cached TubeIngredients must carry to be reused for this config."""
        return ingredients_hash(self.model, self.X, self.U, self.W, self.K_t, self.Q, self.R,
                                **self._tube_params())

    # -- JSON ------------------------------------------------------------

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "model": self.model.to_dict(),
            "sets": {"X": self.X.to_dict(), "U": self.U.to_dict(), "W": self.W.to_dict()},
            "controller": {"N": self.N, "Q": self.Q.tolist(), "R": self.R.tolist(),
                           "K_t": self.K_t.tolist(), "qp_tol": self.qp_tol},
            "pe": {"Np": self.pe.Np, "lp": self.pe.lp, "rho0": self.pe.rho0,
                   "rho1": self.pe.rho1, "eps_pd": self.pe.eps_pd,
                   "grid_density": self.grid_density,
                   "buffer_attempts": self.buffer_attempts},
            "rls": {"lambda": self.lam, "update_period": self.update_period,
                    "literal_timing": self.literal_timing},
            "tube": {"mismatch_multiplier": self.mismatch_multiplier,
                     "alpha_max": self.alpha_max, "s_max": self.s_max,
                     "iter_max": self.iter_max},
            "simulation": {"x0": self.x0.tolist(), "steps": self.steps,
                           "delta": self.delta, "seed": self.seed,
                           "monitor_tol": self.monitor_tol},
        }

    @classmethod
    def from_dict(cls, d):
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ContractViolation(f"unsupported schema_version {version!r}")
        c, pe, rls = d["controller"], d["pe"], d["rls"]
        tube, sim = d.get("tube", {}), d["simulation"]
        return cls(
            model=UncertainModel.from_dict(d["model"]),
            X=Polytope.from_dict(d["sets"]["X"]),
            U=Polytope.from_dict(d["sets"]["U"]),
            W=Polytope.from_dict(d["sets"]["W"]),
            N=int(c["N"]), Q=c["Q"], R=c["R"], K_t=c["K_t"],
            qp_tol=float(c.get("qp_tol", 1e-8)),
            pe=PeParams(int(pe["Np"]), int(pe["lp"]), float(pe["rho0"]),
                        None if pe.get("rho1") is None else float(pe["rho1"]),
                        float(pe.get("eps_pd", 1e-8))),
            grid_density=int(pe.get("grid_density", GRID_DENSITY)),
            buffer_attempts=int(pe.get("buffer_attempts", 1000)),
            lam=float(rls["lambda"]), update_period=int(rls.get("update_period", 3)),
            literal_timing=bool(rls.get("literal_timing", False)),
            mismatch_multiplier=float(tube.get("mismatch_multiplier", 1.0)),
            alpha_max=float(tube.get("alpha_max", 0.05)),
            s_max=int(tube.get("s_max", 200)), iter_max=int(tube.get("iter_max", 100)),
            x0=sim["x0"], steps=int(sim["steps"]), delta=float(sim.get("delta", 0.0)),
            seed=int(sim.get("seed", 0)), monitor_tol=float(sim.get("monitor_tol", 1e-7)),
            name=d.get("name", "scenario"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str):
        return cls.from_dict(json.loads(text))


def load_config(path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        context = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
        raise ContractViolation(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {context}"
        ) from exc
    return ScenarioConfig.from_dict(data)


def builtin_config(name: str) -> ScenarioConfig:
    if name not in BUILTIN:
        raise ContractViolation(f"unknown built-in config {name!r}; choose from {sorted(BUILTIN)}")
    text = resources.files("petmpc.configs").joinpath(BUILTIN[name]).read_text()
    return ScenarioConfig.from_json(text)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self):
        return [f"[{'PASS' if c.passed else 'FAIL'}] {c.name}" + (f": {c.detail}" if c.detail else "")
                for c in self.checks]


def _compact_with_origin(P: Polytope):
    try:
        lo, hi = P.bounding_box()
    except PetmpcError:
        return False
    return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and P.contains(np.zeros(P.dim)))


def validate_config(cfg: ScenarioConfig) -> ValidationReport:
    """Check the standing assumptions of the tube design for ``cfg``."""
    checks = []
    A, B = cfg.model.A_nom, cfg.model.B_nom
    try:
        solve_dare(A, B, cfg.Q, cfg.R)
        checks.append(Check("stabilizable nominal model", True))
    except PetmpcError as exc:
        checks.append(Check("stabilizable nominal model", False, str(exc)))
    rho = float(np.max(np.abs(np.linalg.eigvals(A + B @ cfg.K_t))))
    checks.append(Check("K_t stabilizes nominal model", rho < 1.0, f"spectral radius {rho:.4f}"))
    checks.append(Check("plant delta within bound", abs(cfg.delta) <= cfg.model.delta_max,
                        f"|delta|={abs(cfg.delta)}, delta_max={cfg.model.delta_max}"))
    for name, P in (("X", cfg.X), ("U", cfg.U), ("W", cfg.W)):
        checks.append(Check(f"{name} compact and contains origin", _compact_with_origin(P)))

    U_hat = pontryagin_diff(cfg.U, cfg.W)
    u_hat_ok = not is_empty(U_hat)
    checks.append(Check("U_hat = U - W nonempty", u_hat_ok))
    if u_hat_ok:
        checks.append(Check("U_hat + W inside U",
                            minkowski_sum(U_hat, cfg.W).is_subset(cfg.U)))
    if not u_hat_ok:
        return ValidationReport(checks)
    try:
        ing = cfg.build_ingredients()
    except PetmpcError as exc:
        checks.append(Check("tube ingredients", False, str(exc)))
        return ValidationReport(checks)
    checks.append(Check("S inside X", ing.S.is_subset(cfg.X)))
    checks.append(Check("K_t S inside U_hat", linear_map(cfg.K_t, ing.S).is_subset(U_hat)))
    checks.append(Check("x0 inside Z (nominal start feasible)", ing.Z.contains(cfg.x0)))
    return ValidationReport(checks)
