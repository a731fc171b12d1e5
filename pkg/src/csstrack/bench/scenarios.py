"""Monte-Carlo harness for the piezo study and the gyroscope scenario runner."""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .._kernels import closed_loop
from ..css import sample_proper_noise
from ..linsys import eigen_pairs, select_resonant_mode
from ..tracker import LOG_FIELDS, TrackerConfig, make_tracker, tracker_step
from .plants import (
    GYRO_TS,
    GyroParams,
    GyroProfile,
    PiezoParams,
    draw_piezo,
    gyro_design,
    gyro_discrete,
    piezo_design,
    piezo_discrete,
    theoretical_resonance,
)

__all__ = [
    "CSV_FIELDS",
    "MonteCarloSpec",
    "GyroSpec",
    "RunResult",
    "piezo_tracker_config",
    "gyro_tracker_config",
    "simulate",
    "run_piezo_plant",
    "run_piezo_monte_carlo",
    "run_gyro_scenario",
    "combo_summary",
]

log = logging.getLogger(__name__)

CSV_FIELDS = LOG_FIELDS + ("omega_true",)


# --------------------------------------------------------------------- results
@dataclass
class RunResult:
    """Per-step log rows (columns `CSV_FIELDS`) plus run metadata."""

    rows: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, float)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(CSV_FIELDS):
            raise ValueError(f"rows must have {len(CSV_FIELDS)} columns")

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, CSV_FIELDS.index(name)]

    @property
    def relative_error(self) -> np.ndarray:
        """``omega_k / omega_true_k - 1``."""
        return self.column("omega") / self.column("omega_true") - 1.0

    def convergence_time(self, tol: float) -> int:
        """One past the last sample whose relative error exceeds `tol` (0 if none)."""
        bad = np.flatnonzero(~(np.abs(self.relative_error) < tol))
        return int(bad[-1] + 1) if bad.size else 0

    def steady_error(self, tail: float = 0.2) -> float:
        """Largest relative error over the final `tail` fraction of the run."""
        n = max(1, int(len(self.rows) * tail))
        return float(np.max(np.abs(self.relative_error[-n:])))

    def to_csv(self, path) -> None:
        """Write the rows with 17 significant digits (byte-stable for a fixed seed)."""
        fmt = ["%d"] + ["%.17g"] * (len(CSV_FIELDS) - 1)
        np.savetxt(path, self.rows, fmt=fmt, delimiter=",", header=",".join(CSV_FIELDS),
                   comments="")


def _config_hash(*objs) -> str:
    def enc(o):
        if isinstance(o, np.ndarray):
            return {"re": o.real.tolist(), "im": o.imag.tolist()} if np.iscomplexobj(o) else o.tolist()
        if isinstance(o, complex):
            return [o.real, o.imag]
        return str(o)

    blob = json.dumps([asdict(o) if hasattr(o, "__dataclass_fields__") else o for o in objs],
                      sort_keys=True, default=enc)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ------------------------------------------------------------------ simulation
def simulate(tracker, steps: int, plant_at, Q, R, rng: np.random.Generator, omega_true_at,
             backend: str = "compiled", divergence_limit: float = 1e6) -> tuple[np.ndarray, dict]:
    """Run a tracking loop against a (possibly time-varying) real plant.

    Parameters
    ----------
    tracker : LoopState
        Freshly built loop; its envelope source decides whether the real
        carrier-modulated plant (sNDTFT) or the complex envelope model
        (exact-CSS) is simulated.
    plant_at : callable
        ``k -> RealStateSpace``, the true discrete plant for sample ``k``.
        Return the same object for unchanged plants.
    Q, R : array_like
        Input-referred process and measurement noise covariances.
    omega_true_at : callable
        ``k -> float``, resonance oracle written next to each log row.
    backend : {"compiled", "python"}
        ``"python"`` steps `tracker_step`; ``"compiled"`` runs the same loop
        in a numba kernel and leaves `tracker` untouched.

    Returns
    -------
    rows : (steps, len(CSV_FIELDS)) float array
    info : dict
        ``max_state`` (largest plant state norm), ``fault``, ``diverged``
        and ``clamps`` (frequency updates cut back to the band).
    """
    if backend not in ("compiled", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    exact = tracker.config.envelope_source == "exact-css"
    systems, index = [], np.empty(steps, np.int64)
    seen: dict = {}
    for k in range(steps):
        sys = plant_at(k)
        if id(sys) not in seen:
            seen[id(sys)] = len(systems)
            systems.append(sys)
        index[k] = seen[id(sys)]
    m, p = systems[0].m, systems[0].p
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    if exact:
        W = sample_proper_noise(Q, rng, steps)
        V = sample_proper_noise(R, rng, steps)
    else:
        W = (rng.standard_normal((steps, m)) @ _root(Q).T).astype(complex)
        V = (rng.standard_normal((steps, p)) @ _root(R).T).astype(complex)
    run = _run_compiled if backend == "compiled" else _run_python
    rows8, info = run(tracker, systems, index, W, V, exact, divergence_limit)
    rows = np.empty((steps, len(CSV_FIELDS)))
    rows[:, :-1] = rows8
    rows[:, -1] = [omega_true_at(k) for k in range(steps)]
    if info["diverged"]:
        log.warning("plant state diverged")
    return rows, info


def _root(M):
    ev, U = np.linalg.eigh(M)
    return U * np.sqrt(np.clip(ev, 0.0, None))


def _run_python(tracker, systems, index, W, V, exact, limit):
    steps = len(index)
    x = np.zeros(systems[0].n, complex if exact else float)
    rows = np.full((steps, len(LOG_FIELDS)), np.nan)
    max_state, diverged = 0.0, False
    for k in range(steps):
        sys = systems[index[k]]
        if exact:
            q = sys.C @ x + sys.D @ tracker.s + V[k]
            x = (sys.A @ x + sys.B @ (tracker.s + W[k])) * np.exp(-1j * tracker.omega)
            tracker, res = tracker_step(tracker, q=q)
        else:
            u = (tracker.s * np.exp(1j * tracker.theta)).real
            y = sys.C @ x + sys.D @ u + V[k].real
            x = sys.A @ x + sys.B @ (u + W[k].real)
            tracker, res = tracker_step(tracker, y=y)
        rows[k] = res.row
        nx = float(np.sqrt(np.vdot(x, x).real))
        max_state = max(max_state, nx)
        if not np.isfinite(nx) or nx > limit:
            diverged = True
            break
    return rows, {"max_state": max_state, "fault": bool(tracker.fault), "diverged": diverged,
                  "clamps": tracker.clamps}


def _run_compiled(tracker, systems, index, W, V, exact, limit):
    cfg = tracker.config
    model = tracker.predictor.model
    css = model.css
    n, m = css.n, css.base.m
    c = np.ascontiguousarray

    def stack(name):
        return c(np.array([getattr(s, name) for s in systems], complex))

    K = np.zeros((m, n)) if cfg.K is None else np.asarray(cfg.K, float)
    ray = tracker.rayleigh
    if ray is None:
        ray_args = (0j, np.ones(n, complex), 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    else:
        ray_args = (ray.lambda_hat, c(ray.chi_hat), ray.S_lambda, ray.S_chi, ray.gamma_lambda,
                    ray.gamma_chi, ray.mu_lambda, ray.mu_chi)
    pred = tracker.predictor
    mhe = tracker.mhe
    rows, max_state, fault, diverged, clamps = closed_loop(
        stack("A"), stack("B"), stack("C"), stack("D"), c(index), c(W), c(V), exact,
        c(model.F, complex), c(model.G, complex), c(model.L, complex), c(css.C, complex),
        c(css.D, complex), c(css.B, complex), c(css.dmask), c(css.cmask), c(K, complex),
        c(np.asarray(cfg.s_r, complex)),
        mhe is not None, ray is not None, bool(cfg.rayleigh_live_h), int(cfg.update_every),
        float(model.domain.rho), float(model.domain.d_m), pred.gamma, pred.S, pred.S_c, pred.mu_e,
        int(cfg.Nh), int(cfg.gn_max_iters), float(cfg.gn_tolerance),
        -1.0 if cfg.trust_radius is None else float(cfg.trust_radius), float(cfg.mhe_cap),
        int(cfg.Nf), 4096 if tracker.filter is None else int(tracker.filter.resync_every),
        *ray_args,
        float(tracker.omega_lambda), float(tracker.band[0]), float(tracker.band[1]),
        float(tracker.omega), float(tracker.theta), float(limit))
    if clamps:
        log.warning("%d frequency updates clamped to [%.6g, %.6g]", clamps, *tracker.band)
    return rows, {"max_state": float(max_state), "fault": bool(fault), "diverged": bool(diverged),
                  "clamps": int(clamps)}


# ---------------------------------------------------------------------- piezo
@dataclass(frozen=True)
class MonteCarloSpec:
    """Piezo Monte-Carlo batch definition.

    Seeds are split as ``default_rng([seed, run_index, stream])`` with stream 0
    for the parameter draw and stream 1 for the simulation noise, so every
    combination sees the same plant and the same noise realization.
    """

    n_plants: int = 20
    relative_uncertainty: float = 0.10
    seed: int = 0
    steps: int = 30000
    nominal: PiezoParams = PiezoParams()
    Ts: float = 1e-6
    output_scale: float = 1e6
    drive: float = 1.0
    Qs: float = 0.01
    R: float = 6.4e-5
    tolerance: float = 1e-3
    envelope_sources: tuple = ("sndtft", "exact-css")
    estimators: tuple = ("rpem", "mhe")
    update_laws: tuple = ("direct", "rayleigh")
    workers: int = 1
    backend: str = "compiled"

    def __post_init__(self):
        if self.n_plants < 1:
            raise ValueError("n_plants must be at least 1")
        if not (0 <= self.relative_uncertainty < 0.5):
            raise ValueError("relative_uncertainty must lie in [0, 0.5)")
        if self.steps < 1 or self.workers < 1:
            raise ValueError("steps and workers must be positive")
        if self.Qs < 0 or self.R <= 0:
            raise ValueError("noise levels must be non-negative (R positive)")

    @property
    def combos(self):
        return [(src, est, law) for src in self.envelope_sources for est in self.estimators
                for law in self.update_laws]


def piezo_tracker_config(estimator: str = "rpem", **overrides) -> TrackerConfig:
    """Default piezo loop settings for one estimator (RPEM uses Nf = 24, MHE Nf = 32)."""
    cfg = TrackerConfig(estimator=estimator)
    if estimator == "mhe":
        cfg = replace(cfg, Nf=32, Nh=350)
    return replace(cfg, **overrides)


def plant_draw(spec: MonteCarloSpec, index: int) -> PiezoParams:
    return draw_piezo(spec.nominal, spec.relative_uncertainty, np.random.default_rng([spec.seed, index, 0]))


def run_piezo_plant(spec: MonteCarloSpec, index: int, configs: dict | None = None) -> list[RunResult]:
    """All configured combinations for plant draw `index`.

    `configs` maps estimator name to a `TrackerConfig` template; the update
    law and envelope source are filled in per combination.
    """
    configs = configs or {}
    params = plant_draw(spec, index)
    true_sys = piezo_discrete(params, spec.Ts, spec.output_scale)
    w_true = float(np.angle(select_resonant_mode(eigen_pairs(true_sys.A)).lam))
    design = piezo_design(spec.nominal, spec.Ts, spec.output_scale, spec.Qs, spec.R)
    out = []
    for src, est, law in spec.combos:
        base = configs.get(est) or piezo_tracker_config(est)
        cfg = replace(base, estimator=est, update_law=law, envelope_source=src,
                      s_r=np.array([spec.drive], complex))
        meta = {"run": index, "envelope_source": src, "estimator": est, "update_law": law,
                "params": asdict(params), "omega_true": w_true, "config_hash": _config_hash(spec, cfg),
                "draw": "uniform"}
        try:
            tracker = make_tracker(design.css, design.L, cfg)
            rows, info = simulate(tracker, spec.steps, lambda k: true_sys, [[spec.Qs]], [[spec.R]],
                                  np.random.default_rng([spec.seed, index, 1]), lambda k: w_true,
                                  backend=spec.backend)
            meta.update(info)
            res = RunResult(rows, meta)
            meta["convergence_time"] = res.convergence_time(spec.tolerance)
            meta["steady_error"] = res.steady_error()
            meta["converged"] = bool(not info["diverged"] and meta["steady_error"] < spec.tolerance)
        except Exception as exc:  # keep the batch going
            log.error("run %d %s/%s/%s failed: %s", index, src, est, law, exc)
            meta.update(error=str(exc), converged=False)
            res = RunResult(np.full((spec.steps, len(CSV_FIELDS)), np.nan), meta)
        out.append(res)
    return out


def _plant_task(args):
    spec, index, configs = args
    return run_piezo_plant(spec, index, configs)


def run_piezo_monte_carlo(spec: MonteCarloSpec, configs: dict | None = None) -> list[RunResult]:
    """Run every plant draw through every combination; results sorted by
    ``(run index, combination order)`` regardless of worker scheduling."""
    tasks = [(spec, i, configs) for i in range(spec.n_plants)]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as ex:
            batches = list(ex.map(_plant_task, tasks))
    else:
        batches = [_plant_task(t) for t in tasks]
    return [r for b in batches for r in b]


def combo_summary(results: list[RunResult]) -> dict:
    """Convergence statistics grouped by ``source/estimator/law``."""
    groups: dict = {}
    for r in results:
        key = "/".join(r.meta[k] for k in ("envelope_source", "estimator", "update_law"))
        groups.setdefault(key, []).append(r.meta)
    out = {}
    for key, metas in sorted(groups.items()):
        ct = [m["convergence_time"] for m in metas if "convergence_time" in m]
        se = [m["steady_error"] for m in metas if "steady_error" in m]
        out[key] = {
            "runs": len(metas),
            "converged": sum(bool(m.get("converged")) for m in metas),
            "diverged": sum(bool(m.get("diverged", True)) for m in metas),
            "mean_convergence_time": float(np.mean(ct)) if ct else None,
            "max_convergence_time": int(max(ct)) if ct else None,
            "max_steady_error": float(max(se)) if se else None,
        }
    return out


# ----------------------------------------------------------------------- gyro
@dataclass(frozen=True)
class GyroSpec:
    """Gyroscope scenario settings (normalized units)."""

    steps: int = 24000
    seed: int = 0
    Ts: float = GYRO_TS
    s_r: tuple = (10.0, 100.0)
    Q: tuple = (0.04, 0.04)
    R: tuple = (1.6e-5, 1.6e-5)
    design_Q: float = 1500.0
    design_R: float = 0.1
    Qc: tuple | None = (54.0, 84.0, 0.0036, 189.0)
    Rc: tuple = (0.4, 0.49)
    steady_tail: float = 1 / 6
    backend: str = "compiled"

    def __post_init__(self):
        if self.steps < 6:
            raise ValueError("steps must be at least 6")
        if not (0 < self.steady_tail <= 1 / 3):
            raise ValueError("steady_tail must lie in (0, 1/3]")


def gyro_tracker_config(design, update_law: str = "rayleigh", estimator: str = "rpem",
                        s_r=(10.0, 100.0), **overrides) -> TrackerConfig:
    """Gyroscope loop defaults around a `GyroDesign`."""
    cfg = TrackerConfig(
        update_law=update_law, estimator=estimator, envelope_source="exact-css",
        omega_lambda=design.omega_lambda, K=design.K, s_r=np.asarray(s_r, complex),
        gamma=0.013, S0=1000.0, S_c0=1000.0, mu_e=0.0, Nh=185, Nf=32,
        S_lambda0=1000.0, S_chi0=1000.0, gamma_lambda=0.02, gamma_chi=0.02,
        mu_lambda=0.0, mu_chi=0.0, rayleigh_live_h=True,
    )
    return replace(cfg, **overrides)


def run_gyro_scenario(params: GyroParams = GyroParams(), profile: str | None = None,
                      config: TrackerConfig | None = None, spec: GyroSpec = GyroSpec(),
                      update_law: str = "rayleigh", estimator: str = "rpem",
                      overrides: dict | None = None) -> RunResult:
    """Closed-loop gyroscope run under an ``omega_z`` profile.

    `profile` overrides the kind stored in ``params.omega_z_profile``.  Without
    an explicit `config`, the loop is built by `gyro_tracker_config` with
    `update_law`, `estimator` and any `overrides`.  The
    oracle column is `theoretical_resonance` of the closed loop at the
    current ``omega_z``.  Metadata reports the steady offset (rad/time) over
    the final `spec.steady_tail` of the run and the theoretical shift.
    """
    prof = params.omega_z_profile if profile is None else replace(params.omega_z_profile, kind=profile)
    design = gyro_design(replace(params, omega_z_profile=GyroProfile()), spec.Ts, spec.Qc, spec.Rc,
                         spec.design_Q, spec.design_R)
    if config is None:
        kw = {"update_law": update_law, "estimator": estimator, **(overrides or {})}
        config = gyro_tracker_config(design, s_r=spec.s_r, **kw)
    cfg = config
    N = spec.steps
    wz = np.array([prof(k, N) for k in range(N)])
    sys_cache: dict = {}
    oracle_cache: dict = {}

    def plant_at(k):
        key = wz[k]
        if key not in sys_cache:
            sys_cache[key] = gyro_discrete(params, key, spec.Ts)
        return sys_cache[key]

    def oracle_at(k):
        key = wz[k]
        if key not in oracle_cache:
            oracle_cache[key] = theoretical_resonance(params, key, design.K, spec.Ts, design.omega_lambda)
        return oracle_cache[key]

    tracker = make_tracker(design.css, design.L, cfg)
    rows, info = simulate(tracker, N, plant_at, np.diag(spec.Q), np.diag(spec.R),
                          np.random.default_rng([spec.seed, 0, 1]), oracle_at, backend=spec.backend)
    res = RunResult(rows, {"profile": asdict(prof), "update_law": cfg.update_law,
                           "estimator": cfg.estimator, "envelope_source": cfg.envelope_source,
                           "config_hash": _config_hash(spec, cfg, prof), **info})
    tail = max(1, int(N * spec.steady_tail))
    err = (res.column("omega") - res.column("omega_true")) / spec.Ts
    w0 = theoretical_resonance(params, wz[0], design.K, spec.Ts, design.omega_lambda)
    w1 = theoretical_resonance(params, wz[-1], design.K, spec.Ts, design.omega_lambda)
    res.meta.update(
        steady_error=float(np.mean(err[-tail:])),
        steady_std=float(np.std(err[-tail:])),
        baseline_error=float(np.mean(err[N // 3 - tail:N // 3])) if N // 3 >= tail else float("nan"),
        theoretical_shift=float((w1 - w0) / spec.Ts),
        omega_lambda=design.omega_lambda,
    )
    return res
