"""Excitation-frequency update laws and the closed tracking loop.

One loop iteration at sample ``k``:

1. envelope ``q_k`` from the real measurement (sNDTFT) or taken directly
   (exact-CSS mode);
2. estimator step (RPEM or MHE) giving ``h_hat`` and the next predicted
   envelope ``z_{k+1}``;
3. frequency update, either ``omega = omega_lambda + arg(h_hat)`` or the
   Rayleigh-quotient eigenvalue tracker;
4. carrier advance ``theta_{k+1} = theta_k + omega_k``;
5. drive synthesis ``u_{k+1} = Re(s_{k+1} e^{j theta_{k+1}})`` with
   ``s = K z + s_r`` when state feedback is configured.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .css import DEFAULT_DM, ComplexStateSpace, tag_vector, wrap_phase
from .envelope import SndtftFilter
from .estimator import (
    MheBuffer,
    PredictorState,
    init_predictor,
    make_predictor_model,
    mhe_update,
    predictor_step,
    rpem_step,
)
from .linsys import eigen_pairs, select_resonant_mode

__all__ = [
    "RayleighState",
    "TrackerConfig",
    "LoopState",
    "StepResult",
    "direct_substitution",
    "clamp_band",
    "z_A_estimate",
    "init_rayleigh",
    "rayleigh_step",
    "make_tracker",
    "tracker_step",
    "LOG_FIELDS",
]

log = logging.getLogger(__name__)

LOG_FIELDS = ("k", "omega", "theta", "h_re", "h_im", "lambda_re", "lambda_im", "innovation")
S_FLOOR = 1e-12


def clamp_band(omega_lambda: float, eps: float = 1e-6) -> tuple[float, float]:
    """Default admissible band ``[0.2 w, min(pi - eps, 3 w)]``."""
    return 0.2 * omega_lambda, min(np.pi - eps, 3.0 * omega_lambda)


def _clamp(omega: float, band) -> float:
    lo, hi = band
    return min(max(omega, lo), hi)


def direct_substitution(h_hat: complex, omega_lambda: float, band=None) -> float:
    """``omega = omega_lambda + arg(h_hat)``, clamped to `band`."""
    if h_hat == 0:
        raise ValueError("h_hat is zero; its angle is undefined")
    omega = omega_lambda + float(np.angle(h_hat))
    return _clamp(omega, clamp_band(omega_lambda) if band is None else band)


def z_A_estimate(z_next, omega: float, h, B, s) -> np.ndarray:
    """``z_{k+1} e^{j omega} - H B s``, an estimate of ``A~ z_k``.

    `h` is a scalar or the per-state diagonal of ``H(h)``.
    """
    return np.asarray(z_next) * np.exp(1j * omega) - h * (B @ np.asarray(s))


class RayleighState:
    """Eigenvalue tracker ``(lambda_hat, chi_hat, S_lambda, S_chi)`` with its gains."""

    __slots__ = ("lambda_hat", "chi_hat", "S_lambda", "S_chi", "gamma_lambda", "gamma_chi",
                 "mu_lambda", "mu_chi")

    def __init__(self, lambda_hat, chi_hat, S_lambda, S_chi, gamma_lambda, gamma_chi,
                 mu_lambda=0.0, mu_chi=0.0):
        chi = np.asarray(chi_hat, complex)
        nrm = np.linalg.norm(chi)
        if nrm == 0:
            raise ValueError("chi_hat must be nonzero")
        if S_lambda <= 0 or S_chi <= 0:
            raise ValueError("S_lambda and S_chi must be positive")
        self.lambda_hat = complex(lambda_hat)
        self.chi_hat = chi / nrm
        self.S_lambda = float(S_lambda)
        self.S_chi = float(S_chi)
        self.gamma_lambda = float(gamma_lambda)
        self.gamma_chi = float(gamma_chi)
        self.mu_lambda = float(mu_lambda)
        self.mu_chi = float(mu_chi)


def init_rayleigh(A, hint: float | None = None, **gains) -> RayleighState:
    """Start the tracker at the resonant eigenpair of the nominal matrix `A`."""
    pair = select_resonant_mode(eigen_pairs(A), hint)
    return RayleighState(pair.lam, pair.left_vec, **gains)


def rayleigh_step(state: RayleighState, z, z_A):
    """One Rayleigh-quotient update.

    With ``r = z_A - lambda z``::

        lambda+ = lambda + g_l / S_l * conj(chi^H z) (chi^H r)
        chi+    = chi - g_c / S_c * r conj(chi^H r)
        S_l+    = S_l + g_l (|chi^H z|^2 - S_l + mu_l)
        S_c+    = S_c + g_c (|r|^2 - S_c + mu_c)

    followed by ``chi+ <- chi+ / |chi+|``.  Returns ``(arg(lambda+), state+)``.
    """
    z = np.asarray(z)
    chi = state.chi_hat
    lam = state.lambda_hat
    r = np.asarray(z_A) - lam * z
    cz = np.vdot(chi, z)
    cr = np.vdot(chi, r)
    gl, gc = state.gamma_lambda, state.gamma_chi
    lam_new = lam + gl / state.S_lambda * np.conj(cz) * cr
    chi_new = chi - gc / state.S_chi * r * np.conj(cr)
    S_l = max(state.S_lambda + gl * (abs(cz) ** 2 - state.S_lambda + state.mu_lambda), S_FLOOR)
    S_c = max(state.S_chi + gc * (np.vdot(r, r).real - state.S_chi + state.mu_chi), S_FLOOR)
    nrm = np.linalg.norm(chi_new)
    if not np.isfinite(nrm) or nrm == 0:
        chi_new, nrm = chi, 1.0
    new = RayleighState(lam_new, chi_new / nrm, S_l, S_c, gl, gc, state.mu_lambda, state.mu_chi)
    return float(np.angle(lam_new)), new


@dataclass
class TrackerConfig:
    """Everything that configures one tracking loop.

    Estimator-specific fields are ignored by the other estimator.  ``K`` and
    ``s_r`` enable state feedback ``s = K z + s_r``; without ``K`` the drive
    is the constant ``s_r``.
    """

    update_law: str = "direct"          # direct | rayleigh
    estimator: str = "rpem"             # rpem | mhe
    envelope_source: str = "sndtft"     # sndtft | exact-css
    omega_lambda: float | None = None   # nominal resonance; from the model if None
    K: np.ndarray | None = None
    s_r: np.ndarray = field(default_factory=lambda: np.array([1.0 + 0j]))
    d_m: float = DEFAULT_DM
    band: tuple | None = None
    update_every: int = 1
    # RPEM
    gamma: float = 0.0025
    S0: float = 0.01
    S_c0: float | None = None
    mu_e: float = 0.0008
    # MHE
    Nh: int = 350
    gn_tolerance: float = 1e-10
    gn_max_iters: int = 1
    trust_radius: float | None = 0.002
    mhe_cap: float = 1.02
    # sNDTFT
    Nf: int = 24
    # Rayleigh
    S_lambda0: float = 2.5
    S_chi0: float = 0.25
    gamma_lambda: float = 0.15
    gamma_chi: float = 0.15
    mu_lambda: float = 0.0025
    mu_chi: float = 0.0025
    rayleigh_live_h: bool = False

    def validate(self):
        if self.update_law not in ("direct", "rayleigh"):
            raise ValueError(f"unknown update law {self.update_law!r}")
        if self.estimator not in ("rpem", "mhe"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.envelope_source not in ("sndtft", "exact-css"):
            raise ValueError(f"unknown envelope source {self.envelope_source!r}")
        for name in ("gamma", "S0", "gamma_lambda", "gamma_chi", "S_lambda0", "S_chi0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.mu_e < 0 or self.mu_lambda < 0 or self.mu_chi < 0:
            raise ValueError("damping terms must be non-negative")
        if self.Nh < 1 or self.Nf < 4 or self.update_every < 1:
            raise ValueError("Nh >= 1, Nf >= 4 and update_every >= 1 are required")
        if self.omega_lambda is not None and not (0 < self.omega_lambda < np.pi):
            raise ValueError("omega_lambda must lie in (0, pi)")
        return self


class LoopState:
    """Mutable state of one tracking loop (single owner)."""

    def __init__(self, css, config, predictor, mhe, rayleigh, filt, omega_lambda, band):
        self.css: ComplexStateSpace = css
        self.config: TrackerConfig = config
        self.predictor: PredictorState = predictor
        self.mhe: MheBuffer | None = mhe
        self.rayleigh: RayleighState | None = rayleigh
        self.filter: SndtftFilter | None = filt
        self.omega_lambda = omega_lambda
        self.band = band
        self.k = 0
        self.theta = 0.0
        self.omega = omega_lambda
        self.omega_prev = omega_lambda
        self.fault = False
        self.clamps = 0
        self.s = self._drive_envelope()

    @property
    def h_hat(self) -> complex:
        return self.mhe.h_hat if self.mhe is not None else self.predictor.h_hat

    def _drive_envelope(self) -> np.ndarray:
        cfg = self.config
        s = np.asarray(cfg.s_r, complex).copy()
        if cfg.K is not None:
            s = s + np.asarray(cfg.K) @ self.predictor.z_hat
        return s

    def estimator_hold(self) -> bool:
        """True while the estimator would see sNDTFT warm-up outputs.

        RPEM waits for the filter to warm up; MHE also waits until the warm-up
        samples have left its window.
        """
        f = self.filter
        if f is None:
            return False
        limit = f.Nf + (self.mhe.Nh if self.mhe is not None else 0)
        return f.count <= limit

    def drive(self):
        """Current drive: envelope ``s_k`` and real sample ``Re(s_k e^{j theta_k})``."""
        return self.s, (self.s * np.exp(1j * self.theta)).real


@dataclass
class StepResult:
    """Next-sample quantities plus the log row of the processed sample."""

    omega: float
    theta: float
    s: np.ndarray
    u: np.ndarray
    row: tuple
    q: np.ndarray
    q_hat: np.ndarray


def make_tracker(css: ComplexStateSpace, L, config: TrackerConfig, *, omega0: float | None = None,
                 theta0: float = 0.0) -> LoopState:
    """Assemble a loop around the nominal CSS model `css` and predictor gain `L`.

    The nominal resonance ``omega_lambda`` and the Rayleigh initial pair come
    from ``A`` (or ``A + B K`` with feedback) unless configured.
    """
    config.validate()
    A_nom = css.A if config.K is None else css.A + css.B @ np.asarray(config.K)
    if config.omega_lambda is None:
        omega_lambda = float(np.angle(select_resonant_mode(eigen_pairs(A_nom)).lam))
    else:
        omega_lambda = float(config.omega_lambda)
    band = config.band if config.band is not None else clamp_band(omega_lambda)
    model = make_predictor_model(css, L, feedback=config.K, d_m=config.d_m)
    pred = init_predictor(model, S0=config.S0, S_c0=config.S_c0, gamma=config.gamma, mu_e=config.mu_e)
    mhe = None
    if config.estimator == "mhe":
        mhe = MheBuffer(model, config.Nh, gn_tolerance=config.gn_tolerance,
                        gn_max_iters=config.gn_max_iters, trust_radius=config.trust_radius,
                        cap=config.mhe_cap)
    ray = None
    if config.update_law == "rayleigh":
        ray = init_rayleigh(A_nom, omega_lambda, S_lambda=config.S_lambda0, S_chi=config.S_chi0,
                            gamma_lambda=config.gamma_lambda, gamma_chi=config.gamma_chi,
                            mu_lambda=config.mu_lambda, mu_chi=config.mu_chi)
    filt = SndtftFilter(config.Nf, css.base.p) if config.envelope_source == "sndtft" else None
    state = LoopState(css, config, pred, mhe, ray, filt, omega_lambda, band)
    if omega0 is not None:
        state.omega = state.omega_prev = float(omega0)
    state.theta = wrap_phase(theta0)
    return state


def tracker_step(state: LoopState, *, y=None, q=None) -> tuple[LoopState, StepResult]:
    """Process the measurement of sample ``k`` and prepare sample ``k + 1``.

    Pass the real measurement `y` (sNDTFT mode) or the envelope `q`
    (exact-CSS mode).  Non-finite estimator output freezes the frequency and
    sets ``state.fault``.
    """
    cfg = state.config
    k = state.k
    omega = state.omega
    theta = state.theta
    s = state.s
    if state.filter is not None:
        if y is None:
            raise ValueError("sNDTFT mode needs the real measurement y")
        q = state.filter.push(np.asarray(y, float), state.omega_prev, theta)
    elif q is None:
        raise ValueError("exact-CSS mode needs the envelope q")
    q = np.asarray(q, complex)

    pred_old = state.predictor
    z_k = pred_old.z_hat
    hold = state.estimator_hold()
    try:
        if state.mhe is None:
            if hold:
                h = pred_old.h_hat
                _, pred = predictor_step(pred_old, q, s, omega)
            else:
                h, pred = rpem_step(pred_old, q, s, omega)
        else:
            h, _ = mhe_update(state.mhe, q, s, omega, solve=not hold)
            _, pred = predictor_step(pred_old.copy(h_hat=h), q, s, omega)
        ok = np.isfinite(h) and np.all(np.isfinite(pred.z_hat))
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("estimator failure at k=%d: %s", k, exc)
        ok = False
    if not ok:
        state.fault = True
        pred = pred_old
        h = pred_old.h_hat
        if state.mhe is not None:
            state.mhe.h_hat = h
    state.predictor = pred

    lam = np.nan
    new_omega = omega
    if ok and (k + 1) % cfg.update_every == 0:
        if state.rayleigh is not None:
            hv = tag_vector(state.css, h) if cfg.rayleigh_live_h else 1.0
            # Only the reference part of the drive is removed, so with feedback
            # the tracked eigenvalue is that of A + B K.
            zA = z_A_estimate(pred.z_hat, omega, hv, state.css.B, cfg.s_r)
            raw, state.rayleigh = rayleigh_step(state.rayleigh, z_k, zA)
        else:
            raw = state.omega_lambda + float(np.angle(h))
        new_omega = _clamp(raw, state.band)
        if new_omega != raw:
            state.clamps += 1
            if state.clamps == 1:
                log.warning("frequency %.6g outside [%.6g, %.6g] at k=%d; clamped (reported once)",
                            raw, *state.band, k)
    if state.rayleigh is not None:
        lam = state.rayleigh.lambda_hat

    e = pred.innovation
    row = (k, omega, theta, h.real, h.imag,
           np.real(lam) if state.rayleigh is not None else np.nan,
           np.imag(lam) if state.rayleigh is not None else np.nan,
           float(np.sqrt(np.vdot(e, e).real)))

    state.theta = wrap_phase(theta + omega)
    state.omega_prev = omega
    state.omega = new_omega
    state.k = k + 1
    state.s = state._drive_envelope()
    s_next, u_next = state.drive()
    return state, StepResult(new_omega, state.theta, s_next, u_next, row, q, pred.q_hat)
