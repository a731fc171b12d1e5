"""Frequency-disturbance estimation on CSS models.

Contents
--------
* CSS Kalman prediction/correction (covariance recursion identical to the
  real LTI one).
* The stable one-step predictor

      q_hat_k     = C z_k + D s_k
      z_{k+1}     = H(h) w_k,   w_k = [F z_k + G s_k + L q_k] e^{-j omega_k}

  with ``F = A - L C`` and ``G = B - L D``, and its derivatives with respect
  to ``h`` and ``conj(h)``.
* Recursive prediction-error (RPEM) updates of ``h`` with projection onto the
  admissible domain.
* Gauss-Newton and moving-horizon estimation over a sliding window.

Inputs ``s`` are treated as measured data: with state feedback the drive is
recorded, not differentiated through.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import rollout
from .css import DEFAULT_DM, ComplexStateSpace, DomainSpec, in_domain, tag_vector
from .linsys import NoiseSpec

__all__ = [
    "InsufficientExcitationError",
    "KalmanState",
    "kalman_predict",
    "kalman_correct",
    "PredictorModel",
    "make_predictor_model",
    "PredictorState",
    "init_predictor",
    "predictor_step",
    "derivative_step",
    "rpem_step",
    "window_errors",
    "prediction_error_cost",
    "gauss_newton_solve",
    "MheBuffer",
    "mhe_update",
]

S_FLOOR = 1e-12


class InsufficientExcitationError(ArithmeticError):
    """The Gauss-Newton Hessian approximation is singular."""


# --------------------------------------------------------------------- Kalman
@dataclass(frozen=True)
class KalmanState:
    """Envelope estimate and covariance; `mode` is ``"predicted"`` or ``"corrected"``."""

    z_hat: np.ndarray
    P: np.ndarray
    mode: str = "corrected"


def kalman_predict(state: KalmanState, css: ComplexStateSpace, noise: NoiseSpec, s, omega: float,
                   h: complex = 1.0) -> KalmanState:
    """Time update ``z+ = H(h)(A z + B s) e^{-j omega}``, ``P+ = Phi P Phi^H + |h|^2 Q``.

    ``Phi = A e^{-j omega}``; the rotation cancels in the covariance, so `P`
    never depends on the carrier.
    """
    if state.mode != "corrected":
        raise ValueError("predict must follow a correction")
    rot = np.exp(-1j * omega)
    Phi = css.A * rot
    z = tag_vector(css, h) * (Phi @ state.z_hat + css.B @ np.asarray(s) * rot)
    P = Phi @ state.P @ Phi.conj().T + abs(h) ** 2 * noise.Q
    return KalmanState(z, P, "predicted")


def kalman_correct(state: KalmanState, css: ComplexStateSpace, noise: NoiseSpec, q, s) -> KalmanState:
    """Measurement update with gain ``K = P C^T (C P C^T + R)^{-1}``."""
    if state.mode != "predicted":
        raise ValueError("correct must follow a prediction")
    C = css.C
    Sinn = C @ state.P @ C.T + noise.R
    if np.linalg.cond(Sinn) > 1e15:
        raise np.linalg.LinAlgError("innovation covariance is singular")
    K = np.linalg.solve(Sinn.T, (state.P @ C.T).T).T
    e = np.asarray(q) - C @ state.z_hat - css.D @ np.asarray(s)
    z = state.z_hat + K @ e
    P = (np.eye(css.n) - K @ C) @ state.P
    return KalmanState(z, 0.5 * (P + P.conj().T), "corrected")


# ------------------------------------------------------------------ predictor
@dataclass(frozen=True)
class PredictorModel:
    """Predictor matrices derived from a CSS model and a steady gain `L`."""

    css: ComplexStateSpace
    L: np.ndarray
    domain: DomainSpec
    F: np.ndarray = field(init=False, repr=False)
    G: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        L = np.asarray(self.L, float)
        if L.shape != (self.css.n, self.css.base.p):
            raise ValueError("L must be n x p")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "F", self.css.A - L @ self.css.C)
        object.__setattr__(self, "G", self.css.B - L @ self.css.D)

    @property
    def conjugate_mode(self) -> bool:
        return self.css.conjugate_mode


def make_predictor_model(css: ComplexStateSpace, L, *, feedback=None, d_m: float = DEFAULT_DM,
                         domain: DomainSpec | None = None) -> PredictorModel:
    """Build a predictor with its admissible domain.

    The domain lists the eigenvalue magnitudes of ``A`` and ``A - L C``.  When
    a state-feedback matrix `feedback` (``s = K z + s_r``) is supplied, the
    plant part uses the closed-loop ``A + B K`` because that is the dynamics
    the estimator model actually runs under.
    """
    L = np.asarray(L, float)
    if domain is None:
        A = css.A if feedback is None else css.A + css.B @ np.asarray(feedback, float)
        plant = np.abs(np.linalg.eigvals(A))
        pred = np.abs(np.linalg.eigvals(css.A - L @ css.C))
        domain = DomainSpec(d_m, tuple(x for x in plant if x > 0), tuple(x for x in pred if x > 0))
    return PredictorModel(css, L, domain)


class PredictorState:
    """Predictor plus RPEM recursion state.

    Attributes
    ----------
    z_hat, z_h, z_hbar : ndarray
        Predicted envelope and its derivatives with respect to ``h`` and
        ``conj(h)``.
    h_hat : complex
    S, S_c : float
        Gauss-Newton scale accumulators (``S_c`` only in conjugate mode).
    gamma, mu_e : float
        Gain and damping of the scale recursion.
    innovation, q_hat : ndarray
        Values from the most recent step.
    """

    __slots__ = ("model", "z_hat", "z_h", "z_hbar", "h_hat", "S", "S_c", "gamma", "mu_e",
                 "innovation", "q_hat")

    def __init__(self, model, z_hat, z_h, z_hbar, h_hat, S, S_c, gamma, mu_e,
                 innovation=None, q_hat=None):
        self.model = model
        self.z_hat = z_hat
        self.z_h = z_h
        self.z_hbar = z_hbar
        self.h_hat = complex(h_hat)
        self.S = float(S)
        self.S_c = float(S_c)
        self.gamma = float(gamma)
        self.mu_e = float(mu_e)
        p = model.css.base.p
        self.innovation = np.zeros(p, complex) if innovation is None else innovation
        self.q_hat = np.zeros(p, complex) if q_hat is None else q_hat

    def copy(self, **kw) -> "PredictorState":
        vals = {k: getattr(self, k) for k in self.__slots__}
        vals.update(kw)
        return PredictorState(**vals)


def init_predictor(model: PredictorModel, *, h0: complex = 1.0, S0: float = 1.0,
                   S_c0: float | None = None, gamma: float = 0.0025, mu_e: float = 0.0,
                   z0=None) -> PredictorState:
    """Fresh predictor state with ``z_h = z_hbar = 0``."""
    n = model.css.n
    if S0 <= 0 or (S_c0 is not None and S_c0 <= 0):
        raise ValueError("initial scale accumulators must be positive")
    if gamma <= 0 or mu_e < 0:
        raise ValueError("gamma must be positive and mu_e non-negative")
    z = np.zeros(n, complex) if z0 is None else np.asarray(z0, complex).copy()
    return PredictorState(model, z, np.zeros(n, complex), np.zeros(n, complex), h0, S0,
                          S0 if S_c0 is None else S_c0, gamma, mu_e)


def _output(model, z, s):
    return model.css.C @ z + model.css.D @ s


def _pre_rotation(model, z, q, s, omega):
    return (model.F @ z + model.G @ s + model.L @ q) * np.exp(-1j * omega)


def predictor_step(state: PredictorState, q, s, omega: float):
    """Advance ``z_hat`` with ``h_hat`` held fixed.

    Returns ``(q_hat, state+)`` where ``q_hat`` is the prediction of `q`.
    """
    m = state.model
    s = np.asarray(s, complex)
    q = np.asarray(q, complex)
    q_hat = _output(m, state.z_hat, s)
    w = _pre_rotation(m, state.z_hat, q, s, omega)
    z = tag_vector(m.css, state.h_hat) * w
    return q_hat, state.copy(z_hat=z, innovation=q - q_hat, q_hat=q_hat)


def derivative_step(state: PredictorState, q, s, omega: float) -> PredictorState:
    """Advance ``z_h`` (and ``z_hbar``) one step; ``z_hat`` is left untouched.

    With ``z+ = H(h) w`` the product rule gives
    ``z_h+ = mask_direct * w + H(h) F z_h e^{-j omega}`` and the same with the
    conjugate mask for ``z_hbar``.  For an all-direct map ``w = z+ / h``, so
    this is the familiar ``z+/h + h F z_h e^{-j omega}`` without dividing by h.
    """
    m = state.model
    w = _pre_rotation(m, state.z_hat, np.asarray(q, complex), np.asarray(s, complex), omega)
    hv = tag_vector(m.css, state.h_hat)
    rot = np.exp(-1j * omega)
    z_h = m.css.dmask * w + hv * (m.F @ state.z_h) * rot
    z_hbar = m.css.cmask * w + hv * (m.F @ state.z_hbar) * rot
    return state.copy(z_h=z_h, z_hbar=z_hbar)


def rpem_step(state: PredictorState, q, s, omega: float):
    """One recursive prediction-error update.

    Order: prediction error; candidate ``h`` from the current scale; scale
    update; projection (a candidate outside the domain is discarded); state
    and derivative propagation with the accepted ``h``.

    Returns ``(h_hat+, state+)``.
    """
    m = state.model
    css = m.css
    s = np.asarray(s, complex)
    q = np.asarray(q, complex)
    q_hat = _output(m, state.z_hat, s)
    e = q - q_hat
    g = css.C @ state.z_h
    gam = state.gamma
    if m.conjugate_mode:
        gc = css.C @ state.z_hbar
        step = np.vdot(g, e) + np.conj(np.vdot(gc, e))
        h_try = state.h_hat + gam * (1.0 / state.S + 1.0 / state.S_c) * step
        S = state.S + gam * (np.vdot(g, g).real - state.S + state.mu_e)
        S_c = state.S_c + gam * (np.vdot(gc, gc).real - state.S_c + state.mu_e)
    else:
        h_try = state.h_hat + gam / state.S * np.vdot(g, e)
        S = state.S + gam * (np.vdot(g, g).real - state.S + state.mu_e)
        S_c = state.S_c
    S = max(S, S_FLOOR)
    S_c = max(S_c, S_FLOOR)
    h = h_try if (np.isfinite(h_try) and in_domain(h_try, m.domain)) else state.h_hat
    hv = tag_vector(css, h)
    rot = np.exp(-1j * omega)
    w = (m.F @ state.z_hat + m.G @ s + m.L @ q) * rot
    z_h = css.dmask * w + hv * (m.F @ state.z_h) * rot
    z_hbar = css.cmask * w + hv * (m.F @ state.z_hbar) * rot if m.conjugate_mode else state.z_hbar
    new = PredictorState(m, hv * w, z_h, z_hbar, h, S, S_c, gam, state.mu_e, e, q_hat)
    return h, new


# ---------------------------------------------------------------- batch / MHE
def _c(M):
    return np.ascontiguousarray(M, dtype=np.complex128)


def window_errors(model: PredictorModel, h: complex, anchor, S, Q, W):
    """Prediction errors and output derivatives over a window.

    Entry 0 of the window is the anchor step (its error does not depend on
    ``h`` and is excluded).  Returns ``(E, Gh, Gc, z_last)``.
    """
    css = model.css
    return rollout(_c(model.F), _c(model.G), _c(model.L), _c(css.C), _c(css.D),
                   np.ascontiguousarray(css.dmask), np.ascontiguousarray(css.cmask),
                   complex(h), _c(anchor), _c(S), _c(Q), np.ascontiguousarray(W, dtype=float))


def prediction_error_cost(model: PredictorModel, h: complex, anchor, S, Q, W):
    """``J = sum |e_i|^2`` over the window and its CR derivative ``dJ/dconj(h)``.

    ``dJ/dconj(h) = -sum [ (dq/dh)^H e + conj((dq/dconj h)^H e) ]``, so the
    steepest-descent direction for ``h`` is ``-dJ/dconj(h)``.
    """
    E, Gh, Gc, _ = window_errors(model, h, anchor, S, Q, W)
    J = float(np.vdot(E, E).real)
    grad = -(np.vdot(Gh, E) + np.conj(np.vdot(Gc, E)))
    return J, complex(grad)


def _gn_direction(E, Gh, Gc):
    # Real least squares in (Re dh, Im dh): e ~ (Gh + Gc) x + j (Gh - Gc) y.
    a = (Gh + Gc).ravel()
    b = (1j * (Gh - Gc)).ravel()
    e = E.ravel()
    M = np.array([[np.vdot(a, a).real, np.vdot(a, b).real],
                  [np.vdot(b, a).real, np.vdot(b, b).real]])
    r = np.array([np.vdot(a, e).real, np.vdot(b, e).real])
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if not (M[0, 0] > 0 and det > 1e-300 * max(M[0, 0] * M[1, 1], 1e-300)):
        raise InsufficientExcitationError("window carries no information about h")
    x, y = np.linalg.solve(M, r)
    return complex(x, y)


def gauss_newton_solve(model: PredictorModel, anchor, S, Q, W, h0: complex = 1.0, *,
                       tol: float = 1e-12, max_iters: int = 50, trust_radius: float | None = None,
                       cap: float = 1.02) -> tuple[complex, int]:
    """Minimize the window prediction error over ``h`` by Gauss-Newton.

    For an all-direct map the step is ``dh = sum g^H e / sum |g|^2``; with
    conjugate tags ``h`` and ``conj(h)`` enter separately and the step solves
    the equivalent 2x2 real normal equations.

    Parameters
    ----------
    trust_radius : float, optional
        Upper bound on ``|dh|`` per iteration.
    cap : float
        Iterates are radially limited to ``|h| rho <= cap`` where ``rho`` is
        the largest magnitude in the model's domain, allowing a slight
        overshoot of the strict domain.

    Returns
    -------
    (h, iterations)
    """
    h = complex(h0)
    rho = model.domain.rho
    it = 0
    for it in range(1, max_iters + 1):
        E, Gh, Gc, _ = window_errors(model, h, anchor, S, Q, W)
        dh = _gn_direction(E, Gh, Gc)
        if trust_radius is not None and abs(dh) > trust_radius:
            dh *= trust_radius / abs(dh)
        h += dh
        if rho > 0 and abs(h) * rho > cap:
            h *= cap / (abs(h) * rho)
        if abs(dh) < tol:
            break
    return h, it


class MheBuffer:
    """Sliding window for moving-horizon estimation.

    The window stores ``Nh + 1`` entries ``(q, s, omega)``: the anchor step and
    `Nh` entries whose prediction errors are minimized.  ``anchor`` is the
    predicted envelope at the oldest entry.  Entries are written twice into
    arrays of length ``2 (Nh + 1)`` so that the window is always a contiguous
    slice.
    """

    def __init__(self, model: PredictorModel, Nh: int, *, h0: complex = 1.0, anchor=None,
                 gn_tolerance: float = 1e-10, gn_max_iters: int = 1,
                 trust_radius: float | None = 0.002, cap: float = 1.02):
        if Nh < 1:
            raise ValueError("Nh must be positive")
        css = model.css
        self.model = model
        self.Nh = int(Nh)
        size = self.Nh + 1
        self._S = np.zeros((2 * size, css.base.m), complex)
        self._Q = np.zeros((2 * size, css.base.p), complex)
        self._W = np.zeros(2 * size)
        self.count = 0
        self._start = 0
        self.anchor = np.zeros(css.n, complex) if anchor is None else np.asarray(anchor, complex)
        self.h_hat = complex(h0)
        self.gn_tolerance = gn_tolerance
        self.gn_max_iters = gn_max_iters
        self.trust_radius = trust_radius
        self.cap = cap
        self.iterations = 0

    @property
    def full(self) -> bool:
        return self.count >= self.Nh + 1

    def window(self):
        """``(S, Q, W)`` views of the current window, oldest entry first."""
        size = self.Nh + 1
        n = min(self.count, size)
        a = self._start
        return self._S[a:a + n], self._Q[a:a + n], self._W[a:a + n]

    def push(self, q, s, omega):
        size = self.Nh + 1
        if self.count < size:
            i = self.count
        else:
            i = self._start
            self._start = (self._start + 1) % size
        for j in (i, i + size):
            self._S[j] = s
            self._Q[j] = q
            self._W[j] = omega
        self.count += 1


def mhe_update(buffer: MheBuffer, q, s, omega: float, *, solve: bool = True):
    """Push one entry; once the window is full, re-solve and advance the anchor.

    Returns ``(h_hat, buffer)``.  Before the window fills, or with
    ``solve=False``, the prior estimate is kept (the anchor still slides).
    The buffer is updated in place.
    """
    buffer.push(np.asarray(q, complex), np.asarray(s, complex), omega)
    if not buffer.full:
        return buffer.h_hat, buffer
    S, Q, W = buffer.window()
    m = buffer.model
    if not solve:
        w = (m.F @ buffer.anchor + m.G @ S[0] + m.L @ Q[0]) * np.exp(-1j * W[0])
        buffer.anchor = tag_vector(m.css, buffer.h_hat) * w
        return buffer.h_hat, buffer
    h, it = gauss_newton_solve(m, buffer.anchor, S, Q, W, buffer.h_hat, tol=buffer.gn_tolerance,
                               max_iters=buffer.gn_max_iters, trust_radius=buffer.trust_radius,
                               cap=buffer.cap)
    buffer.iterations += it
    buffer.h_hat = h
    w = (m.F @ buffer.anchor + m.G @ S[0] + m.L @ Q[0]) * np.exp(-1j * W[0])
    buffer.anchor = tag_vector(m.css, h) * w
    return h, buffer
