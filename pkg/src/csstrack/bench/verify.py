"""Randomized property suites for the numerical core.

Each suite draws its own systems from a seeded generator, checks one
property against an independent oracle and reports the worst error seen.
The suites back both ``track verify`` and the test-suite.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from ..css import (
    css_controllability_gramian,
    css_lqr_recursion,
    css_observability_gramian,
    css_step,
    css_zoh,
    continuous_css,
    freq_response,
    to_css,
)
from ..envelope import SndtftFilter, batch_ndtft
from ..estimator import (
    KalmanState,
    derivative_step,
    init_predictor,
    kalman_correct,
    kalman_predict,
    make_predictor_model,
    predictor_step,
    prediction_error_cost,
)
from ..linsys import (
    ContinuousStateSpace,
    NoiseSpec,
    RealStateSpace,
    controllability_gramian,
    lqr_design,
    observability_gramian,
    zoh_discretize,
)

__all__ = ["SuiteResult", "SUITES", "run_suites", "random_stable_system"]


@dataclass(frozen=True)
class SuiteResult:
    """Outcome of one property suite; `worst` is compared against `threshold`."""

    criterion: int
    name: str
    passed: bool
    worst: float
    threshold: float
    cases: int
    seconds: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f"; {self.detail}" if self.detail else ""
        return (f"[{tag}] criterion {self.criterion}: {self.name}: worst {self.worst:.3g} "
                f"(limit {self.threshold:.3g}) over {self.cases} cases in {self.seconds:.2f}s{extra}")


def random_stable_system(rng: np.random.Generator, n: int | None = None, m: int = 1, p: int = 1,
                         rho_max: float = 0.98, rho_min: float = 0.3) -> RealStateSpace:
    """Gaussian ``(A, B, C, D)`` with ``A`` rescaled to a spectral radius drawn
    uniformly from ``[rho_min, rho_max]``."""
    n = int(rng.integers(1, 7)) if n is None else n
    A = rng.standard_normal((n, n))
    A *= rng.uniform(rho_min, rho_max) / max(np.abs(np.linalg.eigvals(A)).max(), 1e-12)
    return RealStateSpace(A, rng.standard_normal((n, m)), rng.standard_normal((p, n)),
                          rng.standard_normal((p, m)))


# Study carriers (rad/sample) by window length: the nominal piezo resonance at
# Ts = 1 us runs with both windows, the gyroscope primary mode with Nf = 32.
STUDY_CARRIERS = {24: (0.34837,), 32: (0.34837, 0.31416)}


def _omegas(rng, N):
    return rng.uniform(0.05, np.pi - 0.05, N)


def _rel(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))


def _timed(criterion: int, name: str, threshold: float, body: Callable[[], tuple]) -> SuiteResult:
    t0 = time.perf_counter()
    worst, cases, detail = body()
    dt = time.perf_counter() - t0
    return SuiteResult(criterion, name, bool(worst < threshold), float(worst), threshold, cases, dt,
                       detail)


# ------------------------------------------------------------------ suites
def stability_bound_suite(seed: int = 0, systems: int = 100, steps: int = 200) -> SuiteResult:
    """Zero-input envelopes decay at the plant rate whatever the carrier.

    With ``A = V diag(lam) V^-1`` the bound ``|z_k| <= cond(V) rho^k |z_0|``
    holds for the LTI, and the carrier only contributes unit-modulus factors.
    A random ``h`` with ``|h| <= 1`` is applied as well.
    """
    def body():
        rng = np.random.default_rng([seed, 1])
        worst = 0.0
        for _ in range(systems):
            sys = random_stable_system(rng)
            css = to_css(sys, strict=False)
            lam, V = np.linalg.eig(sys.A)
            rho = np.abs(lam).max() + 1e-6
            c = np.linalg.cond(V)
            z = rng.standard_normal(sys.n) + 1j * rng.standard_normal(sys.n)
            n0 = np.linalg.norm(z)
            s = np.zeros(sys.m)
            omegas = _omegas(rng, steps)
            hs = rng.uniform(0, 1, steps) * np.exp(1j * rng.uniform(-np.pi, np.pi, steps))
            for k in range(steps):
                z = css_step(css, z, s, omegas[k], hs[k])
                worst = max(worst, np.linalg.norm(z) / (c * rho ** (k + 1) * n0))
        return worst, systems, "ratio |z_k| / (c rho^k |z_0|)"
    return _timed(1, "exponential stability under arbitrary carriers", 1.0 + 1e-9, body)


def gramian_suite(seed: int = 0, systems: int = 50) -> SuiteResult:
    """CSS gramians from the rotated transition matrices equal the LTI ones."""
    def body():
        rng = np.random.default_rng([seed, 2])
        worst = 0.0
        for _ in range(systems):
            m, p = rng.integers(1, 3, 2)
            sys = random_stable_system(rng, m=int(m), p=int(p))
            css = to_css(sys)
            k = int(rng.integers(1, 40))
            om = _omegas(rng, k)
            worst = max(worst,
                        _rel(css_controllability_gramian(css, om, k), controllability_gramian(sys, k)),
                        _rel(css_observability_gramian(css, om, k), observability_gramian(sys, k)))
        return worst, systems, ""
    return _timed(2, "controllability/observability gramian equality", 1e-10, body)


def _real_kalman(A, C, Q, R, P, steps):
    out = []
    for _ in range(steps):
        P = A @ P @ A.T + Q
        K = P @ C.T @ np.linalg.inv(C @ P @ C.T + R)
        P = (np.eye(len(A)) - K @ C) @ P
        out.append(P)
    return out


def kalman_covariance_suite(seed: int = 0, systems: int = 20, steps: int = 200) -> SuiteResult:
    """CSS Kalman covariance does not depend on the carrier sequence."""
    def body():
        rng = np.random.default_rng([seed, 3])
        worst = 0.0
        for _ in range(systems):
            p = int(rng.integers(1, 3))
            sys = random_stable_system(rng, p=p)
            css = to_css(sys)
            G = rng.standard_normal((sys.n, sys.n))
            H = rng.standard_normal((p, p))
            noise = NoiseSpec(G @ G.T, H @ H.T + 0.1 * np.eye(p))
            P0 = np.eye(sys.n)
            ref = _real_kalman(sys.A, sys.C, noise.Q, noise.R, P0, steps)
            st = KalmanState(np.zeros(sys.n, complex), P0.astype(complex))
            s = np.zeros(sys.m)
            for k, om in enumerate(_omegas(rng, steps)):
                st = kalman_predict(st, css, noise, s, om)
                st = kalman_correct(st, css, noise, np.zeros(p), s)
                worst = max(worst, _rel(st.P, ref[k]))
        return worst, systems, f"{steps} steps each"
    return _timed(3, "Kalman covariance independence", 1e-12, body)


def freq_shift_suite(seed: int = 0, systems: int = 20, points: int = 100) -> SuiteResult:
    """Envelope response at ``omega_beta`` equals the LTI response at ``omega_beta + omega_k``."""
    def body():
        rng = np.random.default_rng([seed, 4])
        worst = 0.0
        for _ in range(systems):
            sys = random_stable_system(rng, m=int(rng.integers(1, 3)), p=int(rng.integers(1, 3)),
                                       rho_max=0.95)
            css = to_css(sys)
            wk = rng.uniform(0.05, np.pi - 0.05)
            for wb in np.linspace(-np.pi, np.pi, points):
                zeta = np.exp(1j * (wb + wk))
                ref = sys.C @ np.linalg.solve(zeta * np.eye(sys.n) - sys.A, sys.B) + sys.D
                worst = max(worst, _rel(freq_response(css, wk, wb), ref))
        return worst, systems, f"{points}-point grid"
    return _timed(4, "frequency-response shift", 1e-12, body)


def continuous_suite(seed: int = 0, systems: int = 20, steps: int = 50) -> SuiteResult:
    """Carrier commutation in the matrix exponential and ZOH consistency."""
    def body():
        rng = np.random.default_rng([seed, 5])
        worst_exp = worst_zoh = 0.0
        for _ in range(systems):
            n = int(rng.integers(1, 7))
            A = rng.standard_normal((n, n))
            A -= (np.abs(np.linalg.eigvals(A)).max() + 0.1) * np.eye(n)
            sysc = ContinuousStateSpace(A, rng.standard_normal((n, 1)), rng.standard_normal((1, n)),
                                        np.zeros((1, 1)))
            Ts = rng.uniform(0.01, 0.2)
            w = rng.uniform(0.5, 10.0)
            Ac = continuous_css(sysc, w)[0]
            worst_exp = max(worst_exp, _rel(scipy.linalg.expm(Ac * Ts),
                                            np.exp(-1j * w * Ts) * scipy.linalg.expm(A * Ts)))
            Phi, Gam = css_zoh(sysc, w, Ts)
            css = to_css(zoh_discretize(sysc, Ts))
            z1 = z2 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            for s in rng.standard_normal((steps, 1)) + 1j * rng.standard_normal((steps, 1)):
                z1 = Phi @ z1 + Gam @ s
                z2 = css_step(css, z2, s, w * Ts)
                worst_zoh = max(worst_zoh, _rel(z1, z2))
        worst = max(worst_exp / 1e-12, worst_zoh / 1e-10)
        return worst, systems, f"exp {worst_exp:.2g} (1e-12), zoh {worst_zoh:.2g} (1e-10)"
    return _timed(5, "continuous carrier commutation and ZOH", 1.0, body)


def lqr_suite(seed: int = 0, systems: int = 20, horizon: int = 30) -> SuiteResult:
    """Complex and real cost recursions agree; V_0 equals the simulated optimal cost."""
    def body():
        rng = np.random.default_rng([seed, 6])
        worst_v = worst_cost = 0.0
        for _ in range(systems):
            m = int(rng.integers(1, 3))
            sys = random_stable_system(rng, m=m, rho_max=1.2)
            n = sys.n
            G = rng.standard_normal((n, n))
            Qc = G @ G.T
            Rc = np.diag(rng.uniform(0.5, 2.0, m))
            QcN = Qc + np.eye(n)
            real = lqr_design(sys, Qc, Rc, QcN, horizon)
            Vs, Ks = real.history
            Vc, Kc = css_lqr_recursion(to_css(sys), _omegas(rng, horizon), Qc, Rc, QcN)
            worst_v = max(worst_v, max(_rel(a, b) for a, b in zip(Vc, Vs)))
            x = rng.standard_normal(n)
            x0 = x.copy()
            cost = 0.0
            for K in Ks:
                u = K @ x
                cost += x @ Qc @ x + u @ Rc @ u
                x = sys.A @ x + sys.B @ u
            cost += x @ QcN @ x
            worst_cost = max(worst_cost, abs(cost - x0 @ Vs[0] @ x0) / abs(cost))
        worst = max(worst_v / 1e-12, worst_cost / 1e-8)
        return worst, systems, f"V {worst_v:.2g} (1e-12), cost {worst_cost:.2g} (1e-8)"
    return _timed(6, "LQR cost recursion equivalence", 1.0, body)


def _random_predictor(rng, conjugate: bool):
    if conjugate:
        # Two decoupled oscillators; the second takes conj(h).
        blocks = []
        for _ in range(2):
            r, a = rng.uniform(0.6, 0.95), rng.uniform(0.2, 1.2)
            blocks.append(r * np.array([[np.cos(a), np.sin(a)], [-np.sin(a), np.cos(a)]]))
        A = scipy.linalg.block_diag(*blocks)
        sys = RealStateSpace(A, rng.standard_normal((4, 2)), rng.standard_normal((2, 4)), np.zeros((2, 2)))
        css = to_css(sys, ("direct", "direct", "conjugate", "conjugate"), strict=False)
    else:
        sys = random_stable_system(rng, n=int(rng.integers(2, 5)), rho_max=0.9)
        css = to_css(sys, strict=False)
    L = 0.3 * rng.standard_normal((sys.n, sys.p))
    L *= 1.0 / max(1.0, np.abs(np.linalg.eigvals(sys.A - L @ sys.C)).max() / 0.9)
    if np.abs(np.linalg.eigvals(sys.A - L @ sys.C)).max() > 0.95:
        L = np.zeros_like(L)
    return make_predictor_model(css, L)


def _predict_outputs(model, h, data):
    st = init_predictor(model, h0=h)
    out = []
    for q, s, w in data:
        qh, st = predictor_step(st, q, s, w)
        out.append(qh)
    return np.array(out)


def gradient_suite(seed: int = 0, cases: int = 50, steps: int = 40, delta: float = 1e-6) -> SuiteResult:
    """Derivative recursion and window-cost gradient against central differences.

    With ``h = x + j y``: ``dq/dh = (q_x - j q_y) / 2``, ``dq/dconj(h) = (q_x + j q_y) / 2``
    and ``dJ/dconj(h) = (J_x + j J_y) / 2``.
    """
    def body():
        rng = np.random.default_rng([seed, 7])
        worst = 0.0
        for i in range(cases):
            model = _random_predictor(rng, conjugate=bool(i % 2))
            css = model.css
            h = 0.9 * np.exp(1j * rng.uniform(-0.3, 0.3))
            data = [(rng.standard_normal(css.base.p) + 1j * rng.standard_normal(css.base.p),
                     rng.standard_normal(css.base.m) + 1j * rng.standard_normal(css.base.m),
                     rng.uniform(0.1, 3.0)) for _ in range(steps)]
            # recursion
            st = init_predictor(model, h0=h)
            dq_h, dq_c = [], []
            for q, s, w in data:
                dq_h.append(css.C @ st.z_h)
                dq_c.append(css.C @ st.z_hbar)
                d = derivative_step(st, q, s, w)
                _, st = predictor_step(st, q, s, w)
                st = st.copy(z_h=d.z_h, z_hbar=d.z_hbar)
            dq_h, dq_c = np.array(dq_h), np.array(dq_c)
            qx = (_predict_outputs(model, h + delta, data) - _predict_outputs(model, h - delta, data)) / (2 * delta)
            qy = (_predict_outputs(model, h + 1j * delta, data)
                  - _predict_outputs(model, h - 1j * delta, data)) / (2 * delta)
            worst = max(worst, _rel(dq_h, (qx - 1j * qy) / 2))
            if css.conjugate_mode:
                worst = max(worst, _rel(dq_c, (qx + 1j * qy) / 2))
            # window cost gradient
            anchor = rng.standard_normal(css.n) + 1j * rng.standard_normal(css.n)
            S = np.array([d[1] for d in data])
            Q = np.array([d[0] for d in data])
            W = np.array([d[2] for d in data])
            J = lambda hh: prediction_error_cost(model, hh, anchor, S, Q, W)[0]  # noqa: E731
            Jx = (J(h + delta) - J(h - delta)) / (2 * delta)
            Jy = (J(h + 1j * delta) - J(h - 1j * delta)) / (2 * delta)
            grad = prediction_error_cost(model, h, anchor, S, Q, W)[1]
            fd = (Jx + 1j * Jy) / 2
            worst = max(worst, abs(grad - fd) / max(abs(fd), 1e-300))
        return worst, cases, "half in conjugate-pair mode"
    return _timed(7, "CR-calculus derivatives vs finite differences", 1e-5, body)


def sndtft_suite(seed: int = 0, steps: int = 10_000) -> SuiteResult:
    """Recursive against batch transform, and pure-tone envelope recovery.

    The recursion error is taken relative to ``sum |y|`` over the window,
    the natural bound on the bin magnitude.  Tone recovery is limited to
    carriers whose negative-frequency image is resolvable by the window.
    """
    def body():
        rng = np.random.default_rng([seed, 8])
        # recursion vs batch, center bin before the Hann combination
        worst_rec = 0.0
        for Nf in (24, 32):
            f = SndtftFilter(Nf, resync_every=4096)
            w = 0.4
            theta = 0.0
            for _ in range(steps):
                w = float(np.clip(w + rng.uniform(-0.01, 0.01), 0.05, np.pi - 0.05))
                theta += w
                f.push(rng.standard_normal(), w, theta)
                y, om = f.window()
                ref = batch_ndtft(y[:, 0], om, theta, raw=True)
                worst_rec = max(worst_rec, abs(f.Y_center[0] - ref) / max(np.abs(y).sum(), 1e-300))
        # Tone recovery over the band where the tone's own negative-frequency
        # image sits at least three bins away, plus both study carriers.
        worst_amp = worst_ph = 0.0
        for Nf in (24, 32):
            edge = 3 * np.pi / Nf
            for w0 in (*np.linspace(edge, np.pi - edge, 12), *STUDY_CARRIERS[Nf]):
                beta, psi = rng.uniform(0.5, 2.0), rng.uniform(-np.pi, np.pi)
                f = SndtftFilter(Nf)
                theta = rng.uniform(-np.pi, np.pi)
                for k in range(4 * Nf):
                    theta += w0
                    q = f.push(beta * np.cos(theta + psi), w0, theta)[0]
                    if k >= Nf:
                        worst_amp = max(worst_amp, abs(abs(q) / beta - 1))
                        worst_ph = max(worst_ph, abs(np.angle(q * np.exp(-1j * psi))))
        worst = max(worst_rec / 1e-9, worst_amp / 0.02, worst_ph / 0.02)
        return worst, 2, (f"recursion {worst_rec:.2g} (1e-9), amplitude {worst_amp:.2g} (0.02), "
                          f"phase {worst_ph:.2g} rad (0.02)")
    return _timed(8, "sNDTFT recursion and tone recovery", 1.0, body)


SUITES: dict = {
    1: stability_bound_suite,
    2: gramian_suite,
    3: kalman_covariance_suite,
    4: freq_shift_suite,
    5: continuous_suite,
    6: lqr_suite,
    7: gradient_suite,
    8: sndtft_suite,
}


def run_suites(criteria=None, seed: int = 0) -> list[SuiteResult]:
    """Run the selected suites (all by default) in criterion order."""
    ids = sorted(SUITES) if criteria is None else sorted(criteria)
    return [SUITES[i](seed=seed) for i in ids]
