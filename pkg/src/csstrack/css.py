"""Complex state-space (CSS) representation of oscillating linear systems.

A real model driven by ``u_k = Re(s_k e^{j theta_k})`` with carrier phase
``theta_{k+1} = theta_k + omega_k`` has states ``x_k = Re(z_k e^{j theta_k})``
where the complex envelope evolves as

    z_{k+1} = H(h_k) (A z_k + B s_k + w_k) e^{-j omega_k}
    q_k     = C z_k + D s_k + v_k

``H(h)`` multiplies every state by ``h``, ``conj(h)`` or 1 according to a
per-state tag.  With all tags ``"direct"`` it is the scalar ``h``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .linsys import ContinuousStateSpace, ModelError, RealStateSpace, eigen_pairs

__all__ = [
    "TAGS",
    "DomainError",
    "DomainSpec",
    "CarrierState",
    "ComplexStateSpace",
    "to_css",
    "tag_vector",
    "in_domain",
    "css_step",
    "css_output",
    "css_simulate",
    "sample_proper_noise",
    "freq_response",
    "continuous_css",
    "css_zoh",
    "transition_matrix",
    "css_controllability_gramian",
    "css_observability_gramian",
    "css_lqr_recursion",
    "wrap_phase",
]

TAGS = ("direct", "conjugate", "none")
DEFAULT_DM = 0.9999


class DomainError(ValueError):
    """Raised in strict mode when ``h`` leaves its admissible domain."""


def wrap_phase(theta: float) -> float:
    """Wrap an angle into ``(-pi, pi]``."""
    t = float(np.angle(np.exp(1j * theta)))
    return np.pi if t == -np.pi else t


@dataclass(frozen=True)
class DomainSpec:
    """Compact set of admissible disturbances ``|h| max|lambda_i| <= d_m``.

    `plant_eigs` are eigenvalue magnitudes of the plant model; `predictor_eigs`
    those of the predictor (empty for the plant-side domain).
    """

    d_m: float = DEFAULT_DM
    plant_eigs: tuple = ()
    predictor_eigs: tuple = ()

    def __post_init__(self):
        if not (0 < self.d_m < 1):
            raise ValueError("d_m must lie in (0, 1)")
        pe = tuple(float(abs(x)) for x in self.plant_eigs)
        qe = tuple(float(abs(x)) for x in self.predictor_eigs)
        if any(x <= 0 for x in pe + qe):
            raise ValueError("eigenvalue magnitudes must be positive")
        object.__setattr__(self, "plant_eigs", pe)
        object.__setattr__(self, "predictor_eigs", qe)

    @property
    def rho(self) -> float:
        """Largest listed magnitude (0 if none)."""
        return max(self.plant_eigs + self.predictor_eigs, default=0.0)

    @property
    def h_max(self) -> float:
        """Largest admissible ``|h|``."""
        r = self.rho
        return np.inf if r == 0 else self.d_m / r


def in_domain(h: complex, spec: DomainSpec) -> bool:
    """True iff ``|h| * max(listed magnitudes) <= d_m`` (closed set)."""
    return abs(h) * spec.rho <= spec.d_m


@dataclass(frozen=True)
class CarrierState:
    """Carrier phase ``theta`` (wrapped) and normalized frequency ``omega``."""

    theta: float
    omega: float
    Ts: float = 1.0

    def __post_init__(self):
        if not (0 < self.omega < np.pi):
            raise ValueError("omega must lie in (0, pi)")
        object.__setattr__(self, "theta", wrap_phase(self.theta))

    def advance(self, omega_next: float | None = None) -> "CarrierState":
        """``theta_{k+1} = theta_k + omega_k``; optionally switch frequency."""
        return CarrierState(self.theta + self.omega,
                            self.omega if omega_next is None else omega_next, self.Ts)


@dataclass(frozen=True)
class ComplexStateSpace:
    """CSS wrapper around a real model with a per-state disturbance tag map."""

    base: RealStateSpace
    tags: tuple
    strict: bool = True
    domain: DomainSpec = field(default=None, compare=False)
    dmask: np.ndarray = field(init=False, repr=False, compare=False)
    cmask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tags = tuple(self.tags)
        if len(tags) != self.base.n:
            raise ModelError("tag map length must equal the state dimension")
        bad = [t for t in tags if t not in TAGS]
        if bad:
            raise ModelError(f"unknown disturbance tags {bad}")
        object.__setattr__(self, "tags", tags)
        d = np.array([t == "direct" for t in tags], float)
        c = np.array([t == "conjugate" for t in tags], float)
        d.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "dmask", d)
        object.__setattr__(self, "cmask", c)
        if self.domain is None:
            mags = np.abs(np.linalg.eigvals(self.base.A))
            mags = tuple(x for x in mags if x > 0)
            object.__setattr__(self, "domain", DomainSpec(DEFAULT_DM, mags or (1e-300,)))

    @property
    def A(self):
        return self.base.A

    @property
    def B(self):
        return self.base.B

    @property
    def C(self):
        return self.base.C

    @property
    def D(self):
        return self.base.D

    @property
    def n(self):
        return self.base.n

    @property
    def conjugate_mode(self) -> bool:
        return bool(self.cmask.any())


def _check_tags_against_modes(sys: RealStateSpace, tags: Sequence[str], tol: float = 1e-9):
    for p in eigen_pairs(sys.A):
        if p.lam.imag <= 0:
            continue
        v = np.abs(p.right_vec)
        support = np.nonzero(v > tol * v.max())[0]
        seen = {tags[i] for i in support}
        if len(seen) > 1:
            raise ModelError(
                f"tags {sorted(seen)} split the invariant subspace of eigenvalue {p.lam:.6g}")


def to_css(sys: RealStateSpace, tags: Sequence[str] | None = None, *, strict: bool = True,
           check_modes: bool = True, d_m: float = DEFAULT_DM) -> ComplexStateSpace:
    """Wrap a real discrete model as a CSS model.

    Parameters
    ----------
    sys : RealStateSpace
    tags : sequence of {"direct", "conjugate", "none"}, optional
        Per-state disturbance assignment; all ``"direct"`` by default.
    strict : bool
        If true, `css_step` rejects ``h`` outside the plant domain.
    check_modes : bool
        Verify that no complex eigenvector is supported on states with
        different tags.  Realizations whose tags follow physical coordinates
        rather than modes must switch this off.
    d_m : float
        Domain bound used for the plant-side domain.
    """
    tags = ("direct",) * sys.n if tags is None else tuple(tags)
    if len(tags) != sys.n:
        raise ModelError("tag map length must equal the state dimension")
    if check_modes and len(set(tags)) > 1:
        _check_tags_against_modes(sys, tags)
    mags = tuple(x for x in np.abs(np.linalg.eigvals(sys.A)) if x > 0) or (1e-300,)
    return ComplexStateSpace(sys, tags, strict, DomainSpec(d_m, mags))


def tag_vector(css: ComplexStateSpace, h: complex) -> np.ndarray:
    """Diagonal of ``H(h)``."""
    return css.dmask * h + css.cmask * np.conj(h) + (1.0 - css.dmask - css.cmask)


def css_step(css: ComplexStateSpace, z, s, omega: float, h: complex = 1.0, w=None) -> np.ndarray:
    """One envelope step ``z+ = H(h) (A z + B s + w) e^{-j omega}``."""
    if css.strict and not in_domain(h, css.domain):
        raise DomainError(f"|h|={abs(h):.8g} is outside the plant domain")
    acc = css.A @ z + css.B @ np.asarray(s)
    if w is not None:
        acc = acc + w
    return tag_vector(css, h) * acc * np.exp(-1j * omega)


def css_output(css: ComplexStateSpace, z, s, v=None) -> np.ndarray:
    """``q = C z + D s + v``."""
    q = css.C @ z + css.D @ np.asarray(s)
    return q if v is None else q + v


def css_simulate(css, z0, s_seq, omegas, h_seq=None, w_seq=None, v_seq=None):
    """Fold `css_step`/`css_output` over input sequences.

    Returns ``(Z, Qout)`` with ``Z[k] = z_k`` for ``k = 0..N`` and
    ``Qout[k] = q_k`` for ``k = 0..N-1``.
    """
    s_seq = np.asarray(s_seq)
    N = len(omegas)
    Z = np.empty((N + 1, css.n), complex)
    Qo = np.empty((N, css.base.p), complex)
    Z[0] = z0
    for k in range(N):
        h = 1.0 if h_seq is None else h_seq[k]
        w = None if w_seq is None else w_seq[k]
        v = None if v_seq is None else v_seq[k]
        Qo[k] = css_output(css, Z[k], s_seq[k], v)
        Z[k + 1] = css_step(css, Z[k], s_seq[k], omegas[k], h, w)
    return Z, Qo


def sample_proper_noise(cov, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Circular complex Gaussian samples with ``E[w w^H] = cov`` and ``E[w w^T] = 0``.

    Real and imaginary parts are independent with covariance ``cov / 2`` each.
    Returns shape ``(n,)`` or ``(size, n)``.
    """
    cov = np.atleast_2d(np.asarray(cov, float))
    ev, U = np.linalg.eigh(0.5 * (cov + cov.T))
    if ev.min() < -1e-12 * max(np.abs(cov).max(), 1e-300):
        raise ValueError("covariance is not positive semidefinite")
    root = U * np.sqrt(np.clip(ev, 0.0, None))
    shape = (cov.shape[0],) if size is None else (size, cov.shape[0])
    g = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return (g @ root.T) * np.sqrt(0.5)


def freq_response(css: ComplexStateSpace, omega_k: float, omega_beta: float) -> np.ndarray:
    """Envelope response ``C (I e^{j wb} - A e^{-j wk})^{-1} B e^{-j wk} + D``.

    Equals the real model's response at ``wb + wk``.
    """
    n = css.n
    rot = np.exp(-1j * omega_k)
    M = np.eye(n) * np.exp(1j * omega_beta) - css.A * rot
    if np.linalg.cond(M) > 1e14:
        raise np.linalg.LinAlgError("resolvent is singular at this frequency")
    return css.C @ np.linalg.solve(M, css.B * rot) + css.D


def continuous_css(sys: ContinuousStateSpace, omega: float, omega_dot: float = 0.0, t: float = 0.0):
    """Continuous CSS matrices ``(A - j(omega + omega_dot t) I, B, C, D)`` (complex)."""
    w = omega + omega_dot * t
    Ac = sys.A.astype(complex) - 1j * w * np.eye(sys.n)
    return Ac, sys.B.astype(complex), sys.C.astype(complex), sys.D.astype(complex)


def css_zoh(sys: ContinuousStateSpace, omega: float, Ts: float):
    """Discretize the continuous CSS at constant carrier `omega` (rad/s).

    A real zero-order hold keeps ``u`` constant over a sample, which on the
    envelope side is the rotating hold ``s(t) = s_k e^{-j omega (t - t_k)}``.
    The augmented exponential ``exp([[A - j omega I, B], [0, -j omega I]] Ts)``
    yields ``(Phi, Gamma)`` with ``z+ = Phi z + Gamma s``.
    """
    n, m = sys.n, sys.m
    Ac = continuous_css(sys, omega)[0]
    M = np.zeros((n + m, n + m), complex)
    M[:n, :n] = Ac
    M[:n, n:] = sys.B
    M[n:, n:] = -1j * omega * np.eye(m)
    E = scipy.linalg.expm(M * Ts)
    return E[:n, :n], E[:n, n:]


def transition_matrix(css: ComplexStateSpace, omegas, k: int, i: int) -> np.ndarray:
    """``Phi(k, i) = prod_{l=i}^{k-1} A e^{-j omega_l}`` (later factors on the left)."""
    Phi = np.eye(css.n, dtype=complex)
    for l in range(i, k):
        Phi = (css.A * np.exp(-1j * omegas[l])) @ Phi
    return Phi


def css_controllability_gramian(css: ComplexStateSpace, omegas, k: int) -> np.ndarray:
    """``sum_{i<k} Phi(k, i+1) Gamma_i Gamma_i^H Phi(k, i+1)^H`` with ``Gamma_i = B e^{-j omega_i}``."""
    W = np.zeros((css.n, css.n), complex)
    Phi = np.eye(css.n, dtype=complex)  # Phi(k, k)
    for i in range(k - 1, -1, -1):
        G = Phi @ (css.B * np.exp(-1j * omegas[i]))
        W += G @ G.conj().T
        Phi = Phi @ (css.A * np.exp(-1j * omegas[i]))
    return W


def css_observability_gramian(css: ComplexStateSpace, omegas, k: int) -> np.ndarray:
    """``sum_{i<k} Phi(i, 0)^H C^T C Phi(i, 0)``."""
    W = np.zeros((css.n, css.n), complex)
    Phi = np.eye(css.n, dtype=complex)
    for i in range(k):
        M = css.C @ Phi
        W += M.conj().T @ M
        Phi = (css.A * np.exp(-1j * omegas[i])) @ Phi
    return W


def css_lqr_recursion(css: ComplexStateSpace, omegas, Qc, Rc, QcN):
    """Finite-horizon LQR cost recursion on the rotated CSS dynamics.

    Uses ``Phi_k = A e^{-j omega_k}`` and ``Gamma_k = B e^{-j omega_k}`` in
    complex arithmetic.  Returns ``(Vs, Ks)`` with ``Vs[0..N]`` and
    ``Ks[0..N-1]`` for the policy ``s_k = K_k z_k``.
    """
    N = len(omegas)
    V = np.asarray(QcN, complex)
    Vs = [V]
    Ks = []
    for k in range(N - 1, -1, -1):
        rot = np.exp(-1j * omegas[k])
        Phi = css.A * rot
        Gam = css.B * rot
        GV = Gam.conj().T @ V
        K = -np.linalg.solve(Rc + GV @ Gam, GV @ Phi)
        V = Phi.conj().T @ V @ Phi + Qc + Phi.conj().T @ V @ Gam @ K
        V = 0.5 * (V + V.conj().T)
        Vs.append(V)
        Ks.append(K)
    Vs.reverse()
    Ks.reverse()
    return Vs, Ks
