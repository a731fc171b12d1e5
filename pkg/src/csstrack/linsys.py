"""Real-valued state-space machinery.

Continuous and discrete LTI containers, zero-order-hold discretization,
eigen-analysis, finite-horizon gramians and the Riccati recursions used
for Kalman and LQR design.  Every function here is a pure function of its
arguments.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "ModelError",
    "NumericError",
    "NoResonanceError",
    "ConvergenceError",
    "ContinuousStateSpace",
    "RealStateSpace",
    "NoiseSpec",
    "EigenPair",
    "RiccatiSolution",
    "zoh_discretize",
    "eigen_pairs",
    "select_resonant_mode",
    "controllability_gramian",
    "observability_gramian",
    "dare_kalman",
    "lqr_design",
    "modal_form",
    "similarity",
]


class ModelError(ValueError):
    """Raised for inconsistent or non-finite model data."""


class NumericError(ArithmeticError):
    """Raised when a numerical routine fails its own residual check."""


class NoResonanceError(ValueError):
    """Raised when no eigenvalue with positive angle exists."""


class ConvergenceError(ArithmeticError):
    """Raised when a fixed-point iteration exhausts its iteration budget."""


def _as_matrix(M, name: str, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ModelError(f"{name} must be two-dimensional")
    if not np.all(np.isfinite(M)):
        raise ModelError(f"{name} has non-finite entries")
    if rows is not None and M.shape[0] != rows:
        raise ModelError(f"{name} has {M.shape[0]} rows, expected {rows}")
    if cols is not None and M.shape[1] != cols:
        raise ModelError(f"{name} has {M.shape[1]} columns, expected {cols}")
    return M


def _check_abcd(A, B, C, D):
    A = _as_matrix(A, "A")
    n = A.shape[0]
    if A.shape[1] != n:
        raise ModelError("A must be square")
    B = _as_matrix(B, "B", rows=n)
    C = _as_matrix(C, "C", cols=n)
    D = _as_matrix(D, "D", rows=C.shape[0], cols=B.shape[1])
    return A, B, C, D


@dataclass(frozen=True)
class ContinuousStateSpace:
    """Continuous-time model ``dx/dt = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A, B, C, D = _check_abcd(self.A, self.B, self.C, self.D)
        for name, M in zip("ABCD", (A, B, C, D)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class RealStateSpace:
    """Discrete-time model ``x+ = A x + B u``, ``y = C x + D u`` with period `Ts`."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Ts: float = 1.0

    def __post_init__(self):
        A, B, C, D = _check_abcd(self.A, self.B, self.C, self.D)
        for name, M in zip("ABCD", (A, B, C, D)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        Ts = float(self.Ts)
        if not (np.isfinite(Ts) and Ts > 0):
            raise ModelError("sampling period must be positive and finite")
        object.__setattr__(self, "Ts", Ts)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    """Process covariance `Q` (n x n, PSD) and measurement covariance `R` (p x p, PD)."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        for name, M, strict in (("Q", Q, False), ("R", R, True)):
            if M.shape[0] != M.shape[1]:
                raise ModelError(f"{name} must be square")
            scale = max(np.abs(M).max(), 1e-300)
            if np.abs(M - M.T).max() > 1e-12 * scale:
                raise ModelError(f"{name} is not symmetric")
            ev = np.linalg.eigvalsh(0.5 * (M + M.T))
            if strict and ev.min() <= 0:
                raise ModelError(f"{name} must be positive definite")
            if not strict and ev.min() < -1e-12 * scale:
                raise ModelError(f"{name} must be positive semidefinite")
            M.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)


@dataclass(frozen=True)
class EigenPair:
    """Eigenvalue with unit-norm right vector and left vector ``chi``.

    The left vector satisfies ``chi^H A = lam chi^H``.
    """

    lam: complex
    right_vec: np.ndarray
    left_vec: np.ndarray


@dataclass(frozen=True)
class RiccatiSolution:
    """Result of a Riccati recursion.

    Attributes
    ----------
    P : ndarray
        Steady covariance (Kalman) or the cost matrix at stage 0 (LQR).
    gain : ndarray
        Kalman predictor gain ``L`` or LQR feedback ``K`` at stage 0.
    iterations : int
        Number of recursion steps taken.
    history : tuple
        For finite-horizon LQR, ``(V_0, ..., V_N)`` and ``(K_0, ..., K_{N-1})``;
        empty otherwise.
    """

    P: np.ndarray
    gain: np.ndarray
    iterations: int
    history: tuple = field(default=(), repr=False)


def zoh_discretize(sys: ContinuousStateSpace, Ts: float) -> RealStateSpace:
    """Zero-order-hold discretization via the augmented matrix exponential.

    ``exp([[A, B], [0, 0]] Ts) = [[A_d, B_d], [0, I]]``.
    """
    Ts = float(Ts)
    if not (np.isfinite(Ts) and Ts > 0):
        raise ModelError("Ts must be positive and finite")
    n, m = sys.n, sys.m
    M = np.zeros((n + m, n + m))
    M[:n, :n] = sys.A
    M[:n, n:] = sys.B
    E = scipy.linalg.expm(M * Ts)
    if not np.all(np.isfinite(E)):
        raise ModelError("matrix exponential overflowed")
    return RealStateSpace(E[:n, :n], E[:n, n:], sys.C.copy(), sys.D.copy(), Ts)


def eigen_pairs(A, rtol: float = 1e-8) -> list[EigenPair]:
    """All eigenpairs of a real matrix, with left eigenvectors.

    Conjugate pairs are returned adjacently, the member with positive
    imaginary part first.  Both eigenvectors are normalized to unit norm.

    Raises
    ------
    NumericError
        If a pair fails the residual check ``|A v - lam v| <= rtol |A|``.
    """
    A = _as_matrix(A, "A")
    n = A.shape[0]
    if A.shape[1] != n:
        raise ModelError("A must be square")
    if n > 16:
        raise ModelError("eigen_pairs is limited to n <= 16")
    lam, vl, vr = scipy.linalg.eig(A, left=True, right=True)
    scale = max(np.linalg.norm(A, 2), 1e-300)
    # Sort by angle (descending imag first within a pair), keeping pairs adjacent.
    order = []
    used = np.zeros(n, bool)
    for i in np.argsort(-np.abs(lam), kind="stable"):
        if used[i]:
            continue
        if lam[i].imag < 0 and abs(lam[i].imag) > 1e-14 * scale:
            # Wait for the positive-imaginary partner to pull this one in.
            continue
        used[i] = True
        order.append(i)
        if abs(lam[i].imag) > 1e-14 * scale:
            cand = [j for j in range(n) if not used[j]]
            j = min(cand, key=lambda j: abs(lam[j] - np.conj(lam[i])))
            used[j] = True
            order.append(j)
    order += [i for i in range(n) if not used[i]]
    out = []
    for i in order:
        v = vr[:, i] / np.linalg.norm(vr[:, i])
        chi = vl[:, i] / np.linalg.norm(vl[:, i])
        res = np.linalg.norm(A @ v - lam[i] * v)
        res_l = np.linalg.norm(chi.conj() @ A - lam[i] * chi.conj())
        if max(res, res_l) > rtol * scale:
            raise NumericError(f"eigenpair residual {max(res, res_l):.3e} exceeds tolerance")
        v.setflags(write=False)
        chi.setflags(write=False)
        out.append(EigenPair(complex(lam[i]), v, chi))
    return out


def select_resonant_mode(pairs, hint: float | None = None) -> EigenPair:
    """Pick the resonant eigenpair.

    With `hint`, the pair with ``arg(lam) > 0`` closest in angle to `hint`;
    otherwise the largest-magnitude pair with positive angle.
    """
    cands = [p for p in pairs if p.lam.imag > 0 and np.angle(p.lam) > 0]
    if not cands:
        raise NoResonanceError("no eigenvalue with positive angle")
    if hint is None:
        return max(cands, key=lambda p: abs(p.lam))
    return min(cands, key=lambda p: abs(np.angle(p.lam) - hint))


def controllability_gramian(sys: RealStateSpace, k: int) -> np.ndarray:
    """``W_c(k, 0) = sum_{i<k} A^i B B^T (A^i)^T``."""
    if k < 1:
        raise ValueError("horizon must be >= 1")
    W = np.zeros((sys.n, sys.n))
    M = sys.B.copy()
    for _ in range(k):
        W += M @ M.T
        M = sys.A @ M
    return W


def observability_gramian(sys: RealStateSpace, k: int) -> np.ndarray:
    """``W_o(k, 0) = sum_{i<k} (A^i)^T C^T C A^i``."""
    if k < 1:
        raise ValueError("horizon must be >= 1")
    W = np.zeros((sys.n, sys.n))
    M = sys.C.copy()
    for _ in range(k):
        W += M.T @ M
        M = M @ sys.A
    return W


def _rel_change(new, old) -> float:
    return np.linalg.norm(new - old) / max(np.linalg.norm(old), 1e-300)


def dare_kalman(
    sys: RealStateSpace,
    noise: NoiseSpec,
    *,
    max_iter: int = 100_000,
    tol: float = 1e-12,
    P0=None,
) -> RiccatiSolution:
    """Steady-state one-step predictor gain.

    Iterates the prediction covariance recursion
    ``P+ = A P A^T + Q - A P C^T (C P C^T + R)^{-1} C P A^T``
    until the relative change falls below `tol`, then returns
    ``L = A P C^T (C P C^T + R)^{-1}``.
    """
    A, C = sys.A, sys.C
    n = sys.n
    Q, R = noise.Q, noise.R
    if Q.shape != (n, n) or R.shape != (sys.p, sys.p):
        raise ModelError("noise covariances do not match the model dimensions")
    if np.linalg.matrix_rank(observability_gramian(sys, n)) < n:
        raise ModelError("(A, C) is not observable")
    P = Q.copy() if P0 is None else np.array(P0, float)
    if not np.any(P):
        P = np.eye(n)
    for it in range(1, max_iter + 1):
        S = C @ P @ C.T + R
        AP = A @ P
        K = np.linalg.solve(S, C @ AP.T).T
        Pn = AP @ A.T + Q - K @ (C @ AP.T)
        Pn = 0.5 * (Pn + Pn.T)
        done = _rel_change(Pn, P) < tol
        P = Pn
        if done:
            break
    else:
        raise ConvergenceError(f"Kalman Riccati recursion did not converge in {max_iter} steps")
    L = A @ P @ C.T @ np.linalg.inv(C @ P @ C.T + R)
    return RiccatiSolution(P, L, it)


def _lqr_stage(A, B, V, Qc, Rc):
    BV = B.T @ V
    K = -np.linalg.solve(Rc + BV @ B, BV @ A)
    Vn = A.T @ V @ A + Qc + A.T @ V @ B @ K
    return 0.5 * (Vn + Vn.T), K


def lqr_design(
    sys: RealStateSpace,
    Qc,
    Rc,
    QcN=None,
    horizon: int | None = None,
    *,
    max_iter: int = 100_000,
    tol: float = 1e-12,
) -> RiccatiSolution:
    """LQR cost recursion ``V_{k-1} = A^T V_k A + Q_c - A^T V_k B (R_c + B^T V_k B)^{-1} B^T V_k A``.

    Parameters
    ----------
    sys : RealStateSpace
    Qc, Rc : array_like
        State and input weights; ``Qc`` PSD and ``Rc`` PD.
    QcN : array_like, optional
        Terminal weight (defaults to ``Qc``).
    horizon : int, optional
        Finite horizon ``N``.  ``None`` iterates to the stationary solution.

    Returns
    -------
    RiccatiSolution
        ``P = V_0`` and ``gain = K_0`` with ``u = K x``.  Finite horizons also
        carry the full ``(V_0..V_N)`` and ``(K_0..K_{N-1})`` history.
    """
    n, m = sys.n, sys.m
    Qc = _as_matrix(Qc, "Qc", n, n)
    Rc = _as_matrix(Rc, "Rc", m, m)
    QcN = Qc if QcN is None else _as_matrix(QcN, "QcN", n, n)
    for name, M, strict in (("Qc", Qc, False), ("QcN", QcN, False), ("Rc", Rc, True)):
        ev = np.linalg.eigvalsh(0.5 * (M + M.T))
        if (strict and ev.min() <= 0) or ev.min() < -1e-12 * max(np.abs(M).max(), 1e-300):
            raise ModelError(f"{name} weight is indefinite")
    A, B = sys.A, sys.B
    V = QcN.copy()
    if horizon is not None:
        Vs = [V]
        Ks = []
        for _ in range(int(horizon)):
            V, K = _lqr_stage(A, B, V, Qc, Rc)
            Vs.append(V)
            Ks.append(K)
        Vs.reverse()
        Ks.reverse()
        K0 = Ks[0] if Ks else np.zeros((m, n))
        return RiccatiSolution(Vs[0], K0, int(horizon), (tuple(Vs), tuple(Ks)))
    for it in range(1, max_iter + 1):
        Vn, K = _lqr_stage(A, B, V, Qc, Rc)
        done = _rel_change(Vn, V) < tol
        V = Vn
        if done:
            break
    else:
        raise ConvergenceError(f"LQR Riccati recursion did not converge in {max_iter} steps")
    BV = B.T @ V
    K = -np.linalg.solve(Rc + BV @ B, BV @ A)
    return RiccatiSolution(V, K, it)


def similarity(sys: RealStateSpace, T) -> RealStateSpace:
    """Change of coordinates ``x = T x_new``."""
    T = _as_matrix(T, "T", sys.n, sys.n)
    Ti = np.linalg.inv(T)
    return RealStateSpace(Ti @ sys.A @ T, Ti @ sys.B, sys.C @ T, sys.D.copy(), sys.Ts)


def modal_form(sys: RealStateSpace, balance: bool = True) -> tuple[RealStateSpace, np.ndarray]:
    """Real block-diagonal modal realization.

    Complex pairs become 2x2 blocks ``[[Re, Im], [-Im, Re]]`` ordered by
    increasing angle.  With ``balance=True`` each block is rescaled so that
    the traces of its controllability and observability gramian blocks agree,
    which keeps state magnitudes comparable to the output magnitude.

    Returns
    -------
    (RealStateSpace, T)
        The new model and the transformation with ``x_old = T x_new``.
    """
    pairs = eigen_pairs(sys.A)
    blocks = []
    for p in pairs:
        if p.lam.imag > 0:
            blocks.append((np.angle(p.lam), [p.right_vec.real, p.right_vec.imag]))
        elif p.lam.imag == 0 or abs(p.lam.imag) < 1e-14:
            blocks.append((0.0 if p.lam.real >= 0 else np.pi, [p.right_vec.real]))
    blocks.sort(key=lambda b: b[0])
    cols = [c for _, cs in blocks for c in cs]
    T = np.column_stack(cols)
    if np.linalg.matrix_rank(T) < sys.n:
        raise NumericError("matrix is not diagonalizable; no modal form")
    out = similarity(sys, T)
    if balance and np.max(np.abs(np.linalg.eigvals(out.A))) < 1:
        Wc = scipy.linalg.solve_discrete_lyapunov(out.A, out.B @ out.B.T)
        Wo = scipy.linalg.solve_discrete_lyapunov(out.A.T, out.C.T @ out.C)
        scale = np.ones(sys.n)
        i = 0
        for _, cs in blocks:
            sl = slice(i, i + len(cs))
            tc, to = np.trace(Wc[sl, sl]), np.trace(Wo[sl, sl])
            if tc > 0 and to > 0:
                scale[sl] = (tc / to) ** 0.25
            i += len(cs)
        S = np.diag(scale)
        out = similarity(out, S)
        T = T @ S
    return out, T
