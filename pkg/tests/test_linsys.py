import numpy as np
import pytest
import scipy.linalg
from scipy.integrate import solve_ivp

from csstrack.bench.plants import GyroParams, PiezoParams, build_piezo, gyro_design, gyro_discrete
from csstrack.bench.verify import random_stable_system
from csstrack.linsys import (
    ContinuousStateSpace,
    ModelError,
    NoiseSpec,
    NoResonanceError,
    RealStateSpace,
    controllability_gramian,
    dare_kalman,
    eigen_pairs,
    lqr_design,
    modal_form,
    observability_gramian,
    select_resonant_mode,
    similarity,
    zoh_discretize,
)


def test_zoh_zero_dynamics():
    B = np.array([[1.0, 2.0], [3.0, -1.0]])
    sysd = zoh_discretize(ContinuousStateSpace(np.zeros((2, 2)), B, np.eye(2), np.zeros((2, 2))), 0.3)
    assert np.allclose(sysd.A, np.eye(2), atol=1e-15)
    assert np.allclose(sysd.B, 0.3 * B, atol=1e-15)


def test_zoh_scalar_closed_form():
    a, Ts = -2.5, 0.1
    sysd = zoh_discretize(ContinuousStateSpace([[a]], [[1.0]], [[1.0]], [[0.0]]), Ts)
    assert sysd.A[0, 0] == pytest.approx(np.exp(a * Ts), rel=1e-14)
    assert sysd.B[0, 0] == pytest.approx((np.exp(a * Ts) - 1) / a, rel=1e-13)


def test_zoh_piezo_matches_characteristic_roots():
    p = PiezoParams()
    Ts = 1e-6
    sysd = zoh_discretize(build_piezo(p), Ts)
    roots = np.roots([1.0, p.Rm / p.Lm, 1.0 / (p.Lm * p.Cm)])
    s = roots[roots.imag > 0][0]
    lam = select_resonant_mode(eigen_pairs(sysd.A)).lam
    assert abs(lam) == pytest.approx(abs(np.exp(s * Ts)), rel=1e-12)
    assert np.angle(lam) == pytest.approx(np.angle(np.exp(s * Ts)), rel=1e-10)


def test_zoh_matches_ode_integration():
    rng = np.random.default_rng(11)
    for _ in range(5):
        n = int(rng.integers(1, 7))
        A = rng.standard_normal((n, n))
        A -= (np.abs(np.linalg.eigvals(A)).max() + 0.2) * np.eye(n)
        Ts = 0.05
        sysd = zoh_discretize(ContinuousStateSpace(A, np.zeros((n, 1)), np.eye(n), np.zeros((n, 1))), Ts)
        x0 = rng.standard_normal(n)
        steps = 20
        sol = solve_ivp(lambda t, x: A @ x, (0, steps * Ts), x0, method="DOP853", rtol=1e-13, atol=1e-15)
        x = np.linalg.matrix_power(sysd.A, steps) @ x0
        assert np.linalg.norm(x - sol.y[:, -1]) <= 1e-8 * np.linalg.norm(sol.y[:, -1])


def test_zoh_rejects_bad_period_and_nonfinite_model():
    sys = ContinuousStateSpace([[0.0]], [[1.0]], [[1.0]], [[0.0]])
    with pytest.raises(ModelError):
        zoh_discretize(sys, 0.0)
    with pytest.raises(ModelError):
        ContinuousStateSpace([[np.nan]], [[1.0]], [[1.0]], [[0.0]])
    with pytest.raises(ModelError):
        RealStateSpace(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), [[0.0]])


def test_eigen_pairs_diagonal():
    pairs = eigen_pairs(np.diag([0.5, -0.2]))
    lams = sorted(p.lam.real for p in pairs)
    assert lams == pytest.approx([-0.2, 0.5])
    for p in pairs:
        assert np.isclose(abs(p.right_vec).max(), 1.0)


def test_eigen_pairs_damped_oscillator():
    A = np.array([[0.0, 1.0], [-1.0, -0.2]])
    pairs = eigen_pairs(A)
    assert pairs[0].lam == pytest.approx(complex(-0.1, np.sqrt(0.99)), abs=1e-12)
    assert pairs[1].lam == pytest.approx(np.conj(pairs[0].lam), abs=1e-12)
    for p in pairs:
        assert np.linalg.norm(p.right_vec) == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.norm(p.left_vec) == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(p.left_vec.conj() @ A, p.lam * p.left_vec.conj(), atol=1e-12)


def test_gyro_stiffness_modes():
    K = np.asarray(GyroParams().K_g)
    ev = sorted(p.lam.real for p in eigen_pairs(K))
    tr, det = np.trace(K), np.linalg.det(K)
    oracle = sorted([(tr - np.sqrt(tr**2 - 4 * det)) / 2, (tr + np.sqrt(tr**2 - 4 * det)) / 2])
    assert ev == pytest.approx(oracle, rel=1e-12)
    assert ev == pytest.approx([330.4, 557.8], abs=0.1)
    assert np.sqrt(ev) == pytest.approx([18.18, 23.62], abs=0.01)


def test_eigen_pairs_size_limit():
    with pytest.raises(ModelError):
        eigen_pairs(np.eye(17))


def test_select_resonant_mode_cases():
    two = eigen_pairs(_realize([0.9, 0.8 * np.exp(0.3j)]))
    assert select_resonant_mode(two).lam == pytest.approx(0.8 * np.exp(0.3j))
    four = eigen_pairs(_realize([0.9 * np.exp(0.1j), 0.9 * np.exp(0.5j)]))
    assert select_resonant_mode(four, 0.45).lam == pytest.approx(0.9 * np.exp(0.5j))
    with pytest.raises(NoResonanceError):
        select_resonant_mode(eigen_pairs(np.diag([0.3, -0.5])))


def _realize(lams):
    """Real block-diagonal matrix with the given eigenvalues (complex ones paired)."""
    blocks = []
    for lam in lams:
        if np.iscomplex(lam):
            blocks.append(np.array([[lam.real, lam.imag], [-lam.imag, lam.real]]))
        else:
            blocks.append(np.array([[float(np.real(lam))]]))
    return scipy.linalg.block_diag(*blocks)


def test_gramian_examples():
    b = np.array([[1.0], [2.0]])
    sys = RealStateSpace(np.zeros((2, 2)), b, [[1.0, 0.0]], [[0.0]])
    assert np.allclose(controllability_gramian(sys, 3), b @ b.T)
    scalar = RealStateSpace([[0.5]], [[1.0]], [[1.0]], [[0.0]])
    assert controllability_gramian(scalar, 2)[0, 0] == pytest.approx(1.25)
    assert observability_gramian(scalar, 2)[0, 0] == pytest.approx(1.25)
    with pytest.raises(ValueError):
        controllability_gramian(scalar, 0)


def test_gramians_match_brute_force():
    rng = np.random.default_rng(3)
    sys = random_stable_system(rng, n=4, m=2, p=2)
    Wc = sum(np.linalg.matrix_power(sys.A, i) @ sys.B @ sys.B.T @ np.linalg.matrix_power(sys.A, i).T
             for i in range(20))
    Wo = sum(np.linalg.matrix_power(sys.A, i).T @ sys.C.T @ sys.C @ np.linalg.matrix_power(sys.A, i)
             for i in range(20))
    assert np.allclose(controllability_gramian(sys, 20), Wc, rtol=1e-10, atol=0)
    assert np.allclose(observability_gramian(sys, 20), Wo, rtol=1e-10, atol=0)


def test_dare_scalar_fixed_point():
    sol = dare_kalman(RealStateSpace([[0.9]], [[1.0]], [[1.0]], [[0.0]]), NoiseSpec([[1.0]], [[1.0]]))
    p = sol.P[0, 0]
    assert p == pytest.approx(0.81 * p - 0.81 * p**2 / (p + 1) + 1, rel=1e-11)


def test_dare_small_r_gives_l_equal_a():
    A = np.array([[0.5, 0.2], [-0.1, 0.7]])
    sol = dare_kalman(RealStateSpace(A, np.eye(2), np.eye(2), np.zeros((2, 2))),
                      NoiseSpec(np.eye(2), 1e-9 * np.eye(2)))
    assert np.allclose(sol.gain, A, atol=1e-6)


def test_dare_matches_scipy_and_is_stable():
    rng = np.random.default_rng(5)
    for _ in range(5):
        sys = random_stable_system(rng, n=3, p=2)
        G = rng.standard_normal((3, 3))
        noise = NoiseSpec(G @ G.T, np.eye(2))
        sol = dare_kalman(sys, noise)
        P = scipy.linalg.solve_discrete_are(sys.A.T, sys.C.T, noise.Q, noise.R)
        assert np.allclose(sol.P, P, rtol=1e-9, atol=1e-11)
        assert np.abs(np.linalg.eigvals(sys.A - sol.gain @ sys.C)).max() < 1
        # one prediction-correction cycle reproduces the fixed point
        Pc = sol.P - sol.P @ sys.C.T @ np.linalg.solve(sys.C @ sol.P @ sys.C.T + noise.R, sys.C @ sol.P)
        assert np.allclose(sys.A @ Pc @ sys.A.T + noise.Q, sol.P, rtol=1e-10, atol=1e-12)


def test_dare_rejects_unobservable_pair():
    sys = RealStateSpace(np.diag([0.5, 0.4]), np.eye(2), [[1.0, 0.0]], [[0.0, 0.0]])
    with pytest.raises(ModelError):
        dare_kalman(sys, NoiseSpec(np.eye(2), [[1.0]]))


def test_noise_spec_validation():
    with pytest.raises(ModelError):
        NoiseSpec([[1.0, 0.5], [0.0, 1.0]], [[1.0]])
    with pytest.raises(ModelError):
        NoiseSpec(np.eye(2), [[0.0]])
    with pytest.raises(ModelError):
        NoiseSpec(-np.eye(2), [[1.0]])


def test_lqr_without_input_is_lyapunov():
    A = np.array([[0.5, 0.1], [0.0, 0.3]])
    sys = RealStateSpace(A, np.zeros((2, 1)), np.eye(2), np.zeros((2, 1)))
    Qc = np.eye(2)
    sol = lqr_design(sys, Qc, [[1.0]], horizon=3)
    Vs = sol.history[0]
    for k in range(3):
        assert np.allclose(Vs[k], A.T @ Vs[k + 1] @ A + Qc)


def test_lqr_scalar_and_scipy():
    sol = lqr_design(RealStateSpace([[0.5]], [[1.0]], [[1.0]], [[0.0]]), [[1.0]], [[1.0]])
    v = sol.P[0, 0]
    assert v == pytest.approx(0.25 * v - 0.25 * v**2 / (1 + v) + 1, rel=1e-11)
    rng = np.random.default_rng(9)
    sys = random_stable_system(rng, n=3, m=2, rho_max=1.1)
    V = scipy.linalg.solve_discrete_are(sys.A, sys.B, np.eye(3), np.eye(2))
    assert np.allclose(lqr_design(sys, np.eye(3), np.eye(2)).P, V, rtol=1e-9)


def test_lqr_gyro_weights_stabilize():
    design = gyro_design(GyroParams())
    sys = gyro_discrete(GyroParams())
    closed = sys.A + sys.B @ design.K
    assert max(abs(p.lam) for p in eigen_pairs(closed)) < 1


def test_lqr_rejects_indefinite_weights():
    sys = RealStateSpace([[0.5]], [[1.0]], [[1.0]], [[0.0]])
    with pytest.raises(ModelError):
        lqr_design(sys, [[-1.0]], [[1.0]])
    with pytest.raises(ModelError):
        lqr_design(sys, [[1.0]], [[0.0]])


def test_modal_form_preserves_io_map():
    rng = np.random.default_rng(2)
    sys = random_stable_system(rng, n=4)
    while not np.iscomplex(np.linalg.eigvals(sys.A)).any():
        sys = random_stable_system(rng, n=4)
    mod, T = modal_form(sys)
    assert np.allclose(similarity(sys, T).A, mod.A)
    for k in range(10):
        Ak = np.linalg.matrix_power(sys.A, k)
        Mk = np.linalg.matrix_power(mod.A, k)
        assert np.allclose(sys.C @ Ak @ sys.B, mod.C @ Mk @ mod.B, rtol=1e-9, atol=1e-12)
