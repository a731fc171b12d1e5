import numpy as np
import pytest

from csstrack.css import css_output, css_step, to_css
from csstrack.estimator import (
    InsufficientExcitationError,
    KalmanState,
    MheBuffer,
    derivative_step,
    gauss_newton_solve,
    init_predictor,
    kalman_correct,
    kalman_predict,
    make_predictor_model,
    mhe_update,
    predictor_step,
    rpem_step,
)
from csstrack.linsys import NoiseSpec, RealStateSpace, dare_kalman

W0 = 0.4
S_REF = np.array([1.0 + 0.0j])


def _osc(r=0.95, a=0.4):
    A = r * np.array([[np.cos(a), np.sin(a)], [-np.sin(a), np.cos(a)]])
    return RealStateSpace(A, [[1.0], [0.5]], [[1.0, -0.3]], [[0.0]])


@pytest.fixture(scope="module")
def model():
    sys = _osc()
    L = dare_kalman(sys, NoiseSpec(0.01 * np.eye(2), [[0.1]])).gain
    return make_predictor_model(to_css(sys), L)


def _data(css, h_of_k, steps, z0=None):
    """Noise-free ``(q, s, omega)`` triples and the true envelope at each step."""
    z = np.zeros(css.n, complex) if z0 is None else z0
    out, zs = [], []
    for k in range(steps):
        zs.append(z)
        out.append((css_output(css, z, S_REF), S_REF, W0))
        z = css_step(css, z, S_REF, W0, h_of_k(k))
    return out, zs


def _window(data):
    return (np.array([d[1] for d in data]), np.array([d[0] for d in data]),
            np.array([d[2] for d in data]))


# ---------------------------------------------------------------- Kalman
def test_kalman_perfect_measurement():
    sys = RealStateSpace(0.9 * np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 2)))
    css = to_css(sys)
    noise = NoiseSpec(np.eye(2), 1e-12 * np.eye(2))
    st = KalmanState(np.zeros(2, complex), np.eye(2))
    st = kalman_predict(st, css, noise, [0, 0], 0.3)
    q = np.array([1.0 + 2.0j, -0.5j])
    st = kalman_correct(st, css, noise, q, [0, 0])
    assert np.allclose(st.z_hat, q, atol=1e-9)
    assert np.allclose(st.P, 0, atol=1e-9)


def test_kalman_mode_order():
    css = to_css(_osc())
    noise = NoiseSpec(np.eye(2), [[1.0]])
    st = KalmanState(np.zeros(2, complex), np.eye(2))
    with pytest.raises(ValueError):
        kalman_correct(st, css, noise, [0.0], [0.0])
    pred = kalman_predict(st, css, noise, [0.0], 0.1)
    with pytest.raises(ValueError):
        kalman_predict(pred, css, noise, [0.0], 0.1)


# ------------------------------------------------------------- predictor
def test_matched_predictor_error_vanishes(model):
    data, _ = _data(model.css, lambda k: 1.0, 300, z0=np.array([1.0 + 1.0j, -0.5]))
    st = init_predictor(model)
    errs = []
    for q, s, w in data:
        _, st = predictor_step(st, q, s, w)
        errs.append(np.abs(st.innovation).max())
    assert errs[0] > 0.1
    assert errs[-1] < 1e-12


def test_mismatched_predictor_is_biased(model):
    data, _ = _data(model.css, lambda k: np.exp(0.001j), 2000)
    st = init_predictor(model)
    for q, s, w in data:
        _, st = predictor_step(st, q, s, w)
    assert np.abs(st.innovation).max() > 1e-5


def test_zero_gain_runs_open_loop():
    css = to_css(_osc())
    m = make_predictor_model(css, np.zeros((2, 1)))
    assert np.allclose(m.F, css.A)
    st = init_predictor(m, z0=np.array([1.0, 0.0]))
    _, st = predictor_step(st, [5.0], S_REF, W0)
    assert np.allclose(st.z_hat, css_step(css, np.array([1.0, 0.0]), S_REF, W0))


def test_derivatives_stay_zero_without_excitation(model):
    st = init_predictor(model)
    for _ in range(20):
        st = derivative_step(st, [0.0], [0.0], W0)
    assert not np.any(st.z_h) and not np.any(st.z_hbar)


# ------------------------------------------------------------------ RPEM
def test_rpem_zero_innovation_is_fixed_point(model):
    data, zs = _data(model.css, lambda k: 1.0, 400)
    st = init_predictor(model, z0=zs[0])
    for q, s, w in data:
        h, st = rpem_step(st, q, s, w)
        assert abs(h - 1.0) < 1e-14


def test_rpem_converges_noise_free(model):
    h_true = np.exp(0.002j)
    data, _ = _data(model.css, lambda k: h_true, 5000)
    st = init_predictor(model, gamma=0.0025)
    for q, s, w in data:
        h, st = rpem_step(st, q, s, w)
    assert abs(h - h_true) < 1e-4


def test_rpem_projection_discards_out_of_domain(model):
    st = init_predictor(model, gamma=50.0, S0=1e-6)
    st = st.copy(z_h=np.array([1.0, 1.0], complex))
    h, new = rpem_step(st, [100.0], S_REF, W0)
    assert h == 1.0
    assert np.all(np.isfinite(new.z_hat))


def test_rpem_stays_in_domain_under_large_gain(model):
    rng = np.random.default_rng(3)
    st = init_predictor(model, gamma=0.5, S0=1e-3)
    for _ in range(2000):
        h, st = rpem_step(st, rng.standard_normal(1) * 10, S_REF, W0)
        assert abs(h) * model.domain.rho <= model.domain.d_m


def test_init_predictor_validation(model):
    with pytest.raises(ValueError):
        init_predictor(model, S0=0.0)
    with pytest.raises(ValueError):
        init_predictor(model, gamma=0.0)


# ------------------------------------------------------------ Gauss-Newton
@pytest.mark.parametrize("h_true,iters", [(1.0, 1), (1.001 * np.exp(0.003j), 50)])
def test_gauss_newton_recovers_h(model, h_true, iters):
    data, zs = _data(model.css, lambda k: h_true, 200, z0=np.array([0.3, 0.1j]))
    S, Q, W = _window(data[100:])
    h, it = gauss_newton_solve(model, zs[100], S, Q, W, h0=1.0, max_iters=iters)
    assert abs(h - h_true) < 1e-8
    if h_true == 1.0:
        assert it == 1


def test_gauss_newton_insufficient_excitation(model):
    S = np.zeros((20, 1), complex)
    with pytest.raises(InsufficientExcitationError):
        gauss_newton_solve(model, np.zeros(2, complex), S, S.copy(), np.full(20, W0))


# ------------------------------------------------------------------- MHE
def test_mhe_warm_up_keeps_prior(model):
    buf = MheBuffer(model, 10, h0=0.99)
    data, _ = _data(model.css, lambda k: np.exp(0.01j), 10)
    for q, s, w in data:
        h, _ = mhe_update(buf, q, s, w)
        assert h == 0.99
    assert not buf.full
    with pytest.raises(ValueError):
        MheBuffer(model, 0)


def test_mhe_tracks_stationary_and_step(model):
    h1, h2 = np.exp(0.002j), np.exp(0.004j)
    data, _ = _data(model.css, lambda k: h1 if k < 3000 else h2, 6000)
    buf = MheBuffer(model, 50)
    hs = []
    for q, s, w in data:
        h, _ = mhe_update(buf, q, s, w)
        hs.append(h)
    assert abs(hs[2999] - h1) < 1e-6
    assert abs(hs[-1] - h2) < 1e-6


def test_mhe_and_rpem_agree(model):
    h_true = np.exp(0.003j)
    data, _ = _data(model.css, lambda k: h_true, 5000)
    buf = MheBuffer(model, 50)
    st = init_predictor(model, gamma=0.01)
    for q, s, w in data:
        hm, _ = mhe_update(buf, q, s, w)
        hr, st = rpem_step(st, q, s, w)
    assert abs(hm - hr) < 1e-5
