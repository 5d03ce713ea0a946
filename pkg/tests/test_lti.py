import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from augsysid.core import IoDataset, LtiSS, make_window
from augsysid.lti import (ReconstructabilityMaps, UnobservableError, build_stacked, error_gain, left_inverse,
                          noiseless_maps, noisy_maps, reconstruct, shift_to_past_window)

from conftest import random_lti, scalar_ss


def trajectory(ss, rng, N=40, e_scale=0.0):
    u = rng.normal(size=(N, ss.nu))
    e = e_scale * rng.normal(size=(N, ss.ny))
    y, x = ss.simulate(u, rng.normal(size=ss.nx), e)
    return IoDataset(u, y, 1.0, x_true=x, e_true=e)


def test_build_stacked_scalar():
    ops = build_stacked(scalar_ss(), 1)
    assert np.array_equal(ops.O_n, [[0.5], [1.0]])
    assert np.array_equal(ops.T_n, [[0.0, 1.0], [0.0, 0.0]])
    assert np.array_equal(ops.r_n, [[0.0, 1.0]])
    assert ops.Lambda_n is None


def test_build_stacked_zero_gain():
    ops = build_stacked(scalar_ss(K=[[0.0]]), 1)
    assert np.array_equal(ops.A_pow_n, [[0.5]])
    assert np.array_equal(ops.Lambda_n, np.zeros((2, 2)))
    assert np.array_equal(ops.lambda_n, [[0.0, 0.0]])


def test_build_stacked_structure(rng):
    ss = random_lti(rng, 2, nu=2, ny=2, K=True)
    n = 3
    ops = build_stacked(ss, n)
    At = ss.A - ss.K @ ss.C
    Bt = ss.B - ss.K @ ss.D
    ny, nu = 2, 2
    for j in range(n + 1):
        assert np.allclose(ops.O_n[j * ny:(j + 1) * ny], ss.C @ np.linalg.matrix_power(At, n - j), atol=1e-14)
    for i in range(n + 1):
        for j in range(n + 1):
            T = ops.T_n[i * ny:(i + 1) * ny, j * nu:(j + 1) * nu]
            L = ops.Lambda_n[i * ny:(i + 1) * ny, j * ny:(j + 1) * ny]
            if j < i:
                assert not T.any() and not L.any()
            elif j == i:
                assert np.array_equal(T, ss.D) and not L.any()
            else:
                P = np.linalg.matrix_power(At, j - i - 1)
                assert np.allclose(T, ss.C @ P @ Bt, atol=1e-14)
                assert np.allclose(L, ss.C @ P @ ss.K, atol=1e-14)
    assert not ops.r_n[:, :nu].any() and not ops.lambda_n[:, :ny].any()
    assert np.allclose(ops.A_pow_n, np.linalg.matrix_power(At, n))


def test_left_inverse_examples():
    assert np.allclose(left_inverse(np.array([[0.5], [1.0]])), [[0.4, 0.8]], atol=1e-15)
    assert np.allclose(left_inverse(np.eye(3)), np.eye(3))
    with pytest.raises(UnobservableError) as exc:
        left_inverse(np.zeros((2, 1)))
    assert exc.value.rank == 0


def test_noiseless_maps_scalar():
    m = noiseless_maps(scalar_ss(), 1)
    assert np.allclose(m.W_y, [[0.2, 0.4]], atol=1e-15)
    assert np.allclose(m.W_u, [[0.0, 0.8]], atol=1e-15)


def test_noiseless_maps_deadbeat():
    ss = LtiSS([[0.0]], [[1.5]], [[1.0]])
    m = noiseless_maps(ss, 1)
    assert np.array_equal(m.W_y, [[0.0, 0.0]])
    assert np.array_equal(m.W_u, [[0.0, 1.5]])


def test_full_state_output_n0(rng):
    ss = LtiSS(rng.normal(size=(3, 3)) * 0.3, rng.normal(size=(3, 1)), np.eye(3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = noiseless_maps(ss, 0)
    assert np.allclose(m.W_y, np.eye(3)) and not m.W_u.any()
    ssk = LtiSS(ss.A, ss.B, ss.C, K=rng.normal(size=(3, 3)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mk = noisy_maps(ssk, 0)
    assert np.allclose(mk.W_y, np.eye(3)) and not mk.W_u.any()


def test_unobservable_propagates():
    ss = LtiSS(np.diag([0.5, 0.2]), np.ones((2, 1)), [[1.0, 0.0]])
    with pytest.raises(UnobservableError):
        noiseless_maps(ss, 3)


def test_unstable_warns():
    ss = LtiSS([[1.2]], [[1.0]], [[1.0]])
    with pytest.warns(RuntimeWarning, match="spectral radius"):
        m = noiseless_maps(ss, 1)
    assert m.warning is not None


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), nx=st.integers(1, 6), extra=st.integers(0, 6),
       nu=st.integers(1, 2), ny=st.integers(1, 2))
def test_exact_reconstruction_property(seed, nx, extra, nu, ny):
    rng = np.random.default_rng(seed)
    ss = random_lti(rng, nx, nu, ny)
    n = nx + min(extra, nx)
    d = trajectory(ss, rng, N=n + 15)
    m = noiseless_maps(ss, n)
    for k in range(n, len(d)):
        x_hat = reconstruct(m, make_window(d, k, n))
        assert np.linalg.norm(x_hat - d.x_true[k]) <= 1e-8 * max(1.0, np.linalg.norm(d.x_true[k]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), nx=st.integers(1, 5), extra=st.integers(0, 5))
def test_noisy_error_identity_property(seed, nx, extra):
    rng = np.random.default_rng(seed)
    ss = random_lti(rng, nx, 1, 1, K=True)
    n = nx + min(extra, nx)
    d = trajectory(ss, rng, N=n + 15, e_scale=0.3)
    m = noisy_maps(ss, n)
    G = error_gain(ss, n)
    for k in range(n, len(d)):
        w = make_window(d, k, n)
        e_stack = d.e_true[k - n:k + 1][::-1].reshape(-1)
        err = reconstruct(m, w) - d.x_true[k]
        assert np.linalg.norm(err - G @ e_stack) <= 1e-8 * max(1.0, np.linalg.norm(d.x_true[k]))


def test_noisy_scalar_identity(rng):
    ss = scalar_ss(K=[[0.3]])
    d = trajectory(ss, rng, N=30, e_scale=0.5)
    m = noisy_maps(ss, 2)
    G = error_gain(ss, 2)
    for k in range(2, 30):
        e_stack = d.e_true[k - 2:k + 1][::-1].reshape(-1)
        assert reconstruct(m, make_window(d, k, 2)) - d.x_true[k] == pytest.approx(G @ e_stack, abs=1e-12)


def test_zero_gain_reduction(rng):
    for _ in range(20):
        ss = random_lti(rng, int(rng.integers(1, 6)), 2, 2)
        ssk = LtiSS(ss.A, ss.B, ss.C, ss.D, K=np.zeros((ss.nx, 2)))
        for n in (ss.nx, ss.nx + 2):
            a, b = noiseless_maps(ss, n), noisy_maps(ssk, n)
            assert np.max(np.abs(a.W_y - b.W_y)) <= 1e-12
            assert np.max(np.abs(a.W_u - b.W_u)) <= 1e-12


def test_error_bound_non_increasing(rng):
    for _ in range(50):
        nx = int(rng.integers(1, 5))
        ss = random_lti(rng, nx, K=True)
        g = [np.linalg.norm(error_gain(ss, n), 2) for n in range(nx, 3 * nx + 2)]
        assert np.all(np.diff(g) <= 1e-12 * max(g))


def test_reconstruct_zero_and_mismatch():
    m = noiseless_maps(scalar_ss(), 1)
    d = IoDataset(np.zeros(3), np.zeros(3), 1.0)
    assert not reconstruct(m, make_window(d, 2, 1)).any()
    with pytest.raises(ValueError):
        reconstruct(m, make_window(d, 2, 2))


def test_shift_scalar_exact(rng):
    ss = scalar_ss()
    d = trajectory(ss, rng, N=30)
    m = shift_to_past_window(noiseless_maps(ss, 1), ss)
    for k in range(2, 30):
        w = make_window(d, k - 1, 1)
        assert reconstruct(m, w) == pytest.approx(d.x_true[k], abs=1e-12)


def test_shift_random_state_measured():
    ss = LtiSS(np.eye(2), np.zeros((2, 1)), np.eye(2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = shift_to_past_window(noiseless_maps(ss, 0), ss)
    assert np.array_equal(m.W_y, np.eye(2))


def test_shift_innovation_and_reduction(rng):
    ss = random_lti(rng, 3, 1, 1, K=True)
    n = 4
    d = trajectory(ss, rng, N=40, e_scale=0.2)
    m = shift_to_past_window(noisy_maps(ss, n), ss)
    G = error_gain(ss, n)
    At = ss.A - ss.K @ ss.C
    for k in range(n + 1, 40):
        # x_k - x_hat_k = At (x_{k-1} - x_hat_{k-1}) since e_{k-1} enters both exactly
        e_stack = d.e_true[k - 1 - n:k][::-1].reshape(-1)
        err = reconstruct(m, make_window(d, k - 1, n)) - d.x_true[k]
        assert np.allclose(err, At @ G @ e_stack, atol=1e-10)
    zero = LtiSS(ss.A, ss.B, ss.C, ss.D, K=np.zeros((3, 1)))
    a = shift_to_past_window(noiseless_maps(ss, n), ss)
    b = shift_to_past_window(noisy_maps(zero, n), zero)
    assert np.allclose(a.W_y, b.W_y, atol=1e-12) and np.allclose(a.W_u, b.W_u, atol=1e-12)


def test_maps_csv_roundtrip(tmp_path, rng):
    m = noisy_maps(random_lti(rng, 3, 2, 2, K=True), 4)
    m.to_csv(tmp_path / "m.csv")
    back = ReconstructabilityMaps.from_csv(tmp_path / "m.csv")
    assert np.array_equal(back.W_y, m.W_y) and np.array_equal(back.W_u, m.W_u)
    assert back.n == 4 and back.noisy
