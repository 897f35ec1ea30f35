import numpy as np
import pytest

from bridgectl import (
    ConfigurationError,
    SimulationBlowup,
    TimeGrid,
    sample_noise,
    simulate_forward,
)
from bridgectl.forward import perturbation_state, propagate_covariance, step_kernel
from bridgectl.spectral import assemble_multiplication_operator


def ito_variance_oracle(a_k, t):
    """Independent quadrature of int_0^t exp(2 a s) ds."""
    from scipy.integrate import quad

    return quad(lambda s: np.exp(2.0 * a_k * s), 0.0, t, epsabs=1e-13)[0]


def test_same_seed_is_bit_identical(model8):
    grid = TimeGrid(1.0, 20)
    a = sample_noise(grid, 8, 16, seed=42)
    b = sample_noise(grid, 8, 16, seed=42)
    assert np.array_equal(a.dW, b.dW) and np.array_equal(a.dWt, b.dWt)
    c = sample_noise(grid, 8, 16, seed=43)
    assert not np.array_equal(a.dW, c.dW)


def test_noise_rejects_empty():
    grid = TimeGrid(1.0, 10)
    with pytest.raises(ConfigurationError):
        sample_noise(grid, 8, 0, seed=1)


def test_increment_statistics():
    grid = TimeGrid(1.0, 100)
    noise = sample_noise(grid, 2, 1000, seed=7)
    h = grid.h
    draws = noise.dW[:, :, 0].ravel()  # 1e5 draws
    assert abs(np.mean(draws)) <= 3 * np.sqrt(h / draws.size)
    # independence of the two channels
    x = noise.dW[:, :, 0].ravel() / np.sqrt(h)
    y = noise.dWt.ravel() / np.sqrt(h)
    assert abs(np.corrcoef(x, y)[0, 1]) <= 3 / np.sqrt(x.size)
    # approximate whiteness across steps
    lag1 = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert abs(lag1) <= 3 / np.sqrt(x.size)


def test_pure_semigroup_path(model8, lifts8):
    grid = TimeGrid(1.0, 50)
    noise = sample_noise(grid, 8, 3, seed=0)
    x = np.zeros(8)
    x[1] = 1.0
    ens = simulate_forward(model8, lifts8, x, None, None, noise,
                           g_matrix=None, boundary=False)
    assert ens.states[0, -1, 1] == pytest.approx(np.exp(-1.0), abs=1e-12)
    assert np.max(np.abs(ens.states[:, -1, [0, 2, 3, 4, 5, 6, 7]])) == 0.0


def test_distributed_noise_mode_variances(model8, lifts8):
    grid = TimeGrid(1.0, 100)
    noise = sample_noise(grid, 8, 10000, seed=11)
    ens = simulate_forward(model8, lifts8, np.zeros(8), None, None, noise,
                           g_matrix=np.eye(8), boundary=False)
    for k in [0, 1, 2, 5]:
        for m in [50, 100]:
            t = grid.nodes[m]
            sample_var = np.var(ens.states[:, m, k], ddof=1)
            exact = ito_variance_oracle(model8.eigenvalues[k], t)
            if k > 0:  # the quadrature oracle reproduces the closed form
                assert exact == pytest.approx((1 - np.exp(-2 * k**2 * t)) / (2 * k**2),
                                              rel=1e-8)
            se = sample_var * np.sqrt(2.0 / (noise.n_paths - 1))
            assert abs(sample_var - exact) <= 3 * se


def test_boundary_noise_mode_variances(model8, lifts8):
    grid = TimeGrid(1.0, 100)
    noise = sample_noise(grid, 8, 10000, seed=13)
    ens = simulate_forward(model8, lifts8, np.zeros(8), None, None, noise,
                           g_matrix=None, boundary=True)
    for k in [0, 1, 3]:
        t = grid.horizon
        weight = 2 / np.pi if k else 1 / np.pi
        exact = weight * ito_variance_oracle(model8.eigenvalues[k], t)
        sample_var = np.var(ens.states[:, -1, k], ddof=1)
        se = sample_var * np.sqrt(2.0 / (noise.n_paths - 1))
        assert abs(sample_var - exact) <= 3 * se


def test_blowup_reports_location(model8, lifts8, op8):
    grid = TimeGrid(1.0, 10)
    noise = sample_noise(grid, 8, 4, seed=3)

    def exploding(m, X):
        return np.full((X.shape[0], 10), np.inf)

    with pytest.raises(SimulationBlowup) as err, np.errstate(invalid="ignore"):
        simulate_forward(model8, lifts8, np.zeros(8), exploding, None, noise,
                         op=op8, g_matrix=None, boundary=False)
    payload = err.value.payload()
    assert set(payload) == {"step", "path", "mode"}


def test_perturbation_state_cases(model8, lifts8, op8):
    grid = TimeGrid(1.0, 4)
    zero = np.zeros((5, 10))
    assert np.array_equal(
        perturbation_state(model8, lifts8, zero, grid, op=op8), np.zeros((5, 8)))
    dv = np.zeros((5, 10))
    dv[:, 8] = 1.0  # left boundary direction
    out = perturbation_state(model8, lifts8, dv, grid, op=op8)
    h = grid.h
    a = model8.eigenvalues
    phi = np.where(a == 0, h, np.expm1(a * h) / np.where(a == 0, 1.0, a))
    assert np.allclose(out[1], phi * lifts8.e1, rtol=1e-14)
    # linearity
    big = perturbation_state(model8, lifts8, 3.5 * dv, grid, op=op8)
    assert np.allclose(big, 3.5 * out, rtol=1e-12)


def test_affine_response_in_control(model8, lifts8, op8, rng):
    grid = TimeGrid(0.5, 40)
    noise = sample_noise(grid, 8, 6, seed=21)
    u = rng.normal(size=(41, 10))
    dv = rng.normal(size=(41, 10))
    base = simulate_forward(model8, lifts8, np.ones(8), u, None, noise,
                            op=op8, g_matrix=np.eye(8), boundary=True)
    shifted = simulate_forward(model8, lifts8, np.ones(8), u + dv, None, noise,
                               op=op8, g_matrix=np.eye(8), boundary=True)
    pert = perturbation_state(model8, lifts8, dv, grid, op=op8)
    gap = np.max(np.abs(shifted.states - base.states - pert[None, :, :]))
    assert gap <= 1e-10


def test_replay_is_bit_identical(model8, lifts8):
    grid = TimeGrid(1.0, 30)
    for _ in range(2):
        noise = sample_noise(grid, 8, 8, seed=99)
        ens = simulate_forward(model8, lifts8, np.ones(8), None, None, noise,
                               g_matrix=np.eye(8), boundary=True)
        try:
            previous
        except NameError:
            previous = ens.states
        else:
            assert np.array_equal(previous, ens.states)


def test_weak_error_halves_with_step(model8, lifts8):
    # non-diagonal noise weight: the frozen-operator sampling rule is first
    # order, so halving the step should cut the variance defect by ~2.
    # The scheme's second moments are propagated exactly (no Monte Carlo).
    G = assemble_multiplication_operator(model8, lambda xi: 1.0 + 0.8 * np.sin(xi))
    t_final = 0.5
    k = 1
    exact = (G @ G.T)[k, k] * ito_variance_oracle(model8.eigenvalues[k], t_final)
    errors = []
    for n_steps in (16, 32, 64):
        grid = TimeGrid(t_final, n_steps)
        kernel = step_kernel(model8, grid, g_matrix=G, lifts=None, boundary=False)
        cov = propagate_covariance(model8, grid, kernel)
        errors.append(abs(cov[k, k] - exact))
    assert errors[0] / errors[1] >= 1.7
    assert errors[1] / errors[2] >= 1.7
