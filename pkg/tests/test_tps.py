import numpy as np
import pytest
import scipy.linalg as la

from llgrb.fem import assemble_constraint, nodal_modulus
from llgrb.fields import assemble_load, assemble_system_matrix
from llgrb.problems import m0_relaxation, m0_uniform, make_noise
from llgrb.tps import TpsConfig, Trajectory, infsup_constant, noise_values, tps_run


def test_config_step_count():
    cfg = TpsConfig(T=0.5, tau=1e-3)
    assert cfg.n_steps == 500
    assert cfg.times[-1] == pytest.approx(0.5)


def test_noise_values_zero_parameter():
    cfg = TpsConfig(T=0.1, tau=0.01)
    assert np.all(noise_values(np.zeros(3), cfg) == 0)
    w = noise_values([1.0], cfg)
    np.testing.assert_allclose(w, np.sqrt(0.1) * cfg.times / 0.1)


def test_unit_modulus_and_tangency(short_runs, small):
    mesh, grams, noise = small
    cfg, ys, trajs = short_runs
    for tr in trajs:
        dev = max(np.abs(nodal_modulus(m) - 1).max() for m in tr.m_hat)
        assert dev <= 1e-10
        for k, v in enumerate(tr.v):
            res = assemble_constraint(mesh, tr.m_hat[k]) @ v
            assert np.linalg.norm(res) <= 1e-8 * max(np.linalg.norm(v), 1e-300)


def test_step_solves_saddle_system(short_runs, small):
    mesh, grams, noise = small
    cfg, ys, trajs = short_runs
    tr = trajs[0]
    W = noise_values(ys[0], cfg)
    for k in (0, 4, 9):
        A = assemble_system_matrix(mesh, grams, tr.m_hat[k], cfg.alpha, cfg.tau)
        B = assemble_constraint(mesh, tr.m_hat[k])
        f = assemble_load(mesh, grams, noise, tr.m_hat[k], W[k], k * cfg.tau)
        # dense oracle for the same system
        K = np.block([[A.toarray(), B.T.toarray()], [B.toarray(), np.zeros((B.shape[0],) * 2)]])
        x = la.solve(K, np.concatenate([f, np.zeros(B.shape[0])]))
        np.testing.assert_allclose(tr.v[k], x[: len(f)], atol=1e-9)
        np.testing.assert_allclose(tr.m[k + 1], tr.m_hat[k] + cfg.tau * tr.v[k], atol=1e-15)


def test_deterministic(small):
    mesh, grams, noise = small
    cfg = TpsConfig(T=0.02, tau=5e-3)
    a = tps_run(mesh, grams, noise, m0_relaxation, [0.4, -1.0], cfg)
    b = tps_run(mesh, grams, noise, m0_relaxation, [0.4, -1.0], cfg)
    assert np.array_equal(a.m_hat, b.m_hat) and np.array_equal(a.lam, b.lam)


def test_uniform_state_is_stationary(small):
    mesh, grams, _ = small
    noise = make_noise(mesh, "uniform")
    tr = tps_run(mesh, grams, noise, m0_uniform, [0.0], TpsConfig(T=0.05, tau=5e-3))
    assert np.abs(tr.v).max() < 1e-12
    assert np.abs(tr.m_hat - tr.m_hat[0]).max() < 1e-12


def test_without_normalization_modulus_grows(small):
    mesh, grams, noise = small
    cfg = TpsConfig(T=0.05, tau=5e-3, normalize=False)
    tr = tps_run(mesh, grams, noise, m0_relaxation, [0.5], cfg)
    assert np.array_equal(tr.m, tr.m_hat)
    assert np.abs(nodal_modulus(tr.m[-1]) - 1).max() > 1e-4
    for k, v in enumerate(tr.v):
        assert np.linalg.norm(assemble_constraint(mesh, tr.m[k]) @ v) <= 1e-8 * np.linalg.norm(v)


def test_save_load_roundtrip(short_runs, tmp_path):
    tr = short_runs[2][0]
    tr.save(tmp_path / "t", {"n_div": 4})
    back = Trajectory.load(tmp_path / "t")
    for name in ("m", "m_hat", "v", "lam", "times"):
        np.testing.assert_array_equal(getattr(back, name), getattr(tr, name))


def test_infsup_dense_oracle(small, short_runs):
    mesh, grams, _ = small
    m = short_runs[2][1].m_hat[-1]
    B = assemble_constraint(mesh, m).toarray()
    S = B @ la.solve(grams.q_vec.toarray(), B.T)
    ref = np.sqrt(la.eigh(S, grams.mass_scalar.toarray(), eigvals_only=True)[0])
    assert infsup_constant(mesh, grams, m) == pytest.approx(ref, rel=1e-8)


def test_infsup_recorded_when_requested(small):
    mesh, grams, noise = small
    tr = tps_run(mesh, grams, noise, m0_relaxation, [0.2], TpsConfig(T=0.01, tau=5e-3), infsup=True)
    assert tr.infsup.shape == (2,) and np.all(tr.infsup > 0)
