import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given
from hypothesis import strategies as st

from llgrb.pod import (
    ReducedBasis,
    SnapshotSet,
    pod_compute,
    project,
    projection_error,
    snapshots_from_trajectories,
    truncate,
    truncation_rank,
)


@pytest.fixture(scope="module")
def m_pod(short_runs, small):
    _, grams, _ = small
    snaps = snapshots_from_trajectories(short_runs[2], grams, "m")
    return snaps, pod_compute(snaps, "m")


def test_snapshot_layout(short_runs, small):
    _, grams, _ = small
    cfg, _, trajs = short_runs
    for q, per in (("m", cfg.n_steps + 1), ("v", cfg.n_steps), ("lambda", cfg.n_steps)):
        s = snapshots_from_trajectories(trajs, grams, q)
        assert s.n_columns == per * len(trajs)
        assert s.labels[per] == (1, 0)
    assert snapshots_from_trajectories(trajs, grams, "lambda").gram is grams.mass_scalar


def test_optimality_identity(m_pod, short_runs):
    snaps, basis = m_pod
    tail = np.sqrt(np.cumsum((basis.singular_values**2)[::-1])[::-1])
    for J in range(1, basis.J + 1):
        err = projection_error(basis.take(J), short_runs[2], "m")
        ref = tail[J] if J < len(tail) else 0.0
        assert err == pytest.approx(ref, rel=1e-8, abs=1e-12 * basis.singular_values[0])


def test_method_of_snapshots_oracle(small, rng):
    _, grams, _ = small
    Q = grams.q_vec.toarray()
    S = rng.standard_normal((Q.shape[0], 20))
    basis = pod_compute(SnapshotSet(S, grams.q_vec, []))
    # correlation matrix route: eigen-pairs of S^T Q S / N
    C = S.T @ Q @ S / 20
    lam, V = la.eigh(C)
    lam, V = lam[::-1], V[:, ::-1]
    np.testing.assert_allclose(basis.singular_values**2, lam, rtol=1e-10)
    phi_ref = S @ V / np.sqrt(20 * lam)
    # modes agree up to sign
    signs = np.sign(np.sum(phi_ref * (Q @ basis.phi), axis=0))
    np.testing.assert_allclose(basis.phi, phi_ref * signs, atol=1e-8)


def test_orthonormality(m_pod, short_runs, small):
    _, grams, _ = small
    assert m_pod[1].orthonormality_defect() <= 1e-8
    lam = pod_compute(snapshots_from_trajectories(short_runs[2], grams, "lambda"))
    assert lam.orthonormality_defect() <= 1e-8


@given(st.integers(1, 8), st.integers(0, 10_000))
def test_random_competitor_is_not_better(m_pod, J, seed):
    snaps, basis = m_pod
    Q = snaps.gram
    X = np.random.default_rng(seed).standard_normal((Q.shape[0], J))
    Rq = la.cholesky(Q.toarray(), lower=False)
    Qf, _ = np.linalg.qr(Rq @ X)
    competitor = ReducedBasis(la.solve_triangular(Rq, Qf, lower=False), basis.singular_values, Q)

    def err(b):
        _, rec = project(b, snaps.data)
        D = snaps.data - rec
        return np.sum(D * (Q @ D))

    assert err(competitor) >= err(basis.take(J)) * (1 - 1e-10)


def test_rank_cutoff_drops_duplicate_directions(small, rng):
    _, grams, _ = small
    col = rng.standard_normal((grams.q_vec.shape[0], 1))
    basis = pod_compute(SnapshotSet(np.hstack([col, 2 * col, -col]), grams.q_vec, []))
    assert basis.J == 1 and basis.rank == 1


@given(st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=40), st.floats(1e-9, 0.9))
def test_truncation_criterion(sv, eps):
    sv = np.sort(np.array(sv))[::-1]
    J = truncation_rank(sv, eps)
    s2 = sv**2
    assert s2[:J].sum() / s2.sum() >= (1 - eps) * (1 - 1e-13)
    if J > 1:
        assert s2[: J - 1].sum() / s2.sum() < 1 - eps


def test_truncate_and_validation(m_pod):
    b = truncate(m_pod[1], 1e-3)
    assert b.J == truncation_rank(m_pod[1].singular_values, 1e-3)
    with pytest.raises(ValueError):
        truncation_rank([1.0], 0.0)
    with pytest.raises(ValueError):
        pod_compute(SnapshotSet(np.zeros((3, 0)), np.eye(3), []))


def test_save_load(m_pod, tmp_path):
    basis = m_pod[1]
    basis.save(tmp_path / "b", {"n_div": 4})
    back = ReducedBasis.load(tmp_path / "b", basis.gram)
    np.testing.assert_array_equal(back.phi, basis.phi)
    np.testing.assert_array_equal(back.singular_values, basis.singular_values)
    assert back.quantity == "m"
