import numpy as np
import pytest

from llgrb.fem import nodal_modulus
from llgrb.metrics import unit_modulus_error
from llgrb.pod import pod_compute, project, snapshots_from_trajectories
from llgrb.problems import m0_relaxation
from llgrb.sgrbp import SgRbpSurrogate, sample_grid, sgrbp_build, sgrbp_eval
from llgrb.sparse_grid import SparseGridOp, build_index_set
from llgrb.tps import tps_run


@pytest.fixture(scope="module")
def surrogate(small, short_runs):
    mesh, grams, noise = small
    cfg, _, trajs = short_runs
    basis = pod_compute(snapshots_from_trajectories(trajs, grams, "m"), "m").take(6)
    op = SparseGridOp(build_index_set(4, 0.05))
    cache = {}
    return basis, op, cache, sgrbp_build(mesh, grams, noise, m0_relaxation, cfg, basis, op, cache)


def test_reproduces_projected_snapshots_at_nodes(surrogate, small, short_runs):
    mesh, grams, noise = small
    basis, op, _, sur = surrogate
    for j in (0, op.n_nodes - 1):
        hf = tps_run(mesh, grams, noise, m0_relaxation, op.nodes[j], short_runs[0])
        _, rec = project(basis, hf.m_hat.T)
        np.testing.assert_allclose(sgrbp_eval(sur, op.nodes[j]), rec.T, atol=1e-10)


def test_linear_in_node_data(surrogate, rng):
    _, op, _, sur = surrogate
    y = rng.standard_normal(4)
    other = SgRbpSurrogate(op, sur.phi, rng.standard_normal(sur.node_coeffs.shape), sur.times)
    mix = SgRbpSurrogate(op, sur.phi, 2 * sur.node_coeffs - 3 * other.node_coeffs, sur.times)
    np.testing.assert_allclose(sgrbp_eval(mix, y), 2 * sgrbp_eval(sur, y) - 3 * sgrbp_eval(other, y), atol=1e-12)


def test_output_not_unit_length(surrogate, small, rng):
    mesh, _, _, = small
    sur = surrogate[3]
    m = sgrbp_eval(sur, rng.standard_normal(4))[-1]
    assert np.abs(nodal_modulus(m) - 1).max() > 1e-6
    assert unit_modulus_error(mesh, m) > 0


def test_cache_reused_for_nested_grid(surrogate, small, short_runs):
    mesh, grams, noise = small
    _, op, cache, _ = surrogate
    before = len(cache)
    assert before == op.n_nodes
    finer = SparseGridOp(build_index_set(4, 0.02))
    sample_grid(mesh, grams, noise, m0_relaxation, short_runs[0], finer, cache)
    assert len(cache) == finer.n_nodes
    assert all(k in cache for k in op.node_keys)


def test_roundtrip(surrogate, tmp_path, rng):
    sur = surrogate[3]
    sur.save(tmp_path / "s")
    assert len(list((tmp_path / "s" / "nodes").glob("node_*.csv"))) == sur.grid_op.n_nodes
    back = SgRbpSurrogate.load(tmp_path / "s")
    y = rng.standard_normal(4)
    np.testing.assert_array_equal(sgrbp_eval(back, y), sgrbp_eval(sur, y))
