import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from llgrb.config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    dump_config,
    load_config,
    parse_config_text,
    stage_seed,
)
from llgrb.experiments import experiment_config


def test_defaults_valid():
    cfg = ExperimentConfig().validate()
    assert cfg.mesh.n_div == 8 and cfg.time.tau == 1e-3 and cfg.time.T == 0.5
    assert cfg.model.alpha == 1.4
    assert cfg.sampling.n_snapshots == 32 and cfg.sampling.n_test == 10


def test_parse_comments_and_duplicates():
    items = parse_config_text("# header\nmesh.n_div = 4  # coarse\n\ntime.T=0.1\n")
    assert items == {"mesh.n_div": "4", "time.T": "0.1"}
    with pytest.raises(ConfigError, match="mesh.n_div"):
        parse_config_text("mesh.n_div = 4\nmesh.n_div = 5\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("just words\n")


@pytest.mark.parametrize(
    "key, value, fragment",
    [
        ("mesh.n_div", "0", "mesh.n_div"),
        ("mesh.n_div", "four", "mesh.n_div"),
        ("time.tau", "0.3", "time.tau"),
        ("model.g_preset", "spiral", "model.g_preset"),
        ("online.variant", "OG-2x", "online.variant"),
        ("pod.eps_sq_v", "2", "pod.eps_sq_v"),
        ("nope.key", "1", "nope.key"),
    ],
)
def test_errors_name_the_field(key, value, fragment):
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
        load_config(overrides={key: value})


def test_eps_sq_sets_every_quantity():
    cfg = apply_overrides(ExperimentConfig(), {"pod.eps_sq": "1e-6"})
    assert cfg.pod.eps_sq_m == cfg.pod.eps_sq_v == cfg.pod.eps_sq_lambda == 1e-6


def test_overrides_do_not_mutate_base():
    base = ExperimentConfig()
    apply_overrides(base, {"mesh.n_div": "4", "online.dims": "3,6"})
    assert base.mesh.n_div == 8 and base.online.dims == (6, 12, 18, 24, 30)


@given(
    st.integers(1, 64),
    st.sampled_from([0.5, 0.25, 1.0]),
    st.integers(0, 2**31),
    st.lists(st.integers(1, 60), min_size=1, max_size=5),
    st.floats(1e-9, 0.5),
)
def test_dump_parse_roundtrip(n_div, T, seed, dims, eps):
    cfg = load_config(
        overrides={
            "mesh.n_div": str(n_div),
            "time.T": str(T),
            "sampling.seed": str(seed),
            "online.dims": ",".join(map(str, dims)),
            "pod.eps_sq_m": repr(eps),
        }
    )
    again = load_config(overrides=parse_config_text(dump_config(cfg)))
    assert again == cfg


def test_file_then_flags(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("mesh.n_div = 4\nsampling.seed = 3\n")
    cfg = load_config(path, {"sampling.seed": "9"})
    assert cfg.mesh.n_div == 4 and cfg.sampling.seed == 9


def test_presets():
    sw = experiment_config("switching")
    assert sw.time.T == 1.0 and sw.param.s == 100 and sw.model.hext_preset == "minus_ez"
    assert sw.sampling.n_test == 16
    sg = experiment_config("sg-conv", overrides={"param.s": "4"})
    assert sg.time.T == 0.2 and sg.param.s == 4


def test_stage_seeds_independent_and_stable():
    a = np.random.default_rng(stage_seed(0, "train-1")).standard_normal(4)
    b = np.random.default_rng(stage_seed(0, "test-1")).standard_normal(4)
    c = np.random.default_rng(stage_seed(0, "train-1")).standard_normal(4)
    d = np.random.default_rng(stage_seed(1, "train-1")).standard_normal(4)
    assert np.array_equal(a, c)
    assert not np.allclose(a, b) and not np.allclose(a, d)
