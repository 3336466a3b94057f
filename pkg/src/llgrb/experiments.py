"""Preset experiment pipelines writing CSV outputs plus a manifest."""

from __future__ import annotations

import hashlib
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__, io
from .config import ExperimentConfig, dump_config, load_config, stage_seed
from .fem import GramSet, TriMesh, assemble_gram, build_structured_mesh, l2_project, prolongate
from .fields import NoiseModel
from .metrics import (
    galerkin_pod_error,
    histogram,
    HIST_EDGES,
    physical_diagnostics,
    trajectory_error,
    write_metric_csv,
    average_mz,
)
from .noise import sample_parameters, write_parameters_csv
from .pod import (
    pod_compute,
    projection_error,
    snapshots_from_trajectories,
    truncation_rank,
)
from .problems import M0_PRESETS, make_noise
from .rom import build_rom_spaces, rom_run, variant_sizes, VARIANTS
from .sgrbp import sgrbp_build, sgrbp_eval
from .sparse_grid import SparseGridOp, build_index_set
from .tps import SolverError, TpsConfig, tps_run

__all__ = [
    "StageError",
    "Problem",
    "make_problem",
    "EXPERIMENTS",
    "PRESETS",
    "experiment_config",
    "run_experiment",
    "compute_bases",
    "variant_study",
    "tau_study",
    "h_study",
    "sg_study",
]

log = logging.getLogger(__name__)

PRESETS = {
    "relax-1d": {},
    "relax-nd": {},
    "sg-conv": {"time.T": "0.2", "param.s": "10", "sampling.n_test": "30"},
    "switching": {
        "time.T": "1.0",
        "param.s": "100",
        "model.m0_preset": "switching",
        "model.g_preset": "switching",
        "model.hext_preset": "minus_ez",
        "pod.eps_sq": "1e-6",
        "online.variant": "SS-OG-1x",
        "sampling.n_test": "16",
    },
}

ND_DIMS = (1, 10, 100)


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage
        self.cause = exc


@contextmanager
def stage(name: str, out: Path | None = None):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        if out is not None:
            io.write_json(out / "status.json", {"status": "failed", "stage": name, "error": str(exc)})
        raise StageError(name, exc) from exc


@dataclass
class Problem:
    mesh: TriMesh
    grams: GramSet
    noise: NoiseModel
    m0: np.ndarray
    tps: TpsConfig

    def with_tau(self, tau: float) -> TpsConfig:
        return TpsConfig(self.tps.alpha, self.tps.T, tau, self.tps.normalize)

    def solve(self, y, tau: float | None = None):
        cfg = self.tps if tau is None else self.with_tau(tau)
        return tps_run(self.mesh, self.grams, self.noise, self.m0, y, cfg)


def make_problem(cfg: ExperimentConfig, n_div: int | None = None) -> Problem:
    mesh = build_structured_mesh(n_div or cfg.mesh.n_div)
    grams = assemble_gram(mesh)
    noise = make_noise(mesh, cfg.model.g_preset, cfg.model.hext_preset)
    m0 = l2_project(mesh, grams, M0_PRESETS[cfg.model.m0_preset])
    return Problem(mesh, grams, noise, m0, TpsConfig(cfg.model.alpha, cfg.time.T, cfg.time.tau))


def experiment_config(name: str, path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the experiment preset, then the config file, then explicit overrides."""
    if name not in PRESETS:
        raise KeyError(f"unknown experiment {name!r}; expected one of {sorted(PRESETS)}")
    base = load_config(overrides=PRESETS[name]) if PRESETS[name] else ExperimentConfig()
    return load_config(path, overrides, base=base)


# ---------------------------------------------------------------- building blocks


def sample_sets(cfg: ExperimentConfig, s: int | None = None):
    s = s or cfg.param.s
    y_train = sample_parameters(s, cfg.sampling.n_snapshots, stage_seed(cfg.sampling.seed, f"train-{s}"))
    y_test = sample_parameters(s, cfg.sampling.n_test, stage_seed(cfg.sampling.seed, f"test-{s}"))
    return y_train, y_test


def compute_bases(problem: Problem, trajectories) -> dict:
    return {
        q: pod_compute(snapshots_from_trajectories(trajectories, problem.grams, q), q)
        for q in ("m", "v", "lambda")
    }


def truncated_dims(bases: dict, cfg: ExperimentConfig) -> dict:
    eps = {"m": cfg.pod.eps_sq_m, "v": cfg.pod.eps_sq_v, "lambda": cfg.pod.eps_sq_lambda}
    return {q: min(truncation_rank(b.singular_values, eps[q]), b.J) for q, b in bases.items()}


def _rom_batch(problem: Problem, spaces, ys, tau, init_space):
    cfg = problem.with_tau(tau)
    return [rom_run(problem.mesh, problem.grams, problem.noise, spaces, problem.m0, y, cfg, init_space) for y in ys]


def variant_study(problem, bases, test, y_test, dims, init_space, m_dim, variants=VARIANTS) -> list:
    """Rows ``(dim, metric, variant, value)`` of online error and minimum inf-sup per step."""
    rows = []
    for variant in variants:
        for J in dims:
            try:
                R, _, _ = variant_sizes(variant, J)
                spaces = build_rom_spaces(
                    bases["v"], bases["lambda"], bases["m"], variant, J, problem.mesh, problem.grams, m_dim
                )
            except ValueError as exc:
                log.warning("skipping %s at J=%d: %s", variant, J, exc)
                continue
            rows += [(J, "dim_v", variant, spaces.dim_v), (J, "dim_lambda", variant, spaces.dim_lam)]
            try:
                roms = _rom_batch(problem, spaces, y_test, problem.tps.tau, init_space)
            except SolverError as exc:
                log.warning("%s", exc)
                rows += [(J, "galerkin_error", variant, float("nan")), (J, "min_infsup", variant, float("nan"))]
                continue
            rows.append((J, "galerkin_error", variant, galerkin_pod_error(test, roms, problem.grams)))
            rows.append((J, "min_infsup", variant, min(float(r.infsup.min()) for r in roms)))
    return rows


def tau_study(problem, bases, y_test, taus, tau_ref, J, init_space, m_dim, variants=("OG-3x",)) -> list:
    """Online error against a finer-step high-fidelity reference, for several online steps."""
    refs = [problem.solve(y, tau_ref) for y in y_test]
    rows = []
    for variant in variants:
        spaces = build_rom_spaces(bases["v"], bases["lambda"], bases["m"], variant, J, problem.mesh, problem.grams, m_dim)
        for tau in taus:
            k = int(round(tau / tau_ref))
            if abs(k * tau_ref - tau) > 1e-12 * tau:
                raise ValueError(f"online step {tau} is not a multiple of the reference step {tau_ref}")
            roms = _rom_batch(problem, spaces, y_test, tau, init_space)
            rep = trajectory_error(
                [r.m_hat[::k] for r in refs], [r.m_hat for r in roms], problem.grams.q_vec, steps=slice(1, None)
            )
            rows.append((tau, "galerkin_error", variant, rep.aggregate))
            rows.append((tau, "min_infsup", variant, min(float(r.infsup.min()) for r in roms)))
    return rows


def h_study(cfg: ExperimentConfig, n_divs, ref_n_div: int, y) -> list:
    """High-fidelity H^1 error at final time against a fine mesh, plus minimum inf-sup."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ref = make_problem(cfg, ref_n_div)
    m_ref = ref.solve(y).m_hat[-1]
    rows = []
    for n in n_divs:
        p = make_problem(cfg, n)
        tr = tps_run(p.mesh, p.grams, p.noise, p.m0, y, p.tps, infsup=True)
        d = m_ref - prolongate(p.mesh, ref.mesh, tr.m_hat[-1])
        rows.append((1.0 / n, "hf_error", "HF", float(np.sqrt(d @ (ref.grams.q_vec @ d)))))
        rows.append((1.0 / n, "min_infsup", "HF", float(tr.infsup.min())))
    return rows


def sg_study(problem, bases, test, y_test, thresholds, rb_eps, degree=1, cache=None) -> list:
    """SG-RBP error against test trajectories for several grids and basis tolerances."""
    cache = {} if cache is None else cache
    s = len(y_test[0])
    rows = []
    for eps in thresholds:
        op = SparseGridOp(build_index_set(s, eps, degree), degree)
        n = op.n_nodes
        rows.append((n, "active_dims", "", op.index_set.active_dimensions))
        rows.append((n, "threshold", "", eps))
        for tol in rb_eps:
            K = truncation_rank(bases["m"].singular_values, tol)
            basis = bases["m"].take(min(K, bases["m"].J))
            sur = sgrbp_build(problem.mesh, problem.grams, problem.noise, problem.m0, problem.tps, basis, op, cache)
            approx = [sgrbp_eval(sur, y) for y in y_test]
            err = trajectory_error([t.m_hat for t in test], approx, problem.grams.q_vec, steps=slice(1, None))
            proj = [(basis.phi @ (basis.phi.T @ (problem.grams.q_vec @ t.m_hat.T))).T for t in test]
            floor = trajectory_error([t.m_hat for t in test], proj, problem.grams.q_vec, steps=slice(1, None))
            rows += [
                (n, "sg_rbp_error", f"{tol:g}", err.aggregate),
                (n, "rb_floor", f"{tol:g}", floor.aggregate),
                (n, "K", f"{tol:g}", basis.J),
            ]
    return rows


# ---------------------------------------------------------------- experiments


def _singular_rows(bases: dict, tag: str = "") -> list:
    return [
        (j + 1, f"sigma_{q}", tag, s) for q, b in bases.items() for j, s in enumerate(b.singular_values)
    ]


def _projection_rows(bases: dict, test, max_dim: int, tag: str = "") -> list:
    rows = []
    for q, b in bases.items():
        for J in range(1, min(max_dim, b.J) + 1):
            rows.append((J, f"projection_error_{q}", tag, projection_error(b.take(J), test, q)))
    return rows


def _offline(cfg, out, problem, s=None, label=""):
    y_train, y_test = sample_sets(cfg, s)
    with stage(f"snapshots{label}", out):
        train = [problem.solve(y) for y in y_train]
        write_parameters_csv(out / f"train_parameters{label}.csv", y_train)
    with stage(f"test-samples{label}", out):
        test = [problem.solve(y) for y in y_test]
        write_parameters_csv(out / f"test_parameters{label}.csv", y_test)
    with stage(f"pod{label}", out):
        bases = compute_bases(problem, train)
    return y_train, y_test, train, test, bases


def relax_1d(cfg: ExperimentConfig, out: Path) -> dict:
    problem = make_problem(cfg)
    _, y_test, _, test, bases = _offline(cfg, out, problem)
    dims = truncated_dims(bases, cfg)
    io.write_rows_csv(out / "dimensions.csv", ["quantity", "J"], sorted(dims.items()))
    write_metric_csv(out / "singular_values.csv", "index", _singular_rows(bases))
    with stage("projection-error", out):
        write_metric_csv(out / "projection_error.csv", "J", _projection_rows(bases, test, max(cfg.online.dims)))
    with stage("variants", out):
        rows = variant_study(problem, bases, test, y_test, cfg.online.dims, cfg.online.init_space, dims["m"])
        write_metric_csv(out / "variants.csv", "J", rows)
    with stage("tau-refinement", out):
        rows = tau_study(
            problem, bases, y_test, cfg.online.taus, cfg.online.tau_ref, cfg.online.tau_J,
            cfg.online.init_space, dims["m"], variants=("OG-3x", "SS-OG-3x"),
        )
        write_metric_csv(out / "tau_refinement.csv", "tau", rows)
    with stage("h-refinement", out):
        rows = h_study(cfg, cfg.href.n_divs, cfg.href.ref_n_div, [cfg.href.y] * cfg.param.s)
        write_metric_csv(out / "h_refinement.csv", "h", rows)
    return {"dims": dims}


def relax_nd(cfg: ExperimentConfig, out: Path) -> dict:
    problem = make_problem(cfg)
    sv_rows, pe_rows = [], []
    for s in ND_DIMS:
        _, _, _, test, bases = _offline(cfg, out, problem, s, f"_s{s}")
        sv_rows += _singular_rows(bases, f"s={s}")
        with stage(f"projection-error_s{s}", out):
            pe_rows += _projection_rows(bases, test, max(cfg.online.dims), f"s={s}")
    write_metric_csv(out / "singular_values.csv", "index", sv_rows)
    write_metric_csv(out / "projection_error.csv", "J", pe_rows)
    return {}


def sg_conv(cfg: ExperimentConfig, out: Path) -> dict:
    problem = make_problem(cfg)
    _, y_test, _, test, bases = _offline(cfg, out, problem)
    write_metric_csv(out / "singular_values.csv", "index", _singular_rows(bases))
    with stage("sparse-grid", out):
        rows = sg_study(problem, bases, test, y_test, cfg.sg.thresholds, cfg.sg.rb_eps_sq, cfg.sg.degree)
        write_metric_csv(out / "sg_convergence.csv", "n_nodes", rows)
    return {}


def _grid_near(s: int, target: int, degree: int, thresholds) -> SparseGridOp:
    """Grid from ``thresholds`` whose node count is closest to ``target`` (ties: fewer nodes)."""
    ops = [SparseGridOp(build_index_set(s, eps, degree), degree) for eps in sorted(set(thresholds))]
    return min(ops, key=lambda op: (abs(op.n_nodes - target), op.n_nodes))


def switching(cfg: ExperimentConfig, out: Path) -> dict:
    problem = make_problem(cfg)
    _, y_test, _, test, bases = _offline(cfg, out, problem)
    dims = truncated_dims(bases, cfg)
    io.write_rows_csv(out / "dimensions.csv", ["quantity", "J"], sorted(dims.items()))
    write_metric_csv(out / "singular_values.csv", "index", _singular_rows(bases))
    mz = [average_mz(problem.grams, t.m_hat[-1]) for t in test]
    io.write_rows_csv(out / "final_mz.csv", ["sample", "avg_mz"], list(enumerate(mz)))
    counts = histogram(mz)
    io.write_rows_csv(
        out / "mz_histogram.csv", ["bin_lo", "bin_hi", "count"],
        [(HIST_EDGES[i], HIST_EDGES[i + 1], int(c)) for i, c in enumerate(counts)],
    )
    y0, hf = y_test[0], test[0]
    with stage("pod-tps", out):
        J = min(dims["v"], bases["lambda"].J)
        spaces = build_rom_spaces(
            bases["v"], bases["lambda"], bases["m"], cfg.online.variant, J, problem.mesh, problem.grams, dims["m"]
        )
        rom = rom_run(problem.mesh, problem.grams, problem.noise, spaces, problem.m0, y0, problem.tps, cfg.online.init_space)
    with stage("sg-rbp", out):
        op = _grid_near(cfg.param.s, cfg.sampling.n_snapshots, cfg.sg.degree, cfg.sg.thresholds + (cfg.sg.threshold,))
        sur = sgrbp_build(
            problem.mesh, problem.grams, problem.noise, problem.m0, problem.tps, bases["m"].take(dims["m"]), op
        )
        sg = sgrbp_eval(sur, y0)
    rows = []
    for n, t in enumerate(problem.tps.times):
        for method, m in (("HF", hf.m_hat[n]), ("POD-TPS", rom.m[n]), ("SG-RBP", sg[n])):
            um, de, az = physical_diagnostics(problem.mesh, problem.grams, m)
            d = hf.m_hat[n] - m
            rows += [
                (t, "unit_modulus_error", method, um),
                (t, "dirichlet_energy", method, de),
                (t, "avg_mz", method, az),
                (t, "h1_error", method, float(np.sqrt(d @ (problem.grams.q_vec @ d)))),
            ]
    write_metric_csv(out / "time_metrics.csv", "t", rows)
    return {"sg_nodes": op.n_nodes, "J": J, "final_mz": mz}


EXPERIMENTS: dict[str, Callable[[ExperimentConfig, Path], dict]] = {
    "relax-1d": relax_1d,
    "relax-nd": relax_nd,
    "sg-conv": sg_conv,
    "switching": switching,
}


def run_experiment(name: str, out, cfg: ExperimentConfig | None = None, input_text: str = "") -> dict:
    """Run one preset experiment into ``out`` and write ``manifest.json``."""
    cfg = cfg or experiment_config(name)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = dump_config(cfg)
    io.atomic_write_text(out / "config.txt", resolved)
    summary = EXPERIMENTS[name](cfg, out)
    outputs = sorted(p for p in out.rglob("*") if p.is_file() and p.name not in ("manifest.json", "status.json"))
    io.write_json(
        out / "manifest.json",
        {
            "experiment": name,
            "version": __version__,
            "config": resolved.splitlines(),
            "input_hash": hashlib.sha256((resolved + input_text).encode()).hexdigest(),
            "outputs": {str(p.relative_to(out)): io.hash_files([p]) for p in outputs},
        },
    )
    io.write_json(out / "status.json", {"status": "ok"})
    return summary
