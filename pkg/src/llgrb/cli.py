"""Command line entry points for each pipeline stage and the preset experiments."""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np
import scipy.linalg as la

from . import __version__, io
from .config import ConfigError, ExperimentConfig, dump_config, load_config, stage_seed
from .experiments import EXPERIMENTS, StageError, experiment_config, make_problem, run_experiment
from .metrics import galerkin_pod_error, physical_diagnostics, trajectory_error
from .noise import read_parameters_csv, sample_parameters, write_parameters_csv
from .pod import ReducedBasis, pod_compute, snapshots_from_trajectories, truncation_rank
from .rom import RomTrajectory, build_rom_spaces, rom_run
from .sgrbp import sgrbp_build, sgrbp_eval
from .sparse_grid import IndexSetOverflow, SparseGridOp, build_index_set
from .tps import SolverError, Trajectory

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("llgrb")


class MissingInput(FileNotFoundError):
    pass


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingInput(f"missing {what}: expected {path}")
    return path


def _overrides(args) -> dict:
    items = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        items[k.strip()] = v.strip()
    for flag, key in (("seed", "sampling.seed"), ("n_div", "mesh.n_div"), ("eps_sq", "pod.eps_sq"),
                      ("variant", "online.variant"), ("threshold", "sg.threshold")):
        val = getattr(args, flag, None)
        if val is not None:
            items[key] = str(val)
    return items


def _config(args, upstream: Path | None = None) -> ExperimentConfig:
    """Config file (or the upstream stage's resolved config) plus flag overrides."""
    path = args.config
    if path is None and upstream is not None and (upstream / "config.txt").exists():
        path = upstream / "config.txt"
    return load_config(path, _overrides(args))


def _manifest(out: Path, cmd: str, cfg: ExperimentConfig, inputs=()) -> None:
    resolved = dump_config(cfg)
    io.atomic_write_text(out / "config.txt", resolved)
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    in_files = sorted(p for d in inputs for p in Path(d).rglob("*.csv"))
    io.write_json(out / "manifest.json", {
        "command": cmd,
        "version": __version__,
        "config": resolved.splitlines(),
        "input_hash": hashlib.sha256((resolved + (io.hash_files(in_files) if in_files else "")).encode()).hexdigest(),
        "outputs": {str(p.relative_to(out)): io.hash_files([p]) for p in files},
    })


def _params(args, cfg: ExperimentConfig, role: str) -> np.ndarray:
    if getattr(args, "params", None):
        ys = read_parameters_csv(_require(Path(args.params), "parameter file"))
        if ys.shape[1] != cfg.param.s:
            raise ConfigError(f"param.s: parameter file has {ys.shape[1]} columns, config says {cfg.param.s}")
        return ys
    count = args.count or (cfg.sampling.n_snapshots if role == "train" else cfg.sampling.n_test)
    return sample_parameters(cfg.param.s, count, stage_seed(cfg.sampling.seed, f"{role}-{cfg.param.s}"))


def _sample_dirs(d: Path) -> list[Path]:
    dirs = sorted(p for p in d.glob("sample_*") if p.is_dir())
    if not dirs:
        raise MissingInput(f"missing trajectories: expected {d}/sample_0000/")
    return dirs


# ------------------------------------------------------------------ commands


def cmd_hf_solve(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    problem = make_problem(cfg)
    ys = _params(args, cfg, args.role)
    write_parameters_csv(out / "parameters.csv", ys)
    for j, y in enumerate(ys):
        try:
            tr = problem.solve(y)
        except SolverError as exc:
            raise SolverError(f"sample {j}: {exc}") from exc
        tr.save(out / f"sample_{j:04d}", {"n_div": cfg.mesh.n_div, "tau": cfg.time.tau, "T": cfg.time.T,
                                          "alpha": cfg.model.alpha, "s": cfg.param.s, "seed": cfg.sampling.seed})
    _manifest(out, "hf-solve", cfg)


def cmd_offline_pod(args) -> None:
    snaps = Path(args.snapshots)
    cfg = _config(args, snaps)
    out = Path(args.out)
    problem = make_problem(cfg)
    trajs = [Trajectory.load(d) for d in _sample_dirs(snaps)]
    eps = {"m": cfg.pod.eps_sq_m, "v": cfg.pod.eps_sq_v, "lambda": cfg.pod.eps_sq_lambda}
    dims = {}
    for q in ("m", "v", "lambda"):
        basis = pod_compute(snapshots_from_trajectories(trajs, problem.grams, q), q)
        dims[q] = min(truncation_rank(basis.singular_values, eps[q]), basis.J)
        basis.save(out / q, {"gram": "mass" if q == "lambda" else "h1", "n_div": cfg.mesh.n_div,
                             "eps_sq": eps[q], "J_truncated": dims[q]})
    io.write_rows_csv(out / "dimensions.csv", ["quantity", "eps_sq", "J"], [(q, eps[q], dims[q]) for q in dims])
    _manifest(out, "offline-pod", cfg, [snaps])


def _load_bases(d: Path, problem) -> dict:
    grams = {"m": problem.grams.q_vec, "v": problem.grams.q_vec, "lambda": problem.grams.mass_scalar}
    return {q: ReducedBasis.load(_require(d / q, f"{q} basis"), g) for q, g in grams.items()}


def _dims(d: Path) -> dict:
    return {r["quantity"]: int(r["J"]) for r in io.read_rows_csv(_require(d / "dimensions.csv", "basis dimensions"))}


def cmd_online_rom(args) -> None:
    bdir = Path(args.bases)
    cfg = _config(args, bdir)
    out = Path(args.out)
    problem = make_problem(cfg)
    bases, dims = _load_bases(bdir, problem), _dims(bdir)
    J = args.J or dims["v"]
    spaces = build_rom_spaces(bases["v"], bases["lambda"], bases["m"], cfg.online.variant, J,
                              problem.mesh, problem.grams, dims["m"])
    ys = _params(args, cfg, args.role)
    write_parameters_csv(out / "parameters.csv", ys)
    tcfg = problem.with_tau(cfg.time.tau_online)
    for j, y in enumerate(ys):
        r = rom_run(problem.mesh, problem.grams, problem.noise, spaces, problem.m0, y, tcfg, cfg.online.init_space)
        r.save(out / f"sample_{j:04d}", {"J": J, "dim_v": spaces.dim_v, "dim_lambda": spaces.dim_lam,
                                         "tau": tcfg.tau})
    _manifest(out, "online-rom", cfg, [bdir])


def cmd_sg_rbp(args) -> None:
    bdir = Path(args.bases)
    cfg = _config(args, bdir)
    out = Path(args.out)
    problem = make_problem(cfg)
    bases, dims = _load_bases(bdir, problem), _dims(bdir)
    op = SparseGridOp(build_index_set(cfg.param.s, cfg.sg.threshold, cfg.sg.degree), cfg.sg.degree)
    sur = sgrbp_build(problem.mesh, problem.grams, problem.noise, problem.m0, problem.tps,
                      bases["m"].take(dims["m"]), op)
    sur.save(out / "surrogate")
    ys = _params(args, cfg, args.role)
    write_parameters_csv(out / "parameters.csv", ys)
    for j, y in enumerate(ys):
        d = out / f"sample_{j:04d}"
        io.write_matrix_csv(d / "m_hat.csv", sgrbp_eval(sur, y))
        io.write_rows_csv(d / "times.csv", ["step", "t"], list(enumerate(problem.tps.times)))
    _manifest(out, "sg-rbp", cfg, [bdir])


def cmd_metrics(args) -> None:
    ref_dir, app_dir = Path(args.reference), Path(args.approx)
    cfg = _config(args, ref_dir)
    out = Path(args.out)
    problem = make_problem(cfg)
    refs = [io.read_matrix_csv(_require(d / "m_hat.csv", "reference trajectory")) for d in _sample_dirs(ref_dir)]
    apps = [io.read_matrix_csv(_require(d / "m_hat.csv", "approximate trajectory")) for d in _sample_dirs(app_dir)]
    if len(refs) != len(apps):
        raise ConfigError(f"sample count mismatch: {len(refs)} reference vs {len(apps)} approximate")
    rows = []
    for j, (r, a) in enumerate(zip(refs, apps)):
        rep = trajectory_error([r], [a], problem.grams.q_vec, steps=slice(1, None))
        um, de, mz = physical_diagnostics(problem.mesh, problem.grams, a[-1])
        rows.append((j, rep.aggregate, um, de, mz))
    total = trajectory_error(refs, apps, problem.grams.q_vec, steps=slice(1, None)).aggregate
    io.write_rows_csv(out / "metrics.csv",
                      ["sample", "h1_error_rms", "unit_modulus_error_final", "dirichlet_energy_final", "avg_mz_final"],
                      rows + [("all", total, "", "", "")])
    _manifest(out, "metrics", cfg, [ref_dir, app_dir])


def cmd_experiment(args) -> None:
    cfg = experiment_config(args.name, args.config, _overrides(args))
    if args.paper_scale:
        paper = {"sampling.n_snapshots": "128", "sampling.n_test": "30"}
        if args.name == "switching":
            paper = {"sampling.n_snapshots": "64", "sampling.n_test": "30"}
        cfg = load_config(None, {**paper, **_overrides(args)}, base=cfg)
    text = Path(args.config).read_text() if args.config else ""
    summary = run_experiment(args.name, args.out, cfg, text)
    print(f"{args.name}: done -> {args.out}")
    for k, v in summary.items():
        print(f"  {k}: {v}")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="llgrb", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", type=Path, help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--n-div", type=int)
        if out:
            sp.add_argument("--out", required=True, type=Path)

    def params(sp):
        sp.add_argument("--params", type=Path, help="CSV of parameter vectors (header y1..ys)")
        sp.add_argument("--count", type=int, help="number of sampled parameters")
        sp.add_argument("--role", choices=("train", "test"), default="train", help="sampling stream")

    sp = sub.add_parser("hf-solve", help="high-fidelity trajectories")
    common(sp), params(sp)
    sp.set_defaults(func=cmd_hf_solve)

    sp = sub.add_parser("offline-pod", help="POD bases from stored trajectories")
    common(sp)
    sp.add_argument("--snapshots", required=True, type=Path)
    sp.add_argument("--eps-sq", type=float)
    sp.set_defaults(func=cmd_offline_pod)

    sp = sub.add_parser("online-rom", help="reduced online runs")
    common(sp), params(sp)
    sp.add_argument("--bases", required=True, type=Path)
    sp.add_argument("--variant")
    sp.add_argument("--J", type=int, help="velocity dimension (default: truncated POD dimension)")
    sp.set_defaults(func=cmd_online_rom, role="test")

    sp = sub.add_parser("sg-rbp", help="sparse grid surrogate of reduced coefficients")
    common(sp), params(sp)
    sp.add_argument("--bases", required=True, type=Path)
    sp.add_argument("--threshold", type=float)
    sp.set_defaults(func=cmd_sg_rbp, role="test")

    sp = sub.add_parser("metrics", help="errors and diagnostics between two trajectory sets")
    common(sp)
    sp.add_argument("--reference", required=True, type=Path)
    sp.add_argument("--approx", required=True, type=Path)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("experiment", help="preset experiment suites")
    sp.add_argument("name", choices=sorted(EXPERIMENTS))
    common(sp)
    sp.add_argument("--paper-scale", action="store_true", help="paper sample counts instead of desk scale")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, IndexSetOverflow, la.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, OSError):
            return EXIT_IO
        if isinstance(exc.cause, ConfigError):
            return EXIT_CONFIG
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
