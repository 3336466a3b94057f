"""Online Galerkin POD tangent plane scheme with optional supremizer enrichment."""

from __future__ import annotations

from dataclasses import dataclass
from math import isqrt
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as la

from . import io
from .fem import GramSet, TriMesh, l2_project, normalize_nodewise
from .fields import NoiseModel, assemble_load, get_assembler
from .pod import ReducedBasis
from .tps import SolverError, TpsConfig, noise_values

__all__ = [
    "VARIANTS",
    "RomSpaces",
    "RomTrajectory",
    "supremizer",
    "variant_sizes",
    "build_rom_spaces",
    "identity_spaces",
    "q_orthonormalize",
    "rom_run",
    "rom_infsup",
    "affine_constraint_check",
]

VARIANTS = ("OG-1x", "OG-3x", "SS-OG-1x", "SS-OG-3x")
PIVOT_TOL = 1e-12
DROP_TOL = 1e-10


@dataclass
class RomSpaces:
    """Online velocity space ``v_phi`` (Q-orthonormal columns) and multiplier space ``lam_phi``."""

    v_phi: np.ndarray
    lam_phi: np.ndarray
    m_phi: np.ndarray
    variant: str
    J: int
    K: int = 0
    R_sup: int = 0
    n_supremizers: int = 0

    @property
    def stabilized(self) -> bool:
        return self.variant.startswith("SS")

    @property
    def dim_v(self) -> int:
        return self.v_phi.shape[1]

    @property
    def dim_lam(self) -> int:
        return self.lam_phi.shape[1]

    @property
    def dim_m(self) -> int:
        return self.m_phi.shape[1]


@dataclass
class RomTrajectory:
    """Reduced coefficients plus the full-space magnetizations of one online run."""

    v_coeffs: np.ndarray  # (N_T, dim_v)
    lam_coeffs: np.ndarray  # (N_T, dim_lam)
    m: np.ndarray  # (N_T+1, 3N) updates before normalization
    m_hat: np.ndarray  # (N_T+1, 3N) nodewise normalized states
    times: np.ndarray
    infsup: np.ndarray  # (N_T,)
    variant: str = ""

    @property
    def full_magnetizations(self) -> np.ndarray:
        return self.m_hat

    @property
    def reduced_coeffs(self) -> np.ndarray:
        return self.v_coeffs

    def save(self, directory, meta: Optional[dict] = None) -> None:
        d = Path(directory)
        io.write_matrix_csv(d / "m.csv", self.m)
        io.write_matrix_csv(d / "m_hat.csv", self.m_hat)
        io.write_matrix_csv(d / "v_coeffs.csv", self.v_coeffs, prefix="a")
        io.write_matrix_csv(d / "lambda_coeffs.csv", self.lam_coeffs, prefix="b")
        rows = [(n, t, self.infsup[n] if n < len(self.infsup) else "") for n, t in enumerate(self.times)]
        io.write_rows_csv(d / "times.csv", ["step", "t", "infsup"], rows)
        io.write_json(d / "meta.json", {"variant": self.variant, **(meta or {})})

    @classmethod
    def load(cls, directory) -> "RomTrajectory":
        d = Path(directory)
        rows = io.read_rows_csv(d / "times.csv")
        meta = io.read_json(d / "meta.json")
        return cls(
            io.read_matrix_csv(d / "v_coeffs.csv"),
            io.read_matrix_csv(d / "lambda_coeffs.csv"),
            io.read_matrix_csv(d / "m.csv"),
            io.read_matrix_csv(d / "m_hat.csv"),
            np.array([float(r["t"]) for r in rows]),
            np.array([float(r["infsup"]) for r in rows[:-1]]),
            meta.get("variant", ""),
        )


def supremizer(mesh: TriMesh, grams: GramSet, eta: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """``T_eta zeta``: the H^1 Riesz representer of ``v -> <zeta, v . eta>``.

    ``zeta`` may hold several columns.
    """
    B = get_assembler(mesh, grams).constraint(eta)
    return grams.solve_q(B.T @ zeta)


def variant_sizes(variant: str, J: int):
    """``(R, K, R_sup)``: multiplier dimension and supremizer layout for velocity budget ``J``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if J < 1:
        raise ValueError("velocity dimension must be positive")
    R = J if variant.endswith("1x") else J // 3
    if R < 1:
        raise ValueError(f"{variant} needs J >= 3, got {J}")
    if variant == "SS-OG-1x":
        K = R_sup = isqrt(J)
    elif variant == "SS-OG-3x":
        K = isqrt(J // 3)
        R_sup = 3 * K
    else:
        K = R_sup = 0
    return R, K, R_sup


def q_orthonormalize(Q, V: np.ndarray, keep: int = 0, drop_tol: float = DROP_TOL) -> np.ndarray:
    """Modified Gram-Schmidt in the ``Q`` inner product, run twice per column.

    The first ``keep`` columns are assumed Q-orthonormal and kept as they are.
    Later columns whose remainder falls below ``drop_tol`` times their original
    norm are dropped.
    """
    out = [V[:, j].copy() for j in range(keep)]
    for j in range(keep, V.shape[1]):
        w = V[:, j].astype(float, copy=True)
        n0 = np.sqrt(max(w @ (Q @ w), 0.0))
        if n0 == 0.0:
            continue
        for _ in range(2):
            for u in out:
                w -= (u @ (Q @ w)) * u
        nw = np.sqrt(max(w @ (Q @ w), 0.0))
        if nw > drop_tol * n0:
            out.append(w / nw)
    return np.column_stack(out) if out else np.zeros((V.shape[0], 0))


def build_rom_spaces(
    v_basis: ReducedBasis,
    lambda_basis: ReducedBasis,
    m_basis: ReducedBasis,
    variant: str,
    J: int,
    mesh: TriMesh,
    grams: GramSet,
    m_dim: Optional[int] = None,
) -> RomSpaces:
    """Online spaces for one variant at velocity budget ``J``.

    ``m_dim`` is the number of magnetization modes kept for the initial
    projection (default: all columns of ``m_basis``); the first ``K`` of them
    drive the supremizers.
    """
    R, K, R_sup = variant_sizes(variant, J)
    if J > v_basis.J:
        raise ValueError(f"velocity basis has {v_basis.J} modes, {J} requested")
    if R > lambda_basis.J:
        raise ValueError(f"multiplier basis has {lambda_basis.J} modes, {R} requested")
    m_dim = m_basis.J if m_dim is None else m_dim
    if max(K, m_dim) > m_basis.J:
        raise ValueError(f"magnetization basis has {m_basis.J} modes, {max(K, m_dim)} requested")
    v_phi = v_basis.phi[:, :J]
    lam_phi = lambda_basis.phi[:, :R]
    n_sup = 0
    if K:
        zeta = lambda_basis.phi[:, :R_sup]
        sups = [supremizer(mesh, grams, m_basis.phi[:, k], zeta) for k in range(K)]
        V = np.hstack([v_phi] + sups)
        v_phi = q_orthonormalize(grams.q_vec, V, keep=J)
        n_sup = v_phi.shape[1] - J
    return RomSpaces(v_phi, lam_phi, m_basis.phi[:, :m_dim], variant, J, K, R_sup, n_sup)


def identity_spaces(grams: GramSet) -> RomSpaces:
    """Spaces spanning the whole finite element space (orthonormal via Cholesky)."""
    Rq = la.cholesky(grams.q_vec.toarray(), lower=False)
    Rm = la.cholesky(grams.mass_scalar.toarray(), lower=False)
    v = la.solve_triangular(Rq, np.eye(Rq.shape[0]), lower=False)
    lam = la.solve_triangular(Rm, np.eye(Rm.shape[0]), lower=False)
    return RomSpaces(v, lam, v, "full", v.shape[1])


def rom_infsup(spaces: RomSpaces, m_hat: np.ndarray, mesh: TriMesh, grams: GramSet) -> float:
    """Smallest singular value of the projected constraint ``Psi^T B(m_hat) Phi``."""
    if spaces.dim_lam == 0:
        return float("inf")
    if spaces.dim_lam > spaces.dim_v:
        return 0.0
    B = get_assembler(mesh, grams).constraint(m_hat)
    Bt = spaces.lam_phi.T @ (B @ spaces.v_phi)
    return float(la.svdvals(Bt)[-1])


def _initial_state(spaces: RomSpaces, grams: GramSet, m_init: np.ndarray, init_space: str):
    if init_space == "full":
        return m_init.copy()
    phi = {"velocity": spaces.v_phi, "magnetization": spaces.m_phi}.get(init_space)
    if phi is None:
        raise ValueError(f"init_space must be velocity, magnetization or full, got {init_space!r}")
    return phi @ (phi.T @ (grams.q_vec @ m_init))


def _dense_saddle(At, Bt, ft, step, variant):
    J, R = At.shape[0], Bt.shape[0]
    K = np.zeros((J + R, J + R))
    K[:J, :J] = At
    K[:J, J:] = Bt.T
    K[J:, :J] = Bt
    rhs = np.concatenate([ft, np.zeros(R)])
    lu, piv = la.lu_factor(K, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.min() <= PIVOT_TOL * max(d.max(), 1e-300):
        raise SolverError(
            f"{variant}: reduced saddle system singular at step {step} "
            f"(pivot ratio {d.min() / max(d.max(), 1e-300):.1e})"
        )
    x = la.lu_solve((lu, piv), rhs)
    return x[:J], x[J:]


def rom_run(
    mesh: TriMesh,
    grams: GramSet,
    noise: NoiseModel,
    spaces: RomSpaces,
    m0,
    y,
    cfg: TpsConfig,
    init_space: str = "magnetization",
    update: str = "normalized",
) -> RomTrajectory:
    """Online phase: project the tangent-plane saddle problem onto the reduced spaces.

    Each step assembles the full blocks at the full-space normalized state,
    solves the small dense saddle system and updates the magnetization.
    ``update="normalized"`` advances from the normalized state (as the full
    scheme does); ``update="accumulate"`` advances the unnormalized reduced
    iterate instead.
    """
    if update not in ("normalized", "accumulate"):
        raise ValueError(f"update must be 'normalized' or 'accumulate', got {update!r}")
    m_init = m0 if isinstance(m0, np.ndarray) else l2_project(mesh, grams, m0)
    asm = get_assembler(mesh, grams)
    Phi, Psi = spaces.v_phi, spaces.lam_phi
    nt, n = cfg.n_steps, mesh.n_nodes
    W = noise_values(y, cfg)
    m = np.empty((nt + 1, 3 * n))
    m_hat = np.empty((nt + 1, 3 * n))
    a = np.empty((nt, spaces.dim_v))
    b = np.empty((nt, spaces.dim_lam))
    beta = np.empty(nt)
    m[0] = _initial_state(spaces, grams, m_init, init_space)
    try:
        m_hat[0] = normalize_nodewise(m[0])
    except ValueError as exc:
        raise SolverError(f"{spaces.variant}: projected initial state vanishes at a node") from exc
    for k in range(nt):
        A = asm.system_matrix(m_hat[k], cfg.alpha, cfg.tau)
        B = asm.constraint(m_hat[k])
        f = assemble_load(mesh, grams, noise, m_hat[k], W[k], k * cfg.tau)
        At = Phi.T @ (A @ Phi)
        Bt = Psi.T @ (B @ Phi)
        beta[k] = float(la.svdvals(Bt)[-1]) if 0 < spaces.dim_lam <= spaces.dim_v else (
            float("inf") if spaces.dim_lam == 0 else 0.0
        )
        a[k], b[k] = _dense_saddle(At, Bt, Phi.T @ f, k, spaces.variant)
        base = m_hat[k] if update == "normalized" else m[k]
        m[k + 1] = base + cfg.tau * (Phi @ a[k])
        try:
            m_hat[k + 1] = normalize_nodewise(m[k + 1])
        except ValueError as exc:
            raise SolverError(f"{spaces.variant}: magnetization vanishes at a node, step {k + 1}") from exc
    return RomTrajectory(a, b, m, m_hat, cfg.times, beta, spaces.variant)


def affine_constraint_check(spaces: RomSpaces, m_hat: np.ndarray, mesh: TriMesh, grams: GramSet) -> float:
    """Max deviation between projecting ``B(m_hat)`` and the affine sum over magnetization modes.

    Uses the coefficients of ``m_hat`` in the magnetization basis; the deviation
    vanishes (to round-off) when ``m_hat`` lies in that span.
    """
    asm = get_assembler(mesh, grams)
    c = spaces.m_phi.T @ (grams.q_vec @ m_hat)
    direct = spaces.lam_phi.T @ (asm.constraint(m_hat) @ spaces.v_phi)
    terms = sum(
        ck * (spaces.lam_phi.T @ (asm.constraint(spaces.m_phi[:, k]) @ spaces.v_phi))
        for k, ck in enumerate(c)
    )
    return float(np.max(np.abs(direct - terms)))
