"""Initial conditions, noise profiles and external fields used in the experiments."""

from __future__ import annotations

import numpy as np

from .fem import TriMesh, nodal_interpolate
from .fields import NoiseModel

__all__ = [
    "m0_relaxation",
    "m0_uniform",
    "g_relaxation",
    "g_switching",
    "g_uniform",
    "hext_minus_ez",
    "M0_PRESETS",
    "G_PRESETS",
    "HEXT_PRESETS",
    "make_noise",
]


def _cap(c, xy):
    dx, dy = xy[:, 0] - 0.5, xy[:, 1] - 0.5
    return np.column_stack([c * dx, c * dy, np.sqrt(1.0 - c**2 * (dx**2 + dy**2))])


def m0_relaxation(xy):
    return _cap(0.9, np.atleast_2d(xy))


def m0_uniform(xy):
    xy = np.atleast_2d(xy)
    return np.tile([0.0, 0.0, 1.0], (len(xy), 1))


def g_relaxation(xy):
    xy = np.atleast_2d(xy)
    g0 = 0.5 * np.sin(np.pi * (xy[:, 0] - 0.5))
    g1 = 0.5 * np.sin(np.pi * (xy[:, 1] - 0.5))
    return np.column_stack([g0, g1, np.sqrt(1.0 - g0**2 - g1**2)])


def g_switching(xy):
    xy = np.atleast_2d(xy)
    g0 = 0.45 * np.sin(np.pi * xy[:, 0])
    g1 = 0.45 * np.sin(np.pi * xy[:, 1])
    return np.column_stack([g0, g1, np.sqrt(1.0 - g0**2 - g1**2)])


g_uniform = m0_uniform


def hext_minus_ez(t, xy):
    return np.tile([0.0, 0.0, -1.0], (len(xy), 1))


M0_PRESETS = {"relaxation": m0_relaxation, "switching": m0_relaxation, "uniform": m0_uniform}
G_PRESETS = {"relaxation": g_relaxation, "switching": g_switching, "uniform": g_uniform}
HEXT_PRESETS = {"zero": None, "minus_ez": hext_minus_ez}


def make_noise(mesh: TriMesh, g_preset: str = "relaxation", hext_preset: str = "zero") -> NoiseModel:
    g = nodal_interpolate(mesh, G_PRESETS[g_preset])
    return NoiseModel(g, HEXT_PRESETS[hext_preset])
