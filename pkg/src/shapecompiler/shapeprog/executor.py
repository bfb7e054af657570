"""Deterministic voxel semantics for shape programs.

Positions are integer grid cells in a centered frame: cell v covers world
[v/(R/2), (v+1)/(R/2)) along each axis, so the frame spans [-R/2, R/2) and
maps onto the world cube [-1, 1). Draw fills an axis-aligned footprint from
its minimum corner P; loops replicate placements by translation or by
rotation about the grid center; reflect mirrors across an axis plane.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from ..errors import ContractError
from ..geometry import VoxelGrid
from .lang import Draw, ForRotate, ForTranslate, Program, Reflect

log = logging.getLogger(__name__)


def _draw_mask(stmt, offset, resolution):
    """Rasterize one Draw at integer offset; returns a bool grid."""
    half = resolution // 2
    mask = np.zeros((resolution,) * 3, dtype=bool)
    px, py, pz = (int(a) + int(b) for a, b in zip(stmt.p, offset))

    def clip_span(lo, size):
        a = max(lo + half, 0)
        b = min(lo + half + size, resolution)
        return a, b

    if stmt.primitive == "Circle":
        thickness, radius = stmt.g
        if thickness <= 0 or radius <= 0:
            return mask
        cx = px + radius
        cy = py + radius
        xs = np.arange(max(px + half, 0), min(px + half + 2 * radius, resolution))
        ys = np.arange(max(py + half, 0), min(py + half + 2 * radius, resolution))
        if xs.size == 0 or ys.size == 0:
            return mask
        # cell centers inside the disc (center-in-disc test)
        dx = xs[:, None] + 0.5 - (cx + half)
        dy = ys[None, :] + 0.5 - (cy + half)
        disc = dx * dx + dy * dy <= radius * radius
        z0, z1 = clip_span(pz, thickness)
        if z1 > z0:
            mask[np.ix_(xs, ys, np.arange(z0, z1))] = disc[:, :, None]
        return mask

    if stmt.primitive == "Square":
        thickness, side = stmt.g
        size = (side, side, thickness)
    else:  # Bar and the box-shaped parts
        size = tuple(stmt.g)
    if any(s <= 0 for s in size):
        return mask
    (x0, x1), (y0, y1), (z0, z1) = (clip_span(p, s)
                                    for p, s in zip((px, py, pz), size))
    if x1 > x0 and y1 > y0 and z1 > z0:
        mask[x0:x1, y0:y1, z0:z1] = True
    return mask


def _rotate_mask(mask, axis, angle):
    """Rotate occupied cell centers about the grid center, nearest cell."""
    if not mask.any():
        return mask.copy()
    resolution = mask.shape[0]
    half = resolution / 2.0
    cells = np.argwhere(mask).astype(np.float64)
    centered = cells + 0.5 - half
    c, s = math.cos(angle), math.sin(angle)
    rot = centered.copy()
    ax = "XYZ".index(axis)
    u, v = [i for i in range(3) if i != ax]
    rot[:, u] = c * centered[:, u] - s * centered[:, v]
    rot[:, v] = s * centered[:, u] + c * centered[:, v]
    idx = np.floor(rot + half).astype(np.int64)
    keep = ((idx >= 0) & (idx < resolution)).all(axis=1)
    out = np.zeros_like(mask)
    idx = idx[keep]
    out[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return out


def _exec_block(stmts, offset, resolution, warnings):
    mask = np.zeros((resolution,) * 3, dtype=bool)
    for stmt in stmts:
        if isinstance(stmt, Draw):
            drawn = _draw_mask(stmt, offset, resolution)
            if not drawn.any():
                msg = (f"skipped {stmt.part}/{stmt.primitive} at P={stmt.p} "
                       f"offset={tuple(offset)}: footprint outside the grid")
                warnings.append(msg)
                log.debug("execute: %s", msg)
            mask |= drawn
        elif isinstance(stmt, ForTranslate):
            for i in range(stmt.count):
                shifted = tuple(o + i * d for o, d in zip(offset, stmt.delta))
                mask |= _exec_block(stmt.body, shifted, resolution, warnings)
        elif isinstance(stmt, ForRotate):
            body = _exec_block(stmt.body, offset, resolution, warnings)
            for i in range(stmt.count):
                angle = i * 2.0 * math.pi / stmt.count
                mask |= body if i == 0 else _rotate_mask(body, stmt.axis, angle)
        elif isinstance(stmt, Reflect):
            body = _exec_block(stmt.body, offset, resolution, warnings)
            mask |= body
            mask |= np.flip(body, axis="XYZ".index(stmt.axis))
        else:
            raise ContractError(f"unknown statement {type(stmt).__name__}")
    return mask


def execute(program, resolution=32, warnings=None):
    """Run a program into a VoxelGrid.

    Statements whose footprint lands entirely outside the grid are skipped;
    a message per skip is appended to `warnings` when a list is given.
    """
    if resolution < 2 or resolution % 2:
        raise ContractError(f"resolution must be even and >= 2, got {resolution}")
    sink = warnings if warnings is not None else []
    mask = _exec_block(program.statements, (0, 0, 0), resolution, sink)
    return VoxelGrid(mask)


def unroll(program):
    """Expand every ForTranslate into its repeated body (test oracle).

    Shifted positions may leave the DSL parameter range; the result is for
    executor-equivalence checks, not for tokenizing.
    """

    def shift(stmt, delta):
        if isinstance(stmt, Draw):
            p = tuple(a + b for a, b in zip(stmt.p, delta))
            return Draw(stmt.part, stmt.primitive, p, stmt.g)
        if isinstance(stmt, ForTranslate):
            return ForTranslate(stmt.count, stmt.delta,
                                tuple(shift(s, delta) for s in stmt.body))
        if isinstance(stmt, ForRotate):
            return ForRotate(stmt.count, stmt.axis,
                             tuple(shift(s, delta) for s in stmt.body))
        return Reflect(stmt.axis, tuple(shift(s, delta) for s in stmt.body))

    def expand(stmts):
        out = []
        for stmt in stmts:
            if isinstance(stmt, ForTranslate):
                body = expand(stmt.body)
                for i in range(stmt.count):
                    delta = tuple(i * d for d in stmt.delta)
                    out.extend(shift(s, delta) for s in body)
            elif isinstance(stmt, ForRotate):
                out.append(ForRotate(stmt.count, stmt.axis, expand(stmt.body)))
            elif isinstance(stmt, Reflect):
                out.append(Reflect(stmt.axis, expand(stmt.body)))
            else:
                out.append(stmt)
        return tuple(out)

    return Program(expand(program.statements))
