"""Point-cloud and voxel primitives.

Point clouds are plain (n, 3) float arrays in normalized object space.
Voxel grids cover the world cube [-1, 1) at a fixed per-axis resolution.
Everything here is a pure function; the two reconstruction distances are
also exposed as differentiable loss nodes for the autoencoder.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import numerics as nm
from .errors import ContractError, FileFormatError

log = logging.getLogger(__name__)

NSPC_MAGIC = b"NSPC"
NSPC_VERSION = 1


def _as_points(pc, name="point cloud"):
    pts = np.asarray(pc)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ContractError(f"{name} must be (n, 3), got {pts.shape}")
    if pts.shape[0] == 0:
        raise ContractError(f"{name} is empty")
    if not np.isfinite(pts).all():
        raise ContractError(f"{name} contains non-finite coordinates")
    return pts


def normalize_unit_ball(pc):
    """Center at the origin and scale so the farthest point has norm 1.

    Idempotent within float tolerance; a degenerate all-identical cloud is
    centered but not scaled.
    """
    pts = _as_points(pc).astype(np.float64)
    pts = pts - pts.mean(axis=0)
    maxnorm = np.sqrt((pts * pts).sum(axis=1).max())
    if maxnorm > 0:
        pts = pts / maxnorm
    return pts.astype(np.asarray(pc).dtype if np.asarray(pc).dtype.kind == "f"
                      else np.float32)


def farthest_point_sample(pc, k):
    """Greedy FPS indices starting from index 0; ties pick the lowest index."""
    pts = _as_points(pc).astype(np.float64)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"farthest_point_sample: k={k} outside [1, {n}]")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = 0
    d2 = ((pts - pts[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(d2))
        chosen[i] = nxt
        d2 = np.minimum(d2, ((pts - pts[nxt]) ** 2).sum(axis=1))
    return chosen


def farthest_point_sample_batch(points, k):
    """FPS over a (B, N, 3) stack, same semantics as the single-cloud form."""
    pts = np.asarray(points, dtype=np.float64)
    b, n, _ = pts.shape
    if not 1 <= k <= n:
        raise ContractError(f"farthest_point_sample: k={k} outside [1, {n}]")
    chosen = np.empty((b, k), dtype=np.int64)
    chosen[:, 0] = 0
    rows = np.arange(b)
    d2 = ((pts - pts[:, :1]) ** 2).sum(axis=2)
    for i in range(1, k):
        nxt = d2.argmax(axis=1)
        chosen[:, i] = nxt
        d2 = np.minimum(d2, ((pts - pts[rows, nxt][:, None]) ** 2).sum(axis=2))
    return chosen


def ball_query(pc, center, radius, max_count):
    """Indices of points within `radius` of `center`, fixed width `max_count`.

    Qualifying indices come out in ascending order; a short group is filled
    by repeating its first index. With no point in range the nearest point
    is used (and logged) so the group is never empty.
    """
    pts = _as_points(pc).astype(np.float64)
    if radius <= 0:
        raise ContractError(f"ball_query: radius must be positive, got {radius}")
    if max_count < 1:
        raise ContractError(f"ball_query: max_count must be >= 1, got {max_count}")
    center = np.asarray(center, dtype=np.float64).reshape(3)
    d2 = ((pts - center) ** 2).sum(axis=1)
    hits = np.flatnonzero(d2 <= radius * radius)
    if hits.size == 0:
        nearest = int(np.argmin(d2))
        log.debug("ball_query: empty ball at %s r=%g, falling back to nearest %d",
                  center, radius, nearest)
        hits = np.array([nearest])
    group = hits[:max_count]
    if group.size < max_count:
        group = np.concatenate(
            [group, np.full(max_count - group.size, group[0], dtype=group.dtype)])
    return group


def ball_query_batch(points, centers, radius, max_count):
    """Vectorized ball query: (B, N, 3) x (B, C, 3) -> (B, C, max_count)."""
    pts = np.asarray(points, dtype=np.float64)
    ctr = np.asarray(centers, dtype=np.float64)
    b, n, _ = pts.shape
    d2 = ((ctr[:, :, None, :] - pts[:, None, :, :]) ** 2).sum(axis=3)
    idx = np.broadcast_to(np.arange(n), d2.shape).copy()
    idx[d2 > radius * radius] = n  # sentinel sorts last
    idx.sort(axis=2)
    group = idx[:, :, :max_count]
    first = group[:, :, :1]
    empty = first == n
    if empty.any():
        nearest = d2.argmin(axis=2)[:, :, None]
        first = np.where(empty, nearest, first)
    group = np.where(group == n, first, group)
    return group.astype(np.int64)


# ---------------------------------------------------------------------------
# reconstruction distances
# ---------------------------------------------------------------------------

def _pairwise_sq(p1, p2):
    a = np.asarray(p1, dtype=np.float64)
    b = np.asarray(p2, dtype=np.float64)
    d2 = ((a * a).sum(1)[:, None] + (b * b).sum(1)[None, :]
          - 2.0 * (a @ b.T))
    np.maximum(d2, 0.0, out=d2)
    return d2


def chamfer(p1, p2):
    """Sum of squared nearest-neighbor distances, both directions."""
    a = _as_points(p1, "P1").astype(np.float64)
    b = _as_points(p2, "P2").astype(np.float64)
    d2 = _pairwise_sq(a, b)
    # argmin from the fast matrix, value from direct differences so that
    # identical clouds come out exactly zero
    nn_ab = d2.argmin(axis=1)
    nn_ba = d2.argmin(axis=0)
    return float(((a - b[nn_ab]) ** 2).sum() + ((b - a[nn_ba]) ** 2).sum())


def chamfer_loss(p1, p2):
    """Chamfer distance as a differentiable node over Tensor point sets."""
    a, b = p1.data, p2.data
    d2 = _pairwise_sq(a, b)
    nn_ab = d2.argmin(axis=1)
    nn_ba = d2.argmin(axis=0)
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    value = ((a64 - b64[nn_ab]) ** 2).sum() + ((b64 - a64[nn_ba]) ** 2).sum()

    def vjp(g):
        ga = 2.0 * (a - b[nn_ab])
        gb = np.zeros_like(b, dtype=np.float64)
        np.add.at(gb, nn_ab, -ga)
        gb2 = 2.0 * (b - a[nn_ba])
        gb += gb2
        ga2 = np.zeros_like(a, dtype=np.float64)
        np.add.at(ga2, nn_ba, -gb2)
        ga = ga + ga2
        return (g * ga).astype(p1.dtype), (g * gb).astype(p2.dtype)

    return nm.custom_op("chamfer", np.asarray(value, dtype=p1.dtype),
                        (p1, p2), vjp)


def _pairwise_sq_batch(a, b):
    """(B, n, 3) x (B, m, 3) -> (B, n, m) squared distances."""
    d2 = (np.einsum("bnd,bnd->bn", a, a)[:, :, None]
          + np.einsum("bmd,bmd->bm", b, b)[:, None, :]
          - 2.0 * np.einsum("bnd,bmd->bnm", a, b))
    np.maximum(d2, 0.0, out=d2)
    return d2


def chamfer_batch(p1, p2):
    """Per-pair Chamfer distances for equal-length batches: (B,) values."""
    a = np.asarray(p1, dtype=np.float64)
    b = np.asarray(p2, dtype=np.float64)
    d2 = _pairwise_sq_batch(a, b)
    nn_ab = d2.argmin(axis=2)
    nn_ba = d2.argmin(axis=1)
    rows = np.arange(a.shape[0])[:, None]
    fwd = ((a - b[rows, nn_ab]) ** 2).sum(axis=(1, 2))
    bwd = ((b - a[rows, nn_ba]) ** 2).sum(axis=(1, 2))
    return fwd + bwd


def chamfer_loss_batch(p1, p2):
    """Summed-over-batch Chamfer loss node: p1 (B,n,3) Tensor, p2 constant."""
    a = np.asarray(p1.data, dtype=np.float64)
    b = np.asarray(p2.data if isinstance(p2, nm.Tensor) else p2,
                   dtype=np.float64)
    d2 = _pairwise_sq_batch(a, b)
    nn_ab = d2.argmin(axis=2)
    nn_ba = d2.argmin(axis=1)
    rows = np.arange(a.shape[0])[:, None]
    diff_f = a - b[rows, nn_ab]
    diff_b = b - a[rows, nn_ba]
    value = (diff_f ** 2).sum() + (diff_b ** 2).sum()

    def vjp(g):
        ga = 2.0 * diff_f
        flat = np.zeros_like(a)
        np.add.at(flat, (np.broadcast_to(rows, nn_ba.shape).reshape(-1),
                         nn_ba.reshape(-1)), -2.0 * diff_b.reshape(-1, 3))
        ga += flat
        return ((g * ga).astype(p1.dtype),)

    return nm.custom_op("chamfer-batch", np.asarray(value, dtype=p1.dtype),
                        (p1,), vjp)


def emd_loss_batch(p1, p2, eps_final=None):
    """Summed-over-batch EMD loss node: p1 (B,n,3) Tensor, p2 constant."""
    a = np.asarray(p1.data, dtype=np.float64)
    b = np.asarray(p2.data if isinstance(p2, nm.Tensor) else p2,
                   dtype=np.float64)
    matches = np.empty(a.shape[:2], dtype=np.int64)
    total = 0.0
    for i in range(a.shape[0]):
        matches[i], cost = emd_matching(a[i], b[i], eps_final)
        total += cost
    rows = np.arange(a.shape[0])[:, None]
    diff = a - b[rows, matches]
    norms = np.linalg.norm(diff, axis=2, keepdims=True)
    unit = np.divide(diff, norms, out=np.zeros_like(diff), where=norms > 0)

    def vjp(g):
        return ((g * unit).astype(p1.dtype),)

    return nm.custom_op("emd-batch", np.asarray(total, dtype=p1.dtype),
                        (p1,), vjp)


def _auction_phase(benefit, prices, eps):
    """One forward-auction round to a complete assignment at fixed eps."""
    n = benefit.shape[0]
    owner = np.full(n, -1, dtype=np.int64)        # item -> bidder
    assigned = np.full(n, -1, dtype=np.int64)     # bidder -> item
    while True:
        bidders = np.flatnonzero(assigned < 0)
        if bidders.size == 0:
            return assigned
        vals = benefit[bidders] - prices
        j1 = vals.argmax(axis=1)
        rows = np.arange(bidders.size)
        v1 = vals[rows, j1]
        vals[rows, j1] = -np.inf
        v2 = vals.max(axis=1) if n > 1 else np.full(bidders.size, -np.inf)
        incr = v1 - v2 + eps
        # per contested item the highest increment wins; ties pick the
        # lowest bidder index, keeping the algorithm deterministic
        order = np.lexsort((bidders, -incr, j1))
        items = j1[order]
        firsts = np.ones(items.size, dtype=bool)
        firsts[1:] = items[1:] != items[:-1]
        win_items = items[firsts]
        win_bidders = bidders[order[firsts]]
        win_incr = incr[order[firsts]]
        evicted = owner[win_items]
        assigned[evicted[evicted >= 0]] = -1
        owner[win_items] = win_bidders
        assigned[win_bidders] = win_items
        prices[win_items] += win_incr


def emd_matching(p1, p2, eps_final=None):
    """Near-optimal bijection by auction with epsilon scaling.

    Returns (matching, cost): matching[i] is the P2 index assigned to P1
    point i, and cost is the summed L2 length of the matching. The default
    schedule starts at eps = 1/n and divides by 4 until eps < 1/(4 n^2),
    so the result is within n*eps_final of the optimum.
    """
    a = _as_points(p1, "P1").astype(np.float64)
    b = _as_points(p2, "P2").astype(np.float64)
    if a.shape[0] != b.shape[0]:
        raise ContractError(
            f"emd: point counts differ ({a.shape[0]} vs {b.shape[0]})")
    n = a.shape[0]
    if n == 1:
        return np.zeros(1, dtype=np.int64), float(np.linalg.norm(a[0] - b[0]))
    cost = np.sqrt(_pairwise_sq(a, b))
    benefit = -cost
    prices = np.zeros(n)
    eps = 1.0 / n
    floor = eps_final if eps_final is not None else 1.0 / (4.0 * n * n)
    while True:
        assigned = _auction_phase(benefit, prices, eps)
        if eps <= floor:
            break
        eps = max(eps / 4.0, floor)
    total = float(np.linalg.norm(a - b[assigned], axis=1).sum())
    return assigned, total


def emd(p1, p2, eps_final=None):
    """Earth Mover's distance (auction approximation), a nonnegative real."""
    return emd_matching(p1, p2, eps_final)[1]


def emd_exact(p1, p2):
    """Exact assignment EMD (Hungarian); intended as a small-n test oracle."""
    a = _as_points(p1, "P1").astype(np.float64)
    b = _as_points(p2, "P2").astype(np.float64)
    if a.shape[0] != b.shape[0]:
        raise ContractError(
            f"emd: point counts differ ({a.shape[0]} vs {b.shape[0]})")
    cost = np.sqrt(_pairwise_sq(a, b))
    rows, cols = linear_sum_assignment(cost)
    return float(np.linalg.norm(a[rows] - b[cols], axis=1).sum())


def emd_loss(p1, p2, eps_final=None):
    """EMD as a differentiable node; gradients route along the matching."""
    match, value = emd_matching(p1.data, p2.data, eps_final)
    a = np.asarray(p1.data, dtype=np.float64)
    b = np.asarray(p2.data, dtype=np.float64)
    diff = a - b[match]
    norms = np.linalg.norm(diff, axis=1, keepdims=True)
    unit = np.divide(diff, norms, out=np.zeros_like(diff), where=norms > 0)

    def vjp(g):
        ga = g * unit
        gb = np.zeros_like(b)
        np.add.at(gb, match, -ga)
        return ga.astype(p1.dtype), gb.astype(p2.dtype)

    return nm.custom_op("emd", np.asarray(value, dtype=p1.dtype), (p1, p2), vjp)


# ---------------------------------------------------------------------------
# voxels
# ---------------------------------------------------------------------------

@dataclass
class VoxelGrid:
    """Boolean occupancy over the world cube [-1, 1) at fixed resolution."""

    occupancy: np.ndarray

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.occupancy.ndim != 3:
            raise ContractError(
                f"VoxelGrid occupancy must be 3-d, got {self.occupancy.shape}")

    @classmethod
    def empty(cls, resolution=32):
        return cls(np.zeros((resolution,) * 3, dtype=bool))

    @property
    def resolution(self):
        return self.occupancy.shape

    @property
    def cell_size(self):
        return tuple(2.0 / r for r in self.occupancy.shape)

    def count(self):
        return int(self.occupancy.sum())


def voxelize(pc, resolution=32):
    """Occupancy grid: a cell is set when any point maps into it.

    Points with coordinates beyond [-1, 1] (tolerance 1e-9 for the closed
    upper bound reached by unit-ball normalization) are ignored.
    """
    pts = _as_points(pc).astype(np.float64)
    inside = (np.abs(pts) <= 1.0 + 1e-9).all(axis=1)
    grid = VoxelGrid.empty(resolution)
    if not inside.any():
        return grid
    idx = np.floor((pts[inside] + 1.0) * (resolution / 2.0)).astype(np.int64)
    np.clip(idx, 0, resolution - 1, out=idx)
    grid.occupancy[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return grid


def iou(a, b):
    """Intersection over union of two occupancy grids; 1.0 when both empty."""
    if a.resolution != b.resolution:
        raise ContractError(
            f"iou: resolution mismatch {a.resolution} vs {b.resolution}")
    union = np.logical_or(a.occupancy, b.occupancy).sum()
    if union == 0:
        return 1.0
    inter = np.logical_and(a.occupancy, b.occupancy).sum()
    return float(inter) / float(union)


def _exposed_faces(occ):
    """(cell index, axis, direction) for every occupied-cell face without an
    occupied neighbor."""
    cells, axes, dirs = [], [], []
    for axis in range(3):
        for direction in (-1, 1):
            neighbor = np.zeros_like(occ)
            src = [slice(None)] * 3
            dst = [slice(None)] * 3
            if direction == 1:
                src[axis] = slice(1, None)
                dst[axis] = slice(0, -1)
            else:
                src[axis] = slice(0, -1)
                dst[axis] = slice(1, None)
            neighbor[tuple(dst)] = occ[tuple(src)]
            exposed = occ & ~neighbor
            where = np.argwhere(exposed)
            if where.size:
                cells.append(where)
                axes.append(np.full(where.shape[0], axis))
                dirs.append(np.full(where.shape[0], direction))
    if not cells:
        return (np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.int64))
    return np.concatenate(cells), np.concatenate(axes), np.concatenate(dirs)


def sample_surface(grid, n, rng):
    """n points uniform over the exposed faces of occupied cells."""
    if grid.count() == 0:
        raise ContractError("sample_surface: empty grid")
    if n < 1:
        raise ContractError("sample_surface: n must be >= 1")
    cells, axes, dirs = _exposed_faces(grid.occupancy)
    res = np.array(grid.resolution, dtype=np.float64)
    pick = rng.integers(0, cells.shape[0], size=n)
    cell = cells[pick].astype(np.float64)
    axis = axes[pick]
    direction = dirs[pick]
    uv = rng.random((n, 2))
    coords = np.empty((n, 3), dtype=np.float64)
    for ax in range(3):
        sel = axis == ax
        if not sel.any():
            continue
        others = [a for a in range(3) if a != ax]
        coords[sel, ax] = cell[sel, ax] + (direction[sel] > 0)
        coords[sel, others[0]] = cell[sel, others[0]] + uv[sel, 0]
        coords[sel, others[1]] = cell[sel, others[1]] + uv[sel, 1]
    world = coords * (2.0 / res) - 1.0
    return world.astype(np.float32)


def partial_crop(pc, viewpoint, m=200):
    """The m points nearest to a unit-sphere viewpoint (visibility proxy)."""
    pts = _as_points(pc)
    if m > pts.shape[0]:
        raise ContractError(
            f"partial_crop: m={m} exceeds point count {pts.shape[0]}")
    vp = np.asarray(viewpoint, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(vp)
    if norm == 0 or not np.isfinite(norm):
        raise ContractError("partial_crop: viewpoint must be a nonzero direction")
    vp = vp / norm
    d2 = ((pts.astype(np.float64) - vp) ** 2).sum(axis=1)
    order = np.argsort(d2, kind="stable")
    return pts[np.sort(order[:m])]


# ---------------------------------------------------------------------------
# NSPC point-cloud files
# ---------------------------------------------------------------------------

def write_nspc(path, pc):
    """Write a cloud as magic 'NSPC', u32 version, u32 count, count*3 f32 LE."""
    pts = _as_points(pc).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(NSPC_MAGIC)
        fh.write(struct.pack("<II", NSPC_VERSION, pts.shape[0]))
        fh.write(pts.tobytes())


def read_nspc(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != NSPC_MAGIC:
            raise FileFormatError(f"{path}: bad magic {magic!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise FileFormatError(f"{path}: truncated header")
        version, count = struct.unpack("<II", header)
        if version != NSPC_VERSION:
            raise FileFormatError(f"{path}: unsupported version {version}")
        payload = fh.read(count * 12)
        if len(payload) != count * 12:
            raise FileFormatError(f"{path}: truncated payload")
        return np.frombuffer(payload, dtype="<f4").reshape(count, 3).copy()
