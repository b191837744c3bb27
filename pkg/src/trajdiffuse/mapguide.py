"""Navigability maps and gradient-based trajectory guidance.

A NavEnvironment wraps a binary navigability grid with its exact Euclidean
distance field (meters to the nearest navigable pixel center, zero inside
navigable cells), the central-difference gradient of that field, and the
world <-> pixel transform. Guidance walks each future frame of a trajectory
down the distance field and shifts all later frames along with it, so the
local shape of the prediction is preserved while collisions are removed.

Grid convention: nav_grid[row, col] with row <-> y and col <-> x; `origin`
is the world coordinate of pixel (0, 0)'s center. World positions map to
pixels by nearest center, rounding halves away from zero; positions outside
the grid count as collisions.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import as_float_array, check_positive, check_trajectory

_BIG = 1e15  # finite sentinel; cell distances stay far below, stays exact in f64


@dataclass(frozen=True)
class GuidanceConfig:
    """Gradient-descent settings for the map guidance."""

    n_grad_steps: int = 10
    step_scale: float | None = None  # None: one pixel in world units

    def __post_init__(self):
        if self.n_grad_steps < 1:
            raise ValueError("n_grad_steps must be >= 1")
        if self.step_scale is not None:
            check_positive(self.step_scale, "step_scale")

    def resolved_step(self, resolution: float) -> float:
        return self.step_scale if self.step_scale is not None else resolution


def _dt1d_squared(f: np.ndarray) -> np.ndarray:
    """Felzenszwalb-Huttenlocher 1-D squared distance transform (lower envelope)."""
    n = f.shape[0]
    d = np.empty(n)
    v = np.zeros(n, dtype=np.intp)
    z = np.empty(n + 1)
    z[0], z[1] = -np.inf, np.inf
    k = 0
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for p in range(n):
        while z[k + 1] < p:
            k += 1
        d[p] = (p - v[k]) ** 2 + f[v[k]]
    return d


def distance_transform(nav_grid: np.ndarray, resolution: float) -> np.ndarray:
    """Exact Euclidean distance (meters) to the nearest navigable pixel center."""
    nav_grid = np.asarray(nav_grid, dtype=bool)
    check_positive(resolution, "resolution")
    if nav_grid.ndim != 2 or nav_grid.size == 0:
        raise ValueError("nav_grid must be a non-empty 2-D boolean array")
    if not nav_grid.any():
        raise ValueError("nav_grid has no navigable pixel")
    h, w = nav_grid.shape
    d2 = np.where(nav_grid, 0.0, _BIG)
    for c in range(w):
        d2[:, c] = _dt1d_squared(d2[:, c])
    for r in range(h):
        d2[r, :] = _dt1d_squared(d2[r, :])
    return np.sqrt(d2) * resolution


def gradient_field(dist_field: np.ndarray, resolution: float) -> np.ndarray:
    """Central-difference gradient of the distance field, (H, W, 2) as (d/dx, d/dy).

    One-sided differences at the borders; slopes are dimensionless (meters of
    distance per meter of world displacement).
    """
    dist = as_float_array(dist_field, "dist_field")
    check_positive(resolution, "resolution")
    h, w = dist.shape
    gx = np.zeros_like(dist)
    gy = np.zeros_like(dist)
    if w > 2:
        gx[:, 1:-1] = (dist[:, 2:] - dist[:, :-2]) / (2.0 * resolution)
    if w > 1:
        gx[:, 0] = (dist[:, 1] - dist[:, 0]) / resolution
        gx[:, -1] = (dist[:, -1] - dist[:, -2]) / resolution
    if h > 2:
        gy[1:-1, :] = (dist[2:, :] - dist[:-2, :]) / (2.0 * resolution)
    if h > 1:
        gy[0, :] = (dist[1, :] - dist[0, :]) / resolution
        gy[-1, :] = (dist[-1, :] - dist[-2, :]) / resolution
    return np.stack([gx, gy], axis=-1)


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


@dataclass(frozen=True)
class NavEnvironment:
    """Immutable navigability grid with precomputed distance and gradient fields."""

    nav_grid: np.ndarray
    resolution: float
    origin: np.ndarray  # world (x, y) of pixel (0, 0)'s center
    dist_field: np.ndarray
    grad_field: np.ndarray

    def __post_init__(self):
        self.nav_grid.setflags(write=False)
        self.dist_field.setflags(write=False)
        self.grad_field.setflags(write=False)
        self.origin.setflags(write=False)

    @classmethod
    def from_grid(cls, nav_grid, resolution: float, origin=(0.0, 0.0)) -> "NavEnvironment":
        nav_grid = np.asarray(nav_grid, dtype=bool)
        resolution = check_positive(resolution, "resolution")
        origin = np.asarray(origin, dtype=np.float64).reshape(2).copy()
        dist = distance_transform(nav_grid, resolution)
        grad = gradient_field(dist, resolution)
        return cls(nav_grid.copy(), resolution, origin, dist, grad)

    @property
    def shape(self) -> tuple[int, int]:
        return self.nav_grid.shape

    def world_to_pixel(self, pos) -> np.ndarray:
        """Continuous pixel coordinates (px, py) = ((x, y) - origin) / resolution."""
        pos = np.asarray(pos, dtype=np.float64)
        return (pos - self.origin) / self.resolution

    def pixel_to_world(self, row: float, col: float) -> np.ndarray:
        return self.origin + self.resolution * np.array([col, row], dtype=np.float64)

    def nearest_pixel(self, pos) -> tuple[int, int]:
        """(row, col) of the nearest pixel center, halves rounded away from zero."""
        px, py = _round_half_away(self.world_to_pixel(pos))
        return int(py), int(px)

    def in_bounds(self, row: int, col: int) -> bool:
        h, w = self.nav_grid.shape
        return 0 <= row < h and 0 <= col < w

    def is_navigable_point(self, pos) -> bool:
        row, col = self.nearest_pixel(pos)
        return self.in_bounds(row, col) and bool(self.nav_grid[row, col])

    def navigable_mask_for(self, positions: np.ndarray) -> np.ndarray:
        """Vectorized nearest-pixel navigability; out of bounds counts as blocked."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        pix = _round_half_away((positions - self.origin) / self.resolution)
        cols = pix[:, 0].astype(np.intp)
        rows = pix[:, 1].astype(np.intp)
        h, w = self.nav_grid.shape
        ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        out = np.zeros(positions.shape[0], dtype=bool)
        out[ok] = self.nav_grid[rows[ok], cols[ok]]
        return out


def sample_gradient(env: NavEnvironment, pos) -> np.ndarray:
    """Bilinear interpolation of the gradient field at a world position.

    Positions outside the interpolable grid return a unit vector pointing
    toward the grid center.
    """
    pos = np.asarray(pos, dtype=np.float64).reshape(2)
    h, w = env.shape
    px, py = env.world_to_pixel(pos)
    if not (0.0 <= px <= w - 1 and 0.0 <= py <= h - 1):
        center = env.pixel_to_world((h - 1) / 2.0, (w - 1) / 2.0)
        delta = center - pos
        return delta / np.linalg.norm(delta)
    c0 = int(np.floor(px))
    r0 = int(np.floor(py))
    c1 = min(c0 + 1, w - 1)
    r1 = min(r0 + 1, h - 1)
    fx = px - c0
    fy = py - r0
    g = env.grad_field
    return (
        (1 - fx) * (1 - fy) * g[r0, c0]
        + fx * (1 - fy) * g[r0, c1]
        + (1 - fx) * fy * g[r1, c0]
        + fx * fy * g[r1, c1]
    )


def _descent_direction(env: NavEnvironment, pos: np.ndarray) -> np.ndarray:
    """Direction that reduces distance-to-navigable: the negative field gradient
    inside the grid, or straight toward the grid center from outside."""
    h, w = env.shape
    px, py = env.world_to_pixel(pos)
    if 0.0 <= px <= w - 1 and 0.0 <= py <= h - 1:
        return -sample_gradient(env, pos)
    return sample_gradient(env, pos)


def guidance_delta(env: NavEnvironment, traj: np.ndarray, t_obs: int,
                   cfg: GuidanceConfig = GuidanceConfig()) -> np.ndarray:
    """Correction that drags colliding future frames onto navigable ground.

    Frames are processed in time order; each gradient-descent step applied at
    frame f also shifts every later frame by the same amount (suffix shift),
    so downstream trajectory shape is preserved. Frames whose nearest cell is
    already navigable contribute zero steps. Observed frames are untouched.
    """
    traj = check_trajectory(traj)
    t_total = traj.shape[0]
    if not 0 <= t_obs <= t_total:
        raise ValueError(f"t_obs {t_obs} out of range for {t_total} frames")
    step = cfg.resolved_step(env.resolution)
    work = traj.copy()
    for f in range(t_obs, t_total):
        for _ in range(cfg.n_grad_steps):
            if env.is_navigable_point(work[f]):
                break  # this frame's remaining steps are all zero
            work[f:] += step * _descent_direction(env, work[f])
    return work - traj


def ecfl_check(env: NavEnvironment, traj: np.ndarray, t_obs: int = 0) -> bool:
    """True iff every frame from t_obs on maps to a navigable pixel."""
    traj = check_trajectory(traj)
    return bool(env.navigable_mask_for(traj[t_obs:]).all())


# ------------------------------------------------------------------ map files

def write_pgm(path, nav_grid: np.ndarray) -> None:
    """Binary PGM (P5), 255 = navigable, 0 = blocked."""
    nav_grid = np.asarray(nav_grid, dtype=bool)
    h, w = nav_grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write((nav_grid.astype(np.uint8) * 255).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read P2 (ASCII) or P5 (binary) PGM; only values 0 and 255 are accepted."""
    data = Path(path).read_bytes()
    if data[:2] not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a P2/P5 PGM file")
    binary = data[:2] == b"P5"

    # strip comments, then tokenize the header
    header_tokens: list[int] = []
    pos = 2
    while len(header_tokens) < 3:
        match = re.match(rb"\s*(#[^\n]*\n|\S+)", data[pos:])
        if match is None:
            raise ValueError(f"{path}: truncated PGM header")
        token = match.group(1)
        pos += match.end()
        if not token.startswith(b"#"):
            header_tokens.append(int(token))
    w, h, maxval = header_tokens
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    if binary:
        pixels = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    else:
        pixels = np.array(data[pos:].split(), dtype=np.int64)
    if pixels.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, got {pixels.size}")
    values = np.unique(pixels)
    if not np.isin(values, (0, 255)).all():
        raise ValueError(f"{path}: pixel values must be 0 or 255, found {values.tolist()}")
    return (pixels.reshape(h, w) == 255)


def save_environment(env: NavEnvironment, pgm_path, json_path) -> None:
    write_pgm(pgm_path, env.nav_grid)
    meta = {
        "resolution_m_per_px": env.resolution,
        "origin_x_m": float(env.origin[0]),
        "origin_y_m": float(env.origin[1]),
    }
    Path(json_path).write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_environment(pgm_path, json_path) -> NavEnvironment:
    if not Path(json_path).exists():
        raise FileNotFoundError(f"missing map metadata: {json_path}")
    meta = json.loads(Path(json_path).read_text())
    grid = read_pgm(pgm_path)
    return NavEnvironment.from_grid(
        grid,
        resolution=meta["resolution_m_per_px"],
        origin=(meta["origin_x_m"], meta["origin_y_m"]),
    )
