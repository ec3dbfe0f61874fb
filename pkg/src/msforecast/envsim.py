"""Synthetic navigation data: room/corridor environments and social-force agents."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from . import _kernels
from .errors import DomainError, GenerationError, StuckError
from .raster import Homography, SemanticGrid, save_grid

log = logging.getLogger(__name__)

FREE_CLASS = 0
WALL_CLASS = 1
FPS = 2.5
T_PAST = 8
T_FUTURE = 12
WINDOW = T_PAST + T_FUTURE


@dataclass(frozen=True)
class EnvironmentSpec:
    seed: int
    grid_size: tuple[int, int] = (256, 256)
    room_count_range: tuple[int, int] = (4, 7)
    room_size_range: tuple[int, int] = (40, 90)
    corridor_width_range: tuple[int, int] = (16, 28)
    obstacles_per_room: tuple[int, int] = (0, 2)
    obstacle_size_range: tuple[int, int] = (6, 14)
    wall_class: int = WALL_CLASS
    free_class: int = FREE_CLASS
    max_retries: int = 20

    def __post_init__(self):
        for name in ("room_count_range", "room_size_range", "corridor_width_range",
                     "obstacles_per_room", "obstacle_size_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise DomainError(f"{name} must be a nonempty range, got {(lo, hi)}")
        if self.room_count_range[0] < 1:
            raise DomainError("need at least one room")


@dataclass(frozen=True)
class SocialForceParams:
    tau: float = 0.5
    desired_speed: float = 1.34
    wall_a: float = 2.0
    wall_b: float = 0.3
    radius: float = 0.3
    v_max: float = 2.68
    wall_cutoff: float = 2.0
    px_per_meter: float = 15.0
    internal_hz: float = 25.0
    lookahead: float = 1.0
    arrive_tol: float = 0.3
    stuck_eps: float = 1e-4
    stuck_steps: int = 50

    def as_kernel(self, dt: float) -> tuple:
        return (self.tau, self.desired_speed, self.wall_a, self.wall_b, self.radius,
                self.v_max, dt, self.px_per_meter, self.wall_cutoff)

    @property
    def homography(self) -> Homography:
        return Homography.similarity(self.px_per_meter)


@dataclass
class AgentState:
    position: np.ndarray
    velocity: np.ndarray
    goal: np.ndarray
    desired_speed: float = 1.34
    still_steps: int = 0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        self.goal = np.asarray(self.goal, dtype=np.float64)


def _rects_overlap(a, b, gap):
    return not (a[0] + a[2] + gap <= b[0] or b[0] + b[2] + gap <= a[0]
                or a[1] + a[3] + gap <= b[1] or b[1] + b[3] + gap <= a[1])


def _carve_corridor(free, p, q, width, horizontal_first):
    half = width // 2
    (r0, c0), (r1, c1) = p, q
    h, w = free.shape
    def box(ra, rb, ca, cb):
        free[max(min(ra, rb) - half, 1):min(max(ra, rb) + half + 1, h - 1),
             max(min(ca, cb) - half, 1):min(max(ca, cb) + half + 1, w - 1)] = True
    if horizontal_first:
        box(r0, r0, c0, c1)
        box(r0, r1, c1, c1)
    else:
        box(r0, r1, c0, c0)
        box(r1, r1, c0, c1)


def _n_components(free) -> int:
    return int(ndimage.label(free)[1])


def generate_environment(spec: EnvironmentSpec) -> SemanticGrid:
    """Rooms joined by corridors, with a few pillars; free space is one component."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.grid_size
    margin = 4
    smin, smax = spec.room_size_range
    for _ in range(spec.max_retries):
        free = np.zeros((h, w), dtype=bool)
        n_rooms = int(rng.integers(spec.room_count_range[0], spec.room_count_range[1] + 1))
        rooms = []
        for _ in range(400):
            if len(rooms) == n_rooms:
                break
            rh, rw = (int(v) for v in rng.integers(smin, smax + 1, size=2))
            if rh >= h - 2 * margin or rw >= w - 2 * margin:
                continue
            r0 = int(rng.integers(margin, h - margin - rh))
            c0 = int(rng.integers(margin, w - margin - rw))
            cand = (r0, c0, rh, rw)
            if all(not _rects_overlap(cand, o, 8) for o in rooms):
                rooms.append(cand)
        if not rooms:
            continue
        for r0, c0, rh, rw in rooms:
            free[r0:r0 + rh, c0:c0 + rw] = True
        centers = [(r0 + rh // 2, c0 + rw // 2) for r0, c0, rh, rw in rooms]
        for i in range(1, len(rooms)):
            j = min(range(i), key=lambda k: (centers[k][0] - centers[i][0]) ** 2
                    + (centers[k][1] - centers[i][1]) ** 2)
            width = int(rng.integers(spec.corridor_width_range[0], spec.corridor_width_range[1] + 1))
            _carve_corridor(free, centers[i], centers[j], width, bool(rng.integers(2)))
        free[0, :] = free[-1, :] = free[:, 0] = free[:, -1] = False
        omin, omax = spec.obstacle_size_range
        for r0, c0, rh, rw in rooms:
            for _ in range(int(rng.integers(spec.obstacles_per_room[0], spec.obstacles_per_room[1] + 1))):
                oh, ow = (int(v) for v in rng.integers(omin, omax + 1, size=2))
                if rh - oh - 24 <= 0 or rw - ow - 24 <= 0:
                    continue
                orow = r0 + 12 + int(rng.integers(0, rh - oh - 24))
                ocol = c0 + 12 + int(rng.integers(0, rw - ow - 24))
                trial = free.copy()
                trial[orow:orow + oh, ocol:ocol + ow] = False
                if _n_components(trial) == 1:
                    free = trial
        if free.any() and _n_components(free) == 1:
            cells = np.where(free, spec.free_class, spec.wall_class).astype(np.uint8)
            return SemanticGrid(
                cells=cells,
                class_values={spec.free_class: 0.0, spec.wall_class: 1.0},
                navigable_classes=frozenset({spec.free_class}),
                pad_class=spec.wall_class,
            )
    raise GenerationError(f"no connected environment after {spec.max_retries} attempts (seed={spec.seed})")


@dataclass
class EnvContext:
    """Per-environment precomputation shared by every scene simulated in it."""

    grid: SemanticGrid
    params: SocialForceParams
    free: np.ndarray = field(init=False)
    wall_xy: np.ndarray = field(init=False)
    clearance: np.ndarray = field(init=False)
    plan_nodes: np.ndarray = field(init=False)
    graph: csr_matrix = field(init=False)

    def __post_init__(self):
        nav = self.grid.navigable_mask()
        self.free = nav.astype(np.uint8)
        h, w = nav.shape
        wall_xy = np.full((h, w, 2), -1.0)
        if not nav.all():
            dist, (ri, ci) = ndimage.distance_transform_edt(nav, return_indices=True)
            wall_xy[..., 0] = ci
            wall_xy[..., 1] = ri
        else:
            dist = np.full((h, w), np.inf)
        self.wall_xy = wall_xy
        self.clearance = dist
        need = math.ceil(self.params.radius * self.params.px_per_meter) + 1.5
        plan = nav & (dist >= need)
        node_id = np.full((h, w), -1, dtype=np.int64)
        rows, cols = np.nonzero(plan)
        node_id[rows, cols] = np.arange(rows.size)
        self.plan_nodes = np.stack([cols, rows], axis=1)
        src, dst, wts = [], [], []
        for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1), (0, -1), (-1, 0), (-1, -1), (-1, 1)):
            r2, c2 = rows + dr, cols + dc
            ok = (r2 >= 0) & (r2 < h) & (c2 >= 0) & (c2 < w)
            ok[ok] = plan[r2[ok], c2[ok]]
            length = math.hypot(dr, dc)
            src.append(node_id[rows[ok], cols[ok]])
            dst.append(node_id[r2[ok], c2[ok]])
            # prefer corridor centres
            wts.append(length * (1.0 + 4.0 / dist[r2[ok], c2[ok]]))
        n = rows.size
        self.graph = csr_matrix((np.concatenate(wts), (np.concatenate(src), np.concatenate(dst))), shape=(n, n))

    @property
    def dt(self) -> float:
        return 1.0 / self.params.internal_hz


def social_force_accel(state: AgentState, ctx: EnvContext) -> np.ndarray:
    """Goal relaxation ``(v0 e - v) / tau`` plus exponential nearest-wall repulsion."""
    p = replace(ctx.params, desired_speed=state.desired_speed)
    ax, ay = _kernels.sf_accel(ctx.free, ctx.wall_xy, *state.position, *state.velocity,
                               *state.goal, p.as_kernel(ctx.dt))
    return np.array([ax, ay])


def social_force_step(state: AgentState, ctx: EnvContext, dt: float | None = None) -> AgentState:
    """Advance one semi-implicit Euler step.

    Velocity is clamped to ``v_max``; a move into a wall cell slides along
    whichever axis stays free, or stops. Raises :class:`StuckError` once the
    agent has moved less than ``stuck_eps`` for ``stuck_steps`` consecutive steps.
    """
    dt = ctx.dt if dt is None else dt
    if dt <= 0:
        raise DomainError("dt must be positive")
    p = replace(ctx.params, desired_speed=state.desired_speed)
    px, py, vx, vy, _, _ = _kernels.sf_step(ctx.free, ctx.wall_xy, *state.position, *state.velocity,
                                            *state.goal, p.as_kernel(dt))
    moved = math.hypot(px - state.position[0], py - state.position[1])
    still = state.still_steps + 1 if moved < p.stuck_eps else 0
    if still >= p.stuck_steps:
        raise StuckError(f"agent stuck at {state.position.tolist()}")
    return AgentState(np.array([px, py]), np.array([vx, vy]), state.goal.copy(), state.desired_speed, still)


def plan_route(ctx: EnvContext, rng: np.random.Generator, min_sep_px: float, tries: int = 50):
    """Sample start/goal cells at least ``min_sep_px`` apart and a shortest route between them."""
    nodes = ctx.plan_nodes
    if len(nodes) < 2:
        raise DomainError("environment has fewer than two plannable cells")
    for _ in range(tries):
        s = int(rng.integers(len(nodes)))
        dist, pred = dijkstra(ctx.graph, indices=s, return_predecessors=True)
        sep = np.hypot(*(nodes - nodes[s]).T)
        cand = np.nonzero(np.isfinite(dist) & (sep >= min_sep_px))[0]
        if cand.size == 0:
            continue
        g = int(cand[rng.integers(cand.size)])
        path = [g]
        while path[-1] != s:
            path.append(int(pred[path[-1]]))
        return nodes[path[::-1]].astype(np.float64)
    raise GenerationError("could not find a start/goal pair with a connecting route")


def simulate_scene(grid, rng: np.random.Generator, params: SocialForceParams | None = None,
                   min_frames: int = WINDOW, max_retries: int = 20) -> np.ndarray:
    """Simulate one start-to-goal walk and return it at 2.5 Hz in world meters.

    ``grid`` may be a :class:`SemanticGrid` or a prepared :class:`EnvContext`.
    Stuck or too-short walks are discarded and resampled.
    """
    ctx = grid if isinstance(grid, EnvContext) else EnvContext(grid, params or SocialForceParams())
    p = ctx.params
    h, w = ctx.grid.shape
    min_sep = 0.25 * math.hypot(h, w)
    record_every = int(round(p.internal_hz / FPS))
    for _ in range(max_retries):
        route_px = plan_route(ctx, rng, min_sep)
        route = route_px / p.px_per_meter
        length = float(np.hypot(*np.diff(route, axis=0).T).sum())
        max_steps = int(3 * length / (p.desired_speed * ctx.dt)) + 500
        pts, status = _kernels.integrate_path(
            ctx.free, ctx.wall_xy, route, route[0], p.as_kernel(ctx.dt), max_steps, record_every,
            p.lookahead, p.arrive_tol, p.stuck_eps, p.stuck_steps)
        if status == _kernels.STATUS_ARRIVED and len(pts) >= min_frames:
            return pts
        log.debug("discarding walk: status=%s frames=%d", status, len(pts))
    raise StuckError(f"no usable walk after {max_retries} attempts")


def sliding_windows(points: np.ndarray, length: int = WINDOW, stride: int = 4) -> list[tuple[int, np.ndarray]]:
    return [(s, points[s:s + length]) for s in range(0, len(points) - length + 1, stride)]


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def scene_line(scene_id: str, env_id: str, split: str, points: np.ndarray, fps: float = FPS) -> str:
    pts = ",".join(f"[{_fmt(x)},{_fmt(y)}]" for x, y in points)
    return (f'{{"scene_id": {json.dumps(scene_id)}, "env_id": {json.dumps(env_id)}, '
            f'"split": {json.dumps(split)}, "points": [{pts}], "fps": {fps}}}')


@dataclass(frozen=True)
class DatasetSpec:
    env_counts: tuple[int, int, int] = (8, 1, 2)
    scenes_per_env: int = 50
    seed: int = 0
    window_stride: int = 4
    grid_size: tuple[int, int] = (256, 256)
    workers: int = 1


def env_seed(seed: int, env_index: int) -> int:
    return int(np.random.SeedSequence([seed, env_index]).generate_state(1)[0])


def _simulate_env(job):
    env_index, seed, scenes, env_spec, params = job
    grid = generate_environment(env_spec)
    ctx = EnvContext(grid, params)
    paths = [simulate_scene(ctx, np.random.default_rng([seed, env_index, k])) for k in range(scenes)]
    return grid, paths


def build_dataset(out_dir, spec: DatasetSpec = DatasetSpec(), params: SocialForceParams = SocialForceParams(),
                  env_template: EnvironmentSpec | None = None) -> dict:
    """Write ``envs/<id>.pgm|json`` and ``scenes.jsonl``; splits are disjoint by environment."""
    if min(spec.env_counts) < 1 or spec.scenes_per_env < 1:
        raise DomainError("env counts and scenes per env must be >= 1")
    out = Path(out_dir)
    template = env_template or EnvironmentSpec(seed=0, grid_size=tuple(spec.grid_size))
    splits = ["train"] * spec.env_counts[0] + ["val"] * spec.env_counts[1] + ["test"] * spec.env_counts[2]
    jobs = [(i, spec.seed, spec.scenes_per_env, replace(template, seed=env_seed(spec.seed, i)), params)
            for i in range(len(splits))]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            results = list(pool.map(_simulate_env, jobs))
    else:
        results = [_simulate_env(j) for j in jobs]
    try:
        (out / "envs").mkdir(parents=True, exist_ok=True)
        n_paths = n_records = 0
        lines = []
        for i, (split, (grid, paths)) in enumerate(zip(splits, results)):
            env_id = f"env{i:03d}"
            save_grid(out / "envs" / env_id, grid, params.homography,
                      extra={"env_id": env_id, "split": split, "seed": env_seed(spec.seed, i)})
            for k, path in enumerate(paths):
                n_paths += 1
                for start, win in sliding_windows(path, WINDOW, spec.window_stride):
                    lines.append(scene_line(f"{env_id}_s{k:03d}_w{start:03d}", env_id, split, win))
                    n_records += 1
        (out / "scenes.jsonl").write_text("\n".join(lines) + "\n")
        summary = {"paths": n_paths, "records": n_records, "envs": len(splits),
                   "dataset": asdict(spec), "social_force": asdict(params)}
        (out / "dataset.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"writing dataset under {out}: {exc}") from exc
    return summary
