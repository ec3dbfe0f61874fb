import json
from collections import deque
from dataclasses import replace

import numpy as np
import pytest

from msforecast.envsim import (FPS, WINDOW, AgentState, DatasetSpec, EnvContext, EnvironmentSpec, SocialForceParams,
                               build_dataset, generate_environment, simulate_scene, sliding_windows,
                               social_force_accel, social_force_step)
from msforecast.errors import DomainError, StuckError
from msforecast.metrics import ForecastSet, ecfl
from msforecast.raster import load_grid

from conftest import binary_grid


def _flood_components(free: np.ndarray) -> int:
    """4-connected components by breadth-first search."""
    seen = np.zeros_like(free, dtype=bool)
    h, w = free.shape
    count = 0
    for r0, c0 in zip(*np.nonzero(free)):
        if seen[r0, c0]:
            continue
        count += 1
        seen[r0, c0] = True
        q = deque([(r0, c0)])
        while q:
            r, c = q.popleft()
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and free[rr, cc] and not seen[rr, cc]:
                    seen[rr, cc] = True
                    q.append((rr, cc))
    return count


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_environment_connected_and_walled(seed):
    g = generate_environment(EnvironmentSpec(seed=seed, grid_size=(160, 160)))
    free = g.navigable_mask()
    assert _flood_components(free) == 1
    assert not free[0].any() and not free[-1].any() and not free[:, 0].any() and not free[:, -1].any()
    assert free.mean() > 0.1


def test_environment_deterministic():
    a = generate_environment(EnvironmentSpec(seed=11))
    b = generate_environment(EnvironmentSpec(seed=11))
    assert a.cells.tobytes() == b.cells.tobytes()
    with pytest.raises(DomainError):
        EnvironmentSpec(seed=0, room_size_range=(50, 40))


def _open_ctx(params=SocialForceParams()):
    free = np.ones((200, 200), dtype=bool)
    free[0, :] = free[-1, :] = free[:, 0] = free[:, -1] = False
    return EnvContext(binary_grid(free), params)


def test_goal_relaxation_in_free_space():
    ctx = _open_ctx()
    s = AgentState((6.0, 6.0), (0.0, 0.0), (16.0, 6.0))
    assert social_force_accel(s, ctx) == pytest.approx([2.68, 0.0], abs=1e-12)


def test_at_goal_only_walls_act():
    ctx = _open_ctx()
    s = AgentState((6.0, 6.0), (0.0, 0.0), (6.0, 6.0))
    assert np.all(social_force_accel(s, ctx) == 0.0)  # nearest wall beyond the cutoff


def test_wall_repulsion_at_contact_distance():
    free = np.ones((64, 64), dtype=bool)
    free[:, 0] = False
    p = SocialForceParams()
    ctx = EnvContext(binary_grid(free), p)
    # wall cell edge is half a pixel from its centre
    x = p.radius + 0.5 / p.px_per_meter
    s = AgentState((x, 32 / p.px_per_meter), (0.0, 0.0), (x, 32 / p.px_per_meter))
    a = social_force_accel(s, ctx)
    assert a[0] == pytest.approx(p.wall_a, rel=1e-9) and a[1] == pytest.approx(0.0, abs=1e-12)


def test_step_speed_clamp_and_stuck():
    ctx = _open_ctx()
    s = AgentState((6.0, 6.0), (10.0, 0.0), (12.0, 6.0))
    nxt = social_force_step(s, ctx)
    assert np.hypot(*nxt.velocity) <= ctx.params.v_max + 1e-12
    boxed = np.zeros((20, 20), dtype=bool)
    boxed[10, 10] = True
    tight = EnvContext(binary_grid(boxed), SocialForceParams(stuck_steps=3))
    st = AgentState((10 / 15, 10 / 15), (0, 0), (5.0, 0.67))
    with pytest.raises(StuckError):
        for _ in range(500):
            st = social_force_step(st, tight)
    with pytest.raises(DomainError):
        social_force_step(s, ctx, dt=0)


def test_simulated_points_navigable_and_deterministic():
    g = generate_environment(EnvironmentSpec(seed=2))
    ctx = EnvContext(g, SocialForceParams())
    a = simulate_scene(ctx, np.random.default_rng(4))
    b = simulate_scene(ctx, np.random.default_rng(4))
    assert np.array_equal(a, b) and len(a) >= WINDOW
    h = ctx.params.homography
    assert ecfl(ForecastSet("s", a[None], a), g, h) == 100.0


def test_corridor_progress_is_monotone():
    free = np.zeros((30, 240), dtype=bool)
    free[5:25, 2:238] = True
    ctx = EnvContext(binary_grid(free), SocialForceParams())
    for seed in range(4):
        pts = simulate_scene(ctx, np.random.default_rng(seed))
        dx = np.diff(pts[:, 0]) * np.sign(pts[-1, 0] - pts[0, 0])
        assert np.all(dx >= -1e-9)
        assert np.all(free[np.round(pts[:, 1] * 15).astype(int), np.round(pts[:, 0] * 15).astype(int)])


def test_sliding_windows():
    pts = np.arange(60).reshape(30, 2)
    wins = sliding_windows(pts, 20, 4)
    assert [s for s, _ in wins] == [0, 4, 8]
    assert all(w.shape == (20, 2) for _, w in wins)


def test_build_dataset_small(tmp_path):
    spec = DatasetSpec(env_counts=(2, 1, 1), scenes_per_env=3, seed=9)
    s1 = build_dataset(tmp_path / "a", spec)
    build_dataset(tmp_path / "b", spec)
    assert (tmp_path / "a/scenes.jsonl").read_bytes() == (tmp_path / "b/scenes.jsonl").read_bytes()
    assert s1["paths"] == 12
    split_of = {}
    for line in (tmp_path / "a/scenes.jsonl").read_text().splitlines():
        rec = json.loads(line)
        assert len(rec["points"]) == WINDOW and rec["fps"] == FPS
        assert split_of.setdefault(rec["env_id"], rec["split"]) == rec["split"]
    assert sorted(split_of.values()) == ["test", "train", "train", "val"]
    g, h = load_grid(tmp_path / "a/envs/env000")
    assert h.matrix[0, 0] == 15.0
    with pytest.raises(DomainError):
        build_dataset(tmp_path / "c", replace(spec, scenes_per_env=0))
