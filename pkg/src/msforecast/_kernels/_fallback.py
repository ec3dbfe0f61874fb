"""Pure-Python kernels. Operation order mirrors ``_core.pyx`` so both backends
produce bit-identical results."""
import math

import numpy as np

STATUS_ARRIVED = 0
STATUS_STUCK = 1
STATUS_TIMEOUT = 2


def render_gaussians(points, height, width, table):
    """Max-combine truncated Gaussian bumps centred on integer pixels.

    ``table[k]`` holds the kernel value at squared distance ``k``; squared
    distances past the end of the table contribute exactly zero.
    """
    out = np.zeros((height, width), dtype=np.float64)
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    table = np.asarray(table, dtype=np.float64)
    cutoff = table.shape[0] - 1
    reach = int(math.isqrt(cutoff))
    for x, y in pts:
        r0, r1 = max(y - reach, 0), min(y + reach + 1, height)
        c0, c1 = max(x - reach, 0), min(x + reach + 1, width)
        if r0 >= r1 or c0 >= c1:
            continue
        dy = np.arange(r0, r1) - y
        dx = np.arange(c0, c1) - x
        d2 = dy[:, None] ** 2 + dx[None, :] ** 2
        vals = np.where(d2 <= cutoff, table[np.minimum(d2, cutoff)], 0.0)
        np.maximum(out[r0:r1, c0:c1], vals, out=out[r0:r1, c0:c1])
    return out


def _round_half_away(v):
    if v >= 0.0:
        return int(math.floor(v + 0.5))
    return -int(math.floor(-v + 0.5))


def _quant(v):
    return math.floor(v * 1e6 + 0.5) / 1e6


def _free(free, px, py, scale):
    col = _round_half_away(px * scale)
    row = _round_half_away(py * scale)
    if row < 0 or col < 0 or row >= free.shape[0] or col >= free.shape[1]:
        return False
    return free[row, col] != 0


def sf_accel(free, wall_xy, px, py, vx, vy, gx, gy, params):
    """Social-force acceleration: goal relaxation plus nearest-wall repulsion."""
    tau, v0, a_wall, b_wall, radius, vmax, dt, scale, cutoff = params[:9]
    dx = gx - px
    dy = gy - py
    dist = math.sqrt(dx * dx + dy * dy)
    if dist > 1e-9:
        ex = dx / dist
        ey = dy / dist
    else:
        ex = 0.0
        ey = 0.0
    ax = (v0 * ex - vx) / tau
    ay = (v0 * ey - vy) / tau
    col = _round_half_away(px * scale)
    row = _round_half_away(py * scale)
    if 0 <= row < free.shape[0] and 0 <= col < free.shape[1]:
        wx = wall_xy[row, col, 0]
        wy = wall_xy[row, col, 1]
        if wx >= 0.0:
            nx = px - wx / scale
            ny = py - wy / scale
            dc = math.sqrt(nx * nx + ny * ny)
            dw = dc - 0.5 / scale
            if dc > 1e-9 and dw <= cutoff:
                f = a_wall * math.exp((radius - dw) / b_wall)
                ax = ax + f * nx / dc
                ay = ay + f * ny / dc
    return ax, ay


def sf_step(free, wall_xy, px, py, vx, vy, gx, gy, params):
    """One semi-implicit Euler step with speed clamp and wall sliding.

    Returns ``(px, py, vx, vy, ax, ay)``.
    """
    vmax = params[5]
    dt = params[6]
    scale = params[7]
    ax, ay = sf_accel(free, wall_xy, px, py, vx, vy, gx, gy, params)
    vx = vx + ax * dt
    vy = vy + ay * dt
    speed = math.sqrt(vx * vx + vy * vy)
    if speed > vmax:
        vx = vx * (vmax / speed)
        vy = vy * (vmax / speed)
    nx = _quant(px + vx * dt)
    ny = _quant(py + vy * dt)
    if _free(free, nx, ny, scale):
        px = nx
        py = ny
    elif _free(free, nx, py, scale):
        px = nx
        vy = 0.0
    elif _free(free, px, ny, scale):
        py = ny
        vx = 0.0
    else:
        vx = 0.0
        vy = 0.0
    return px, py, vx, vy, ax, ay


def integrate_path(free, wall_xy, route, start, params, max_steps, record_every,
                   lookahead, arrive_tol, stuck_eps, stuck_steps):
    """Follow ``route`` (M x 2, world) from ``start`` with a look-ahead carrot.

    Returns ``(recorded positions (n, 2), status)``; a position is recorded
    every ``record_every`` internal steps, starting with the initial one.
    """
    route = np.asarray(route, dtype=np.float64)
    m = route.shape[0]
    px = _quant(float(start[0]))
    py = _quant(float(start[1]))
    vx = 0.0
    vy = 0.0
    idx = 0
    still = 0
    rec = [(px, py)]
    status = STATUS_TIMEOUT
    for step in range(1, max_steps + 1):
        while idx < m - 1:
            ddx = route[idx, 0] - px
            ddy = route[idx, 1] - py
            if math.sqrt(ddx * ddx + ddy * ddy) < lookahead:
                idx += 1
            else:
                break
        gx = route[idx, 0]
        gy = route[idx, 1]
        ox = px
        oy = py
        px, py, vx, vy, _, _ = sf_step(free, wall_xy, px, py, vx, vy, gx, gy, params)
        moved = math.sqrt((px - ox) * (px - ox) + (py - oy) * (py - oy))
        if moved < stuck_eps:
            still += 1
        else:
            still = 0
        if step % record_every == 0:
            rec.append((px, py))
        if still >= stuck_steps:
            status = STATUS_STUCK
            break
        if idx == m - 1:
            ddx = route[idx, 0] - px
            ddy = route[idx, 1] - py
            if math.sqrt(ddx * ddx + ddy * ddy) < arrive_tol:
                status = STATUS_ARRIVED
                break
    return np.array(rec, dtype=np.float64), status
