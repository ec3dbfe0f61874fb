# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Must stay operation-for-operation in step with ``_fallback.py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, floor

cnp.import_array()

DEF STATUS_ARRIVED = 0
DEF STATUS_STUCK = 1
DEF STATUS_TIMEOUT = 2


def render_gaussians(points, Py_ssize_t height, Py_ssize_t width, table):
    cdef cnp.int64_t[:, ::1] pts = np.ascontiguousarray(np.asarray(points, dtype=np.int64).reshape(-1, 2))
    cdef double[::1] tab = np.ascontiguousarray(table, dtype=np.float64)
    out_arr = np.zeros((height, width), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t cutoff = tab.shape[0] - 1
    cdef Py_ssize_t reach = 0
    while (reach + 1) * (reach + 1) <= cutoff:
        reach += 1
    cdef Py_ssize_t i, r, c, x, y, r0, r1, c0, c1, d2
    cdef double v
    for i in range(pts.shape[0]):
        x = pts[i, 0]
        y = pts[i, 1]
        r0 = y - reach if y - reach > 0 else 0
        r1 = y + reach + 1 if y + reach + 1 < height else height
        c0 = x - reach if x - reach > 0 else 0
        c1 = x + reach + 1 if x + reach + 1 < width else width
        for r in range(r0, r1):
            for c in range(c0, c1):
                d2 = (r - y) * (r - y) + (c - x) * (c - x)
                if d2 <= cutoff:
                    v = tab[d2]
                    if v > out[r, c]:
                        out[r, c] = v
    return out_arr


cdef inline long _round_half_away(double v) nogil:
    if v >= 0.0:
        return <long>floor(v + 0.5)
    return -(<long>floor(-v + 0.5))


cdef inline double _quant(double v) nogil:
    return floor(v * 1e6 + 0.5) / 1e6


cdef inline bint _free(const cnp.uint8_t[:, ::1] free, double px, double py, double scale) nogil:
    cdef long col = _round_half_away(px * scale)
    cdef long row = _round_half_away(py * scale)
    if row < 0 or col < 0 or row >= free.shape[0] or col >= free.shape[1]:
        return False
    return free[row, col] != 0


cdef struct Params:
    double tau, v0, a_wall, b_wall, radius, vmax, dt, scale, cutoff


cdef Params _params(params):
    cdef Params p
    p.tau = params[0]
    p.v0 = params[1]
    p.a_wall = params[2]
    p.b_wall = params[3]
    p.radius = params[4]
    p.vmax = params[5]
    p.dt = params[6]
    p.scale = params[7]
    p.cutoff = params[8]
    return p


cdef void _accel(const cnp.uint8_t[:, ::1] free, const double[:, :, ::1] wall_xy,
                 double px, double py, double vx, double vy, double gx, double gy,
                 Params* p, double* ax, double* ay) nogil:
    cdef double dx = gx - px
    cdef double dy = gy - py
    cdef double dist = sqrt(dx * dx + dy * dy)
    cdef double ex, ey, wx, wy, nx, ny, dc, dw, f
    if dist > 1e-9:
        ex = dx / dist
        ey = dy / dist
    else:
        ex = 0.0
        ey = 0.0
    ax[0] = (p.v0 * ex - vx) / p.tau
    ay[0] = (p.v0 * ey - vy) / p.tau
    cdef long col = _round_half_away(px * p.scale)
    cdef long row = _round_half_away(py * p.scale)
    if 0 <= row < free.shape[0] and 0 <= col < free.shape[1]:
        wx = wall_xy[row, col, 0]
        wy = wall_xy[row, col, 1]
        if wx >= 0.0:
            nx = px - wx / p.scale
            ny = py - wy / p.scale
            dc = sqrt(nx * nx + ny * ny)
            dw = dc - 0.5 / p.scale
            if dc > 1e-9 and dw <= p.cutoff:
                f = p.a_wall * exp((p.radius - dw) / p.b_wall)
                ax[0] = ax[0] + f * nx / dc
                ay[0] = ay[0] + f * ny / dc


cdef void _step(const cnp.uint8_t[:, ::1] free, const double[:, :, ::1] wall_xy,
                double* px, double* py, double* vx, double* vy, double gx, double gy,
                Params* p, double* ax, double* ay) nogil:
    _accel(free, wall_xy, px[0], py[0], vx[0], vy[0], gx, gy, p, ax, ay)
    vx[0] = vx[0] + ax[0] * p.dt
    vy[0] = vy[0] + ay[0] * p.dt
    cdef double speed = sqrt(vx[0] * vx[0] + vy[0] * vy[0])
    if speed > p.vmax:
        vx[0] = vx[0] * (p.vmax / speed)
        vy[0] = vy[0] * (p.vmax / speed)
    cdef double nx = _quant(px[0] + vx[0] * p.dt)
    cdef double ny = _quant(py[0] + vy[0] * p.dt)
    if _free(free, nx, ny, p.scale):
        px[0] = nx
        py[0] = ny
    elif _free(free, nx, py[0], p.scale):
        px[0] = nx
        vy[0] = 0.0
    elif _free(free, px[0], ny, p.scale):
        py[0] = ny
        vx[0] = 0.0
    else:
        vx[0] = 0.0
        vy[0] = 0.0


def sf_accel(free, wall_xy, double px, double py, double vx, double vy,
             double gx, double gy, params):
    cdef const cnp.uint8_t[:, ::1] fr = np.ascontiguousarray(free, dtype=np.uint8)
    cdef const double[:, :, ::1] wxy = np.ascontiguousarray(wall_xy, dtype=np.float64)
    cdef Params p = _params(params)
    cdef double ax = 0.0, ay = 0.0
    _accel(fr, wxy, px, py, vx, vy, gx, gy, &p, &ax, &ay)
    return ax, ay


def sf_step(free, wall_xy, double px, double py, double vx, double vy,
            double gx, double gy, params):
    cdef const cnp.uint8_t[:, ::1] fr = np.ascontiguousarray(free, dtype=np.uint8)
    cdef const double[:, :, ::1] wxy = np.ascontiguousarray(wall_xy, dtype=np.float64)
    cdef Params p = _params(params)
    cdef double ax = 0.0, ay = 0.0
    _step(fr, wxy, &px, &py, &vx, &vy, gx, gy, &p, &ax, &ay)
    return px, py, vx, vy, ax, ay


def integrate_path(free, wall_xy, route, start, params, long max_steps, long record_every,
                   double lookahead, double arrive_tol, double stuck_eps, long stuck_steps):
    cdef const cnp.uint8_t[:, ::1] fr = np.ascontiguousarray(free, dtype=np.uint8)
    cdef const double[:, :, ::1] wxy = np.ascontiguousarray(wall_xy, dtype=np.float64)
    cdef const double[:, ::1] rt = np.ascontiguousarray(route, dtype=np.float64)
    cdef Params p = _params(params)
    cdef Py_ssize_t m = rt.shape[0]
    cdef double px = _quant(<double>start[0])
    cdef double py = _quant(<double>start[1])
    cdef double vx = 0.0, vy = 0.0, ax = 0.0, ay = 0.0
    cdef double gx, gy, ox, oy, ddx, ddy, moved
    cdef Py_ssize_t idx = 0
    cdef long still = 0, step, n_rec = 1
    cdef long cap = max_steps // record_every + 2
    rec_arr = np.empty((cap, 2), dtype=np.float64)
    cdef double[:, ::1] rec = rec_arr
    cdef int status = STATUS_TIMEOUT
    rec[0, 0] = px
    rec[0, 1] = py
    with nogil:
        for step in range(1, max_steps + 1):
            while idx < m - 1:
                ddx = rt[idx, 0] - px
                ddy = rt[idx, 1] - py
                if sqrt(ddx * ddx + ddy * ddy) < lookahead:
                    idx += 1
                else:
                    break
            gx = rt[idx, 0]
            gy = rt[idx, 1]
            ox = px
            oy = py
            _step(fr, wxy, &px, &py, &vx, &vy, gx, gy, &p, &ax, &ay)
            moved = sqrt((px - ox) * (px - ox) + (py - oy) * (py - oy))
            if moved < stuck_eps:
                still += 1
            else:
                still = 0
            if step % record_every == 0:
                rec[n_rec, 0] = px
                rec[n_rec, 1] = py
                n_rec += 1
            if still >= stuck_steps:
                status = STATUS_STUCK
                break
            if idx == m - 1:
                ddx = rt[idx, 0] - px
                ddy = rt[idx, 1] - py
                if sqrt(ddx * ddx + ddy * ddy) < arrive_tol:
                    status = STATUS_ARRIVED
                    break
    return rec_arr[:n_rec].copy(), status
