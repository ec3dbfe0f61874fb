"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeats N]
"""
import argparse
import timeit

import numpy as np

from msforecast import _kernels
from msforecast.envsim import EnvContext, EnvironmentSpec, SocialForceParams, generate_environment, plan_route


def workloads():
    rng = np.random.default_rng(0)
    table = np.array(_kernels.gaussian_table(4.0))
    pts = rng.integers(0, 64, size=(20, 2))
    ctx = EnvContext(generate_environment(EnvironmentSpec(seed=5)), SocialForceParams())
    p = ctx.params
    kp = p.as_kernel(ctx.dt)
    r, c = np.argwhere(ctx.free)[len(np.argwhere(ctx.free)) // 2]
    state = (c / p.px_per_meter, r / p.px_per_meter, 0.3, -0.2, 4.0, 4.0)
    route = plan_route(ctx, np.random.default_rng(1), 40.0) / p.px_per_meter
    walk = (ctx.free, ctx.wall_xy, route, route[0], kp, 4000, 10, p.lookahead, p.arrive_tol,
            p.stuck_eps, p.stuck_steps)
    return {
        "render_gaussians (20 pts, 64x64)": lambda b: b.render_gaussians(pts, 64, 64, table),
        "sf_step (one agent step)": lambda b: b.sf_step(ctx.free, ctx.wall_xy, *state, kp),
        "integrate_path (one walk)": lambda b: b.integrate_path(*walk),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    backends = _kernels.backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the Python fallback is timed")
    print(f"{'kernel':36s}" + "".join(f"{name:>14s}" for name in backends) + "     speedup")
    for label, fn in workloads().items():
        times = {}
        for name, mod in backends.items():
            timer = timeit.Timer(lambda: fn(mod))
            n, _ = timer.autorange()
            times[name] = min(timer.repeat(args.repeats, n)) / n
        row = f"{label:36s}" + "".join(f"{times[n] * 1e6:12.1f}us" for n in backends)
        if "compiled" in times:
            row += f"  {times['python'] / times['compiled']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
