"""Compiled vs numpy simulator kernel: control steps per second on the desk scene.

    python benchmarks/bench_kernel.py [--worlds 1 32] [--steps 200]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from hybridmimic.scenario import make_scenario
from hybridmimic.sim import SimState, backend, reset, step


def batched(state: SimState, n: int) -> SimState:
    def rep(x):
        return np.repeat(np.asarray(x, dtype=float)[None], n, axis=0)
    return SimState(rep(state.q), rep(state.qd), rep(state.root_pos), rep(state.root_quat), rep(state.obj_pos),
                    rep(state.obj_quat), rep(state.obj_vel), rep(state.obj_angvel), np.zeros(n))


def run(name: str, worlds: int, steps: int) -> tuple[float, np.ndarray]:
    scn = make_scenario()
    world = scn.world()
    prev = backend.use_backend(name)
    try:
        s = batched(reset(world, scn, scn.joint_angles[0]), worlds)
        acts = np.zeros((worlds, scn.skeleton.num_dofs))
        t0 = time.perf_counter()
        for i in range(steps):
            s = step(world, s, acts + 0.3 * np.sin(0.05 * i))
        dt = time.perf_counter() - t0
    finally:
        backend.use_backend(prev)
    return steps * worlds / dt, np.asarray(s.q)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--worlds", type=int, nargs="+", default=[1, 32])
    ap.add_argument("--steps", type=int, default=200)
    a = ap.parse_args()
    print(f"backends: {backend.available()}")
    for n in a.worlds:
        res = {name: run(name, n, a.steps) for name in backend.available()}
        line = ", ".join(f"{k} {v[0]:9.0f} world-steps/s" for k, v in res.items())
        if len(res) == 2:
            (ra, qa), (rb, qb) = res["cython"], res["python"]
            line += f", speedup x{ra / rb:.1f}, max |dq| {np.abs(qa - qb).max():.1e}"
        print(f"{n:3d} worlds: {line}")


if __name__ == "__main__":
    main()
