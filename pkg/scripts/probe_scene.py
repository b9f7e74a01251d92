#!/usr/bin/env python3
"""Scene design probe: start-pose clearances over time plus a quick
dk_rrt / frozen / reactive seed sweep.

Usage: python3 scripts/probe_scene.py scenes/mixed_periodic.json [n_seeds]
"""

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from kooplan.debris import debris_centers
from kooplan.planner import config_clearance, run_episode
from kooplan.scenes import load_scene


def main():
    path = sys.argv[1]
    n_seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 10
    scene = load_scene(path)
    m, ex = scene.manipulator, scene.execution
    q = scene.query.start

    print(f"scene {scene.name}: {len(scene.debris)} obstacles, "
          f"time limit {ex.time_limit}s, warmup {ex.warmup_cycles * ex.dt_cycle}s")
    print("start-pose clearance per obstacle:")
    for t in np.arange(0.0, ex.time_limit + 0.01, 0.5):
        cs = debris_centers(scene.debris, t)
        clears = [
            config_clearance(m, q, cs[o:o + 1], scene.debris.radii[o:o + 1],
                             ex.capsule_radius)
            for o in range(len(scene.debris))
        ]
        flag = " <-- start pose swept" if min(clears, default=1) < 0 else ""
        print(f"  t={t:5.2f}: " + " ".join(f"{c:+.2f}" for c in clears) + flag)

    for method in ("dk_rrt", "frozen", "reactive"):
        t0 = time.perf_counter()
        reports = [run_episode(scene, method, seed=s) for s in range(n_seeds)]
        ok = np.mean([r.success for r in reports])
        col = np.mean([r.collided for r in reports])
        tmo = np.mean([r.timed_out for r in reports])
        clr = min(r.min_clearance for r in reports)
        print(f"{method:>8}: success {ok:.2f} (collided {col:.2f}, timeout {tmo:.2f}) "
              f"min_clear {clr:+.3f}  t/ep {(time.perf_counter() - t0) / n_seeds:.2f}s")


if __name__ == "__main__":
    main()
