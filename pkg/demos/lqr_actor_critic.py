"""Single-loop actor-critic on the 3-state / 2-control benchmark system.

The critic estimates the average cost and the curvature matrix from one
online trajectory; the actor descends the preconditioned gradient those
estimates define. The optimality gap J(K_k) - J(K*) is tracked against
the Riccati ground truth.
"""

import numpy as np

from twoscale.lqr import cost_J, dare_solve, paper_lqr_3x2, run_lqr
from twoscale.solver import custom_schedule, make_polynomial_schedule

system = paper_lqr_3x2(psi_scale=0.25, sigma=0.5)
P_star, K_star = dare_solve(system)
print("optimal gain:")
print(np.array2string(K_star, precision=4))
print(f"J(K*) = {cost_J(system, K_star):.5f}, "
      f"J(0) = {cost_J(system, np.zeros((2, 3))):.5f}")

iters, runs, stride = 60000, 5, 5000
fast_schedule = make_polynomial_schedule(40.0, 8.0, 10.0, 400.0)
std_schedule = custom_schedule(
    lambda k: 1.0,
    lambda k: 8.0 / (k + 801.0),
    lambda k: 2.0 / (k + 801.0) ** (2 / 3),
)

for algo, schedule in (("fast", fast_schedule), ("standard", std_schedule)):
    gaps = []
    for i in range(runs):
        tr = run_lqr(system, algo, schedule, iters, seed=(11, i),
                     stride=stride)
        assert not tr.flagged
        gaps.append(tr.metrics["gap"])
    gap = np.mean(gaps, axis=0)
    print(f"\n{algo}: mean optimality gap over {runs} replicas")
    for idx in range(0, tr.ks.size, 3):
        print(f"  k={tr.ks[idx]:>6d}  gap={gap[idx]:.6f}")
