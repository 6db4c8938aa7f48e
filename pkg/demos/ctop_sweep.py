"""How the price of normal motion shapes the optimal registration.

Raising ``C_top`` makes the topology-changing control ``u`` expensive, so the
optimizer leans more on the transport field ``v``.  For each value the script
reports the size of ``u`` and checks that transporting the initial shape with
``v`` alone never changes its number of components: only ``u`` can split.

Run with ``python demos/ctop_sweep.py`` (a couple of minutes).
"""
from phasereg import build_grid
from phasereg.controls import u_norm_p
from phasereg.optimizer import OptimizerConfig
from phasereg.registration import RegistrationProblem, component_count, decompose, solve
from phasereg.shapes import one_disc, two_discs

grid = build_grid(65, T=10)
f0, f1 = one_disc(grid), two_discs(grid)

print(f"{'C_top':>8} {'|u|^p':>10} {'rho':>11} {'v-only comps':>13} {'final comps':>12}")
for C_top in (1e6, 1e7, 1e8):
    problem = RegistrationProblem(f0, f1, grid, C_top=C_top,
                                  optimizer=OptimizerConfig(max_iters=100))
    sol = solve(problem)
    u, _ = sol.controls
    dec = decompose(sol, problem, stride=4)
    print(f"{C_top:8.0e} {u_norm_p(u, problem.powers, grid):10.4g} {sol.rho:11.4e} "
          f"{component_count(dec.advected_indicator):13d} "
          f"{component_count(sol.trajectory.endpoint):12d}")
