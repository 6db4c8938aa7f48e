"""A shape discrepancy between three and four discs.

The discrepancy is the cheaper of the two directional registrations.  Its
value against itself is zero, and swapping the arguments gives the same number.
Both directional costs are printed because they can differ a lot: merging is
not the same motion as splitting.

Run with ``python demos/discrepancy.py`` (about a minute).
"""
from phasereg import build_grid
from phasereg.optimizer import OptimizerConfig
from phasereg.registration import discrepancy
from phasereg.shapes import four_discs, three_discs

grid = build_grid(65, T=10)
three, four = three_discs(grid), four_discs(grid)
opts = dict(grid=grid, optimizer=OptimizerConfig(max_iters=80))

same = discrepancy(three, three, **opts)
print(f"d(three, three) = {same.d_sigma:.3e}")

res = discrepancy(three, four, parallel=True, **opts)
print(f"rho(three -> four) = {res.rho_forward:.4e}")
print(f"rho(four -> three) = {res.rho_backward:.4e}")
print(f"d(three, four)     = {res.d_sigma:.4e}")
print("each rho is the best value the local optimizer found, so it bounds the minimum from above")
