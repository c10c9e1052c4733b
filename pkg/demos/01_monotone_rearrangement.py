"""Tour of the core solver: convex order, potentials, and the rearrangement.

Run with: python demos/01_monotone_rearrangement.py
"""

import numpy as np

from wmrline import (
    CostSpec,
    DiscreteMeasure,
    convex_order_leq,
    irreducible_components,
    mean,
    potential,
    solve_weak_transport,
    verify_admissible,
    verify_slope1_characterization,
    wasserstein,
)

# ------------------------------------------------------------------
# Two measures on the line: a tight source and a spread-out target.
# ------------------------------------------------------------------
mu = DiscreteMeasure(np.array([-0.6, -0.1, 0.4, 1.8]), np.array([0.3, 0.3, 0.3, 0.1]))
nu = DiscreteMeasure(np.array([-3.0, -1.0, 1.5, 3.5]), np.array([0.25, 0.3, 0.25, 0.2]))

print("mean(mu) =", mean(mu), "  mean(nu) =", mean(nu))
print("mu <=_c nu ?", convex_order_leq(mu, nu))

# Potential functions are the workhorse: convex, kinks at the atoms,
# slopes -1/+1 far out. Convex order is pointwise order of potentials.
u = potential(nu)
grid = np.linspace(-4, 4, 9)
print("u_nu on a grid:", np.round(u(grid), 3))

# ------------------------------------------------------------------
# Solve the barycentric weak transport problem.
# ------------------------------------------------------------------
sol = solve_weak_transport(mu, nu, CostSpec.quadratic())
print("\noptimal map on the atoms of mu:")
for x, t in zip(sol.map.knots_x, sol.map.knots_t):
    print(f"  T({x:+.3f}) = {t:+.6f}   displacement {x - t:+.6f}")
print("value V =", sol.value, "  KKT residual =", sol.kkt_residual)
print("pushforward atoms:", np.round(sol.pushforward.atoms, 6))

# The optimizer does not depend on the strictly convex cost:
for cost in (CostSpec.quartic(), CostSpec.power(3.0)):
    alt = solve_weak_transport(mu, nu, cost)
    print(f"W1 gap to the {cost.kind} optimizer:",
          wasserstein(sol.pushforward, alt.pushforward, 1.0))

# ------------------------------------------------------------------
# The geometry: the map is admissible (increasing, 1-Lipschitz, ordered
# pushforward) and has slope 1 wherever its image enters an irreducible
# interval of (T(mu), nu).
# ------------------------------------------------------------------
print("\nirreducible intervals of (T(mu), nu):",
      [(round(iv.lo, 4), round(iv.hi, 4)) for iv in sol.irreducibles])
print("admissible:", verify_admissible(sol.map, mu, nu).ok)
print("slope-1 characterization:", verify_slope1_characterization(sol, mu, nu).ok)

# Irreducible intervals of the original pair, for comparison.
if convex_order_leq(mu, nu):
    comps = irreducible_components(mu, nu)
    print("components of (mu, nu):", [(round(iv.lo, 4), round(iv.hi, 4)) for iv in comps])
