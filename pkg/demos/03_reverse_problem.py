"""The reverse relaxation: lift mu instead of squeezing nu.

The same optimal value is reached by finding the convex-order-smallest
measure nu* above mu that an increasing 1-Lipschitz map pushes onto nu.
The construction reads nu* off the rearrangement directly: shift each
irreducible interval's mass by that interval's constant displacement, and
keep mu's atoms wherever the map is contractive.

Run with: python demos/03_reverse_problem.py
"""

import numpy as np

from wmrline import (
    CostSpec,
    DiscreteMeasure,
    convex_order_leq,
    reverse_optimizer,
    solve_weak_transport,
)

mu = DiscreteMeasure(np.array([0.0]), np.array([1.0]))
nu = DiscreteMeasure(np.array([0.0, 2.0]), np.array([0.5, 0.5]))

direct = solve_weak_transport(mu, nu)
rev = reverse_optimizer(mu, nu)

print("direct value:", direct.value)
print("nu* atoms:", rev.nu_star.atoms, "weights:", rev.nu_star.weights)
print("reverse map knots:", list(zip(rev.tilde_map.knots_x, rev.tilde_map.knots_t)))
print("value through nu*:", rev.value)
print("mu <=_c nu* :", convex_order_leq(mu, rev.nu_star))

# The reverse map restricted to supp(mu) is the rearrangement itself.
print("T~(0) =", rev.tilde_map(np.array([0.0]))[0], " vs T(0) =", direct.map(0.0)[0])

# A richer instance with both a contractive part and a shifted block.
mu2 = DiscreteMeasure(np.array([-2.0, -0.5, 0.5, 2.0]), np.array([0.2, 0.3, 0.3, 0.2]))
nu2 = DiscreteMeasure(np.array([-1.5, -0.2, 0.9]), np.array([0.35, 0.35, 0.3]))
rev2 = reverse_optimizer(mu2, nu2, CostSpec.quadratic())
dir2 = solve_weak_transport(mu2, nu2)
print("\nsecond instance: |reverse value - direct value| =", abs(rev2.value - dir2.value))
print("nu* atoms:", np.round(rev2.nu_star.atoms, 6))
print("irreducible intervals of (mu, nu*):",
      [(round(iv.lo, 4), round(iv.hi, 4)) for iv in rev2.irreducibles_mu_nustar])
