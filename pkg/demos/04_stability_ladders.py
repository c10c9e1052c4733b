"""Stability of the value, the optimizer and the map under perturbations.

A perturbation ladder generates (mu_k, nu_k) -> (mu, nu); the harness solves
every rung and reports value gaps, Wasserstein gaps of the optimal
pushforwards, and the measure of levels where the maps differ.

Run with: python demos/04_stability_ladders.py
"""

import numpy as np

from wmrline import (
    CostSpec,
    DiscreteMeasure,
    PerturbationLadder,
    eta_transfer,
    finite_support_approx,
    run_stability_experiment,
    truncate_mean_preserving,
    wasserstein,
)

# ------------------------------------------------------------------
# Analytic ladder: shifting the target of a Dirac source by 1/k gives
# value gap 1/k^2 and optimizer gap 1/k, exactly.
# ------------------------------------------------------------------
mu = DiscreteMeasure(np.array([0.0]), np.array([1.0]))
nu = DiscreteMeasure(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
rep = run_stability_experiment(PerturbationLadder(mu, nu, "shift", length=8))
print("shift ladder (value_gap ~ 1/k^2, optimizer gap ~ 1/k):")
print(rep.to_csv())

# ------------------------------------------------------------------
# Empirical ladder: resample both marginals with 2^k draws.
# ------------------------------------------------------------------
rng = np.random.default_rng(4)
mu10 = DiscreteMeasure(np.sort(rng.uniform(-2, 2, 10)), rng.dirichlet(np.ones(10)))
nu10 = DiscreteMeasure(np.sort(rng.uniform(-3, 3, 10)), rng.dirichlet(np.ones(10)))
emp = run_stability_experiment(
    PerturbationLadder(mu10, nu10, "empirical", length=10, seed=7), CostSpec.quadratic()
)
print("empirical ladder value gaps:",
      " ".join(f"{r.value_gap:.2e}" for r in emp.rungs))

# ------------------------------------------------------------------
# Transfer utilities: moving a dominated measure along a perturbation of
# its dominating measure without losing the convex order.
# ------------------------------------------------------------------
eta = DiscreteMeasure(np.array([-0.5, 0.5]), np.array([0.5, 0.5]))
nu_k = nu.shift(0.2)
eta_k = eta_transfer(eta, nu, nu_k)
print("\ntransferred eta:", eta_k.atoms,
      "| W1(eta, eta_k) =", wasserstein(eta, eta_k, 1.0),
      "<= W1(nu, nu_k) =", wasserstein(nu, nu_k, 1.0))

trim = truncate_mean_preserving(mu10, 0.2)
print("tail trim keeps mass", round(trim.kept_mass, 6),
      "and the renormalized mean error is",
      abs(float(np.dot(trim.renormalized.weights, trim.renormalized.atoms))
          - float(np.dot(mu10.weights, mu10.atoms))))

coarse = finite_support_approx(mu10, 4)
print("4-cell coarsening:", np.round(coarse.atoms, 4), np.round(coarse.weights, 4),
      "| W1 to the original:", wasserstein(coarse, mu10, 1.0))
