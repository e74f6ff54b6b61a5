"""
Least squares under a hidden confounder
=======================================

The four-variable example: a hidden H drives X2 and Y, and X1 is an effect
of Y.  Pooled least squares is pulled far from the structural coefficients
(0, 1).  At the structural coefficients the residual moments E[X * (Y - f)]
are the same in every environment that only perturbs E_X1 and E_X2.
"""

import numpy as np

from dirm_lab.diffkernel import linear_model
from dirm_lab.objectives import moment_residual
from dirm_lab.scm import (
    NO_INTERVENTION,
    analytic_moments,
    intro_example_spec,
    population_ols,
    sample,
    validate_and_order,
    variance_intervention,
)

spec = intro_example_spec(confounded=True)
print("evaluation order:", validate_and_order(spec))

# Two training environments: the second doubles the variance of E_X1 and E_X2.
train_ivs = [NO_INTERVENTION, variance_intervention(["E_X1", "E_X2"], 2.0)]

# Exact moments come from pushing exogenous (co)variances through the equations.
mom = analytic_moments(spec)
print("Cov(X1, X2, Y):")
print(np.round(mom.cov[np.ix_(mom.idx(["X1", "X2", "Y"]), mom.idx(["X1", "X2", "Y"]))], 3))

print("population OLS, pooled environments:", np.round(population_ols(spec, train_ivs), 3))
print("population OLS, no confounder:     ",
      np.round(population_ols(intro_example_spec(confounded=False), train_ivs), 3))

# Residual moments at the structural head and at the least-squares head of env 1.
envs = [sample(spec, iv, 200_000, seed=k, env_id=f"env{k}") for k, iv in enumerate(train_ivs)]
causal = linear_model([0.0, 1.0], head_bias=False)
ols = linear_model(np.linalg.lstsq(envs[0].x, envs[0].y, rcond=None)[0], head_bias=False)
for name, model in (("causal", causal), ("env-1 OLS", ols)):
    rows = [np.round(moment_residual(model, e), 3) for e in envs]
    print(f"{name:>10}: E[X (Y - f)] per environment = {rows}")
