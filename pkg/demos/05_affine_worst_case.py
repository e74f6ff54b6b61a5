"""
Worst case over affine mixtures of environments
===============================================

For weights alpha_e >= -eta summing to one, the worst mixture of the
environment losses puts all spare mass on the worst environment, so

    sup - mean = (1 + n eta) (max - mean).

A larger eta means extrapolating further beyond the observed environments,
and the worst case grows linearly in eta with slope n (max - mean).
"""

import numpy as np

from dirm_lab.experiments.theorem1 import all_ok, run_theorem1_check, vertex_oracle
from dirm_lab.objectives import affine_sup

losses = np.array([0.8, 1.1, 1.7])
for eta in (0.0, 0.5, 1.0, 5.0):
    print(f"eta={eta:<4} closed form {affine_sup(losses, eta):7.3f}   vertex enumeration {vertex_oracle(losses, eta):7.3f}")

report = run_theorem1_check(trials=200)
print("200 random trials agree with the oracle and the identity:", all_ok(report))
