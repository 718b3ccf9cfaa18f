"""Pricing primitives: virtual valuation, its inverse and the optimal price.

Run with ``python demos/01_pricing_basics.py``.
"""

import numpy as np

from sarpricing.demand import TrueParameters, expected_revenue, purchase_prob_conditional
from sarpricing.pricing import (
    fixed_point_residual,
    optimal_price_marginal,
    oracle_price_conditional,
    virtual_valuation,
    virtual_valuation_inverse,
)

# phi(v) = v - R(v) is increasing, so its inverse is well defined
v = np.linspace(-3, 3, 7)
print("v       ", np.round(v, 3))
print("phi(v)  ", np.round(virtual_valuation(v), 4))
print("phi^-1(0) =", float(virtual_valuation_inverse(0.0)))

# marginal price for a few slopes; the fixed-point residual should be ~1e-14
b = np.array([-0.3, -0.6, -1.2])
m = np.array([[0.2, -0.1], [0.2, -0.1], [0.2, -0.1]])
x = np.array([0.6, 0.4])
p = optimal_price_marginal(b, m, np.tile(x, (3, 1)))
print("prices  ", np.round(p, 4))
print("residual", fixed_point_residual(p, b, m @ x))

# conditional oracle price beats every price on a fine grid
prm = TrueParameters(-0.8, np.array([0.3, -0.2]))
alpha = 0.4
p_star = oracle_price_conditional(alpha, prm, x)
grid = np.linspace(0, 5, 5001)
rev = expected_revenue(1, grid, purchase_prob_conditional(alpha, prm, x, grid))
print(f"p*={p_star:.4f}, grid argmax={grid[rev.argmax()]:.4f}")
