"""Quadrature rules on the reference triangle and the unit interval."""

import numpy as np

_A = 0.44594849091596488632
_B = 0.09157621350977074346
_WA = 0.22338158967801146570
_WB = 0.10995174365532186764

# Degree-4, 6-point symmetric rule; weights sum to 1 (multiply by the area).
TRIANGLE_POINTS = np.array(
    [[_A, _A], [1 - 2 * _A, _A], [_A, 1 - 2 * _A], [_B, _B], [1 - 2 * _B, _B], [_B, 1 - 2 * _B]]
)
TRIANGLE_WEIGHTS = np.array([_WA, _WA, _WA, _WB, _WB, _WB])


def triangle_rule():
    return TRIANGLE_POINTS, TRIANGLE_WEIGHTS


def edge_rule(n=3):
    """Gauss-Legendre rule on [0, 1] with weights summing to 1 (default exact to degree 5)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w
