"""Composite Gauss-Legendre quadrature on a single arm.

The routines here are deliberately independent of the closed-form matrix
elements in :mod:`quantum_star.couplings`: they only ever evaluate the
eigenfunctions pointwise and sum with quadrature weights.
"""

from functools import lru_cache

import numpy as np

from .errors import NoConvergence

PANEL_ORDER = 20
MAX_LEVELS = 20


@lru_cache(maxsize=8)
def _reference_rule(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def panel_rule(length, n_panels, order=PANEL_ORDER):
    """Nodes and weights of an ``n_panels`` x ``order`` Gauss-Legendre rule on [0, length]."""
    x_ref, w_ref = _reference_rule(order)
    h = length / n_panels
    left = h * np.arange(n_panels)
    nodes = (left[:, None] + h * x_ref[None, :]).ravel()
    weights = np.tile(h * w_ref, n_panels)
    return nodes, weights


def initial_panels(length, top_wavenumber, points_per_wavelength=8, order=PANEL_ORDER):
    """Smallest panel count giving ``points_per_wavelength`` nodes per 2*pi/top_wavenumber."""
    wavelength = 2.0 * np.pi / max(top_wavenumber, 1e-300)
    n_points = points_per_wavelength * length / wavelength
    return max(1, int(np.ceil(n_points / order)))


def adaptive(evaluate, length, top_wavenumber, rtol=1e-12, atol=0.0,
             points_per_wavelength=8, order=PANEL_ORDER, max_levels=MAX_LEVELS):
    """Refine a composite rule by panel doubling until two levels agree.

    Parameters
    ----------
    evaluate : callable
        ``evaluate(nodes, weights) -> ndarray``; the quadrature estimate of
        whatever (scalar, vector or matrix) is being integrated.
    length : float
        Arm length; the rule lives on [0, length].
    top_wavenumber : float
        Largest wavenumber present in the integrand factors; sets the
        starting resolution.
    rtol, atol : float
        Successive estimates ``a``, ``b`` are accepted once
        ``max|a - b| <= atol + rtol * max|b|``.

    Returns
    -------
    ndarray
        The finer of the two agreeing estimates.
    """
    n_panels = initial_panels(length, top_wavenumber, points_per_wavelength, order)
    previous = np.asarray(evaluate(*panel_rule(length, n_panels, order)))
    for _ in range(max_levels):
        n_panels *= 2
        current = np.asarray(evaluate(*panel_rule(length, n_panels, order)))
        scale = np.max(np.abs(current)) if current.size else 0.0
        if np.max(np.abs(current - previous), initial=0.0) <= atol + rtol * scale:
            return current
        previous = current
    raise NoConvergence(f"quadrature did not converge after {max_levels} refinement levels")


def trapezoid(values, x):
    """Trapezoid rule along the last axis on a (possibly nonuniform) grid."""
    return np.trapezoid(values, x, axis=-1)
