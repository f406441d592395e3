"""Analytic space(-time) test fields with exact derivatives.

Pairings against empirical measures and rate-functional suprema all need
smooth test functions together with their gradients, Laplacians, and time
derivatives.  Representing them as callables with hand-coded derivatives
keeps every quadrature free of numerical differentiation of test data.
"""

import numpy as np


class AnalyticField:
    """Scalar field F(t, u) with optional exact derivative callables.

    All callables take (t, pts) with pts of shape (n, d) and return (n,).
    Space-only fields ignore t.
    """

    def __init__(self, fn, dt=None, grad=None, lap=None, label=""):
        self.fn = fn
        self._dt = dt
        self._grad = grad
        self._lap = lap
        self.label = label

    def value(self, t, pts):
        return np.asarray(self.fn(t, np.atleast_2d(pts)), dtype=float)

    def dt(self, t, pts):
        if self._dt is None:
            return np.zeros(len(np.atleast_2d(pts)))
        return np.asarray(self._dt(t, np.atleast_2d(pts)), dtype=float)

    def grad(self, k, t, pts):
        """Partial derivative in direction k (1-based)."""
        g = self._grad[k - 1]
        if g is None:
            return np.zeros(len(np.atleast_2d(pts)))
        return np.asarray(g(t, np.atleast_2d(pts)), dtype=float)

    def lap(self, t, pts):
        return np.asarray(self._lap(t, np.atleast_2d(pts)), dtype=float)


class AnalyticVectorField:
    """Vector field with per-component values, time derivatives, divergence."""

    def __init__(self, components, dt_components=None, div=None, label=""):
        self.components = components
        self._dt = dt_components
        self._div = div
        self.label = label
        self.d = len(components)

    def value(self, k, t, pts):
        return np.asarray(self.components[k - 1](t, np.atleast_2d(pts)),
                          dtype=float)

    def dt(self, k, t, pts):
        if self._dt is None:
            return np.zeros(len(np.atleast_2d(pts)))
        return np.asarray(self._dt[k - 1](t, np.atleast_2d(pts)), dtype=float)

    def div(self, t, pts):
        if self._div is None:
            return np.zeros(len(np.atleast_2d(pts)))
        return np.asarray(self._div(t, np.atleast_2d(pts)), dtype=float)


def sine_mode(m, scale=None, transverse=None):
    """G(u) = c sin(m pi (u1+1)/2) [* cos(2 pi n u2)]: vanishes on the walls.

    The default scale 1/(1 + (m pi/2)^2) keeps second derivatives of the
    family uniformly bounded, so one membership tolerance fits all modes.
    """
    w = 0.5 * m * np.pi
    c = scale if scale is not None else 1.0 / (1.0 + w * w)

    if transverse is None:
        def val(t, pts):
            return c * np.sin(w * (pts[:, 0] + 1.0))

        def g1(t, pts):
            return c * w * np.cos(w * (pts[:, 0] + 1.0))

        def lap(t, pts):
            return -c * w * w * np.sin(w * (pts[:, 0] + 1.0))

        return AnalyticField(val, grad=(g1,), lap=lap, label=f"sin{m}")

    n = transverse
    wn = 2.0 * np.pi * n

    def val(t, pts):
        return (c * np.sin(w * (pts[:, 0] + 1.0)) * np.cos(wn * pts[:, 1]))

    def g1(t, pts):
        return c * w * np.cos(w * (pts[:, 0] + 1.0)) * np.cos(wn * pts[:, 1])

    def g2(t, pts):
        return -c * wn * np.sin(w * (pts[:, 0] + 1.0)) * np.sin(wn * pts[:, 1])

    def lap(t, pts):
        return -(w * w + wn * wn) * val(t, pts)

    return AnalyticField(val, grad=(g1, g2), lap=lap, label=f"sin{m}cos{n}")


def boundary_vanishing_family(n_modes, d=1, transverse_modes=0):
    """Wall-vanishing scalar test family for continuity pairings."""
    fam = [sine_mode(m) if d == 1 else sine_mode(m, transverse=None)
           for m in range(1, n_modes + 1)]
    if d >= 2:
        fam = [sine_mode(m, transverse=None) for m in range(1, n_modes + 1)]
        for n in range(1, transverse_modes + 1):
            for m in range(1, n_modes + 1):
                fam.append(sine_mode(m, transverse=n))
        # re-express 1-d modes as d-dimensional (gradient padded with zeros)
        full = []
        for f in fam:
            if len(f._grad) < d:
                grads = tuple(f._grad) + (None,) * (d - len(f._grad))
                full.append(AnalyticField(f.fn, grad=grads, lap=f._lap,
                                          label=f.label))
            else:
                full.append(f)
        fam = full
    return fam


def poly_time_weight(coeffs):
    """phi(t) = sum_j coeffs[j] t^j with exact derivative."""
    coeffs = np.asarray(coeffs, dtype=float)
    dcoeffs = coeffs[1:] * np.arange(1, len(coeffs))

    def phi(t):
        return float(np.polyval(coeffs[::-1], t))

    def dphi(t):
        return float(np.polyval(dcoeffs[::-1], t)) if len(dcoeffs) else 0.0

    phi.derivative = dphi
    return phi


def cosine_time_weight(omega, amp=1.0, offset=1.0):
    """phi(t) = offset + amp cos(omega t)."""
    def phi(t):
        return offset + amp * np.cos(omega * t)

    def dphi(t):
        return -amp * omega * np.sin(omega * t)

    phi.derivative = dphi
    return phi
