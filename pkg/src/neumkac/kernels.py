"""Interaction kernels on the cylinder [-1,1] x T^{d-1}.

The base interaction is a smooth, even, compactly supported probability
profile j on the first coordinate, combined with the uniform density on the
periodic transverse directions.  Confinement to the cylinder is handled by
reflecting the second argument at the two walls u1 = +/-1:

    Jn(u, v) = j(v1 - u1) + j(2 - u1 - v1) + j(2 + u1 + v1).

The reflected kernel is symmetric and integrates to one over the cylinder
for every u, so it is again a probability kernel.  Because the transverse
factor is uniform, Jn depends on the first coordinates only; everything
downstream (lattice couplings, convolution stencils) exploits this.
"""

import numpy as np

from .errors import DomainError


class CosineProfile:
    """j(r) = (1 + cos(pi r)) / 2 on [-1, 1], zero outside.

    Even, C^1 (the derivative vanishes at +/-1), and integrates to one.
    """

    range = 1.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.where(np.abs(r) <= 1.0, 0.5 * (1.0 + np.cos(np.pi * r)), 0.0)
        return out if out.ndim else float(out)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        out = np.where(np.abs(r) <= 1.0, -0.5 * np.pi * np.sin(np.pi * r), 0.0)
        return out if out.ndim else float(out)

    @property
    def sup(self):
        return 1.0

    @property
    def dsup(self):
        return 0.5 * np.pi

    def __repr__(self):
        return "CosineProfile()"


class QuarticProfile:
    """j(r) = (15/16)(1 - r^2)^2 on [-1, 1]: an alternative C^1 profile."""

    range = 1.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.where(np.abs(r) <= 1.0, 0.9375 * (1.0 - r * r) ** 2, 0.0)
        return out if out.ndim else float(out)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        out = np.where(np.abs(r) <= 1.0, -3.75 * r * (1.0 - r * r), 0.0)
        return out if out.ndim else float(out)

    @property
    def sup(self):
        return 0.9375

    @property
    def dsup(self):
        # max of |15/4 r (1-r^2)| at r = 1/sqrt(3)
        return 3.75 / np.sqrt(3.0) * (1.0 - 1.0 / 3.0)

    def __repr__(self):
        return "QuarticProfile()"


class KacKernel:
    """Reflected interaction kernel; pluggable base profile.

    The transverse factor is the uniform density on T^{d-1}, so all
    evaluations reduce to the first coordinates.  Slab and grid coupling
    matrices are memoized per resolution.
    """

    def __init__(self, profile=None):
        self.profile = profile if profile is not None else CosineProfile()
        self._slab_cache = {}

    def base(self, dr):
        """J(0, w) as a function of the first-coordinate offset."""
        return self.profile(dr)

    def neumann(self, u1, v1):
        """Three-term reflected kernel, vectorized over first coordinates."""
        u1 = np.asarray(u1, dtype=float)
        v1 = np.asarray(v1, dtype=float)
        j = self.profile
        out = j(v1 - u1) + j(2.0 - u1 - v1) + j(2.0 + u1 + v1)
        return out if np.ndim(out) else float(out)

    def neumann_d1(self, u1, v1):
        """Partial derivative of the reflected kernel in the first slot."""
        u1 = np.asarray(u1, dtype=float)
        v1 = np.asarray(v1, dtype=float)
        dj = self.profile.derivative
        out = -dj(v1 - u1) - dj(2.0 - u1 - v1) + dj(2.0 + u1 + v1)
        return out if np.ndim(out) else float(out)

    def slab_matrix(self, N):
        """(2N+1)^2 matrix K[a, b] = Jn((a-N)/N, (b-N)/N).

        This is the full lattice coupling up to the N^{-d} strength factor;
        rows/columns are indexed by the first coordinate offset a = x1 + N.
        """
        K = self._slab_cache.get(N)
        if K is None:
            u = (np.arange(2 * N + 1) - N) / N
            K = self.neumann(u[:, None], u[None, :])
            K.setflags(write=False)
            self._slab_cache[N] = K
        return K

    def grad_bound(self):
        """Sup bound on |d/du1 Jn|; at most two reflected terms overlap."""
        return 2.0 * self.profile.dsup

    def __repr__(self):
        return f"KacKernel({self.profile!r})"


def check_point(u, d):
    """Validate a macroscopic point of the closed cylinder; returns an array."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (d,):
        raise DomainError(f"expected a point with {d} coordinates, got shape {u.shape}")
    if not -1.0 <= u[0] <= 1.0:
        raise DomainError(f"first coordinate {u[0]} outside [-1, 1]")
    for k in range(1, d):
        if not 0.0 <= u[k] < 1.0:
            raise DomainError(f"transverse coordinate {u[k]} outside [0, 1)")
    return u


def neumann_kernel(kernel, u, v, d=None):
    """Evaluate the reflected kernel at two points of the closed cylinder."""
    if d is None:
        d = len(np.atleast_1d(u))
    u = check_point(u, d)
    v = check_point(v, d)
    return float(kernel.neumann(u[0], v[0]))
