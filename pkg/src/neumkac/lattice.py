"""Microscopic geometry and occupancy configurations.

Sites live on the cylinder Lambda_N = {-N..N} x {0..N-1}^{d-1}; the first
direction has two walls, the others wrap periodically with period N.  A
Configuration stores the occupancy bits together with an exactly maintained
interaction field h(x) = sum_z J_N(x, z) eta(z).  Since the kernel depends
on first coordinates only, h is a function of the slab a = x1 + N, and is
kept as one value per slab; every event updates it incrementally and tests
check it against brute-force recomputation.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .kernels import KacKernel


@dataclass(frozen=True)
class LatticeGeometry:
    """Cylinder lattice of length 2N+1 with periodic transverse directions."""

    d: int
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise DomainError(f"dimension must be >= 1, got {self.d}")
        if self.N < 1:
            raise DomainError(f"scaling parameter must be >= 1, got {self.N}")

    @property
    def shape(self):
        return (2 * self.N + 1,) + (self.N,) * (self.d - 1)

    @property
    def n_sites(self):
        n = 2 * self.N + 1
        for _ in range(self.d - 1):
            n *= self.N
        return n

    @property
    def n_slabs(self):
        return 2 * self.N + 1

    def site_coords(self):
        """All site coordinates, lexicographic order, shape (S, d)."""
        idx = np.indices(self.shape).reshape(self.d, -1).T.astype(np.int64)
        idx[:, 0] -= self.N
        return idx

    def site_index(self, x):
        """Flat index of a site given integer coordinates."""
        x = np.asarray(x, dtype=np.int64)
        if x.shape != (self.d,):
            raise DomainError(f"expected {self.d} coordinates, got {x.shape}")
        if not -self.N <= x[0] <= self.N:
            raise DomainError(f"first coordinate {x[0]} outside [-{self.N}, {self.N}]")
        for k in range(1, self.d):
            if not 0 <= x[k] < self.N:
                raise DomainError(f"coordinate {x[k]} outside the transverse torus")
        multi = (x[0] + self.N,) + tuple(x[1:])
        return int(np.ravel_multi_index(multi, self.shape))

    def slab(self):
        """Slab index a = x1 + N per site, shape (S,)."""
        return self.site_coords()[:, 0] + self.N

    def neighbor_fwd(self, k):
        """Flat index of x + e_k per site; -1 where the edge leaves the lattice.

        k = 1 is the wall direction (no edge at x1 = N); k >= 2 wraps.
        """
        if not 1 <= k <= self.d:
            raise DomainError(f"direction {k} outside 1..{self.d}")
        coords = self.site_coords()
        out = np.empty(self.n_sites, dtype=np.int64)
        if k == 1:
            valid = coords[:, 0] < self.N
            tgt = coords.copy()
            tgt[:, 0] += 1
            tgt[~valid, 0] = self.N  # placeholder, masked below
        else:
            valid = np.ones(self.n_sites, dtype=bool)
            tgt = coords.copy()
            tgt[:, k - 1] = (tgt[:, k - 1] + 1) % self.N
        multi = (tgt[:, 0] + self.N,) + tuple(tgt[:, j] for j in range(1, self.d))
        out[:] = np.ravel_multi_index(multi, self.shape)
        out[~valid] = -1
        return out

    def boundary_sites(self):
        """Flat indices of the sites with x1 = -N or x1 = +N."""
        coords = self.site_coords()
        return np.nonzero(np.abs(coords[:, 0]) == self.N)[0]

    def is_boundary(self, s):
        a = self.slab_of(s)
        return a == 0 or a == 2 * self.N

    def slab_of(self, s):
        # first axis is the slowest in lexicographic (C) order
        per_slab = self.n_sites // self.n_slabs
        return int(s) // per_slab

    def macro_coords(self, sites=None):
        """x/N for the given flat site indices (all sites by default)."""
        coords = self.site_coords()
        if sites is not None:
            coords = coords[np.asarray(sites, dtype=np.int64)]
        return coords / float(self.N)


class BoundaryProfile:
    """Reservoir density b on the two walls, strictly inside (0, 1).

    The default is one constant per side; a callable of (side, transverse
    coordinates) may be supplied for non-constant profiles.
    """

    def __init__(self, left, right=None, fn=None):
        if fn is not None:
            self.fn = fn
            self.left = float(left)
            self.right = float(right if right is not None else left)
        else:
            right = left if right is None else right
            if not (0.0 < left < 1.0 and 0.0 < right < 1.0):
                raise DomainError(f"boundary densities must lie in (0,1): {left}, {right}")
            self.left = float(left)
            self.right = float(right)
            self.fn = None

    def __call__(self, side, w=None):
        if self.fn is not None:
            return self.fn(side, w)
        return self.left if side < 0 else self.right

    def at_sites(self, geom):
        """b(x/N) for every boundary site of the lattice, in boundary order."""
        bsites = geom.boundary_sites()
        coords = geom.site_coords()[bsites]
        vals = np.empty(len(bsites))
        for i, x in enumerate(coords):
            side = -1 if x[0] < 0 else 1
            w = x[1:] / geom.N if geom.d > 1 else None
            vals[i] = self(side, w)
        return bsites, vals

    def __repr__(self):
        return f"BoundaryProfile({self.left}, {self.right})"


# ---------------------------------------------------------------------------
# macroscopic density profiles (initial conditions)

def constant_profile(c):
    def rho(u):
        u = np.asarray(u, dtype=float)
        return np.full(u.shape[:-1] if u.ndim > 1 else (), c, dtype=float)
    rho.label = f"const:{c}"
    return rho


def affine_profile(a0, a1):
    """rho(u) = a0 + a1 * u1."""
    def rho(u):
        u = np.asarray(u, dtype=float)
        u1 = u[..., 0] if u.ndim > 1 else u[0]
        return a0 + a1 * u1
    rho.label = f"affine:{a0},{a1}"
    return rho


def sine_profile(base, amp, freq=1.0):
    """rho(u) = base + amp * sin(pi * freq * u1)."""
    def rho(u):
        u = np.asarray(u, dtype=float)
        u1 = u[..., 0] if u.ndim > 1 else u[0]
        return base + amp * np.sin(np.pi * freq * u1)
    rho.label = f"sine:{base},{amp},{freq}"
    return rho


class Configuration:
    """Occupancy state plus the cached slab interaction field.

    field_slab[a] = h(x) for any site x in slab a; the identity
    H_N(eta) = -sum_x eta(x) h(x) collapses the Hamiltonian double sum.
    """

    __slots__ = ("geom", "kernel", "occ", "slab_count", "field_slab",
                 "particle_count", "_slab", "_invNd")

    def __init__(self, geom, kernel=None, occ=None):
        self.geom = geom
        self.kernel = kernel if kernel is not None else KacKernel()
        S = geom.n_sites
        if occ is None:
            occ = np.zeros(S, dtype=np.int8)
        else:
            occ = np.asarray(occ, dtype=np.int8).copy()
            if occ.shape != (S,):
                raise DomainError(f"occupancy must have shape ({S},)")
        self.occ = occ
        self._slab = geom.slab()
        self._invNd = float(geom.N) ** (-geom.d)
        self.particle_count = int(occ.sum())
        self.slab_count = np.bincount(self._slab, weights=occ,
                                      minlength=geom.n_slabs).astype(np.int64)
        K = self.kernel.slab_matrix(geom.N)
        self.field_slab = self._invNd * (K @ self.slab_count.astype(float))

    # -- field access -----------------------------------------------------

    def field(self, s):
        """h(x) for the flat site index s."""
        return float(self.field_slab[self._slab[s]])

    def field_all(self):
        return self.field_slab[self._slab]

    def recompute_field(self):
        """Rebuild the slab field from the occupancy (O(N^2) sanity path)."""
        K = self.kernel.slab_matrix(self.geom.N)
        counts = np.bincount(self._slab, weights=self.occ,
                             minlength=self.geom.n_slabs)
        return self._invNd * (K @ counts)

    # -- energy -----------------------------------------------------------

    def hamiltonian(self):
        """Total interaction energy -sum_{x,y} J_N(x,y) eta(x) eta(y)."""
        return -float(self.slab_count @ self.field_slab)

    def exchange_delta(self, x, y):
        """Energy difference of swapping occupancies at sites x and y, O(1).

        Exact for the unrestricted double sum, including the diagonal
        self-coupling terms that change when a particle moves between
        slabs with different reflected self-interaction.
        """
        p = int(self.occ[x])
        q = int(self.occ[y])
        if p == q:
            return 0.0
        a = self._slab[x]
        c = self._slab[y]
        K = self.kernel.slab_matrix(self.geom.N)
        diag = 2.0 * K[a, c] - K[a, a] - K[c, c]
        return (2.0 * (p - q) * (self.field_slab[a] - self.field_slab[c])
                + self._invNd * diag)

    # -- events -----------------------------------------------------------

    def apply_exchange(self, x, y):
        """Swap occupancies at x, y and update the cached field in place."""
        p = self.occ[x]
        q = self.occ[y]
        if p == q:
            return self
        self.occ[x] = q
        self.occ[y] = p
        a = self._slab[x]
        c = self._slab[y]
        if a != c:
            K = self.kernel.slab_matrix(self.geom.N)
            # particle left slab `src`, entered slab `dst`
            src, dst = (a, c) if p == 1 else (c, a)
            self.slab_count[src] -= 1
            self.slab_count[dst] += 1
            self.field_slab += self._invNd * (K[:, dst] - K[:, src])
        return self

    def apply_flip(self, x):
        """Toggle the occupancy of a boundary site; bulk flips are refused."""
        a = self._slab[x]
        if a != 0 and a != 2 * self.geom.N:
            raise DomainError(f"site {x} is not on the boundary")
        K = self.kernel.slab_matrix(self.geom.N)
        if self.occ[x]:
            self.occ[x] = 0
            self.particle_count -= 1
            self.slab_count[a] -= 1
            self.field_slab -= self._invNd * K[:, a]
        else:
            self.occ[x] = 1
            self.particle_count += 1
            self.slab_count[a] += 1
            self.field_slab += self._invNd * K[:, a]
        return self

    def copy(self):
        other = Configuration.__new__(Configuration)
        other.geom = self.geom
        other.kernel = self.kernel
        other.occ = self.occ.copy()
        other.slab_count = self.slab_count.copy()
        other.field_slab = self.field_slab.copy()
        other.particle_count = self.particle_count
        other._slab = self._slab
        other._invNd = self._invNd
        return other


# ---------------------------------------------------------------------------
# oracles and free functions

def discrete_coupling(x, y, geom, kernel=None):
    """J_N(x, y) = N^{-d} Jn(x/N, y/N) for two sites given by coordinates."""
    kernel = kernel if kernel is not None else KacKernel()
    xi = geom.site_index(x)  # validates
    yi = geom.site_index(y)
    del xi, yi
    u1 = np.asarray(x, dtype=float)[0] / geom.N
    v1 = np.asarray(y, dtype=float)[0] / geom.N
    return float(geom.N) ** (-geom.d) * float(kernel.neumann(u1, v1))


def hamiltonian_bruteforce(cfg):
    """Independent double-loop Hamiltonian; test oracle, O(S^2)."""
    geom = cfg.geom
    occupied = np.nonzero(cfg.occ)[0]
    u1 = geom.macro_coords(occupied)[:, 0] if len(occupied) else np.empty(0)
    total = 0.0
    invNd = float(geom.N) ** (-geom.d)
    for i in range(len(occupied)):
        for j in range(len(occupied)):
            total += invNd * float(cfg.kernel.neumann(u1[i], u1[j]))
    return -total


def field_bruteforce(cfg):
    """Per-site field recomputed pairwise from the kernel; test oracle."""
    geom = cfg.geom
    u1 = geom.macro_coords()[:, 0]
    occupied = np.nonzero(cfg.occ)[0]
    invNd = float(geom.N) ** (-geom.d)
    h = np.zeros(geom.n_sites)
    for z in occupied:
        h += invNd * cfg.kernel.neumann(u1, u1[z])
    return h


def sample_profile(geom, rho, seed, kernel=None):
    """Independent site occupancies with marginals rho(x/N)."""
    pts = geom.macro_coords()
    p = np.asarray(rho(pts), dtype=float)
    p = np.broadcast_to(p, (geom.n_sites,))
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise DomainError("profile must take values in [0, 1]")
    rng = np.random.default_rng(seed)
    occ = (rng.random(geom.n_sites) < p).astype(np.int8)
    return Configuration(geom, kernel, occ)


def deterministic_profile(geom, rho, kernel=None):
    """Quasi-deterministic rounding of a profile into occupancies.

    Occupation numbers track the running integral of rho along the site
    order, so empirical averages of smooth observables deviate from the
    profile integral by O(1/N) rather than the Bernoulli N^{-d/2}.  Used by
    convergence studies that need initial data associated to a profile at
    deterministic accuracy.
    """
    pts = geom.macro_coords()
    p = np.asarray(rho(pts), dtype=float)
    p = np.broadcast_to(p, (geom.n_sites,)).astype(float)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise DomainError("profile must take values in [0, 1]")
    csum = np.cumsum(p)
    occ = np.diff(np.floor(np.concatenate(([0.0], csum)))).astype(np.int8)
    occ = np.clip(occ, 0, 1)
    return Configuration(geom, kernel, occ)


# ---------------------------------------------------------------------------
# snapshot format: header "d N particle_count", one line per site "x1 .. xd bit"

def save_snapshot(cfg, fh, time=None):
    """Write a configuration in the plain-text snapshot format."""
    geom = cfg.geom
    if time is not None:
        fh.write(f"t {time!r}\n")
    fh.write(f"{geom.d} {geom.N} {cfg.particle_count}\n")
    coords = geom.site_coords()
    for s in range(geom.n_sites):
        xs = " ".join(str(int(c)) for c in coords[s])
        fh.write(f"{xs} {int(cfg.occ[s])}\n")


def load_snapshot(fh, kernel=None):
    """Read one snapshot; returns (Configuration, time or None)."""
    line = fh.readline()
    if not line:
        raise DomainError("empty snapshot stream")
    time = None
    if line.startswith("t "):
        time = float(line.split()[1])
        line = fh.readline()
    d, N, count = (int(v) for v in line.split())
    geom = LatticeGeometry(d, N)
    occ = np.zeros(geom.n_sites, dtype=np.int8)
    for _ in range(geom.n_sites):
        parts = fh.readline().split()
        x = [int(v) for v in parts[:d]]
        occ[geom.site_index(x)] = int(parts[d])
    cfg = Configuration(geom, kernel, occ)
    if cfg.particle_count != count:
        raise DomainError("snapshot particle count does not match occupancies")
    return cfg, time
