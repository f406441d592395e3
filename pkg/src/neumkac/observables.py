"""Macroscopic measurements on microscopic states and ledgers.

The empirical density puts mass N^{-d} at each particle position x/N; the
empirical current is the vector-valued signed measure built from the jump
counters with weight N^{-(d+1)}, its first component carrying additional
atoms for the boundary counters.  Pairings with continuous test data are
exact finite sums.  The box mollifier turns the atomic density into a
bounded density field, and the continuity residual measures how far a
(current, density) trajectory is from the integrated conservation law.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import CurrentLedger, edge1_sites
from .errors import DomainError
from .lattice import LatticeGeometry


@dataclass
class DensityMeasure:
    """Atomic measure N^{-d} sum_x eta(x) delta_{x/N}."""

    geom: LatticeGeometry
    occ: np.ndarray

    @property
    def total_mass(self):
        return float(self.occ.sum()) * float(self.geom.N) ** (-self.geom.d)

    def positions(self):
        return self.geom.macro_coords(np.nonzero(self.occ)[0])

    def pair(self, F):
        """<pi, F> = N^{-d} sum_x eta(x) F(x/N), exact finite sum."""
        pts = self.positions()
        if len(pts) == 0:
            return 0.0
        vals = np.asarray(F(pts), dtype=float)
        return float(vals.sum()) * float(self.geom.N) ** (-self.geom.d)


def empirical_density(cfg):
    return DensityMeasure(cfg.geom, cfg.occ.copy())


def pair_density(measure, F):
    return measure.pair(F)


@dataclass
class CurrentMeasure:
    """Vector measure of the integrated current; first component includes
    the boundary atoms."""

    geom: LatticeGeometry
    edge1: np.ndarray
    trans: np.ndarray
    boundary: np.ndarray

    @classmethod
    def from_ledger(cls, ledger):
        return cls(ledger.geom, ledger.edge1.copy(), ledger.trans.copy(),
                   ledger.boundary.copy())

    def component_atoms(self, k):
        """(positions, weights) of the k-th component's atoms (k 1-based)."""
        geom = self.geom
        scale = float(geom.N) ** (-(geom.d + 1))
        if k == 1:
            e1 = edge1_sites(geom)
            pos = geom.macro_coords(e1)
            w = self.edge1 * scale
            bsites = geom.boundary_sites()
            pos = np.vstack([pos, geom.macro_coords(bsites)])
            w = np.concatenate([w, self.boundary * scale])
            return pos, w
        pos = geom.macro_coords()
        return pos, self.trans[k - 2] * scale

    def pair(self, G):
        """<W, G> = sum_k <W_k, G_k> with G a tuple of component callables."""
        total = 0.0
        for k in range(1, self.geom.d + 1):
            pos, w = self.component_atoms(k)
            if len(w) == 0:
                continue
            gk = G[k - 1]
            total += float(np.dot(np.asarray(gk(pos), dtype=float), w))
        return total


def empirical_current(ledger, geom=None):
    if geom is not None and ledger.geom is not geom:
        raise DomainError("ledger belongs to a different geometry")
    return CurrentMeasure.from_ledger(ledger)


def pair_current(measure, G):
    return measure.pair(G)


# ---------------------------------------------------------------------------
# block averages and the box mollifier

def _box_mask(geom, coords, x, ell):
    """Sites within sup-distance ell of x (transverse distance periodic)."""
    diff = np.abs(coords - np.asarray(x))
    if geom.d > 1:
        wrapped = np.minimum(diff[:, 1:], geom.N - diff[:, 1:])
        diff = np.column_stack([diff[:, 0], wrapped])
    return np.all(diff <= ell, axis=1)


def block_average(cfg, x, ell):
    """Mean occupancy over the box of radius ell around site x."""
    if ell < 0:
        raise DomainError("block radius must be nonnegative")
    geom = cfg.geom
    coords = geom.site_coords()
    x = np.asarray(x, dtype=np.int64)
    mask = _box_mask(geom, coords, x, ell)
    return float(cfg.occ[mask].mean())


def mollify(measure, eps, points, kappa=None):
    """Box-mollified density at macroscopic points.

    Value = pi(box(u)) / (kappa_eps * |box(u)|) with the box truncated at
    the two walls and |.| its (truncated) volume; kappa_eps defaults to
    1 + eps, a strictly decreasing-to-one normalization that keeps the
    mollified field below one for large N.
    """
    if eps <= 0:
        raise DomainError("mollification width must be positive")
    kappa = (1.0 + eps) if kappa is None else kappa
    geom = measure.geom
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pos = measure.positions()
    invNd = float(geom.N) ** (-geom.d)
    out = np.empty(len(pts))
    for i, u in enumerate(pts):
        vol = min(u[0] + eps, 1.0) - max(u[0] - eps, -1.0)
        for k in range(1, geom.d):
            vol *= min(2.0 * eps, 1.0)
        if len(pos) == 0:
            out[i] = 0.0
            continue
        diff = np.abs(pos - u)
        if geom.d > 1:
            wrapped = np.minimum(diff[:, 1:], 1.0 - diff[:, 1:])
            inside = (diff[:, 0] <= eps) & np.all(wrapped <= eps, axis=1)
        else:
            inside = diff[:, 0] <= eps
        out[i] = invNd * inside.sum() / (kappa * vol)
    return out


def box_average_field(values, grid, eps, points, kappa=None):
    """The same box average applied to a grid field (matched reference).

    Integrates the cell-piecewise-constant field over the truncated box and
    divides by kappa_eps * |box|, so a mollified empirical density and a
    mollified reference solution are compared through the same functional.
    """
    kappa = (1.0 + eps) if kappa is None else kappa
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if grid.d != 1:
        raise DomainError("matched box averaging is implemented for d = 1")
    edges = np.linspace(-1.0, 1.0, grid.m1 + 1)
    vals = np.asarray(values, dtype=float)
    # prefix integral over cells
    cell_int = np.concatenate([[0.0], np.cumsum(vals) * grid.h1])

    def integral_upto(a):
        a = np.clip(a, -1.0, 1.0)
        j = np.clip(np.searchsorted(edges, a) - 1, 0, grid.m1 - 1)
        return cell_int[j] + vals[j] * (a - edges[j])

    out = np.empty(len(pts))
    for i, u in enumerate(pts):
        lo, hi = max(u[0] - eps, -1.0), min(u[0] + eps, 1.0)
        out[i] = (integral_upto(hi) - integral_upto(lo)) / (kappa * (hi - lo))
    return out


def project_density(cfg, grid):
    """Cell-averaged empirical density on a macroscopic grid (d = 1)."""
    if grid.d != 1 or cfg.geom.d != 1:
        raise DomainError("cell projection implemented for d = 1")
    pos = cfg.geom.macro_coords()[:, 0]
    idx = np.clip(((pos + 1.0) / grid.h1).astype(int), 0, grid.m1 - 1)
    counts = np.bincount(idx, weights=cfg.occ, minlength=grid.m1)
    return counts / (cfg.geom.N ** cfg.geom.d * grid.h1)


# ---------------------------------------------------------------------------
# continuity residual of a measured trajectory

def profile_pairing(gamma, F, d, n=4096):
    """<gamma, F> for a macroscopic profile, by midpoint quadrature."""
    if d == 1:
        u = np.linspace(-1.0 + 1.0 / n, 1.0 - 1.0 / n, n)[:, None]
        w = 2.0 / n
        return float(np.sum(np.asarray(gamma(u)) * np.asarray(F(u))) * w)
    n1 = 512
    n2 = 64
    u1 = np.linspace(-1.0 + 1.0 / n1, 1.0 - 1.0 / n1, n1)
    u2 = (np.arange(n2) + 0.5) / n2
    uu1, uu2 = np.meshgrid(u1, u2, indexing="ij")
    pts = np.column_stack([uu1.ravel(), uu2.ravel()])
    w = (2.0 / n1) * (1.0 / n2)
    return float(np.sum(np.asarray(gamma(pts)) * np.asarray(F(pts))) * w)


def continuity_residual(times, densities, currents, gamma, G, phi):
    """Weighted continuity defect of a (current, density) trajectory.

    densities/currents are snapshot sequences on the common `times` grid;
    G is a wall-vanishing AnalyticField and phi a time weight with
    `phi.derivative`.  Returns the defect at every knot; time integrals use
    the trapezoidal rule.  A trajectory satisfying the conservation law
    gives values of order 1/N + dt^2.
    """
    times = np.asarray(times, dtype=float)
    nt = len(times)
    if len(densities) != nt or len(currents) != nt:
        raise DomainError("trajectory snapshots must share the time grid")
    d = densities[0].geom.d
    gval = lambda pts: G.value(0.0, pts)
    gamma_pair = profile_pairing(gamma, gval, d)
    pi_g = np.array([m.pair(gval) for m in densities])
    gradg = tuple((lambda kk: (lambda pts: G.grad(kk, 0.0, pts)))(k)
                  for k in range(1, d + 1))
    w_g = np.array([c.pair(gradg) for c in currents])
    phis = np.array([phi(t) for t in times])
    dphis = np.array([phi.derivative(t) for t in times])

    out = np.empty(nt)
    for j in range(nt):
        int_pi = np.trapezoid((pi_g * dphis)[: j + 1], times[: j + 1])
        int_w = np.trapezoid((w_g * dphis)[: j + 1], times[: j + 1])
        out[j] = (pi_g[j] * phis[j] - gamma_pair * phis[0] - int_pi
                  - w_g[j] * phis[j] + int_w)
    return out


# ---------------------------------------------------------------------------
# CSV emitters

def write_density_csv(fh, coords, values):
    d = coords.shape[1] if coords.ndim > 1 else 1
    fh.write(",".join(f"u{j+1}" for j in range(d)) + ",value\n")
    coords = np.atleast_2d(coords)
    for row, v in zip(coords, values):
        fh.write(",".join(repr(float(c)) for c in row) + f",{float(v)!r}\n")


def write_current_csv(fh, rows):
    """rows: iterable of (t, component, value)."""
    fh.write("t,component,value\n")
    for t, k, v in rows:
        fh.write(f"{float(t)!r},{int(k)},{float(v)!r}\n")
