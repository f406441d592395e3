"""Deterministic reference dynamics: the nonlocal drift-diffusion equation.

Solves d_t rho = div( grad rho - sigma(rho) [beta grad(Jn * rho) + V] ) on
the cylinder with Dirichlet data b on the two walls and periodic transverse
directions, by explicit conservative finite differences: cell-centered
densities, face-centered fluxes, ghost cells mirrored through the wall
value (2b - rho).  The same face fluxes accumulate the integrated current,
so the discrete continuity identity between the stored density and current
paths is exact by construction.

sigma(rho) = 2 rho (1 - rho) is the mobility; chi(rho) = rho (1 - rho)
(= sigma/2) is kept as a documented alias only.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CFLError, DomainError, MaxPrincipleError, SolverError
from .kernels import KacKernel


def sigma(rho):
    """Mobility 2 rho (1 - rho)."""
    rho = np.asarray(rho, dtype=float)
    return 2.0 * rho * (1.0 - rho)


def chi(rho):
    """Compressibility rho (1 - rho); sigma = 2 chi."""
    rho = np.asarray(rho, dtype=float)
    return rho * (1.0 - rho)


@dataclass(frozen=True)
class Grid:
    """Cell-centered mesh: m1 cells on [-1, 1], mk periodic cells on [0, 1)."""

    d: int
    m1: int
    m2: int = 0

    def __post_init__(self):
        if self.d not in (1, 2):
            raise DomainError("grids are implemented for d = 1 and d = 2")
        if self.d == 2 and self.m2 < 2:
            raise DomainError("transverse resolution must be >= 2")

    @property
    def h1(self):
        return 2.0 / self.m1

    @property
    def h2(self):
        return 1.0 / self.m2 if self.d == 2 else 1.0

    @property
    def shape(self):
        return (self.m1,) if self.d == 1 else (self.m1, self.m2)

    @property
    def cell_vol(self):
        return self.h1 * (self.h2 if self.d == 2 else 1.0)

    def centers1(self):
        return -1.0 + (np.arange(self.m1) + 0.5) * self.h1

    def faces1(self):
        return -1.0 + np.arange(self.m1 + 1) * self.h1

    def centers2(self):
        return (np.arange(self.m2) + 0.5) * self.h2

    def faces2(self):
        return (np.arange(self.m2) + 1.0) * self.h2 % 1.0

    def cell_points(self):
        """Macroscopic coordinates of cell centers, shape (n_cells, d)."""
        if self.d == 1:
            return self.centers1()[:, None]
        uu1, uu2 = np.meshgrid(self.centers1(), self.centers2(), indexing="ij")
        return np.column_stack([uu1.ravel(), uu2.ravel()])

    def face1_points(self):
        if self.d == 1:
            return self.faces1()[:, None]
        uu1, uu2 = np.meshgrid(self.faces1(), self.centers2(), indexing="ij")
        return np.column_stack([uu1.ravel(), uu2.ravel()])

    def face2_points(self):
        uu1, uu2 = np.meshgrid(self.centers1(), self.faces2(), indexing="ij")
        return np.column_stack([uu1.ravel(), uu2.ravel()])

    def face1_weights(self):
        """Trapezoid-style quadrature weights for wall-direction faces."""
        w = np.full(self.m1 + 1, self.h1)
        w[0] = w[-1] = 0.5 * self.h1
        return w * (self.h2 if self.d == 2 else 1.0)


class NonlocalOperator:
    """Precomputed quadrature stencils for the reflected-kernel convolution.

    The kernel depends on first coordinates only, so the convolution acts
    on the transverse mean of the field: conv(rho)(u) is constant in the
    transverse directions.
    """

    def __init__(self, grid, kernel=None):
        self.grid = grid
        self.kernel = kernel if kernel is not None else KacKernel()
        c = grid.centers1()
        f = grid.faces1()
        self.Kc = self.kernel.neumann(c[:, None], c[None, :]) * grid.h1
        self.Kgf = self.kernel.neumann_d1(f[:, None], c[None, :]) * grid.h1

    def _tmean(self, rho):
        return rho if self.grid.d == 1 else rho.mean(axis=1)

    def conv1(self, rho):
        """(Jn * rho) sampled at first-coordinate cell centers, shape (m1,)."""
        return self.Kc @ self._tmean(rho)

    def conv(self, rho):
        """(Jn * rho) as a full grid field."""
        c = self.conv1(rho)
        if self.grid.d == 1:
            return c
        return np.broadcast_to(c[:, None], self.grid.shape).copy()

    def conv_grad_face1(self, rho):
        """d/du1 (Jn * rho) at wall-direction faces, by the exact kernel
        derivative under the same midpoint quadrature, shape (m1+1,)."""
        return self.Kgf @ self._tmean(rho)

    def conv_grad_cell1(self, rho):
        """d/du1 (Jn * rho) at cell centers (centered differences inside,
        one-sided second order at the end cells), shape (m1,)."""
        c = self.conv1(rho)
        h = self.grid.h1
        g = np.empty_like(c)
        g[1:-1] = (c[2:] - c[:-2]) / (2 * h)
        g[0] = (-3 * c[0] + 4 * c[1] - c[2]) / (2 * h)
        g[-1] = (3 * c[-1] - 4 * c[-2] + c[-3]) / (2 * h)
        return g

    def drift_sup(self):
        """Bound on |grad (Jn * rho)| for densities in [0, 1] (CFL input)."""
        return float(np.max(np.abs(self.Kgf).sum(axis=1)))


class PdeTilt:
    """External drift V sampled on faces; optionally time-dependent."""

    def __init__(self, v1_fn=None, v2_fn=None, v_bound=0.0,
                 time_dependent=False):
        self._v1 = v1_fn
        self._v2 = v2_fn
        self.v_bound = float(v_bound)
        self.time_dependent = bool(time_dependent)

    @classmethod
    def constant(cls, grid, v):
        v = tuple(float(c) for c in np.atleast_1d(v))
        v1 = np.full((grid.m1 + 1,) if grid.d == 1 else (grid.m1 + 1, grid.m2),
                     v[0])
        v2 = None
        if grid.d == 2:
            v2 = np.full((grid.m1, grid.m2), v[1] if len(v) > 1 else 0.0)
        return cls(lambda t: v1, (lambda t: v2) if v2 is not None else None,
                   v_bound=max(abs(c) for c in v), time_dependent=False)

    @classmethod
    def from_field(cls, grid, vec, v_bound=None, time_dependent=False):
        """Sample an AnalyticVectorField on the staggered faces."""
        p1 = grid.face1_points()
        shape1 = (grid.m1 + 1,) if grid.d == 1 else (grid.m1 + 1, grid.m2)

        def v1(t):
            return vec.value(1, t, p1).reshape(shape1)

        v2 = None
        if grid.d == 2:
            p2 = grid.face2_points()

            def v2(t):
                return vec.value(2, t, p2).reshape((grid.m1, grid.m2))

        return cls(v1, v2, v_bound=v_bound if v_bound is not None else 0.0,
                   time_dependent=time_dependent)

    @classmethod
    def gradient(cls, grid, F, v_bound=None, time_dependent=False):
        """V = grad F for an AnalyticField F (gradient drift)."""
        p1 = grid.face1_points()
        shape1 = (grid.m1 + 1,) if grid.d == 1 else (grid.m1 + 1, grid.m2)

        def v1(t):
            return F.grad(1, t, p1).reshape(shape1)

        v2 = None
        if grid.d == 2:
            p2 = grid.face2_points()

            def v2(t):
                return F.grad(2, t, p2).reshape((grid.m1, grid.m2))

        return cls(v1, v2, v_bound=v_bound if v_bound is not None else 0.0,
                   time_dependent=time_dependent)

    def v1(self, t, grid):
        if self._v1 is None:
            shape = (grid.m1 + 1,) if grid.d == 1 else (grid.m1 + 1, grid.m2)
            return np.zeros(shape)
        return self._v1(t)

    def v2(self, t, grid):
        if self._v2 is None:
            return np.zeros((grid.m1, grid.m2))
        return self._v2(t)

    @property
    def is_zero(self):
        return self._v1 is None and self._v2 is None


@dataclass
class PDEConfig:
    grid: Grid
    beta: float
    b: object                      # BoundaryProfile
    T: float
    n_obs: int = 200
    dt: Optional[float] = None     # None: 0.45 * stability bound
    tilt: Optional[PdeTilt] = None
    kernel: Optional[KacKernel] = None
    stat_tol: float = 1e-8
    stat_tmax: float = 200.0


@dataclass
class PathPair:
    """Time-discretized (current, density) trajectory on a grid.

    W1 holds the time-integrated wall-direction flux on faces (W1[0] = 0),
    W2 the transverse flux for d = 2; rho the cell densities; gamma the
    initial profile on cells.
    """

    grid: Grid
    times: np.ndarray
    rho: np.ndarray
    W1: np.ndarray
    W2: Optional[np.ndarray]
    gamma: np.ndarray

    def slice_pair(self, j):
        return self.rho[j], self.W1[j], (None if self.W2 is None else self.W2[j])


def _b_values(grid, b):
    """Wall densities at transverse cell centers: (left, right) arrays."""
    if grid.d == 1:
        return (np.array(b(-1)), np.array(b(1)))
    w = grid.centers2()
    bl = np.array([b(-1, np.array([c])) for c in w])
    br = np.array([b(1, np.array([c])) for c in w])
    return bl, br


def fluxes(rho, grid, op, beta, b, tilt=None, t=0.0):
    """Face fluxes of the instantaneous current -grad rho + sigma [beta gJ + V].

    Interior faces use centered differences and arithmetic face averaging of
    the mobility; wall faces use the mirrored ghost value 2b - rho and the
    exact trace mobility sigma(b).
    """
    bl, br = _b_values(grid, b)
    h1 = grid.h1
    gJ = op.conv_grad_face1(rho) * beta if beta != 0.0 else None
    if grid.d == 1:
        F1 = np.empty(grid.m1 + 1)
        grad = np.empty_like(F1)
        grad[1:-1] = (rho[1:] - rho[:-1]) / h1
        grad[0] = 2.0 * (rho[0] - bl) / h1
        grad[-1] = 2.0 * (br - rho[-1]) / h1
        sig = np.empty_like(F1)
        sig[1:-1] = 0.5 * (sigma(rho[1:]) + sigma(rho[:-1]))
        sig[0] = sigma(bl)
        sig[-1] = sigma(br)
        drift = np.zeros_like(F1)
        if gJ is not None:
            drift += gJ
        if tilt is not None and not tilt.is_zero:
            drift += tilt.v1(t, grid)
        F1 = -grad + sig * drift
        return F1, None
    # d == 2
    F1 = np.empty((grid.m1 + 1, grid.m2))
    grad = np.empty_like(F1)
    grad[1:-1] = (rho[1:] - rho[:-1]) / h1
    grad[0] = 2.0 * (rho[0] - bl[None, :]) / h1
    grad[-1] = 2.0 * (br[None, :] - rho[-1]) / h1
    sig = np.empty_like(F1)
    sig[1:-1] = 0.5 * (sigma(rho[1:]) + sigma(rho[:-1]))
    sig[0] = sigma(bl)
    sig[-1] = sigma(br)
    drift = np.zeros_like(F1)
    if gJ is not None:
        drift += gJ[:, None]
    if tilt is not None and not tilt.is_zero:
        drift += tilt.v1(t, grid)
    F1 = -grad + sig * drift

    h2 = grid.h2
    rolled = np.roll(rho, -1, axis=1)
    grad2 = (rolled - rho) / h2
    sig2 = 0.5 * (sigma(rolled) + sigma(rho))
    drift2 = np.zeros_like(grad2)
    # transverse kernel gradient vanishes (transverse-uniform kernel)
    if tilt is not None and not tilt.is_zero:
        drift2 += tilt.v2(t, grid)
    F2 = -grad2 + sig2 * drift2
    return F1, F2


def divergence(F1, F2, grid):
    if grid.d == 1:
        return (F1[1:] - F1[:-1]) / grid.h1
    div = (F1[1:] - F1[:-1]) / grid.h1
    div += (F2 - np.roll(F2, 1, axis=1)) / grid.h2
    return div


def instantaneous_current(rho, grid, beta, V=None, b=None, kernel=None,
                          op=None, t=0.0):
    """Staggered current field; with `b` the wall faces use Dirichlet ghosts,
    without it a second-order one-sided extrapolation."""
    rho = np.asarray(rho, dtype=float)
    op = op if op is not None else NonlocalOperator(grid, kernel)
    if b is not None:
        return fluxes(rho, grid, op, beta, b, tilt=V, t=t)
    # no trace data: extrapolate the wall-face gradient from interior faces
    if grid.d != 1:
        raise DomainError("traceless current evaluation implemented for d = 1")
    h1 = grid.h1
    grad = np.empty(grid.m1 + 1)
    grad[1:-1] = (rho[1:] - rho[:-1]) / h1
    grad[0] = 2.0 * grad[1] - grad[2]
    grad[-1] = 2.0 * grad[-2] - grad[-3]
    sig = np.empty_like(grad)
    sig[1:-1] = 0.5 * (sigma(rho[1:]) + sigma(rho[:-1]))
    sig[0] = sigma(1.5 * rho[0] - 0.5 * rho[1])
    sig[-1] = sigma(1.5 * rho[-1] - 0.5 * rho[-2])
    drift = np.zeros_like(grad)
    if beta != 0.0:
        drift += beta * op.conv_grad_face1(rho)
    if V is not None and not V.is_zero:
        drift += V.v1(t, grid)
    return -grad + sig * drift, None


def convolve(rho, grid, kernel=None, op=None):
    """Midpoint-rule quadrature of the kernel integral, on cell centers."""
    op = op if op is not None else NonlocalOperator(grid, kernel)
    return op.conv(np.asarray(rho, dtype=float))


def cfl_bound(grid, beta, op, v_bound=0.0):
    """Stability bound on the explicit time step.

    Diffusive bound 1/sum_k(2/h_k^2) shrunk by the drift strength
    1 + beta C_J + |V|, with C_J the kernel-gradient sup bound.
    """
    denom = 2.0 / grid.h1 ** 2
    if grid.d == 2:
        denom += 2.0 / grid.h2 ** 2
    cj = op.drift_sup() if beta != 0.0 else 0.0
    return 1.0 / (denom * (1.0 + beta * cj + v_bound))


def evolve(rho0, cfg):
    """March the density; returns the PathPair sampled on the observation grid.

    Explicit Euler in conservative form: the update subtracts the divergence
    of the same face fluxes that accumulate the integrated current, so mass
    balance and the discrete continuity identity are exact.  Refuses time
    steps above the stability bound; checks 0 <= rho <= 1 after every step
    (and the initial-data envelope in the pure-diffusion case).
    """
    grid = cfg.grid
    rho = np.array(rho0, dtype=float).reshape(grid.shape)
    if np.any(rho < 0.0) or np.any(rho > 1.0):
        raise DomainError("initial density must take values in [0, 1]")
    op = NonlocalOperator(grid, cfg.kernel)
    tilt = cfg.tilt
    v_bound = tilt.v_bound if tilt is not None else 0.0
    bound = cfl_bound(grid, cfg.beta, op, v_bound)
    if cfg.dt is not None and cfg.dt > bound:
        raise CFLError(cfg.dt, bound)
    dt_target = cfg.dt if cfg.dt is not None else 0.45 * bound

    n_obs = cfg.n_obs
    times = np.linspace(0.0, cfg.T, n_obs + 1)
    obs_dt = cfg.T / n_obs if n_obs > 0 else cfg.T
    steps_per_obs = max(1, int(np.ceil(obs_dt / dt_target - 1e-12)))
    dt = obs_dt / steps_per_obs

    bl, br = _b_values(grid, cfg.b)
    envelope = None
    if cfg.beta == 0.0 and (tilt is None or tilt.is_zero):
        lo = min(float(np.min(rho)), float(np.min(bl)), float(np.min(br)))
        hi = max(float(np.max(rho)), float(np.max(bl)), float(np.max(br)))
        envelope = (lo - 1e-12, hi + 1e-12)

    rho_path = np.empty((n_obs + 1,) + grid.shape)
    W1_shape = (grid.m1 + 1,) if grid.d == 1 else (grid.m1 + 1, grid.m2)
    W1_path = np.zeros((n_obs + 1,) + W1_shape)
    W2_path = (np.zeros((n_obs + 1, grid.m1, grid.m2))
               if grid.d == 2 else None)
    rho_path[0] = rho
    W1 = np.zeros(W1_shape)
    W2 = np.zeros((grid.m1, grid.m2)) if grid.d == 2 else None

    t = 0.0
    for j in range(1, n_obs + 1):
        for _ in range(steps_per_obs):
            F1, F2 = fluxes(rho, grid, op, cfg.beta, cfg.b, tilt, t)
            rho = rho - dt * divergence(F1, F2, grid)
            W1 = W1 + dt * F1
            if W2 is not None:
                W2 = W2 + dt * F2
            t += dt
            if np.any(rho < -1e-10) or np.any(rho > 1.0 + 1e-10):
                raise MaxPrincipleError(
                    f"density left [0,1] at t={t:g} "
                    f"(min {rho.min():g}, max {rho.max():g})")
            if envelope is not None and (np.any(rho < envelope[0])
                                         or np.any(rho > envelope[1])):
                raise MaxPrincipleError(
                    f"density left the initial envelope at t={t:g}")
        rho_path[j] = rho
        W1_path[j] = W1
        if W2 is not None:
            W2_path[j] = W2
    return PathPair(grid, times, rho_path, W1_path, W2_path,
                    rho_path[0].copy())


def heat_evolve_reference(rho0, grid, b, dt, n_steps):
    """Independent plain heat-equation stepper (cross-check for beta = 0).

    Non-conservative form: pointwise Laplacian with mirrored ghost cells.
    """
    if grid.d != 1:
        raise DomainError("reference stepper implemented for d = 1")
    bl, br = _b_values(grid, b)
    rho = np.array(rho0, dtype=float)
    h2 = grid.h1 ** 2
    for _ in range(n_steps):
        ghost_l = 2.0 * bl - rho[0]
        ghost_r = 2.0 * br - rho[-1]
        ext = np.concatenate([[ghost_l], rho, [ghost_r]])
        rho = rho + dt * (ext[2:] - 2.0 * ext[1:-1] + ext[:-2]) / h2
    return rho


def stationary_profile(cfg, rho0=None):
    """March to the stationary profile; affine interpolation of b by default.

    Stops when the sup norm of the discrete stationary operator (the flux
    divergence) falls below cfg.stat_tol; raises SolverError with the
    residual history if the march exceeds cfg.stat_tmax time units, which
    is how a super-critical interaction strength manifests.
    """
    grid = cfg.grid
    op = NonlocalOperator(grid, cfg.kernel)
    bl, br = _b_values(grid, cfg.b)
    if rho0 is None:
        u = grid.centers1()
        prof = (np.mean(bl) * (1.0 - u) + np.mean(br) * (1.0 + u)) / 2.0
        rho = prof if grid.d == 1 else np.broadcast_to(
            prof[:, None], grid.shape).copy()
    else:
        rho = np.array(rho0, dtype=float).reshape(grid.shape)
    bound = cfl_bound(grid, cfg.beta, op, 0.0)
    dt = cfg.dt if cfg.dt is not None else 0.45 * bound
    if dt > bound:
        raise CFLError(dt, bound)

    history = []
    t = 0.0
    check_every = 50
    step = 0
    while True:
        F1, F2 = fluxes(rho, grid, op, cfg.beta, cfg.b, None, t)
        res_field = divergence(F1, F2, grid)
        res = float(np.max(np.abs(res_field)))
        if step % check_every == 0:
            history.append((t, res))
        if res < cfg.stat_tol:
            return rho, {"residual": res, "t_march": t, "history": history}
        if t > cfg.stat_tmax:
            raise SolverError(
                f"stationary march reached t={t:g} with residual {res:g} "
                f"(no contraction at beta={cfg.beta:g}?)", history)
        rho = rho - dt * res_field
        t += dt
        step += 1


def weak_form_residual(times, rho_path, gamma, F, beta, b, grid, kernel=None,
                       op=None):
    """Weak-form defect of a density path against a wall-vanishing test field.

    Terminal and initial pairings, time-derivative and Laplacian pairings,
    the wall surface term with the outward normal, and the nonlocal drift
    pairing; trapezoidal in time, midpoint in space.  For a solution path
    the value decays like h^2 + dt.
    """
    op = op if op is not None else NonlocalOperator(grid, kernel)
    times = np.asarray(times, dtype=float)
    nt = len(times)
    pts = grid.cell_points()
    vol = grid.cell_vol

    wall_pts = (np.array([[-1.0], [1.0]]) if grid.d == 1 else
                np.vstack([np.column_stack([np.full(grid.m2, -1.0),
                                            grid.centers2()]),
                           np.column_stack([np.full(grid.m2, 1.0),
                                            grid.centers2()])]))
    for t in (times[0], times[-1]):
        if np.max(np.abs(F.value(t, wall_pts))) > 1e-12:
            raise DomainError("test field must vanish on the walls")

    bl, br = _b_values(grid, b)
    bvals = (np.concatenate([np.atleast_1d(bl), np.atleast_1d(br)])
             if grid.d == 2 else np.array([float(bl), float(br)]))
    normal1 = np.concatenate([np.full(len(wall_pts) // 2, -1.0),
                              np.full(len(wall_pts) // 2, 1.0)])
    ds = 1.0 / grid.m2 if grid.d == 2 else 1.0

    def cells(a):
        return a.reshape(grid.shape)

    rho_T = rho_path[-1].reshape(grid.shape)
    rho_0 = np.asarray(gamma, dtype=float).reshape(grid.shape)
    val = float(np.sum(rho_T * cells(F.value(times[-1], pts)))) * vol
    val -= float(np.sum(rho_0 * cells(F.value(times[0], pts)))) * vol

    integrand = np.empty(nt)
    for j, t in enumerate(times):
        rho = rho_path[j].reshape(grid.shape)
        term = np.sum(rho * cells(F.dt(t, pts))) * vol
        term += np.sum(rho * cells(F.lap(t, pts))) * vol
        integrand[j] = term
    val -= float(np.trapezoid(integrand, times))

    surf = np.empty(nt)
    for j, t in enumerate(times):
        surf[j] = float(np.sum(bvals * normal1 * F.grad(1, t, wall_pts)) * ds)
    val += float(np.trapezoid(surf, times))

    if beta != 0.0:
        drift = np.empty(nt)
        for j, t in enumerate(times):
            rho = rho_path[j].reshape(grid.shape)
            gc = op.conv_grad_cell1(rho)
            gc_full = gc if grid.d == 1 else np.broadcast_to(
                gc[:, None], grid.shape)
            term = np.sum(sigma(rho) * cells(F.grad(1, t, pts)) * gc_full)
            # transverse kernel gradient vanishes identically
            drift[j] = term * vol
        val -= beta * float(np.trapezoid(drift, times))
    return val


# ---------------------------------------------------------------------------
# grid field I/O: CSV plus a JSON sidecar with mesh and solver metadata

def write_grid_csv(path, grid, values, meta=None):
    values = np.asarray(values, dtype=float).reshape(grid.shape)
    pts = grid.cell_points()
    flat = values.ravel()
    with open(path, "w") as fh:
        fh.write(",".join(f"u{j+1}" for j in range(grid.d)) + ",value\n")
        for row, v in zip(pts, flat):
            fh.write(",".join(repr(float(c)) for c in row)
                     + f",{float(v)!r}\n")
    side = {"d": grid.d, "m1": grid.m1, "m2": grid.m2}
    if meta:
        side.update(meta)
    with open(str(path) + ".meta.json", "w") as fh:
        json.dump(side, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_grid_csv(path):
    with open(str(path) + ".meta.json") as fh:
        meta = json.load(fh)
    grid = Grid(meta["d"], meta["m1"], meta.get("m2", 0))
    vals = []
    with open(path) as fh:
        fh.readline()
        for line in fh:
            vals.append(float(line.rsplit(",", 1)[1]))
    return grid, np.array(vals).reshape(grid.shape), meta
