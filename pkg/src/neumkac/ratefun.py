"""Large-deviation cost functionals for (current, density) trajectories.

The cost of a trajectory is quadratic in its deviation from the
instantaneous current, weighted by the inverse mobility:

  * the energy of a density path gates everything: (1/8) int |grad rho|^2
    / sigma(rho), equivalently a per-direction supremum of linear-quadratic
    pairings over compactly supported test fields;
  * the current-density cost recovers the driving control U from
    dW/dt = -grad rho + sigma(rho)[beta grad(Jn * rho) + U] and returns
    (1/2) ||U||^2 in the sigma(rho)-weighted norm;
  * the density-only cost recovers a wall-vanishing potential F from the
    elliptic balance div(sigma grad F) = Laplacian rho - d_t rho
    - beta div(sigma grad(Jn * rho)) and returns (1/2) ||grad F||^2;
  * the two are linked by a contraction identity: the density cost equals
    the current cost of the gradient current built from F, and every other
    compatible current costs at least as much.

Paths that violate the integrated continuity equation, or whose density
has infinite energy, get an infinite sentinel with a certificate naming
the violating test function.
"""

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, SolverError
from .hydro import Grid, NonlocalOperator, PathPair, fluxes, sigma
from .smoothfields import AnalyticField, boundary_vanishing_family

DEFAULT_SIGMA_FLOOR = 1e-6
DEFAULT_MASS_FACTOR = 1e-8
GATE_FACTOR = 10.0


@dataclass
class RateResult:
    value: float
    finite: bool
    kind: str
    control: Optional[np.ndarray] = None      # U on wall-direction faces per knot
    control2: Optional[np.ndarray] = None
    potential: Optional[np.ndarray] = None    # F on cells per knot
    certificate: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# quadrature helpers

def _time_weights(times):
    times = np.asarray(times, dtype=float)
    w = np.zeros_like(times)
    w[1:] += 0.5 * np.diff(times)
    w[:-1] += 0.5 * np.diff(times)
    return w


def _face1_weights(grid):
    return grid.face1_weights()


def _dt_path(times, path):
    """Centered time derivative along the first axis, one-sided at the ends."""
    times = np.asarray(times, dtype=float)
    out = np.empty_like(path)
    dt = times[1] - times[0]
    out[1:-1] = (path[2:] - path[:-2]) / (times[2:] - times[:-2]).reshape(
        (-1,) + (1,) * (path.ndim - 1))
    out[0] = (-3.0 * path[0] + 4.0 * path[1] - path[2]) / (2.0 * dt)
    out[-1] = (3.0 * path[-1] - 4.0 * path[-2] + path[-3]) / (2.0 * dt)
    return out


def _face_sigma1(rho, grid, b):
    from .hydro import _b_values
    bl, br = _b_values(grid, b)
    if grid.d == 1:
        s = np.empty(grid.m1 + 1)
        s[1:-1] = 0.5 * (sigma(rho[1:]) + sigma(rho[:-1]))
        s[0] = sigma(bl)
        s[-1] = sigma(br)
        return s
    s = np.empty((grid.m1 + 1, grid.m2))
    s[1:-1] = 0.5 * (sigma(rho[1:]) + sigma(rho[:-1]))
    s[0] = sigma(bl)[None, :]
    s[-1] = sigma(br)[None, :]
    return s


def _face_sigma2(rho, grid):
    rolled = np.roll(rho, -1, axis=1)
    return 0.5 * (sigma(rho) + sigma(rolled))


def _grad_faces_zero_trace(F, grid):
    """Gradient on faces of a cell field with zero wall trace."""
    h1 = grid.h1
    if grid.d == 1:
        g = np.empty(grid.m1 + 1)
        g[1:-1] = (F[1:] - F[:-1]) / h1
        g[0] = 2.0 * F[0] / h1
        g[-1] = -2.0 * F[-1] / h1
        return g, None
    g1 = np.empty((grid.m1 + 1, grid.m2))
    g1[1:-1] = (F[1:] - F[:-1]) / h1
    g1[0] = 2.0 * F[0] / h1
    g1[-1] = -2.0 * F[-1] / h1
    g2 = (np.roll(F, -1, axis=1) - F) / grid.h2
    return g1, g2


# ---------------------------------------------------------------------------
# membership in the continuity class

def continuity_defects(pair, gamma_cells, family=None):
    """Per-test-function, per-knot defect of the integrated continuity law."""
    grid = pair.grid
    if family is None:
        family = boundary_vanishing_family(
            12, grid.d, transverse_modes=3 if grid.d == 2 else 0)
    pts = grid.cell_points()
    vol = grid.cell_vol
    f1pts = grid.face1_points()
    f1w = _face1_weights(grid)
    f2pts = grid.face2_points() if grid.d == 2 else None
    defects = np.empty((len(family), len(pair.times)))
    for i, G in enumerate(family):
        g = G.value(0.0, pts).reshape(grid.shape)
        g1 = G.grad(1, 0.0, f1pts).reshape(
            (grid.m1 + 1,) if grid.d == 1 else (grid.m1 + 1, grid.m2))
        pair_g = np.array([np.sum(r * g) * vol for r in pair.rho])
        g0 = float(np.sum(gamma_cells.reshape(grid.shape) * g) * vol)
        flow = np.array([np.sum(w * g1 * f1w.reshape(g1.shape[:1] + (1,) *
                        (g1.ndim - 1))) for w in pair.W1])
        if grid.d == 2:
            g2 = G.grad(2, 0.0, f2pts).reshape((grid.m1, grid.m2))
            flow += np.array([np.sum(w * g2) * vol for w in pair.W2])
        defects[i] = pair_g - g0 - flow
    return defects


def continuity_gate(pair, gamma_cells, family=None, tol=None, from_sim_N=None):
    """Worst continuity defect and its certificate; pass iff below tolerance.

    The default tolerance is 10 (h^2 + dt [+ 1/N]); factor and family are
    caller-adjustable.
    """
    grid = pair.grid
    dt = float(pair.times[1] - pair.times[0]) if len(pair.times) > 1 else 0.0
    if tol is None:
        tol = GATE_FACTOR * (grid.h1 ** 2 + dt
                             + (1.0 / from_sim_N if from_sim_N else 0.0))
    d = continuity_defects(pair, gamma_cells, family)
    worst = np.unravel_index(np.argmax(np.abs(d)), d.shape)
    defect = float(np.abs(d[worst]))
    return {
        "pass": defect <= tol,
        "defect": defect,
        "tol": tol,
        "test_index": int(worst[0]),
        "knot": int(worst[1]),
    }


# ---------------------------------------------------------------------------
# energy of a density path

def energy_Q_closed(times, rho_path, grid, sigma_floor=DEFAULT_SIGMA_FLOOR,
                    mass_factor=DEFAULT_MASS_FACTOR):
    """(1/8) int dt int |grad rho|^2 / sigma(rho), cell-centered quadrature.

    Cells with mobility below the floor are excluded; if their aggregated
    gradient mass exceeds mass_factor * T * |domain| the path is declared
    infinite-energy (sentinel +inf).
    """
    times = np.asarray(times, dtype=float)
    wt = _time_weights(times)
    vol = grid.cell_vol
    h1 = grid.h1
    total = 0.0
    excluded = 0.0
    for j, rho in enumerate(rho_path):
        rho = rho.reshape(grid.shape)
        g1 = np.empty_like(rho)
        g1[1:-1] = (rho[2:] - rho[:-2]) / (2 * h1)
        g1[0] = (-3 * rho[0] + 4 * rho[1] - rho[2]) / (2 * h1)
        g1[-1] = (3 * rho[-1] - 4 * rho[-2] + rho[-3]) / (2 * h1)
        gsq = g1 ** 2
        if grid.d == 2:
            g2 = (np.roll(rho, -1, axis=1) - np.roll(rho, 1, axis=1)) / (2 * grid.h2)
            gsq = gsq + g2 ** 2
        sig = sigma(rho)
        ok = sig >= sigma_floor
        total += wt[j] * float(np.sum(np.where(ok, gsq / np.where(ok, sig, 1.0),
                                               0.0))) * vol
        excluded += wt[j] * float(np.sum(np.where(ok, 0.0, gsq))) * vol
    T = times[-1] - times[0]
    domain = 2.0
    if excluded > mass_factor * max(T, 1e-300) * domain:
        return np.inf, {"excluded_mass": excluded}
    return 0.125 * total, {"excluded_mass": excluded}


class TestFamily:
    """Separable polynomial-in-(t, u1) x trigonometric-in-u2 test basis.

    Space factors u1^b (1-u1^2)^2 vanish with their first derivatives at
    the walls (stand-ins for compactly supported fields); time factors are
    scaled monomials (t/T)^a.  Gram condition numbers are reported by the
    quadratic maximizations that consume the family.
    """

    def __init__(self, grid, deg_space=8, deg_time=3, transverse_modes=0):
        self.grid = grid
        self.deg_space = deg_space
        self.deg_time = deg_time
        self.transverse_modes = transverse_modes if grid.d == 2 else 0

    def _space_factors(self):
        u = self.grid.centers1()
        w = (1.0 - u ** 2) ** 2
        dw = -4.0 * u * (1.0 - u ** 2)
        vals = []
        dvals = []
        for bdeg in range(self.deg_space + 1):
            ub = u ** bdeg
            dub = bdeg * u ** (bdeg - 1) if bdeg > 0 else np.zeros_like(u)
            vals.append(ub * w)
            dvals.append(dub * w + ub * dw)
        return np.array(vals), np.array(dvals)

    def evaluate(self, times):
        """Returns (H, dH) with shapes (nb, nt, *grid.shape) per direction:
        dH[k] is the direction-(k+1) derivative of each element."""
        times = np.asarray(times, dtype=float)
        T = max(times[-1], 1e-300)
        tfac = np.array([(times / T) ** a for a in range(self.deg_time + 1)])
        sx, dsx = self._space_factors()
        if self.grid.d == 1:
            H = np.einsum("at,bx->abtx", tfac, sx).reshape(
                -1, len(times), self.grid.m1)
            d1 = np.einsum("at,bx->abtx", tfac, dsx).reshape(
                -1, len(times), self.grid.m1)
            return H, (d1,)
        u2 = self.grid.centers2()
        trig = [np.ones_like(u2)]
        dtrig = [np.zeros_like(u2)]
        for n in range(1, self.transverse_modes + 1):
            trig.append(np.cos(2 * np.pi * n * u2))
            dtrig.append(-2 * np.pi * n * np.sin(2 * np.pi * n * u2))
            trig.append(np.sin(2 * np.pi * n * u2))
            dtrig.append(2 * np.pi * n * np.cos(2 * np.pi * n * u2))
        trig = np.array(trig)
        dtrig = np.array(dtrig)
        H = np.einsum("at,bx,cy->abctxy", tfac, sx, trig).reshape(
            -1, len(times), self.grid.m1, self.grid.m2)
        d1 = np.einsum("at,bx,cy->abctxy", tfac, dsx, trig).reshape(H.shape)
        d2 = np.einsum("at,bx,cy->abctxy", tfac, sx, dtrig).reshape(H.shape)
        return H, (d1, d2)


def energy_Q_variational(times, rho_path, grid, family=None, delta=2.0):
    """Per-direction supremum of int rho d_k H - delta int sigma H^2, times
    delta/2; exact finite-dimensional maximization (1/(4 delta)) b' A^{-1} b.

    The value is a lower bound of the closed form, nondecreasing under
    basis enrichment, and independent of delta in exact arithmetic.
    """
    if family is None:
        family = TestFamily(grid)
    times = np.asarray(times, dtype=float)
    wt = _time_weights(times)
    vol = grid.cell_vol
    rho = np.asarray(rho_path, dtype=float).reshape((len(times),) + grid.shape)
    H, dH = family.evaluate(times)
    sig = sigma(rho)
    wfull = wt.reshape((-1,) + (1,) * grid.d) * vol
    A = np.einsum("itx,jtx->ij", H * (sig * wfull)[None].reshape(
        (1,) + H.shape[1:]), H) if grid.d == 1 else np.einsum(
        "itxy,jtxy->ij", H * (sig * wfull)[None].reshape((1,) + H.shape[1:]), H)
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > 1e14:
        raise SolverError(f"degenerate test-family Gram matrix (cond {cond:g})")
    total = 0.0
    sups = []
    for dk in dH:
        if grid.d == 1:
            Lvec = np.einsum("itx,tx->i", dk, rho * wfull)
        else:
            Lvec = np.einsum("itxy,txy->i", dk, rho * wfull)
        coef = sla.solve(A, Lvec, assume_a="pos")
        sup = float(Lvec @ coef) / (4.0 * delta)
        sups.append(sup)
        total += sup
    return 0.5 * delta * total, {"condition": cond, "per_direction": sups}


# ---------------------------------------------------------------------------
# linear pairing and the tilted cost functional

def l_V(pair, V, beta, b, op=None):
    """Linear pairing of a trajectory with a smooth vector field V.

    Terminal pairing, time-derivative pairing, divergence pairing, the wall
    surface term with outward normal, and the nonlocal drift pairing.
    """
    grid = pair.grid
    op = op if op is not None else NonlocalOperator(grid)
    times = np.asarray(pair.times, dtype=float)
    wt = _time_weights(times)
    vol = grid.cell_vol
    pts = grid.cell_points()
    f1pts = grid.face1_points()
    f1w = _face1_weights(grid)
    f1shape = (grid.m1 + 1,) if grid.d == 1 else (grid.m1 + 1, grid.m2)
    f2pts = grid.face2_points() if grid.d == 2 else None

    def pair_faces(W1, W2, t, fn):
        v1 = fn(1, t, f1pts).reshape(f1shape)
        total = np.sum(W1 * v1 * f1w.reshape(f1shape[:1] + (1,) * (len(f1shape) - 1)))
        if grid.d == 2:
            v2 = fn(2, t, f2pts).reshape((grid.m1, grid.m2))
            total += np.sum(W2 * v2) * vol
        return float(total)

    T = times[-1]
    val = pair_faces(pair.W1[-1], None if pair.W2 is None else pair.W2[-1],
                     T, V.value)
    dterm = np.array([pair_faces(pair.W1[j],
                                 None if pair.W2 is None else pair.W2[j],
                                 times[j], V.dt)
                      for j in range(len(times))])
    val -= float(np.sum(wt * dterm))
    divterm = np.array([np.sum(pair.rho[j].reshape(grid.shape)
                               * V.div(times[j], pts).reshape(grid.shape)) * vol
                        for j in range(len(times))])
    val -= float(np.sum(wt * divterm))

    from .hydro import _b_values
    bl, br = _b_values(grid, b)
    if grid.d == 1:
        wall_l = np.array([[-1.0]])
        wall_r = np.array([[1.0]])
        surf = np.array([float(br) * V.value(1, t, wall_r)[0]
                         - float(bl) * V.value(1, t, wall_l)[0]
                         for t in times])
    else:
        wl = np.column_stack([np.full(grid.m2, -1.0), grid.centers2()])
        wr = np.column_stack([np.full(grid.m2, 1.0), grid.centers2()])
        surf = np.array([np.sum(br * V.value(1, t, wr)) / grid.m2
                         - np.sum(bl * V.value(1, t, wl)) / grid.m2
                         for t in times])
    val += float(np.sum(wt * surf))

    if beta != 0.0:
        drift = np.empty(len(times))
        for j, t in enumerate(times):
            rho = pair.rho[j].reshape(grid.shape)
            gc = op.conv_grad_cell1(rho)
            gc_full = gc if grid.d == 1 else np.broadcast_to(gc[:, None],
                                                             grid.shape)
            drift[j] = np.sum(sigma(rho)
                              * V.value(1, t, pts).reshape(grid.shape)
                              * gc_full) * vol
        val -= beta * float(np.sum(wt * drift))
    return val


def j_hat_V(pair, V, beta, b, op=None):
    """l_V minus half the sigma-weighted square of V along the path."""
    grid = pair.grid
    op = op if op is not None else NonlocalOperator(grid)
    times = np.asarray(pair.times, dtype=float)
    wt = _time_weights(times)
    pts = grid.cell_points()
    vol = grid.cell_vol
    quad = np.empty(len(times))
    for j, t in enumerate(times):
        rho = pair.rho[j].reshape(grid.shape)
        vsq = V.value(1, t, pts).reshape(grid.shape) ** 2
        if grid.d == 2:
            vsq = vsq + V.value(2, t, pts).reshape(grid.shape) ** 2
        quad[j] = np.sum(sigma(rho) * vsq) * vol
    return l_V(pair, V, beta, b, op=op) - 0.5 * float(np.sum(wt * quad))


# ---------------------------------------------------------------------------
# current-density cost (control representation)

def rate_J_T(pair, gamma_cells, beta, b, kernel=None,
             sigma_floor=DEFAULT_SIGMA_FLOOR, mass_factor=DEFAULT_MASS_FACTOR,
             gate_family=None, gate_tol=None, from_sim_N=None):
    """Cost of a (current, density) trajectory.

    Gates: integrated continuity against a wall-vanishing family, then
    finite path energy; violations return the +inf sentinel with a
    certificate.  Otherwise recovers the control U on faces from the
    current deviation and returns half its sigma-weighted square norm.
    """
    grid = pair.grid
    gate = continuity_gate(pair, gamma_cells, gate_family, gate_tol,
                           from_sim_N)
    if not gate["pass"]:
        return RateResult(np.inf, False, "current-density",
                          certificate={"sentinel": "continuity", **gate})
    qval, qinfo = energy_Q_closed(pair.times, pair.rho, grid, sigma_floor,
                                  mass_factor)
    if not np.isfinite(qval):
        return RateResult(np.inf, False, "current-density",
                          certificate={"sentinel": "energy", **qinfo})

    op = NonlocalOperator(grid, kernel)
    times = np.asarray(pair.times, dtype=float)
    wt = _time_weights(times)
    f1w = _face1_weights(grid)
    f1shape = (grid.m1 + 1,) if grid.d == 1 else (grid.m1 + 1, grid.m2)
    Wdot1 = _dt_path(times, pair.W1)
    Wdot2 = _dt_path(times, pair.W2) if pair.W2 is not None else None

    value = 0.0
    excluded = 0.0
    U1 = np.zeros((len(times),) + f1shape)
    U2 = (np.zeros((len(times), grid.m1, grid.m2))
          if grid.d == 2 else None)
    for j in range(len(times)):
        rho = pair.rho[j].reshape(grid.shape)
        F1, F2 = fluxes(rho, grid, op, beta, b, None, times[j])
        s1 = _face_sigma1(rho, grid, b)
        num1 = Wdot1[j] - F1                      # = sigma * U on faces
        ok1 = s1 >= sigma_floor
        w1 = f1w.reshape(f1shape[:1] + (1,) * (len(f1shape) - 1))
        value += wt[j] * float(np.sum(np.where(ok1, num1 ** 2
                                               / np.where(ok1, s1, 1.0), 0.0)
                                      * w1))
        excluded += wt[j] * float(np.sum(np.where(ok1, 0.0, num1 ** 2) * w1))
        U1[j] = np.where(ok1, num1 / np.where(ok1, s1, 1.0), 0.0)
        if grid.d == 2:
            s2 = _face_sigma2(rho, grid)
            num2 = Wdot2[j] - F2
            ok2 = s2 >= sigma_floor
            value += wt[j] * float(np.sum(np.where(
                ok2, num2 ** 2 / np.where(ok2, s2, 1.0), 0.0)) * grid.cell_vol)
            excluded += wt[j] * float(np.sum(np.where(ok2, 0.0, num2 ** 2))
                                      * grid.cell_vol)
            U2[j] = np.where(ok2, num2 / np.where(ok2, s2, 1.0), 0.0)
    T = times[-1] - times[0]
    if excluded > mass_factor * max(T, 1e-300) * 2.0:
        return RateResult(np.inf, False, "current-density",
                          certificate={"sentinel": "mobility-floor",
                                       "excluded_mass": excluded})
    return RateResult(0.5 * value, True, "current-density", control=U1,
                      control2=U2,
                      certificate={"sentinel": "none", **gate},
                      diagnostics={"energy": qval,
                                   "excluded_mass": excluded})


# ---------------------------------------------------------------------------
# density-only cost (elliptic potential recovery)

def _assemble_elliptic(grid, s1, s2, floor):
    """Sparse SPD matrix A = -div(sigma grad .) with zero wall trace."""
    s1 = np.maximum(s1, floor)
    h1sq = grid.h1 ** 2
    if grid.d == 1:
        m = grid.m1
        main = (s1[:-1] + s1[1:]) / h1sq
        main[0] += s1[0] / h1sq            # ghost F(-1) = -F(0)
        main[-1] += s1[-1] / h1sq
        off = -s1[1:-1] / h1sq
        return sp.diags([off, main, off], [-1, 0, 1], format="csr")
    m1, m2 = grid.m1, grid.m2
    s2 = np.maximum(s2, floor)
    h2sq = grid.h2 ** 2
    n = m1 * m2

    def idx(i, j):
        return i * m2 + (j % m2)

    rows, cols, vals = [], [], []
    for i in range(m1):
        for j in range(m2):
            diag = (s1[i, j] + s1[i + 1, j]) / h1sq
            if i == 0:
                diag += s1[0, j] / h1sq
            else:
                rows.append(idx(i, j)); cols.append(idx(i - 1, j))
                vals.append(-s1[i, j] / h1sq)
            if i == m1 - 1:
                diag += s1[m1, j] / h1sq
            else:
                rows.append(idx(i, j)); cols.append(idx(i + 1, j))
                vals.append(-s1[i + 1, j] / h1sq)
            up = s2[i, j]; dn = s2[i, j - 1]
            diag += (up + dn) / h2sq
            rows.append(idx(i, j)); cols.append(idx(i, j + 1))
            vals.append(-up / h2sq)
            rows.append(idx(i, j)); cols.append(idx(i, j - 1))
            vals.append(-dn / h2sq)
            rows.append(idx(i, j)); cols.append(idx(i, j))
            vals.append(diag)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def rate_I_T(times, rho_path, gamma_cells, beta, b, grid, kernel=None,
             sigma_floor=DEFAULT_SIGMA_FLOOR, solver_tol=1e-10):
    """Cost of a density trajectory via elliptic potential recovery.

    Per time slice solves div(sigma(rho) grad F) = -d_t rho - div(flux(rho))
    with F vanishing on the walls (conjugate gradients on the SPD system to
    residual `solver_tol`), then returns (1/2) int <sigma grad F, grad F>.
    Densities outside [0,1] or with infinite energy give the +inf sentinel.
    """
    times = np.asarray(times, dtype=float)
    rho_path = np.asarray(rho_path, dtype=float).reshape((len(times),)
                                                         + grid.shape)
    if np.any(rho_path < -1e-12) or np.any(rho_path > 1 + 1e-12):
        return RateResult(np.inf, False, "density",
                          certificate={"sentinel": "range"})
    qval, qinfo = energy_Q_closed(times, rho_path, grid, sigma_floor)
    if not np.isfinite(qval):
        return RateResult(np.inf, False, "density",
                          certificate={"sentinel": "energy", **qinfo})
    op = NonlocalOperator(grid, kernel)
    dtrho = _dt_path(times, rho_path)
    wt = _time_weights(times)
    f1w = _face1_weights(grid)
    f1shape = (grid.m1 + 1,) if grid.d == 1 else (grid.m1 + 1, grid.m2)

    value = 0.0
    Fpath = np.zeros((len(times),) + grid.shape)
    worst_res = 0.0
    for j in range(len(times)):
        rho = rho_path[j]
        F1, F2 = fluxes(rho, grid, op, beta, b, None, times[j])
        from .hydro import divergence
        # div(sigma grad F) = -(d_t rho + div flux); the assembled SPD
        # operator is -div(sigma grad .), so the right-hand side flips sign
        rhs = dtrho[j] + divergence(F1, F2, grid)
        s1 = _face_sigma1(rho, grid, b)
        s2 = _face_sigma2(rho, grid) if grid.d == 2 else None
        A = _assemble_elliptic(grid, s1, s2, sigma_floor)
        bvec = rhs.ravel()
        M = sp.diags(1.0 / A.diagonal())
        F, info = spla.cg(A, bvec, rtol=0.0,
                          atol=solver_tol * max(1.0,
                                                float(np.linalg.norm(bvec))),
                          M=M, maxiter=20000)
        if info != 0:
            raise SolverError(f"elliptic solve failed at knot {j} "
                              f"(cg info {info})")
        res = float(np.linalg.norm(A @ F - bvec))
        worst_res = max(worst_res, res)
        F = F.reshape(grid.shape)
        Fpath[j] = F
        g1, g2 = _grad_faces_zero_trace(F, grid)
        w1 = f1w.reshape(f1shape[:1] + (1,) * (len(f1shape) - 1))
        value += wt[j] * float(np.sum(np.maximum(s1, sigma_floor)
                                      * g1 ** 2 * w1))
        if grid.d == 2:
            value += wt[j] * float(np.sum(np.maximum(s2, sigma_floor)
                                          * g2 ** 2)) * grid.cell_vol
    return RateResult(0.5 * value, True, "density", potential=Fpath,
                      certificate={"sentinel": "none"},
                      diagnostics={"energy": qval,
                                   "solver_residual": worst_res})


def rate_I_variational(times, rho_path, gamma_cells, beta, b, grid,
                       family=None, kernel=None):
    """Supremum of the weak-form pairing minus the gradient quadratic over a
    finite wall-vanishing space-time family; lower-bounds rate_I_T."""
    from .hydro import weak_form_residual
    times = np.asarray(times, dtype=float)
    if family is None:
        family = sine_time_space_family(6, 2, float(times[-1]), grid.d)
    op = NonlocalOperator(grid, kernel)
    wt = _time_weights(times)
    pts = grid.cell_points()
    vol = grid.cell_vol
    n = len(family)
    bvec = np.array([weak_form_residual(times, rho_path, gamma_cells, F,
                                        beta, b, grid, op=op)
                     for F in family])
    G = np.zeros((n, n))
    rho3 = np.asarray(rho_path, dtype=float).reshape((len(times),)
                                                     + grid.shape)
    for j, t in enumerate(times):
        sig = sigma(rho3[j])
        grads = []
        for F in family:
            g1 = F.grad(1, t, pts).reshape(grid.shape)
            g = [g1]
            if grid.d == 2:
                g.append(F.grad(2, t, pts).reshape(grid.shape))
            grads.append(g)
        for a in range(n):
            for c in range(a, n):
                dot = np.sum(sig * grads[a][0] * grads[c][0])
                if grid.d == 2:
                    dot += np.sum(sig * grads[a][1] * grads[c][1])
                G[a, c] += wt[j] * dot * vol
    G = G + np.triu(G, 1).T
    cond = float(np.linalg.cond(G))
    if not np.isfinite(cond) or cond > 1e14:
        raise SolverError(f"degenerate potential family (cond {cond:g})")
    coef = sla.solve(G, bvec, assume_a="pos")
    return 0.5 * float(bvec @ coef), {"condition": cond}


def sine_time_space_family(n_modes, deg_time, T, d=1):
    """Wall-vanishing space-time potentials tau^a sin(m pi (u1+1)/2)."""
    fam = []
    base = boundary_vanishing_family(n_modes, d)
    for a in range(deg_time + 1):
        for G in base:
            fam.append(_with_time_factor(G, a, T))
    return fam


def _with_time_factor(G, a, T):
    def tf(t):
        return (t / T) ** a if a > 0 else 1.0

    def dtf(t):
        return a * (t / T) ** (a - 1) / T if a > 0 else 0.0

    def val(t, pts):
        return tf(t) * G.value(0.0, pts)

    def dt(t, pts):
        return dtf(t) * G.value(0.0, pts)

    grads = tuple((lambda kk: (lambda t, pts: tf(t) * G.grad(kk, 0.0, pts)))(k)
                  for k in range(1, len(G._grad) + 1))

    def lap(t, pts):
        return tf(t) * G.lap(0.0, pts)

    return AnalyticField(val, dt=dt, grad=grads, lap=lap,
                         label=f"t^{a}*{G.label}")


# ---------------------------------------------------------------------------
# contraction: density cost as the infimum over compatible currents

def gradient_current_path(times, rho_path, Fpath, beta, b, grid, kernel=None):
    """Integrated current driven by the recovered potential: the path with
    dW/dt = flux(rho) + sigma grad F, trapezoid in time, W(0) = 0."""
    op = NonlocalOperator(grid, kernel)
    times = np.asarray(times, dtype=float)
    rho_path = np.asarray(rho_path, dtype=float).reshape((len(times),)
                                                         + grid.shape)
    f1shape = (grid.m1 + 1,) if grid.d == 1 else (grid.m1 + 1, grid.m2)
    W1 = np.zeros((len(times),) + f1shape)
    W2 = np.zeros((len(times), grid.m1, grid.m2)) if grid.d == 2 else None
    rates1 = np.empty_like(W1)
    rates2 = np.empty_like(W2) if grid.d == 2 else None
    for j in range(len(times)):
        rho = rho_path[j]
        F1, F2 = fluxes(rho, grid, op, beta, b, None, times[j])
        s1 = _face_sigma1(rho, grid, b)
        g1, g2 = _grad_faces_zero_trace(Fpath[j].reshape(grid.shape), grid)
        rates1[j] = F1 + s1 * g1
        if grid.d == 2:
            s2 = _face_sigma2(rho, grid)
            rates2[j] = F2 + s2 * g2
    for j in range(1, len(times)):
        dt = times[j] - times[j - 1]
        W1[j] = W1[j - 1] + 0.5 * dt * (rates1[j] + rates1[j - 1])
        if grid.d == 2:
            W2[j] = W2[j - 1] + 0.5 * dt * (rates2[j] + rates2[j - 1])
    return PathPair(grid, times, rho_path, W1, W2, rho_path[0].copy())


def divergence_free_perturbation(grid, rng, amp=0.05):
    """Random discrete-divergence-free staggered field from a curl potential.

    The potential lives on vertices and vanishes near the walls, so no
    boundary current atoms are touched; the discrete divergence vanishes
    identically.  Only meaningful for d = 2.
    """
    if grid.d != 2:
        raise DomainError("divergence-free perturbations need d = 2")
    f1 = grid.faces1()
    nodes2 = np.arange(grid.m2) * grid.h2
    a = rng.integers(1, 4)
    n = rng.integers(1, 4)
    phase = rng.random() * 2 * np.pi
    window = np.sin(0.5 * np.pi * (f1 + 1.0)) ** 2
    psi = (amp * window[:, None]
           * np.sin(0.5 * np.pi * a * (f1 + 1.0))[:, None]
           * np.cos(2 * np.pi * n * nodes2 + phase)[None, :])
    P1 = (np.roll(psi, -1, axis=1) - psi) / grid.h2
    P2 = -(psi[1:, :] - psi[:-1, :]) / grid.h1
    P2 = np.roll(P2, -1, axis=1)  # align with faces between cells j, j+1
    return P1, P2


def contraction_check(times, rho_path, gamma_cells, beta, b, grid,
                      kernel=None, n_samples=20, seed=0, tol=1e-3):
    """Equality of the density cost with the gradient-current cost, plus
    lower-bound checks over compatible current perturbations.

    In d = 1 the compatible-current space is rigid (no divergence-free
    perturbations exist), so only the equality branch runs there.
    """
    res_I = rate_I_T(times, rho_path, gamma_cells, beta, b, grid, kernel)
    if not res_I.finite:
        raise SolverError("density cost infinite; nothing to contract")
    pair = gradient_current_path(times, rho_path, res_I.potential, beta, b,
                                 grid, kernel)
    res_J = rate_J_T(pair, gamma_cells, beta, b, kernel)
    denom = max(abs(res_I.value), 1e-12)
    gap = abs(res_J.value - res_I.value) / denom
    report = {
        "rate_I": res_I.value,
        "rate_J_at_gradient_current": res_J.value,
        "relative_gap": gap,
        "equality_pass": gap <= tol,
        "margins": [],
    }
    if grid.d == 1 or n_samples == 0:
        report["perturbations"] = 0
        return report
    rng = np.random.default_rng(seed)
    tmod = np.sin(np.pi * np.asarray(times) / max(times[-1], 1e-300))
    for _ in range(n_samples):
        P1, P2 = divergence_free_perturbation(grid, rng)
        W1p = pair.W1 + tmod[:, None, None] * P1[None]
        W2p = pair.W2 + tmod[:, None, None] * P2[None]
        pert = PathPair(grid, pair.times, pair.rho, W1p, W2p, pair.gamma)
        res = rate_J_T(pert, gamma_cells, beta, b, kernel)
        report["margins"].append(res.value - res_I.value)
    report["perturbations"] = n_samples
    report["all_above"] = all(m >= -tol for m in report["margins"])
    return report


# ---------------------------------------------------------------------------
# structured rate reports

def rate_report(result, inputs_digest="", extra=None):
    lines = ["rate report",
             f"inputs_digest = {inputs_digest}",
             f"kind = {result.kind}",
             f"value = {result.value!r}",
             f"finite = {str(result.finite).lower()}"]
    for key in sorted(result.certificate):
        lines.append(f"certificate.{key} = {result.certificate[key]!r}")
    for key in sorted(result.diagnostics):
        lines.append(f"solver.{key} = {result.diagnostics[key]!r}")
    if extra:
        for key in sorted(extra):
            lines.append(f"{key} = {extra[key]!r}")
    return "\n".join(lines) + "\n"


def digest_arrays(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]
