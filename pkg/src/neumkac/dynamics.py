"""Exact continuous-time dynamics of the boundary-driven lattice gas.

The chain exchanges occupancies across lattice edges at rates
exp(-beta/2 * energy difference) and flips boundary occupancies at reservoir
rates b(1-eta) + (1-b)eta; everything runs N^2 times faster than the bare
rates, so simulation time is macroscopic.  A perturbed (tilted) chain
multiplies the bulk rates by exp(-[eta(x+e)-eta(x)] V/N) and the boundary
rates by exp((2 eta - 1) H/N).

Three samplers share one event-stream contract:
  * a jitted rejection/thinning sampler against static rate bounds
    (`method="rejection"`, requires a time-constant tilt),
  * a pure-Python reference with the same proposal scheme but arbitrary
    time-dependent tilt callables (`method="python"`),
  * a direct full-rate-scan sampler, selection by binary search on the
    cumulative rate vector (`method="direct"`, time-constant rates only).

All samplers record signed jump counters per bulk edge and per boundary
site; the discrete conservation identity between occupancy increments and
counter divergences holds exactly, event by event.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _chain
from .errors import DomainError, PreconditionError, StateSpaceError
from .kernels import KacKernel
from .lattice import Configuration, LatticeGeometry

_GL4_NODES = np.array([-0.8611363115940526, -0.3399810435848563,
                       0.3399810435848563, 0.8611363115940526])
_GL4_WEIGHTS = np.array([0.3478548451374538, 0.6521451548625461,
                         0.6521451548625461, 0.3478548451374538])


class TiltFields:
    """Perturbation pair: a drift V on the cylinder, a boundary field H.

    `v` may be None, a tuple of per-direction constants, or a callable
    (k, t, pts) -> values with pts (n, d) macroscopic coordinates; `h` may
    be None, a constant, a (left, right) pair, or a callable (t, pts).
    Callable tilts must supply sup-norm bounds (used by the thinning
    sampler) and declare themselves time-dependent when they are.
    """

    def __init__(self, v=None, h=None, v_bound=None, h_bound=None,
                 time_dependent=False):
        self.v = v
        self.h = h
        self.time_dependent = bool(time_dependent)
        if callable(v) and v_bound is None:
            raise DomainError("callable drift needs an explicit sup-norm bound")
        if callable(h) and h_bound is None:
            raise DomainError("callable boundary field needs an explicit bound")
        if v_bound is None:
            v_bound = 0.0 if v is None else float(np.max(np.abs(v)))
        if h_bound is None:
            h_bound = 0.0 if h is None else float(np.max(np.abs(h)))
        self.v_bound = float(v_bound)
        self.h_bound = float(h_bound)

    @classmethod
    def none(cls):
        return cls()

    @classmethod
    def constant(cls, v=None, h=None):
        return cls(v=v, h=h)

    @property
    def is_zero(self):
        return self.v is None and self.h is None

    def v_values(self, k, t, pts):
        """V_k(t, u) at macroscopic points, shape (n,)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.v is None:
            return np.zeros(len(pts))
        if callable(self.v):
            return np.asarray(self.v(k, t, pts), dtype=float)
        vk = self.v[k - 1] if k - 1 < len(self.v) else 0.0
        return np.full(len(pts), float(vk))

    def h_values(self, t, pts):
        """H(t, u) at boundary points (first coordinate +/-1), shape (n,)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.h is None:
            return np.zeros(len(pts))
        if callable(self.h):
            return np.asarray(self.h(t, pts), dtype=float)
        if np.ndim(self.h) == 0:
            return np.full(len(pts), float(self.h))
        left, right = self.h
        return np.where(pts[:, 0] < 0, float(left), float(right))


# ---------------------------------------------------------------------------
# rates

def _check_adjacent(geom, x, y):
    """Return the direction k (1-based) such that y = x +/- e_k, else raise."""
    for k in range(1, geom.d + 1):
        fwd = geom.neighbor_fwd(k)
        if fwd[x] == y or fwd[y] == x:
            return k
    raise DomainError(f"sites {x} and {y} are not adjacent")


def exchange_rate(cfg, x, y, beta):
    """exp(-beta/2 * [H(eta^{x,y}) - H(eta)]) for an adjacent pair."""
    _check_adjacent(cfg.geom, x, y)
    if beta < 0:
        raise DomainError("beta must be nonnegative")
    return float(np.exp(-0.5 * beta * cfg.exchange_delta(x, y)))


def boundary_rate(cfg, x, b):
    """b(x/N)(1 - eta(x)) + (1 - b(x/N)) eta(x) at a boundary site."""
    geom = cfg.geom
    coords = geom.site_coords()[x]
    if abs(coords[0]) != geom.N:
        raise DomainError(f"site {x} is not on the boundary")
    side = -1 if coords[0] < 0 else 1
    w = coords[1:] / geom.N if geom.d > 1 else None
    lam = b(side, w)
    return lam * (1 - int(cfg.occ[x])) + (1.0 - lam) * int(cfg.occ[x])


def _edge_canonical(geom, x, y):
    """Order (x, y) so that y = x + e_k; returns (x, y, k)."""
    for k in range(1, geom.d + 1):
        fwd = geom.neighbor_fwd(k)
        if fwd[x] == y:
            return x, y, k
        if fwd[y] == x:
            return y, x, k
    raise DomainError(f"sites {x} and {y} are not adjacent")


def tilted_exchange_rate(cfg, x, y, beta, tilt, t):
    """Exchange rate times exp(-[eta(x+e_k) - eta(x)] V_k(t, x/N) / N)."""
    geom = cfg.geom
    x0, y0, k = _edge_canonical(geom, x, y)
    base = exchange_rate(cfg, x0, y0, beta)
    if tilt is None or tilt.v is None:
        return base
    u = geom.macro_coords([x0])
    v = float(tilt.v_values(k, t, u)[0])
    dv = (int(cfg.occ[y0]) - int(cfg.occ[x0])) * v / geom.N
    return base * float(np.exp(-dv))


def tilted_boundary_rate(cfg, x, b, tilt, t):
    """Boundary rate times exp((2 eta(x) - 1) H(t, x/N) / N)."""
    base = boundary_rate(cfg, x, b)
    if tilt is None or tilt.h is None:
        return base
    geom = cfg.geom
    u = geom.macro_coords([x])
    h = float(tilt.h_values(t, u)[0])
    return base * float(np.exp((2 * int(cfg.occ[x]) - 1) * h / geom.N))


# ---------------------------------------------------------------------------
# ledgers and trajectories

@dataclass
class CurrentLedger:
    """Signed jump counters: per bulk edge, and per boundary site.

    edge1[i] counts net jumps across the i-th wall-direction edge
    (x -> x+e_1 positive); trans[k-2 ...] likewise for the periodic
    directions; boundary[i] counts deaths minus births at the i-th
    boundary site.
    """

    geom: LatticeGeometry
    edge1: np.ndarray
    trans: np.ndarray
    boundary: np.ndarray

    @classmethod
    def zero(cls, geom):
        E1 = geom.n_sites - geom.n_sites // geom.n_slabs
        ntrans = max(geom.d - 1, 1) - 1 if geom.d == 1 else geom.d - 1
        return cls(geom,
                   np.zeros(E1, dtype=np.int64),
                   np.zeros((geom.d - 1, geom.n_sites), dtype=np.int64),
                   np.zeros(len(geom.boundary_sites()), dtype=np.int64))

    def copy(self):
        return CurrentLedger(self.geom, self.edge1.copy(), self.trans.copy(),
                             self.boundary.copy())


def edge1_sites(geom):
    """Flat site indices x carrying a wall-direction edge (x, x+e_1)."""
    coords = geom.site_coords()
    return np.nonzero(coords[:, 0] < geom.N)[0]


def ledger_divergence(geom, edge1, trans, boundary):
    """Net particle inflow per site implied by the counters.

    For every site, occupancy(t) - occupancy(0) equals this divergence
    exactly (integer identity; see `conservation_residual`).
    """
    S = geom.n_sites
    div = np.zeros(S, dtype=np.int64)
    e1 = edge1_sites(geom)
    nb1 = geom.neighbor_fwd(1)
    np.subtract.at(div, e1, edge1)
    np.add.at(div, nb1[e1], edge1)
    for k in range(2, geom.d + 1):
        nbk = geom.neighbor_fwd(k)
        wk = trans[k - 2]
        div -= wk
        np.add.at(div, nbk, wk)
    bsites = geom.boundary_sites()
    np.subtract.at(div, bsites, boundary)
    return div


def conservation_residual(geom, occ0, occ1, edge1, trans, boundary):
    """(occ1 - occ0) minus the ledger divergence; all-zero iff exact."""
    div = ledger_divergence(geom, edge1, trans, boundary)
    return occ1.astype(np.int64) - occ0.astype(np.int64) - div


@dataclass
class EventLog:
    t: np.ndarray
    kind: np.ndarray
    direction: np.ndarray
    site: np.ndarray
    delta: np.ndarray

    def __len__(self):
        return len(self.t)

    def write_csv(self, fh, geom):
        coords = geom.site_coords()
        fh.write("macro_time,kind," +
                 ",".join(f"x{j+1}" for j in range(geom.d)) +
                 ",direction,delta\n")
        for i in range(len(self.t)):
            kind = "exchange" if self.kind[i] == 0 else "flip"
            xs = ",".join(str(int(c)) for c in coords[self.site[i]])
            fh.write(f"{self.t[i]!r},{kind},{xs},"
                     f"{int(self.direction[i])},{int(self.delta[i])}\n")

    def save_npz(self, path):
        np.savez_compressed(path, t=self.t, kind=self.kind,
                            direction=self.direction, site=self.site,
                            delta=self.delta)

    @classmethod
    def load_npz(cls, path):
        z = np.load(path)
        return cls(z["t"], z["kind"], z["direction"], z["site"], z["delta"])


@dataclass
class Trajectory:
    geom: LatticeGeometry
    kernel: KacKernel
    beta: float
    times: np.ndarray
    occs: np.ndarray          # (n_obs, S) int8
    W1: np.ndarray            # (n_obs, E1)
    Wk: np.ndarray            # (n_obs, d-1, S)
    Wb: np.ndarray            # (n_obs, B)
    initial_occ: np.ndarray
    n_events: int
    n_proposals: int
    seed: int
    method: str
    girsanov: Optional[np.ndarray] = None
    events: Optional[EventLog] = None
    occupation_time: Optional[np.ndarray] = None  # exact per-site integral of eta over [0, T]

    def ledger_at(self, j):
        return CurrentLedger(self.geom, self.W1[j].copy(),
                             self.Wk[j].copy(), self.Wb[j].copy())

    def config_at(self, j):
        return Configuration(self.geom, self.kernel, self.occs[j])

    def conservation_residuals(self):
        """Max |residual| of the conservation identity over all snapshots."""
        worst = 0
        for j in range(len(self.times)):
            r = conservation_residual(self.geom, self.initial_occ,
                                      self.occs[j], self.W1[j],
                                      self.Wk[j], self.Wb[j])
            worst = max(worst, int(np.max(np.abs(r))) if len(r) else 0)
        return worst


# ---------------------------------------------------------------------------
# sampler setup shared by all methods

class _ChainSetup:
    def __init__(self, geom, kernel, beta, b, tilt, t_eval=0.0):
        self.geom = geom
        self.kernel = kernel
        self.beta = float(beta)
        N = geom.N
        self.K = np.ascontiguousarray(kernel.slab_matrix(N))
        n1 = 2 * N + 1
        self.dK1 = np.array([2.0 * self.K[a, a + 1] - self.K[a, a]
                             - self.K[a + 1, a + 1] for a in range(n1 - 1)])
        self.invNd = float(N) ** (-geom.d)
        self.slab = geom.slab()
        self.nb = np.stack([geom.neighbor_fwd(k) for k in range(1, geom.d + 1)])
        self.edges1 = edge1_sites(geom)
        bsites, bvals = b.at_sites(geom)
        self.bsites = bsites
        self.bvals = bvals
        self.tilt = tilt if tilt is not None else TiltFields.none()

        # static tilt samples (per-event log-factors, 1/N units)
        pts1 = geom.macro_coords(self.edges1)
        self.v1 = self.tilt.v_values(1, t_eval, pts1) / N
        ntr = max(geom.d - 1, 0)
        self.vk = np.zeros((max(ntr, 1), geom.n_sites))
        ptsall = geom.macro_coords()
        for k in range(2, geom.d + 1):
            self.vk[k - 2] = self.tilt.v_values(k, t_eval, ptsall) / N
        ptsb = geom.macro_coords(bsites)
        self.hb = self.tilt.h_values(t_eval, ptsb) / N

        # rigorous static rate bounds (valid for all configurations/times)
        dh_field = np.max(np.abs(np.diff(self.K, axis=0)).sum(axis=1)) / N
        dh_bound = 2.0 * dh_field + float(np.max(np.abs(self.dK1))) * self.invNd
        vmax = self.tilt.v_bound / N
        hmax = self.tilt.h_bound / N
        self.dh_bound = dh_bound
        self.bound1 = float(np.exp(0.5 * self.beta * dh_bound + vmax))
        self.boundk = np.full(max(ntr, 1), float(np.exp(vmax)))
        self.boundf = float(np.max(np.maximum(bvals * np.exp(hmax),
                                              (1.0 - bvals) * np.exp(hmax))))
        self.Nsq = float(N) ** 2

    def total_bound_mass(self):
        ntr = self.geom.d - 1
        m = len(self.edges1) * self.bound1 + len(self.bsites) * self.boundf
        for kk in range(ntr):
            m += self.geom.n_sites * self.boundk[kk]
        return m


def _resolve_seed(seed):
    return int(np.random.SeedSequence(seed).generate_state(1,
               dtype=np.uint32)[0])


def simulate(geom, kernel, beta, b, tilt, initial, T, obs_times, seed,
             method="auto", log_events=False, girsanov=False,
             occupation_time=False):
    """Run the chain to macroscopic time T, recording snapshots and ledgers.

    `initial` is a Configuration (copied, not mutated).  `obs_times` is an
    increasing array of times in [0, T] at which occupancy and counter
    snapshots are stored.  With `occupation_time=True` the jitted sampler
    also accumulates the exact per-site time integral of the occupancy,
    the lowest-variance estimator of a time-averaged profile.
    Deterministic per (seed, method).
    """
    if T < 0:
        raise DomainError("terminal time must be nonnegative")
    tilt = tilt if tilt is not None else TiltFields.none()
    if method == "auto":
        method = "python" if tilt.time_dependent else "rejection"
    if method == "rejection" and tilt.time_dependent:
        raise DomainError("the jitted sampler requires a time-constant tilt; "
                          "use method='python'")
    if method == "direct" and tilt.time_dependent:
        raise DomainError("the direct sampler requires time-constant rates")
    obs = np.asarray(obs_times, dtype=float)
    if np.any(np.diff(obs) < 0) or (len(obs) and (obs[0] < 0 or obs[-1] > T)):
        raise DomainError("observation times must be increasing within [0, T]")
    if girsanov and method != "rejection":
        # python/direct paths recover the weight by replay from the event log
        log_events = True

    setup = _ChainSetup(geom, kernel, beta, b, tilt)
    if method == "rejection":
        return _simulate_jit(setup, initial, T, obs, seed, log_events,
                             girsanov, occupation_time)
    if occupation_time:
        raise DomainError("occupation_time is only tracked by the jitted sampler")
    if method == "python":
        return _simulate_python(setup, initial, T, obs, seed, log_events,
                                girsanov, b)
    if method == "direct":
        return _simulate_direct(setup, initial, T, obs, seed, log_events,
                                girsanov, b)
    raise DomainError(f"unknown sampler method {method!r}")


def _alloc_outputs(setup, n_obs):
    geom = setup.geom
    E1 = len(setup.edges1)
    B = len(setup.bsites)
    ntr = geom.d - 1
    out_occ = np.zeros((n_obs, geom.n_sites), dtype=np.int8)
    out_W1 = np.zeros((n_obs, E1), dtype=np.int64)
    out_Wk = np.zeros((n_obs, max(ntr, 1), geom.n_sites), dtype=np.int64)
    out_Wb = np.zeros((n_obs, B), dtype=np.int64)
    out_gir = np.zeros(n_obs)
    return out_occ, out_W1, out_Wk, out_Wb, out_gir


def _simulate_jit(setup, initial, T, obs, seed, log_events, girsanov,
                  occupation_time=False):
    geom = setup.geom
    cfg = initial.copy()
    occ = cfg.occ
    Hslab = cfg.field_slab
    mslab = cfg.slab_count
    E1 = len(setup.edges1)
    B = len(setup.bsites)
    W1 = np.zeros(E1, dtype=np.int64)
    Wk = np.zeros((max(geom.d - 1, 1), geom.n_sites), dtype=np.int64)
    Wb = np.zeros(B, dtype=np.int64)
    out_occ, out_W1, out_Wk, out_Wb, out_gir = _alloc_outputs(setup, len(obs))

    if log_events:
        cap = int(setup.Nsq * setup.total_bound_mass() * T * 1.1) + 4096
        if cap > 50_000_000:
            raise PreconditionError("event log would exceed 5e7 records; "
                                    "disable logging for runs this large")
    else:
        cap = 1
    log_t = np.zeros(cap)
    log_kind = np.zeros(cap, dtype=np.int8)
    log_dir = np.zeros(cap, dtype=np.int8)
    log_site = np.zeros(cap, dtype=np.int64)
    log_delta = np.zeros(cap, dtype=np.int8)
    occ_acc = np.zeros(geom.n_sites if occupation_time else 1)
    occ_last = np.zeros(geom.n_sites if occupation_time else 1)

    status, n_events, n_props, n_logged = _chain.run_chain(
        occ, setup.slab, setup.nb, setup.edges1, setup.K, setup.dK1,
        Hslab, mslab, setup.invNd, setup.beta,
        setup.bsites, setup.bvals, setup.v1, setup.vk, setup.hb,
        setup.bound1, setup.boundk, setup.boundf,
        setup.Nsq, float(T), obs, _resolve_seed(seed),
        W1, Wk, Wb, out_occ, out_W1, out_Wk, out_Wb,
        girsanov, out_gir, log_events,
        log_t, log_kind, log_dir, log_site, log_delta,
        occupation_time, occ_acc, occ_last)

    if status == _chain.STATUS_LOG_FULL:
        raise PreconditionError("event log capacity exhausted")
    if status == _chain.STATUS_BOUND_VIOLATION:
        raise AssertionError("rate exceeded its static bound (internal error)")

    events = None
    if log_events:
        events = EventLog(log_t[:n_logged].copy(), log_kind[:n_logged].copy(),
                          log_dir[:n_logged].copy(), log_site[:n_logged].copy(),
                          log_delta[:n_logged].copy())
    return Trajectory(geom, setup.kernel, setup.beta, obs, out_occ, out_W1,
                      out_Wk, out_Wb, initial.occ.copy(), int(n_events),
                      int(n_props), seed, "rejection",
                      girsanov=out_gir if girsanov else None, events=events,
                      occupation_time=occ_acc if occupation_time else None)


def _simulate_python(setup, initial, T, obs, seed, log_events, girsanov, b):
    """Reference sampler: same thinning scheme, arbitrary tilt callables."""
    state = SimState(setup, initial, seed, log_events=log_events)
    n_obs = len(obs)
    out_occ, out_W1, out_Wk, out_Wb, out_gir = _alloc_outputs(setup, n_obs)
    ptr = 0
    while ptr < n_obs and obs[ptr] <= 0.0:
        state.snapshot_into(ptr, out_occ, out_W1, out_Wk, out_Wb)
        ptr += 1
    while True:
        ev = state.step(T)
        horizon = state.t if ev is not None else T + np.inf
        while ptr < n_obs and obs[ptr] < horizon:
            state.snapshot_into(ptr, out_occ, out_W1, out_Wk, out_Wb)
            ptr += 1
        if ev is None:
            break
    traj = Trajectory(setup.geom, setup.kernel, setup.beta, obs, out_occ,
                      out_W1, out_Wk, out_Wb, initial.occ.copy(),
                      state.total_events, state.total_proposals, seed,
                      "python", events=state.event_log())
    if girsanov:
        lw = girsanov_log_weight(traj, setup.beta, b, setup.tilt,
                                 kernel=setup.kernel)
        traj.girsanov = np.full(n_obs, np.nan)
        traj.girsanov[-1] = lw
    return traj


def _simulate_direct(setup, initial, T, obs, seed, log_events, girsanov, b):
    """Full-rate-scan sampler; event chosen by binary search on cumsum."""
    geom = setup.geom
    rng = np.random.default_rng(seed)
    cfg = initial.copy()
    E1 = len(setup.edges1)
    S = geom.n_sites
    B = len(setup.bsites)
    ntr = geom.d - 1
    W1 = np.zeros(E1, dtype=np.int64)
    Wk = np.zeros((max(ntr, 1), S), dtype=np.int64)
    Wb = np.zeros(B, dtype=np.int64)
    n_obs = len(obs)
    out_occ, out_W1, out_Wk, out_Wb, _ = _alloc_outputs(setup, n_obs)
    log = [] if log_events else None

    nb = setup.nb
    t = 0.0
    ptr = 0
    n_events = 0
    while ptr < n_obs and obs[ptr] <= 0.0:
        out_occ[ptr] = cfg.occ
        out_W1[ptr] = W1
        out_Wk[ptr] = Wk
        out_Wb[ptr] = Wb
        ptr += 1
    while True:
        occ = cfg.occ.astype(np.int64)
        rates = []
        # wall-direction exchanges
        s = setup.edges1
        s2 = nb[0, s]
        p = occ[s]
        q = occ[s2]
        active = p != q
        a = setup.slab[s]
        dh = (2.0 * (p - q) * (cfg.field_slab[a] - cfg.field_slab[a + 1])
              + setup.invNd * setup.dK1[a])
        r1 = np.where(active,
                      np.exp(-0.5 * setup.beta * dh + (p - q) * setup.v1), 0.0)
        rates.append(r1)
        for kk in range(ntr):
            s2k = nb[kk + 1]
            pk = occ
            qk = occ[s2k]
            rk = np.where(pk != qk, np.exp((pk - qk) * setup.vk[kk]), 0.0)
            rates.append(rk)
        pb = occ[setup.bsites]
        rb = np.where(pb == 1,
                      (1.0 - setup.bvals) * np.exp(setup.hb),
                      setup.bvals * np.exp(-setup.hb))
        rates.append(rb)
        allr = np.concatenate(rates)
        total = setup.Nsq * allr.sum()
        dt = rng.exponential(1.0 / total)
        t_new = t + dt
        while ptr < n_obs and obs[ptr] < t_new:
            out_occ[ptr] = cfg.occ
            out_W1[ptr] = W1
            out_Wk[ptr] = Wk
            out_Wb[ptr] = Wb
            ptr += 1
        if t_new > T:
            break
        t = t_new
        n_events += 1
        csum = np.cumsum(allr)
        j = int(np.searchsorted(csum, rng.random() * csum[-1], side="right"))
        j = min(j, len(allr) - 1)
        if j < E1:
            x = int(setup.edges1[j])
            y = int(nb[0, x])
            delta = int(occ[y] - occ[x])
            cfg.apply_exchange(x, y)
            W1[j] -= delta
            if log is not None:
                log.append((t, 0, 1, x, delta))
        elif j < E1 + ntr * S:
            kk, sx = divmod(j - E1, S)
            y = int(nb[kk + 1, sx])
            delta = int(occ[y] - occ[sx])
            cfg.apply_exchange(int(sx), y)
            Wk[kk, sx] -= delta
            if log is not None:
                log.append((t, 0, kk + 2, int(sx), delta))
        else:
            i = j - E1 - ntr * S
            x = int(setup.bsites[i])
            delta = 1 - 2 * int(occ[x])
            cfg.apply_flip(x)
            Wb[i] += -delta
            if log is not None:
                log.append((t, 1, 0, x, delta))
    while ptr < n_obs:
        out_occ[ptr] = cfg.occ
        out_W1[ptr] = W1
        out_Wk[ptr] = Wk
        out_Wb[ptr] = Wb
        ptr += 1
    events = None
    if log is not None:
        arr = np.array(log, dtype=object) if log else np.empty((0, 5))
        events = EventLog(np.array([e[0] for e in log]),
                          np.array([e[1] for e in log], dtype=np.int8),
                          np.array([e[2] for e in log], dtype=np.int8),
                          np.array([e[3] for e in log], dtype=np.int64),
                          np.array([e[4] for e in log], dtype=np.int8))
    traj = Trajectory(geom, setup.kernel, setup.beta, obs, out_occ, out_W1,
                      out_Wk, out_Wb, initial.occ.copy(), n_events, n_events,
                      seed, "direct", events=events)
    if girsanov:
        lw = girsanov_log_weight(traj, setup.beta, b, setup.tilt,
                                 kernel=setup.kernel)
        traj.girsanov = np.full(n_obs, np.nan)
        traj.girsanov[-1] = lw
    return traj


class SimState:
    """One-jump-at-a-time reference sampler (thinning, tilt callables OK)."""

    def __init__(self, setup, initial, seed, log_events=False):
        if isinstance(setup, tuple):
            raise TypeError("construct via dynamics.make_state(...)")
        self.setup = setup
        self.cfg = initial.copy()
        self.rng = np.random.default_rng(seed)
        self.t = 0.0
        geom = setup.geom
        self.W1 = np.zeros(len(setup.edges1), dtype=np.int64)
        self.Wk = np.zeros((max(geom.d - 1, 1), geom.n_sites), dtype=np.int64)
        self.Wb = np.zeros(len(setup.bsites), dtype=np.int64)
        self.total_events = 0
        self.total_proposals = 0
        self._log = [] if log_events else None
        self._pts_e1 = geom.macro_coords(setup.edges1)
        self._pts_all = geom.macro_coords()
        self._pts_b = geom.macro_coords(setup.bsites)

    def snapshot_into(self, j, out_occ, out_W1, out_Wk, out_Wb):
        out_occ[j] = self.cfg.occ
        out_W1[j] = self.W1
        out_Wk[j] = self.Wk
        out_Wb[j] = self.Wb

    def event_log(self):
        if self._log is None:
            return None
        log = self._log
        return EventLog(np.array([e[0] for e in log]),
                        np.array([e[1] for e in log], dtype=np.int8),
                        np.array([e[2] for e in log], dtype=np.int8),
                        np.array([e[3] for e in log], dtype=np.int64),
                        np.array([e[4] for e in log], dtype=np.int8))

    def step(self, horizon=np.inf):
        """Advance to the next accepted jump; None if it would pass horizon.

        The clock advances even when it returns None, so repeated calls with
        the same horizon terminate.
        """
        st = self.setup
        geom = st.geom
        tilt = st.tilt
        N = geom.N
        E1 = len(st.edges1)
        S = geom.n_sites
        B = len(st.bsites)
        ntr = geom.d - 1
        mass1 = E1 * st.bound1
        masstr = [S * st.boundk[kk] for kk in range(ntr)]
        massf = B * st.boundf
        mtot = mass1 + sum(masstr) + massf
        rtot = st.Nsq * mtot
        occ = self.cfg.occ

        while True:
            dt = self.rng.exponential(1.0 / rtot)
            t_new = self.t + dt
            if t_new > horizon:
                self.t = t_new
                return None
            self.t = t_new
            self.total_proposals += 1
            r = self.rng.random() * mtot
            if r < mass1:
                i = min(int(r / st.bound1), E1 - 1)
                x = int(st.edges1[i])
                y = int(st.nb[0, x])
                p = int(occ[x])
                q = int(occ[y])
                if p == q:
                    continue
                v = float(tilt.v_values(1, t_new, self._pts_e1[i:i + 1])[0]) / N
                rate = float(np.exp(-0.5 * st.beta
                                    * self.cfg.exchange_delta(x, y)
                                    + (p - q) * v))
                assert rate <= st.bound1 * (1 + 1e-9)
                if self.rng.random() * st.bound1 < rate:
                    self.cfg.apply_exchange(x, y)
                    self.W1[i] += p - q
                    ev = (t_new, 0, 1, x, q - p)
                    break
            elif r < mass1 + sum(masstr):
                rr = r - mass1
                kk = 0
                while rr >= masstr[kk]:
                    rr -= masstr[kk]
                    kk += 1
                x = min(int(rr / st.boundk[kk]), S - 1)
                y = int(st.nb[kk + 1, x])
                p = int(occ[x])
                q = int(occ[y])
                if p == q:
                    continue
                v = float(tilt.v_values(kk + 2, t_new,
                                        self._pts_all[x:x + 1])[0]) / N
                rate = float(np.exp((p - q) * v))
                assert rate <= st.boundk[kk] * (1 + 1e-9)
                if self.rng.random() * st.boundk[kk] < rate:
                    self.cfg.apply_exchange(x, y)
                    self.Wk[kk, x] += p - q
                    ev = (t_new, 0, kk + 2, x, q - p)
                    break
            else:
                rr = r - mass1 - sum(masstr)
                i = min(int(rr / st.boundf), B - 1)
                x = int(st.bsites[i])
                p = int(occ[x])
                h = float(tilt.h_values(t_new, self._pts_b[i:i + 1])[0]) / N
                if p == 1:
                    rate = (1.0 - st.bvals[i]) * float(np.exp(h))
                else:
                    rate = st.bvals[i] * float(np.exp(-h))
                assert rate <= st.boundf * (1 + 1e-9)
                if self.rng.random() * st.boundf < rate:
                    self.cfg.apply_flip(x)
                    self.Wb[i] += 1 if p == 1 else -1
                    ev = (t_new, 1, 0, x, 1 - 2 * p)
                    break
        self.total_events += 1
        if self._log is not None:
            self._log.append(ev)
        return ev


def make_state(geom, kernel, beta, b, tilt=None, initial=None, seed=0,
               log_events=False):
    """Convenience constructor for the step-by-step reference sampler."""
    setup = _ChainSetup(geom, kernel, beta, b,
                        tilt if tilt is not None else TiltFields.none())
    if initial is None:
        initial = Configuration(geom, kernel)
    return SimState(setup, initial, seed, log_events=log_events)


# ---------------------------------------------------------------------------
# Girsanov log-weight by replay

def girsanov_log_weight(traj, beta, b, tilt, kernel=None, t_end=None):
    """log dP^{tilted}/dP^{base} along a logged trajectory.

    Per-jump log-rate ratios plus the compensator integral of the rate
    difference; the compensator is exact in the configuration and uses
    4-point Gauss-Legendre per inter-event interval in time (exact for
    time-constant tilts).
    """
    if traj.events is None:
        raise PreconditionError("girsanov_log_weight requires an event log")
    tilt = tilt if tilt is not None else TiltFields.none()
    kernel = kernel if kernel is not None else traj.kernel
    geom = traj.geom
    N = geom.N
    if t_end is None:
        t_end = float(traj.times[-1])
    cfg = Configuration(geom, kernel, traj.initial_occ)
    setup = _ChainSetup(geom, kernel, beta, b, tilt)
    nb = setup.nb

    pts_e1 = geom.macro_coords(setup.edges1)
    pts_all = geom.macro_coords()
    pts_b = geom.macro_coords(setup.bsites)

    def comp(cfg_occ, field_slab, t):
        occ = cfg_occ.astype(np.int64)
        s = setup.edges1
        s2 = nb[0, s]
        p = occ[s]
        q = occ[s2]
        a = setup.slab[s]
        dh = (2.0 * (p - q) * (field_slab[a] - field_slab[a + 1])
              + setup.invNd * setup.dK1[a])
        v = tilt.v_values(1, t, pts_e1) / N
        c = np.sum(np.where(p != q,
                            np.exp(-0.5 * beta * dh)
                            * (np.exp((p - q) * v) - 1.0), 0.0))
        for kk in range(geom.d - 1):
            qk = occ[nb[kk + 1]]
            vk = tilt.v_values(kk + 2, t, pts_all) / N
            c += np.sum(np.where(occ != qk,
                                 np.exp((occ - qk) * vk) - 1.0, 0.0))
        pb = occ[setup.bsites]
        hv = tilt.h_values(t, pts_b) / N
        c += np.sum(np.where(pb == 1,
                             (1.0 - setup.bvals) * (np.exp(hv) - 1.0),
                             setup.bvals * (np.exp(-hv) - 1.0)))
        return setup.Nsq * c

    def comp_integral(t0, t1):
        if t1 <= t0:
            return 0.0
        if not tilt.time_dependent:
            return comp(cfg.occ, cfg.field_slab, t0) * (t1 - t0)
        mid = 0.5 * (t0 + t1)
        half = 0.5 * (t1 - t0)
        total = 0.0
        for node, w in zip(_GL4_NODES, _GL4_WEIGHTS):
            total += w * comp(cfg.occ, cfg.field_slab, mid + half * node)
        return total * half

    ev = traj.events
    logw = 0.0
    t_prev = 0.0
    for i in range(len(ev)):
        te = float(ev.t[i])
        if te > t_end:
            break
        logw -= comp_integral(t_prev, te)
        s = int(ev.site[i])
        if ev.kind[i] == 0:
            k = int(ev.direction[i])
            delta = int(ev.delta[i])  # eta(y) - eta(x) before the jump
            if k == 1:
                v = float(tilt.v_values(1, te,
                                        geom.macro_coords([s]))[0]) / N
            else:
                v = float(tilt.v_values(k, te,
                                        geom.macro_coords([s]))[0]) / N
            logw += -delta * v
            y = int(nb[k - 1, s])
            cfg.apply_exchange(s, y)
        else:
            p = int(cfg.occ[s])
            h = float(tilt.h_values(te, geom.macro_coords([s]))[0]) / N
            logw += (2 * p - 1) * h
            cfg.apply_flip(s)
        t_prev = te
    logw -= comp_integral(t_prev, t_end)
    return float(logw)


# ---------------------------------------------------------------------------
# exact generator oracle for tiny lattices

def exact_generator(geom, kernel, beta, b, tilt=None, t=0.0):
    """Full rate matrix of the sped-up chain over {0,1}^sites.

    Refuses lattices with more than 12 sites (4096 states).  Rows sum to
    zero; the stationary vector is obtained by a null-space solve.
    """
    S = geom.n_sites
    if S > 12:
        raise StateSpaceError(
            f"state space 2^{S} exceeds the 4096-state bound for the oracle")
    kernel = kernel if kernel is not None else KacKernel()
    tilt = tilt if tilt is not None else TiltFields.none()
    nstates = 1 << S
    setup = _ChainSetup(geom, kernel, beta, b, tilt, t_eval=t)
    nb = setup.nb
    Nsq = setup.Nsq

    rows = []
    cols = []
    vals = []
    for state in range(nstates):
        occ = np.array([(state >> i) & 1 for i in range(S)], dtype=np.int8)
        cfg = Configuration(geom, kernel, occ)
        out = 0.0
        for i, x in enumerate(setup.edges1):
            y = int(nb[0, x])
            p = int(occ[x])
            q = int(occ[y])
            if p == q:
                continue
            rate = Nsq * np.exp(-0.5 * beta * cfg.exchange_delta(x, y)
                                + (p - q) * setup.v1[i])
            target = state ^ (1 << int(x)) ^ (1 << y)
            rows.append(state)
            cols.append(target)
            vals.append(rate)
            out += rate
        for kk in range(geom.d - 1):
            for x in range(S):
                y = int(nb[kk + 1, x])
                p = int(occ[x])
                q = int(occ[y])
                if p == q:
                    continue
                rate = Nsq * np.exp((p - q) * setup.vk[kk, x])
                target = state ^ (1 << x) ^ (1 << y)
                rows.append(state)
                cols.append(target)
                vals.append(rate)
                out += rate
        for i, x in enumerate(setup.bsites):
            p = int(occ[x])
            if p == 1:
                rate = Nsq * (1.0 - setup.bvals[i]) * np.exp(setup.hb[i])
            else:
                rate = Nsq * setup.bvals[i] * np.exp(-setup.hb[i])
            target = state ^ (1 << int(x))
            rows.append(state)
            cols.append(target)
            vals.append(rate)
            out += rate
        rows.append(state)
        cols.append(state)
        vals.append(-out)
    return sp.csr_matrix((vals, (rows, cols)), shape=(nstates, nstates))


def stationary_vector(Q):
    """Probability vector pi with pi Q = 0, by a dense linear solve."""
    n = Q.shape[0]
    A = np.asarray(Q.T.todense()) if sp.issparse(Q) else Q.T.copy()
    A = np.vstack([A, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def transient_expectation(Q, f, t, state0):
    """E[f(eta_t) | eta_0 = state0] by the matrix exponential."""
    f = np.asarray(f, dtype=float)
    out = spla.expm_multiply(Q.T * t, _unit(state0, Q.shape[0]))
    return float(out @ f)


def _unit(i, n):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def occupation_from_events(traj_or_pair, Q=None):
    """Time-weighted state histogram of a tiny-lattice trajectory.

    Accepts a Trajectory with an event log; states are bitmask-encoded in
    the same order as `exact_generator`.
    """
    traj = traj_or_pair
    if traj.events is None:
        raise PreconditionError("needs an event log")
    S = traj.geom.n_sites
    occ = traj.initial_occ.astype(np.int64)
    state = int(sum(int(occ[i]) << i for i in range(S)))
    weights = np.zeros(1 << S)
    nb = np.stack([traj.geom.neighbor_fwd(k)
                   for k in range(1, traj.geom.d + 1)])
    T = float(traj.times[-1])
    t_prev = 0.0
    ev = traj.events
    for i in range(len(ev)):
        te = float(ev.t[i])
        if te > T:
            break
        weights[state] += te - t_prev
        s = int(ev.site[i])
        if ev.kind[i] == 0:
            y = int(nb[int(ev.direction[i]) - 1, s])
            state ^= (1 << s) ^ (1 << y)
        else:
            state ^= 1 << s
        t_prev = te
    weights[state] += T - t_prev
    return weights / weights.sum()
