import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neumkac import dynamics as dyn
from neumkac import observables as obs
from neumkac.errors import DomainError
from neumkac.hydro import Grid
from neumkac.lattice import (Configuration, LatticeGeometry, affine_profile,
                             constant_profile, deterministic_profile,
                             sample_profile)
from neumkac.smoothfields import (boundary_vanishing_family,
                                  cosine_time_weight, poly_time_weight,
                                  sine_mode)


def test_empirical_density_examples(kernel):
    g = LatticeGeometry(1, 10)
    empty = obs.empirical_density(Configuration(g, kernel))
    assert empty.total_mass == 0.0
    assert empty.pair(lambda p: np.ones(len(p))) == 0.0
    full = obs.empirical_density(
        Configuration(g, kernel, np.ones(g.n_sites, dtype=np.int8)))
    # exact counting: (2N+1) N^{d-1} / N^d
    assert full.pair(lambda p: np.ones(len(p))) == pytest.approx(21 / 10)
    assert full.total_mass <= 3.0


def test_pair_density_riemann_convergence(kernel):
    F = lambda p: np.cos(0.5 * np.pi * p[:, 0])
    exact = 4 / np.pi * 0.5  # integral of 0.5*cos(pi u/2) over [-1,1]
    errs = []
    for N in (25, 50, 100):
        g = LatticeGeometry(1, N)
        cfg = deterministic_profile(g, constant_profile(0.5), kernel)
        errs.append(abs(obs.empirical_density(cfg).pair(F) - exact))
    slope = np.polyfit(np.log([25, 50, 100]), np.log(errs), 1)[0]
    assert slope < -0.7


def test_empirical_current_single_atom(kernel, reservoirs):
    g = LatticeGeometry(1, 5)
    ledger = dyn.CurrentLedger.zero(g)
    e1 = dyn.edge1_sites(g)
    i = 3
    ledger.edge1[i] = 1
    cm = obs.empirical_current(ledger)
    x_over_N = g.macro_coords(e1)[i, 0]
    G = (lambda p: 2.0 + p[:, 0],)
    assert cm.pair(G) == pytest.approx((2.0 + x_over_N) / 5 ** 2)


def test_current_pairing_matches_direct_sum(kernel, reservoirs):
    g = LatticeGeometry(2, 3)
    rng = np.random.default_rng(5)
    ledger = dyn.CurrentLedger.zero(g)
    ledger.edge1[:] = rng.integers(-4, 5, len(ledger.edge1))
    ledger.trans[:] = rng.integers(-4, 5, ledger.trans.shape)
    ledger.boundary[:] = rng.integers(-4, 5, len(ledger.boundary))
    cm = obs.empirical_current(ledger)
    G = (lambda p: np.sin(p[:, 0]) + p[:, 1],
         lambda p: np.cos(2 * np.pi * p[:, 1]))
    # independent re-summation straight from the definition
    scale = 3.0 ** (-(2 + 1))
    total = 0.0
    e1 = dyn.edge1_sites(g)
    pts = g.macro_coords(e1)
    total += float(np.dot(G[0](pts), ledger.edge1)) * scale
    bs = g.boundary_sites()
    total += float(np.dot(G[0](g.macro_coords(bs)), ledger.boundary)) * scale
    ptsall = g.macro_coords()
    total += float(np.dot(G[1](ptsall), ledger.trans[0])) * scale
    assert cm.pair(G) == pytest.approx(total, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_pair_current_linear(seed, a, c):
    g = LatticeGeometry(1, 4)
    rng = np.random.default_rng(seed)
    l1 = dyn.CurrentLedger.zero(g)
    l2 = dyn.CurrentLedger.zero(g)
    l1.edge1[:] = rng.integers(-3, 4, len(l1.edge1))
    l2.edge1[:] = rng.integers(-3, 4, len(l2.edge1))
    l1.boundary[:] = rng.integers(-3, 4, 2)
    l2.boundary[:] = rng.integers(-3, 4, 2)
    G = (lambda p: 1.0 + p[:, 0] ** 2,)
    Ga = (lambda p: a * (1.0 + p[:, 0] ** 2),)
    m1 = obs.empirical_current(l1)
    m2 = obs.empirical_current(l2)
    comb = dyn.CurrentLedger(g, l1.edge1 + c * l2.edge1,
                             l1.trans + c * l2.trans,
                             l1.boundary + c * l2.boundary)
    # linear in G
    assert m1.pair(Ga) == pytest.approx(a * m1.pair(G), rel=1e-12, abs=1e-12)
    # linear in the ledger (integer ledgers scaled by c airthmetically)
    mc = obs.CurrentMeasure(g, comb.edge1, comb.trans, comb.boundary)
    assert mc.pair(G) == pytest.approx(m1.pair(G) + c * m2.pair(G),
                                       rel=1e-10, abs=1e-10)


def test_block_average_examples(kernel):
    g = LatticeGeometry(1, 6)
    empty = Configuration(g, kernel)
    assert obs.block_average(empty, [0], 2) == 0.0
    full = Configuration(g, kernel, np.ones(g.n_sites, dtype=np.int8))
    assert obs.block_average(full, [0], 2) == 1.0
    cfg = sample_profile(g, constant_profile(0.5), 3, kernel)
    # direct enumeration
    coords = g.site_coords()[:, 0]
    mask = np.abs(coords - 1) <= 2
    assert obs.block_average(cfg, [1], 2) == pytest.approx(
        cfg.occ[mask].mean())
    with pytest.raises(DomainError):
        obs.block_average(cfg, [0], -1)


def test_mollify_examples(kernel):
    g = LatticeGeometry(1, 100)
    eps = 0.1
    pts = np.linspace(-0.9, 0.9, 11)[:, None]
    full = obs.empirical_density(
        Configuration(g, kernel, np.ones(g.n_sites, dtype=np.int8)))
    vals = obs.mollify(full, eps, pts)
    # continuum box volume vs the lattice count: off by at most ~1 site
    n_box = 2 * eps * g.N
    assert np.max(np.abs(vals - 1.0 / (1.0 + eps))) < 1.5 / n_box
    zero = obs.empirical_density(Configuration(g, kernel))
    assert np.all(obs.mollify(zero, eps, pts) == 0.0)
    cfg = sample_profile(g, constant_profile(0.5), 12, kernel)
    half = obs.mollify(obs.empirical_density(cfg), eps, pts)
    n_box = 2 * eps * g.N
    sigma3 = 3 * np.sqrt(0.25 / n_box)
    assert np.all(np.abs(half * (1 + eps) - 0.5) < sigma3 + 1.0 / n_box)
    with pytest.raises(DomainError):
        obs.mollify(half_measure := obs.empirical_density(cfg), 0.0, pts)


def test_mollify_particle_hole_symmetry(kernel):
    g = LatticeGeometry(1, 60)
    cfg = sample_profile(g, constant_profile(0.4), 9, kernel)
    hole = Configuration(g, kernel, (1 - cfg.occ).astype(np.int8))
    ones = Configuration(g, kernel, np.ones(g.n_sites, dtype=np.int8))
    pts = np.linspace(-0.8, 0.8, 9)[:, None]
    eps = 0.15
    a = obs.mollify(obs.empirical_density(cfg), eps, pts)
    b = obs.mollify(obs.empirical_density(hole), eps, pts)
    c = obs.mollify(obs.empirical_density(ones), eps, pts)
    assert np.max(np.abs(a + b - c)) < 1e-12


def test_continuity_residual_trivial_cases(kernel, reservoirs):
    g = LatticeGeometry(1, 40)
    gamma = affine_profile(0.5, -0.3)
    cfg = deterministic_profile(g, gamma, kernel)
    times = np.linspace(0, 1, 6)
    densities = [obs.empirical_density(cfg)] * 6
    currents = [obs.empirical_current(dyn.CurrentLedger.zero(g))] * 6
    G = sine_mode(2)
    phi = poly_time_weight([1.0])  # constant weight
    vals = obs.continuity_residual(times, densities, currents, gamma, G, phi)
    # static path with zero current: defect is the deterministic O(1/N)
    # population error of the initial data
    assert np.max(np.abs(vals)) < 0.5 / g.N


def test_continuity_residual_decays_with_N(kernel, reservoirs):
    gamma = affine_profile(0.5, -0.3)
    fam = [sine_mode(m) for m in (1, 2, 3)]
    phis = [poly_time_weight([1.0]), cosine_time_weight(2.0, 0.5)]
    worst = []
    Ns = (25, 50, 100)
    for N in Ns:
        g = LatticeGeometry(1, N)
        init = deterministic_profile(g, gamma, kernel)
        times = np.linspace(0, 0.4, 9)
        traj = dyn.simulate(g, kernel, 0.5, reservoirs, None, init, 0.4,
                            times, seed=77)
        densities = [obs.DensityMeasure(g, traj.occs[j])
                     for j in range(len(times))]
        currents = [obs.CurrentMeasure.from_ledger(traj.ledger_at(j))
                    for j in range(len(times))]
        w = 0.0
        for G in fam:
            for phi in phis:
                vals = obs.continuity_residual(times, densities, currents,
                                               gamma, G, phi)
                w = max(w, float(np.max(np.abs(vals))))
        worst.append(w)
    slope = np.polyfit(np.log(Ns), np.log(worst), 1)[0]
    assert slope < -0.6


def test_continuity_residual_phi_one_reduces_to_plain_defect(kernel,
                                                             reservoirs):
    g = LatticeGeometry(1, 30)
    gamma = affine_profile(0.5, -0.3)
    init = deterministic_profile(g, gamma, kernel)
    times = np.linspace(0, 0.2, 5)
    traj = dyn.simulate(g, kernel, 0.0, reservoirs, None, init, 0.2, times,
                        seed=3)
    densities = [obs.DensityMeasure(g, traj.occs[j]) for j in range(5)]
    currents = [obs.CurrentMeasure.from_ledger(traj.ledger_at(j))
                for j in range(5)]
    G = sine_mode(1)
    phi = poly_time_weight([1.0])
    vals = obs.continuity_residual(times, densities, currents, gamma, G, phi)
    gval = lambda p: G.value(0.0, p)
    gd = (lambda p: G.grad(1, 0.0, p),)
    for j in range(5):
        direct = (densities[j].pair(gval)
                  - obs.profile_pairing(gamma, gval, 1)
                  - currents[j].pair(gd))
        assert vals[j] == pytest.approx(direct, abs=1e-12)


def test_project_density(kernel):
    g = LatticeGeometry(1, 50)
    grid = Grid(1, 10)
    cfg = Configuration(g, kernel, np.ones(g.n_sites, dtype=np.int8))
    proj = obs.project_density(cfg, grid)
    # full lattice: each interior cell holds 10 sites of mass 1/50 over 0.2
    assert proj.sum() * grid.h1 == pytest.approx((2 * 50 + 1) / 50)


def test_csv_emitters(tmp_path):
    buf = io.StringIO()
    obs.write_density_csv(buf, np.array([[-0.5], [0.5]]), [0.25, 0.75])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "u1,value"
    assert len(lines) == 3
    buf2 = io.StringIO()
    obs.write_current_csv(buf2, [(0.0, 1, 0.5), (1.0, 1, 0.6)])
    assert buf2.getvalue().splitlines()[0] == "t,component,value"
