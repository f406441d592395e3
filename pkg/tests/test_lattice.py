import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neumkac.errors import DomainError
from neumkac.lattice import (Configuration, LatticeGeometry, affine_profile,
                             constant_profile, deterministic_profile,
                             discrete_coupling, field_bruteforce,
                             hamiltonian_bruteforce, load_snapshot,
                             sample_profile, save_snapshot)


def random_config(geom, kernel, seed, fill=0.5):
    rng = np.random.default_rng(seed)
    occ = (rng.random(geom.n_sites) < fill).astype(np.int8)
    return Configuration(geom, kernel, occ)


def test_site_count_and_boundary():
    g = LatticeGeometry(1, 5)
    assert g.n_sites == 11
    assert set(g.site_coords()[g.boundary_sites()][:, 0]) == {-5, 5}
    g2 = LatticeGeometry(2, 4)
    assert g2.n_sites == 9 * 4
    assert len(g2.boundary_sites()) == 2 * 4


def test_lexicographic_order_and_index_roundtrip():
    g = LatticeGeometry(2, 3)
    coords = g.site_coords()
    assert list(coords[0]) == [-3, 0]
    assert list(coords[1]) == [-3, 1]
    for s in (0, 5, 11, g.n_sites - 1):
        assert g.site_index(coords[s]) == s
    with pytest.raises(DomainError):
        g.site_index([4, 0])
    with pytest.raises(DomainError):
        g.site_index([0, 3])


def test_discrete_coupling_examples(kernel):
    g = LatticeGeometry(1, 10)
    # deep interior diagonal
    assert discrete_coupling([0], [0], g, kernel) == pytest.approx(
        0.1 * kernel.profile(0.0))
    # far separation: compact support even after reflection
    g2 = LatticeGeometry(1, 3)
    assert discrete_coupling([-3], [3], g2, kernel) == pytest.approx(
        (1 / 3) * kernel.neumann(-1.0, 1.0))


def test_coupling_row_sum_tends_to_one(kernel):
    # Riemann sum of a probability kernel
    for N, tol in ((25, 0.08), (50, 0.04)):
        g = LatticeGeometry(1, N)
        x = g.site_index([0])
        coords = g.site_coords()[:, 0] / N
        total = float(np.sum(kernel.neumann(0.0, coords))) / N
        assert abs(total - 1.0) < tol


def test_field_matches_bruteforce(kernel):
    cfg = random_config(LatticeGeometry(1, 6), kernel, 0)
    assert np.max(np.abs(cfg.field_all() - field_bruteforce(cfg))) < 1e-12
    cfg2 = random_config(LatticeGeometry(2, 3), kernel, 1)
    assert np.max(np.abs(cfg2.field_all() - field_bruteforce(cfg2))) < 1e-12


def test_hamiltonian_examples(kernel):
    g = LatticeGeometry(1, 3)
    empty = Configuration(g, kernel)
    assert empty.hamiltonian() == 0.0
    single = Configuration(g, kernel)
    x = g.site_index([0])
    occ = np.zeros(g.n_sites, dtype=np.int8)
    occ[x] = 1
    single = Configuration(g, kernel, occ)
    assert single.hamiltonian() == pytest.approx(
        -discrete_coupling([0], [0], g, kernel), abs=1e-15)
    cfg = random_config(g, kernel, 3)
    assert cfg.hamiltonian() == pytest.approx(hamiltonian_bruteforce(cfg),
                                              abs=1e-12)


def test_exchange_delta_against_recompute(kernel):
    g = LatticeGeometry(1, 4)
    rng = np.random.default_rng(7)
    for trial in range(500):
        cfg = random_config(g, kernel, 1000 + trial)
        x, y = rng.choice(g.n_sites, size=2, replace=False)
        fast = cfg.exchange_delta(int(x), int(y))
        other = cfg.copy().apply_exchange(int(x), int(y))
        slow = hamiltonian_bruteforce(other) - hamiltonian_bruteforce(cfg)
        assert abs(fast - slow) < 1e-12


def test_exchange_delta_exhaustive_small_lattice(kernel):
    # every configuration, every adjacent pair
    g = LatticeGeometry(1, 2)
    nb = g.neighbor_fwd(1)
    for state in range(1 << g.n_sites):
        occ = np.array([(state >> i) & 1 for i in range(g.n_sites)],
                       dtype=np.int8)
        cfg = Configuration(g, kernel, occ)
        for x in range(g.n_sites):
            y = int(nb[x])
            if y < 0:
                continue
            other = cfg.copy().apply_exchange(x, y)
            slow = hamiltonian_bruteforce(other) - hamiltonian_bruteforce(cfg)
            assert abs(cfg.exchange_delta(x, y) - slow) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 9 - 1), st.integers(0, 8), st.integers(0, 8))
def test_exchange_involution(state, x, y):
    g = LatticeGeometry(1, 4)
    occ = np.array([(state >> i) & 1 for i in range(g.n_sites)], dtype=np.int8)
    cfg = Configuration(g, None, occ)
    d1 = cfg.exchange_delta(x, y)
    cfg2 = cfg.copy().apply_exchange(x, y)
    d2 = cfg2.exchange_delta(y, x)
    assert abs(d1 + d2) < 1e-12
    cfg3 = cfg2.apply_exchange(x, y)
    assert np.array_equal(cfg3.occ, cfg.occ)
    assert np.max(np.abs(cfg3.field_slab - cfg.field_slab)) < 1e-12


def test_exchange_noop_when_equal(kernel):
    g = LatticeGeometry(1, 4)
    cfg = random_config(g, kernel, 11)
    occ = cfg.occ.copy()
    sites = np.nonzero(occ == occ[0])[0]
    cfg.apply_exchange(0, int(sites[1]))
    assert np.array_equal(cfg.occ, occ)


def test_flip_examples(kernel):
    g = LatticeGeometry(1, 4)
    cfg = random_config(g, kernel, 5)
    x = int(g.boundary_sites()[0])
    before = int(cfg.occ[x])
    count = cfg.particle_count
    cfg.apply_flip(x)
    assert cfg.particle_count == count + (1 if before == 0 else -1)
    assert np.max(np.abs(cfg.field_slab - cfg.recompute_field())) < 1e-12
    cfg.apply_flip(x)
    assert int(cfg.occ[x]) == before
    assert cfg.particle_count == count
    with pytest.raises(DomainError):
        cfg.apply_flip(g.site_index([0]))


def test_field_coherent_after_many_random_events(kernel):
    g = LatticeGeometry(2, 3)
    cfg = random_config(g, kernel, 21)
    rng = np.random.default_rng(2)
    nb = [g.neighbor_fwd(k) for k in range(1, 3)]
    bnd = g.boundary_sites()
    for _ in range(10_000):
        if rng.random() < 0.2:
            cfg.apply_flip(int(rng.choice(bnd)))
        else:
            x = int(rng.integers(g.n_sites))
            k = int(rng.integers(2))
            y = int(nb[k][x])
            if y >= 0:
                cfg.apply_exchange(x, y)
    assert np.max(np.abs(cfg.field_all() - field_bruteforce(cfg))) < 1e-11
    assert cfg.particle_count == int(cfg.occ.sum())


def test_sample_profile_examples(kernel):
    g = LatticeGeometry(1, 100)
    assert sample_profile(g, constant_profile(0.0), 1, kernel).particle_count == 0
    assert sample_profile(g, constant_profile(1.0), 1, kernel).particle_count \
        == g.n_sites
    cfg = sample_profile(g, constant_profile(0.5), 42, kernel)
    n = g.n_sites
    assert abs(cfg.particle_count - 0.5 * n) <= 3 * np.sqrt(0.25 * n)
    # determinism
    cfg2 = sample_profile(g, constant_profile(0.5), 42, kernel)
    assert np.array_equal(cfg.occ, cfg2.occ)
    with pytest.raises(DomainError):
        sample_profile(g, affine_profile(1.0, 0.5), 1, kernel)


def test_deterministic_profile_tracks_integral(kernel):
    g = LatticeGeometry(1, 200)
    rho = affine_profile(0.5, -0.3)
    cfg = deterministic_profile(g, rho, kernel)
    pts = g.macro_coords()
    # partial sums of occupancies stay within one unit of the profile sums
    expect = np.cumsum(rho(pts))
    got = np.cumsum(cfg.occ)
    assert np.max(np.abs(expect - got)) <= 1.0


def test_snapshot_roundtrip(kernel):
    g = LatticeGeometry(2, 3)
    cfg = random_config(g, kernel, 17)
    buf = io.StringIO()
    save_snapshot(cfg, buf, time=1.25)
    buf.seek(0)
    loaded, t = load_snapshot(buf, kernel)
    assert t == 1.25
    assert np.array_equal(loaded.occ, cfg.occ)
    assert loaded.particle_count == cfg.particle_count
