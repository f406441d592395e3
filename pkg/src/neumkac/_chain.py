"""Jitted event loop for the rejection/thinning chain sampler.

All state is carried in plain arrays so the loop compiles under numba; the
wrapper in `dynamics` prepares inputs and interprets outputs.  Proposals are
drawn against static per-class rate bounds; acceptance evaluates the exact
rate, so the sampled chain is exact (no time discretization).  Rates carry
the diffusive N^2 speedup through the total clock rate.

Conventions for the event log: `kind` 0 = exchange, 1 = boundary flip;
`direction` is the lattice direction (1-based) for exchanges, 0 for flips;
`delta` is the occupancy change at the recorded site (so for an exchange
the signed current across the edge is -delta).
"""

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - mirror environment always has numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco


STATUS_OK = 0
STATUS_LOG_FULL = 1
STATUS_BOUND_VIOLATION = 2


@njit(cache=True)
def _comp_sum(occ, slab, nb, edges1, Hslab, dK1, invNd, beta,
              bsites, brate, v1, vk, hb, ntrans):
    """Sum over events of (tilted rate - base rate), without the N^2 factor."""
    c = 0.0
    for i in range(edges1.shape[0]):
        s = edges1[i]
        s2 = nb[0, s]
        p = occ[s]
        q = occ[s2]
        if p != q:
            a = slab[s]
            dh = 2.0 * (p - q) * (Hslab[a] - Hslab[a + 1]) + invNd * dK1[a]
            base = np.exp(-0.5 * beta * dh)
            c += base * (np.exp((p - q) * v1[i]) - 1.0)
    for kk in range(ntrans):
        for s in range(occ.shape[0]):
            p = occ[s]
            q = occ[nb[kk + 1, s]]
            if p != q:
                c += np.exp((p - q) * vk[kk, s]) - 1.0
    for i in range(bsites.shape[0]):
        if occ[bsites[i]] == 1:
            c += (1.0 - brate[i]) * (np.exp(hb[i]) - 1.0)
        else:
            c += brate[i] * (np.exp(-hb[i]) - 1.0)
    return c


@njit(cache=True)
def run_chain(occ, slab, nb, edges1, K, dK1, Hslab, mslab, invNd, beta,
              bsites, brate, v1, vk, hb, bound1, boundk, boundf,
              Nsq, Tend, obs, seed,
              W1, Wk, Wb,
              out_occ, out_W1, out_Wk, out_Wb,
              want_gir, out_gir,
              want_log, log_t, log_kind, log_dir, log_site, log_delta,
              want_occtime, occ_acc, occ_last):
    np.random.seed(seed)
    S = occ.shape[0]
    E1 = edges1.shape[0]
    B = bsites.shape[0]
    ntrans = nb.shape[0] - 1
    n_obs = obs.shape[0]
    n1 = Hslab.shape[0]

    mass1 = E1 * bound1
    mass_tr = np.empty(ntrans) if ntrans > 0 else np.empty(0)
    mass_tr_tot = 0.0
    for kk in range(ntrans):
        mass_tr[kk] = S * boundk[kk]
        mass_tr_tot += mass_tr[kk]
    massf = B * boundf
    mtot = mass1 + mass_tr_tot + massf
    rtot = Nsq * mtot

    t = 0.0
    obs_ptr = 0
    n_events = 0
    n_props = 0
    n_logged = 0
    status = STATUS_OK

    logw_jump = 0.0
    comp_int = 0.0
    t_last = 0.0
    comp = 0.0
    if want_gir:
        comp = Nsq * _comp_sum(occ, slab, nb, edges1, Hslab, dK1, invNd, beta,
                               bsites, brate, v1, vk, hb, ntrans)

    # snapshots due at or before t = 0
    while obs_ptr < n_obs and obs[obs_ptr] <= 0.0:
        out_occ[obs_ptr, :] = occ
        out_W1[obs_ptr, :] = W1
        out_Wk[obs_ptr, :, :] = Wk
        out_Wb[obs_ptr, :] = Wb
        out_gir[obs_ptr] = logw_jump - comp_int
        obs_ptr += 1

    while True:
        dt = -np.log(1.0 - np.random.random()) / rtot
        t_new = t + dt
        while obs_ptr < n_obs and obs[obs_ptr] < t_new:
            out_occ[obs_ptr, :] = occ
            out_W1[obs_ptr, :] = W1
            out_Wk[obs_ptr, :, :] = Wk
            out_Wb[obs_ptr, :] = Wb
            out_gir[obs_ptr] = (logw_jump - comp_int
                                - comp * (obs[obs_ptr] - t_last))
            obs_ptr += 1
        if t_new > Tend:
            break
        t = t_new
        n_props += 1

        r = np.random.random() * mtot
        accepted = False
        kind = -1
        direction = 0
        site = -1
        delta = 0
        jump = 0.0

        if r < mass1:
            i = int(r / bound1)
            if i >= E1:
                i = E1 - 1
            s = edges1[i]
            s2 = nb[0, s]
            p = occ[s]
            q = occ[s2]
            if p != q:
                a = slab[s]
                dh = 2.0 * (p - q) * (Hslab[a] - Hslab[a + 1]) + invNd * dK1[a]
                rate = np.exp(-0.5 * beta * dh + (p - q) * v1[i])
                if rate > bound1 * (1.0 + 1e-9):
                    status = STATUS_BOUND_VIOLATION
                    break
                if np.random.random() * bound1 < rate:
                    accepted = True
                    if want_occtime:
                        if p == 1:
                            occ_acc[s] += t - occ_last[s]
                        if q == 1:
                            occ_acc[s2] += t - occ_last[s2]
                        occ_last[s] = t
                        occ_last[s2] = t
                    occ[s] = q
                    occ[s2] = p
                    W1[i] += p - q
                    kind = 0
                    direction = 1
                    site = s
                    delta = q - p
                    jump = (p - q) * v1[i]
                    if beta != 0.0:
                        if p == 1:
                            src = a
                            dst = a + 1
                        else:
                            src = a + 1
                            dst = a
                        mslab[src] -= 1
                        mslab[dst] += 1
                        for c in range(n1):
                            Hslab[c] += invNd * (K[c, dst] - K[c, src])
        elif r < mass1 + mass_tr_tot:
            rr = r - mass1
            kk = 0
            while rr >= mass_tr[kk]:
                rr -= mass_tr[kk]
                kk += 1
            s = int(rr / boundk[kk])
            if s >= S:
                s = S - 1
            s2 = nb[kk + 1, s]
            p = occ[s]
            q = occ[s2]
            if p != q:
                rate = np.exp((p - q) * vk[kk, s])
                if rate > boundk[kk] * (1.0 + 1e-9):
                    status = STATUS_BOUND_VIOLATION
                    break
                if np.random.random() * boundk[kk] < rate:
                    accepted = True
                    if want_occtime:
                        if p == 1:
                            occ_acc[s] += t - occ_last[s]
                        if q == 1:
                            occ_acc[s2] += t - occ_last[s2]
                        occ_last[s] = t
                        occ_last[s2] = t
                    occ[s] = q
                    occ[s2] = p
                    Wk[kk, s] += p - q
                    kind = 0
                    direction = kk + 2
                    site = s
                    delta = q - p
                    jump = (p - q) * vk[kk, s]
                    # same slab: interaction field unchanged
        else:
            rr = r - mass1 - mass_tr_tot
            i = int(rr / boundf)
            if i >= B:
                i = B - 1
            s = bsites[i]
            p = occ[s]
            if p == 1:
                rate = (1.0 - brate[i]) * np.exp(hb[i])
            else:
                rate = brate[i] * np.exp(-hb[i])
            if rate > boundf * (1.0 + 1e-9):
                status = STATUS_BOUND_VIOLATION
                break
            if np.random.random() * boundf < rate:
                accepted = True
                if want_occtime:
                    if p == 1:
                        occ_acc[s] += t - occ_last[s]
                    occ_last[s] = t
                occ[s] = 1 - p
                Wb[i] += 1 if p == 1 else -1
                kind = 1
                direction = 0
                site = s
                delta = 1 - 2 * p
                jump = (2.0 * p - 1.0) * hb[i]
                if beta != 0.0:
                    a = slab[s]
                    if p == 1:
                        mslab[a] -= 1
                        for c in range(n1):
                            Hslab[c] -= invNd * K[c, a]
                    else:
                        mslab[a] += 1
                        for c in range(n1):
                            Hslab[c] += invNd * K[c, a]

        if accepted:
            n_events += 1
            if want_gir:
                comp_int += comp * (t - t_last)
                t_last = t
                logw_jump += jump
                comp = Nsq * _comp_sum(occ, slab, nb, edges1, Hslab, dK1,
                                       invNd, beta, bsites, brate, v1, vk,
                                       hb, ntrans)
            if want_log:
                if n_logged >= log_t.shape[0]:
                    status = STATUS_LOG_FULL
                    break
                log_t[n_logged] = t
                log_kind[n_logged] = kind
                log_dir[n_logged] = direction
                log_site[n_logged] = site
                log_delta[n_logged] = delta
                n_logged += 1

    if want_occtime:
        for s in range(S):
            if occ[s] == 1:
                occ_acc[s] += Tend - occ_last[s]

    # snapshots never reached because the next proposal jumped past Tend
    while obs_ptr < n_obs:
        out_occ[obs_ptr, :] = occ
        out_W1[obs_ptr, :] = W1
        out_Wk[obs_ptr, :, :] = Wk
        out_Wb[obs_ptr, :] = Wb
        out_gir[obs_ptr] = logw_jump - comp_int - comp * (obs[obs_ptr] - t_last)
        obs_ptr += 1

    return status, n_events, n_props, n_logged
