"""Compiled per-initial-condition integration loops.

Each initial condition is advanced independently with the same operation
order, so a row's result never depends on which batch it was computed in.
Coupling sums run over the nonzeros of each adjacency row in ascending
column order.
"""

import numpy as np
from numba import njit

HR_DIFFUSIVE, HR_CHEMICAL, KURAMOTO, HENON = 0, 1, 2, 3
KIND_IDS = {"hr-diffusive": HR_DIFFUSIVE, "hr-electrochemical": HR_CHEMICAL,
            "kuramoto": KURAMOTO, "henon": HENON}


def pack(model):
    """Kernel inputs for ``model``: kind id, parameter vector, CSR adjacency."""
    p = model.params
    if model.kind in ("hr-diffusive", "hr-electrochemical"):
        vals = [p.a, p.b, p.c, p.d, p.s, p.r, p.x_R, p.I, p.sigma]
        if model.kind == "hr-electrochemical":
            c = model.chemical
            vals += [c.alpha, c.V_syn, c.theta_syn, c.lam]
    elif model.kind == "kuramoto":
        vals = [p.sigma, p.alpha]
    else:
        vals = [p.p, p.b_map, p.sigma]
    A = model.network.weights
    nz = A != 0
    indptr = np.concatenate([[0], np.cumsum(nz.sum(axis=1))]).astype(np.int64)
    rows, cols = np.nonzero(nz)
    return (KIND_IDS[model.kind], np.array(vals, dtype=np.float64), indptr,
            cols.astype(np.int64), A[rows, cols].astype(np.float64))


@njit(cache=True)
def _rhs(kind, z, out, scr, N, prm, indptr, indices, data):
    if kind == KURAMOTO:
        # sin(t_j - t_i - alpha) = sin t_j cos(t_i + alpha) - cos t_j sin(t_i + alpha),
        # so each call needs 2N trig evaluations instead of one per edge
        sigma, ca, sa = prm[0], np.cos(prm[1]), np.sin(prm[1])
        for i in range(N):
            scr[i] = np.sin(z[i])
            scr[N + i] = np.cos(z[i])
        for i in range(N):
            acc_s = 0.0
            acc_c = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                acc_s += data[k] * scr[j]
                acc_c += data[k] * scr[N + j]
            si = scr[i] * ca + scr[N + i] * sa
            ci = scr[N + i] * ca - scr[i] * sa
            out[i] = sigma * (acc_s * ci - acc_c * si)
        return
    a, b, c, d, s, r, xr, I, sigma = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5], prm[6], prm[7], prm[8]
    for i in range(N):
        x = z[3 * i]
        y = z[3 * i + 1]
        w = z[3 * i + 2]
        out[3 * i] = y - a * x * x * x + b * x * x - w + I
        out[3 * i + 1] = c - d * x * x - y
        out[3 * i + 2] = r * (s * (x - xr) - w)
    if kind == HR_DIFFUSIVE:
        for i in range(N):
            for comp in range(3):
                acc = 0.0
                zi = z[3 * i + comp]
                for k in range(indptr[i], indptr[i + 1]):
                    acc += data[k] * (z[3 * indices[k] + comp] - zi)
                out[3 * i + comp] += sigma * acc
    else:
        alpha, vsyn, theta, lam = prm[9], prm[10], prm[11], prm[12]
        for i in range(N):
            chem = 0.0
            elec = 0.0
            yi = z[3 * i + 1]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                chem += data[k] * (1.0 / (1.0 + np.exp(-lam * (z[3 * j] - theta))))
                elec += data[k] * (z[3 * j + 1] - yi)
            out[3 * i] += sigma * (-alpha) * (z[3 * i] - vsyn) * chem
            out[3 * i + 1] += sigma * elec


@njit(cache=True)
def _henon(z, out, fx, N, prm, indptr, indices, data):
    p, bm, sigma = prm[0], prm[1], prm[2]
    for i in range(N):
        fx[i] = 1.0 - p * z[2 * i] * z[2 * i] + z[2 * i + 1]
    for i in range(N):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * (fx[indices[k]] - fx[i])
        out[2 * i] = fx[i] + sigma * acc
        out[2 * i + 1] = bm * z[2 * i]


@njit(cache=True)
def _bounded(z, bound):
    for v in z:
        if not (abs(v) <= bound):
            return False
    return True


@njit(cache=True)
def run_batch(kind, prm, indptr, indices, data, inits, N, d, n0, n1, stride, dt, bound):
    M, S = inits.shape
    T = n1 // stride
    samples = np.empty((M, N, d, T))
    diverged = np.zeros(M, dtype=np.bool_)
    blowup = np.full(M, -1, dtype=np.int64)
    z = np.empty(S)
    k1 = np.empty(S)
    k2 = np.empty(S)
    k3 = np.empty(S)
    k4 = np.empty(S)
    tmp = np.empty(S)
    fx = np.empty(N)
    scr = np.empty(2 * N)
    half = 0.5 * dt
    sixth = dt / 6.0
    for m in range(M):
        for q in range(S):
            z[q] = inits[m, q]
        if not _bounded(z, bound):
            diverged[m] = True
            blowup[m] = 0
        step = 0
        while not diverged[m] and step < n0 + n1:
            step += 1
            if kind == HENON:
                _henon(z, tmp, fx, N, prm, indptr, indices, data)
                for q in range(S):
                    z[q] = tmp[q]
            else:
                _rhs(kind, z, k1, scr, N, prm, indptr, indices, data)
                for q in range(S):
                    tmp[q] = z[q] + half * k1[q]
                _rhs(kind, tmp, k2, scr, N, prm, indptr, indices, data)
                for q in range(S):
                    tmp[q] = z[q] + half * k2[q]
                _rhs(kind, tmp, k3, scr, N, prm, indptr, indices, data)
                for q in range(S):
                    tmp[q] = z[q] + dt * k3[q]
                _rhs(kind, tmp, k4, scr, N, prm, indptr, indices, data)
                for q in range(S):
                    z[q] = z[q] + sixth * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])
            if not _bounded(z, bound):
                diverged[m] = True
                blowup[m] = step
                break
            kk = step - n0
            if kk > 0 and kk % stride == 0:
                t = kk // stride - 1
                for i in range(N):
                    for c in range(d):
                        samples[m, i, c, t] = z[i * d + c]
        if diverged[m]:
            samples[m] = np.nan
    return samples, diverged, blowup


@njit(cache=True)
def pair_correlation(obs, L, circular):
    """R[p, L + tau] = sum_t a_i(t) s_j(t - tau) for pairs i<j in fingerprint order."""
    N, T = obs.shape
    P = N * (N - 1) // 2
    Q = 2 * L + 1
    R = np.empty((P, Q))
    acc = np.empty(Q)
    # circular: pad s_j so that index t - tau + L never wraps
    ext = np.empty(T + 2 * L)
    p = 0
    for i in range(N - 1):
        for j in range(i + 1, N):
            acc[:] = 0.0
            # acc[m] holds lag L - m; each one still sums over t in ascending
            # order while the inner loop runs over contiguous, independent lags
            if circular:
                for u in range(T + 2 * L):
                    ext[u] = obs[j, (u - L) % T]
                for t in range(T):
                    a = obs[i, t]
                    for m in range(Q):
                        acc[m] += a * ext[t + m]
            else:
                sj = obs[j]
                for t in range(L, T - L):
                    a = obs[i, t]
                    base = t - L
                    for m in range(Q):
                        acc[m] += a * sj[base + m]
            for q in range(Q):
                R[p, q] = acc[Q - 1 - q]
            p += 1
    return R


@njit(cache=True)
def pair_costs(X, taus, L, circular):
    """Mean over the window of ||x_i(t) - x_j(t - tau_ij)||^2 for pairs i<j."""
    N, d, T = X.shape
    P = N * (N - 1) // 2
    out = np.empty(P)
    lo, hi = (0, T) if circular else (L, T - L)
    p = 0
    for i in range(N - 1):
        for j in range(i + 1, N):
            tau = taus[p]
            acc = 0.0
            for c in range(d):
                xi = X[i, c]
                xj = X[j, c]
                if circular:
                    # t - tau wraps at most once; split the window at the seam
                    k = tau % T
                    for t in range(0, k):
                        diff = xi[t] - xj[t - k + T]
                        acc += diff * diff
                    for t in range(k, T):
                        diff = xi[t] - xj[t - k]
                        acc += diff * diff
                else:
                    for t in range(lo, hi):
                        diff = xi[t] - xj[t - tau]
                        acc += diff * diff
            out[p] = acc / (hi - lo)
            p += 1
    return out
