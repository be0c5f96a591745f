"""Compiled inner loops for the LIV metric."""

import math

import numba
import numpy as np

# Log-weights are floored here so no weight becomes a denormal.
LOG_WEIGHT_FLOOR = -700.0
# Below this log-weight a basis point's contribution w * d^2 is at most
# 2 sigma^2 * 64 * exp(-64) (about 2e-26 sigma^2); the curve kernels skip it.
LOG_WEIGHT_CUTOFF = -64.0


@numba.njit(cache=True)
def liv_diag(points, basis, sigma, rho):
    """Diagonal of the LIV metric at each row of ``points`` -> (P, K)."""
    P, K = points.shape
    N = basis.shape[0]
    out = np.empty((P, K))
    inv2s2 = 0.5 / (sigma * sigma)
    S = np.empty(K)
    d = np.empty(K)
    for p in range(P):
        for j in range(K):
            S[j] = 0.0
        for i in range(N):
            r2 = 0.0
            for j in range(K):
                d[j] = basis[i, j] - points[p, j]
                r2 += d[j] * d[j]
            e = -r2 * inv2s2
            if e < LOG_WEIGHT_FLOOR:
                e = LOG_WEIGHT_FLOOR
            w = math.exp(e)
            for j in range(K):
                S[j] += w * d[j] * d[j]
        for j in range(K):
            out[p, j] = 1.0 / (S[j] + rho)
    return out


@numba.njit(cache=True)
def liv_diag_grad(points, basis, sigma, rho):
    """LIV diagonal and its derivatives.

    Returns ``g`` (P, K) and ``dg`` (P, K, K) with ``dg[p, l, j] = d g_j / d z_l``.
    """
    P, K = points.shape
    N = basis.shape[0]
    g = np.empty((P, K))
    dg = np.empty((P, K, K))
    inv2s2 = 0.5 / (sigma * sigma)
    invs2 = 1.0 / (sigma * sigma)
    S = np.empty(K)
    T = np.empty(K)
    U = np.empty((K, K))
    d = np.empty(K)
    for p in range(P):
        for j in range(K):
            S[j] = 0.0
            T[j] = 0.0
            for l in range(K):
                U[l, j] = 0.0
        for i in range(N):
            r2 = 0.0
            for j in range(K):
                d[j] = basis[i, j] - points[p, j]
                r2 += d[j] * d[j]
            e = -r2 * inv2s2
            if e < LOG_WEIGHT_FLOOR:
                e = LOG_WEIGHT_FLOOR
            w = math.exp(e)
            for j in range(K):
                wd2 = w * d[j] * d[j]
                S[j] += wd2
                T[j] += w * d[j]
                for l in range(K):
                    U[l, j] += wd2 * d[l]
        for j in range(K):
            gj = 1.0 / (S[j] + rho)
            g[p, j] = gj
            for l in range(K):
                dS = U[l, j] * invs2
                if l == j:
                    dS -= 2.0 * T[j]
                dg[p, l, j] = -gj * gj * dS
    return g, dg


@numba.njit(cache=True)
def _liv_point(z, basis, inv2s2, invs2, rho, g, dg, want_grad, S, T, U, d):
    K = z.shape[0]
    N = basis.shape[0]
    for j in range(K):
        S[j] = 0.0
        T[j] = 0.0
        for l in range(K):
            U[l, j] = 0.0
    for i in range(N):
        r2 = 0.0
        for j in range(K):
            d[j] = basis[i, j] - z[j]
            r2 += d[j] * d[j]
        e = -r2 * inv2s2
        if e < LOG_WEIGHT_CUTOFF:
            continue
        w = math.exp(e)
        for j in range(K):
            wd2 = w * d[j] * d[j]
            S[j] += wd2
            if want_grad:
                T[j] += w * d[j]
                for l in range(K):
                    U[l, j] += wd2 * d[l]
    for j in range(K):
        gj = 1.0 / (S[j] + rho)
        g[j] = gj
        if want_grad:
            for l in range(K):
                dS = U[l, j] * invs2
                if l == j:
                    dS -= 2.0 * T[j]
                dg[l, j] = -gj * gj * dS


@numba.njit(cache=True)
def _scratch(K):
    return np.empty(K), np.empty(K), np.empty((K, K)), np.empty(K)


@numba.njit(cache=True)
def liv_curve_energy_grad(nodes, basis, sigma, rho):
    """Discrete energy of each curve, its gradient w.r.t. interior nodes and
    the metric diagonal at every segment midpoint.

    nodes: (B, M+1, K).  Returns E (B,), grad (B, M-1, K), gseg (B, M, K).
    """
    B, M1, K = nodes.shape
    M = M1 - 1
    inv2s2 = 0.5 / (sigma * sigma)
    invs2 = 1.0 / (sigma * sigma)
    E = np.zeros(B)
    grad = np.zeros((B, M - 1, K))
    gseg = np.empty((B, M, K))
    mid = np.empty(K)
    delta = np.empty(K)
    g = np.empty(K)
    dg = np.empty((K, K))
    fwd = np.empty(K)
    S, T, U, d = _scratch(K)
    for b in range(B):
        for k in range(M):
            for j in range(K):
                mid[j] = 0.5 * (nodes[b, k, j] + nodes[b, k + 1, j])
                delta[j] = nodes[b, k + 1, j] - nodes[b, k, j]
            _liv_point(mid, basis, inv2s2, invs2, rho, g, dg, True, S, T, U, d)
            seg = 0.0
            for j in range(K):
                gseg[b, k, j] = g[j]
                seg += g[j] * delta[j] * delta[j]
            E[b] += M * seg
            # d seg / d node_{k+1} = 2 g delta + 1/2 dg.delta^2 ; d / d node_k = -2 g delta + 1/2 dg.delta^2
            for l in range(K):
                half = 0.0
                for j in range(K):
                    half += dg[l, j] * delta[j] * delta[j]
                half *= 0.5
                fwd[l] = 2.0 * g[l] * delta[l]
                if k + 1 <= M - 1:
                    grad[b, k, l] += M * (fwd[l] + half)
                if k >= 1:
                    grad[b, k - 1, l] += M * (half - fwd[l])
    return E, grad, gseg


@numba.njit(cache=True)
def liv_curve_lengths(nodes, basis, sigma, rho):
    B, M1, K = nodes.shape
    M = M1 - 1
    inv2s2 = 0.5 / (sigma * sigma)
    out = np.zeros(B)
    mid = np.empty(K)
    g = np.empty(K)
    dg = np.empty((1, 1))
    S, T, U, d = _scratch(K)
    for b in range(B):
        total = 0.0
        for k in range(M):
            for j in range(K):
                mid[j] = 0.5 * (nodes[b, k, j] + nodes[b, k + 1, j])
            if K == 2:
                _liv_point_diag2(mid, basis, inv2s2, rho, g)
            else:
                _liv_point(mid, basis, inv2s2, 0.0, rho, g, dg, False, S, T, U, d)
            seg = 0.0
            for j in range(K):
                dj = nodes[b, k + 1, j] - nodes[b, k, j]
                seg += g[j] * dj * dj
            total += math.sqrt(seg)
        out[b] = total
    return out


@numba.njit(cache=True)
def liv_curve_energies(nodes, basis, sigma, rho):
    B, M1, K = nodes.shape
    M = M1 - 1
    inv2s2 = 0.5 / (sigma * sigma)
    out = np.zeros(B)
    mid = np.empty(K)
    g = np.empty(K)
    dg = np.empty((1, 1))
    S, T, U, d = _scratch(K)
    for b in range(B):
        total = 0.0
        for k in range(M):
            for j in range(K):
                mid[j] = 0.5 * (nodes[b, k, j] + nodes[b, k + 1, j])
            if K == 2:
                _liv_point_diag2(mid, basis, inv2s2, rho, g)
            else:
                _liv_point(mid, basis, inv2s2, 0.0, rho, g, dg, False, S, T, U, d)
            for j in range(K):
                dj = nodes[b, k + 1, j] - nodes[b, k, j]
                total += g[j] * dj * dj
        out[b] = M * total
    return out


@numba.njit(cache=True)
def precondition(gseg, grad):
    """Solve the per-coordinate tridiagonal system ``H d = -grad``.

    ``H`` keeps the metric-weighted second-difference part of the energy
    Hessian: with ``c_k = 2 M g_k`` on segment ``k``, interior node ``i``
    has diagonal ``c_{i-1} + c_i`` and coupling ``-c_i`` to node ``i+1``.
    Returns the direction and its inner product with ``grad``.
    """
    B, M, K = gseg.shape
    n = M - 1
    direction = np.empty((B, n, K))
    slope = np.zeros(B)
    cp = np.empty(n)
    dp = np.empty(n)
    for b in range(B):
        for j in range(K):
            for l in range(n):
                diag = 2.0 * M * (gseg[b, l, j] + gseg[b, l + 1, j])
                rhs = -grad[b, l, j]
                if l > 0:
                    off = -2.0 * M * gseg[b, l, j]
                    m = diag - off * cp[l - 1]
                    rhs -= off * dp[l - 1]
                else:
                    m = diag
                if l < n - 1:
                    cp[l] = -2.0 * M * gseg[b, l + 1, j] / m
                dp[l] = rhs / m
            direction[b, n - 1, j] = dp[n - 1]
            for l in range(n - 2, -1, -1):
                direction[b, l, j] = dp[l] - cp[l] * direction[b, l + 1, j]
            for l in range(n):
                slope[b] += grad[b, l, j] * direction[b, l, j]
    return direction, slope


@numba.njit(cache=True)
def _liv_point_hess(z, basis, inv2s2, invs2, rho, g, dg, d2g, S, T, A, U, V, d):
    """Metric diagonal with first and second derivatives at one point.

    ``dg[l, j] = d g_j / d z_l`` and ``d2g[l, m, j] = d^2 g_j / d z_l d z_m``.
    """
    K = z.shape[0]
    N = basis.shape[0]
    W = 0.0
    for j in range(K):
        S[j] = 0.0
        T[j] = 0.0
        for l in range(K):
            A[l, j] = 0.0
            U[l, j] = 0.0
            for m in range(K):
                V[l, m, j] = 0.0
    for i in range(N):
        r2 = 0.0
        for j in range(K):
            d[j] = basis[i, j] - z[j]
            r2 += d[j] * d[j]
        e = -r2 * inv2s2
        if e < LOG_WEIGHT_CUTOFF:
            continue
        w = math.exp(e)
        W += w
        for j in range(K):
            wd = w * d[j]
            wd2 = wd * d[j]
            S[j] += wd2
            T[j] += wd
            for l in range(K):
                A[l, j] += wd * d[l]
                U[l, j] += wd2 * d[l]
                for m in range(l, K):
                    V[l, m, j] += wd2 * d[l] * d[m]
    invs4 = invs2 * invs2
    for j in range(K):
        gj = 1.0 / (S[j] + rho)
        g[j] = gj
        for l in range(K):
            dS = U[l, j] * invs2
            if l == j:
                dS -= 2.0 * T[j]
            dg[l, j] = -gj * gj * dS
        for l in range(K):
            for m in range(l, K):
                h = V[l, m, j] * invs4
                if l == m:
                    h -= S[j] * invs2
                if m == j:
                    h -= 2.0 * A[l, j] * invs2
                if l == j:
                    h -= 2.0 * A[m, j] * invs2
                if l == j and m == j:
                    h += 2.0 * W
                # dg already holds -g^2 dS, so 2 g^3 dS_l dS_m = 2 dg_l dg_m / g
                val = 2.0 * dg[l, j] * dg[m, j] / gj - gj * gj * h
                d2g[l, m, j] = val
                d2g[m, l, j] = val


@numba.njit(cache=True)
def _liv_point_hess2(z, basis, inv2s2, invs2, rho, g, dg, d2g):
    """Scalar-accumulator version of :func:`_liv_point_hess` for K = 2."""
    z0 = z[0]
    z1 = z[1]
    W = 0.0
    S0 = S1 = T0 = T1 = A01 = 0.0
    U00 = U01 = U10 = U11 = 0.0
    V000 = V001 = V010 = V011 = V110 = V111 = 0.0
    for i in range(basis.shape[0]):
        d0 = basis[i, 0] - z0
        d1 = basis[i, 1] - z1
        e = -(d0 * d0 + d1 * d1) * inv2s2
        if e < LOG_WEIGHT_CUTOFF:
            continue
        w = math.exp(e)
        W += w
        wd0 = w * d0
        wd1 = w * d1
        w00 = wd0 * d0
        w11 = wd1 * d1
        S0 += w00
        S1 += w11
        T0 += wd0
        T1 += wd1
        A01 += wd0 * d1
        # U[l, j] = sum w d_l d_j^2 ; V[l, m, j] = sum w d_l d_m d_j^2
        U00 += w00 * d0
        U10 += w00 * d1
        U01 += w11 * d0
        U11 += w11 * d1
        V000 += w00 * d0 * d0
        V010 += w00 * d0 * d1
        V110 += w00 * d1 * d1
        V001 += w11 * d0 * d0
        V011 += w11 * d0 * d1
        V111 += w11 * d1 * d1
    invs4 = invs2 * invs2
    A00 = S0
    A11 = S1
    g0 = 1.0 / (S0 + rho)
    g1 = 1.0 / (S1 + rho)
    g[0] = g0
    g[1] = g1
    # first derivatives of S_j
    s00 = U00 * invs2 - 2.0 * T0
    s10 = U10 * invs2
    s01 = U01 * invs2
    s11 = U11 * invs2 - 2.0 * T1
    dg[0, 0] = -g0 * g0 * s00
    dg[1, 0] = -g0 * g0 * s10
    dg[0, 1] = -g1 * g1 * s01
    dg[1, 1] = -g1 * g1 * s11
    # second derivatives of S_0 and S_1
    h000 = V000 * invs4 - S0 * invs2 - 4.0 * A00 * invs2 + 2.0 * W
    h010 = V010 * invs4 - 2.0 * A01 * invs2
    h110 = V110 * invs4 - S0 * invs2
    h001 = V001 * invs4 - S1 * invs2
    h011 = V011 * invs4 - 2.0 * A01 * invs2
    h111 = V111 * invs4 - S1 * invs2 - 4.0 * A11 * invs2 + 2.0 * W
    gg0 = g0 * g0
    gg1 = g1 * g1
    d2g[0, 0, 0] = 2.0 * gg0 * g0 * s00 * s00 - gg0 * h000
    d2g[0, 1, 0] = d2g[1, 0, 0] = 2.0 * gg0 * g0 * s00 * s10 - gg0 * h010
    d2g[1, 1, 0] = 2.0 * gg0 * g0 * s10 * s10 - gg0 * h110
    d2g[0, 0, 1] = 2.0 * gg1 * g1 * s01 * s01 - gg1 * h001
    d2g[0, 1, 1] = d2g[1, 0, 1] = 2.0 * gg1 * g1 * s01 * s11 - gg1 * h011
    d2g[1, 1, 1] = 2.0 * gg1 * g1 * s11 * s11 - gg1 * h111


@numba.njit(cache=True)
def _liv_point_diag2(z, basis, inv2s2, rho, g):
    z0 = z[0]
    z1 = z[1]
    S0 = S1 = 0.0
    for i in range(basis.shape[0]):
        d0 = basis[i, 0] - z0
        d1 = basis[i, 1] - z1
        e = -(d0 * d0 + d1 * d1) * inv2s2
        if e < LOG_WEIGHT_CUTOFF:
            continue
        w = math.exp(e)
        S0 += w * d0 * d0
        S1 += w * d1 * d1
    g[0] = 1.0 / (S0 + rho)
    g[1] = 1.0 / (S1 + rho)


@numba.njit(cache=True)
def liv_diag_hess(points, basis, sigma, rho):
    """Diagonal, first and second derivatives at each row of ``points``."""
    P, K = points.shape
    g = np.empty((P, K))
    dg = np.empty((P, K, K))
    d2g = np.empty((P, K, K, K))
    S, T, U, d = _scratch(K)
    A = np.empty((K, K))
    V = np.empty((K, K, K))
    inv2s2 = 0.5 / (sigma * sigma)
    invs2 = 1.0 / (sigma * sigma)
    for p in range(P):
        _liv_point_hess(points[p], basis, inv2s2, invs2, rho, g[p], dg[p], d2g[p], S, T, A, U, V, d)
    return g, dg, d2g


@numba.njit(cache=True)
def liv_curve_newton_system(nodes, basis, sigma, rho):
    """Energy, gradient and block-tridiagonal Hessian over interior nodes.

    Returns E (B,), grad (B, n, K), gseg (B, M, K), Hd (B, n, K, K) and
    Ho (B, n-1, K, K) where ``Ho[p]`` couples interior node ``p`` (rows)
    to ``p + 1`` (columns) and ``n = M - 1``.
    """
    B, M1, K = nodes.shape
    M = M1 - 1
    n = M - 1
    inv2s2 = 0.5 / (sigma * sigma)
    invs2 = 1.0 / (sigma * sigma)
    E = np.zeros(B)
    grad = np.zeros((B, n, K))
    gseg = np.empty((B, M, K))
    Hd = np.zeros((B, n, K, K))
    Ho = np.zeros((B, max(n - 1, 0), K, K))
    mid = np.empty(K)
    delta = np.empty(K)
    g = np.empty(K)
    dg = np.empty((K, K))
    d2g = np.empty((K, K, K))
    S, T, U, d = _scratch(K)
    A = np.empty((K, K))
    V = np.empty((K, K, K))
    Q = np.empty((K, K))
    c = np.empty((K, K))
    for b in range(B):
        for k in range(M):
            for j in range(K):
                mid[j] = 0.5 * (nodes[b, k, j] + nodes[b, k + 1, j])
                delta[j] = nodes[b, k + 1, j] - nodes[b, k, j]
            if K == 2:
                _liv_point_hess2(mid, basis, inv2s2, invs2, rho, g, dg, d2g)
            else:
                _liv_point_hess(mid, basis, inv2s2, invs2, rho, g, dg, d2g, S, T, A, U, V, d)
            seg = 0.0
            for j in range(K):
                gseg[b, k, j] = g[j]
                seg += g[j] * delta[j] * delta[j]
            E[b] += M * seg
            for l in range(K):
                half = 0.0
                for j in range(K):
                    half += dg[l, j] * delta[j] * delta[j]
                half *= 0.5
                fwd = 2.0 * g[l] * delta[l]
                if k + 1 <= n:
                    grad[b, k, l] += M * (fwd + half)
                if k >= 1:
                    grad[b, k - 1, l] += M * (half - fwd)
            for l in range(K):
                for m in range(K):
                    q = 0.0
                    for j in range(K):
                        q += d2g[l, m, j] * delta[j] * delta[j]
                    Q[l, m] = 0.25 * q
                    c[l, m] = dg[l, m] * delta[m]
            # block (s, t) = M [Q/4 + t c_lm + s c_ml + 2 s t g_l delta_lm]
            for l in range(K):
                for m in range(K):
                    diag2g = 2.0 * g[l] if l == m else 0.0
                    if k + 1 <= n:
                        Hd[b, k, l, m] += M * (Q[l, m] + c[l, m] + c[m, l] + diag2g)
                    if k >= 1:
                        Hd[b, k - 1, l, m] += M * (Q[l, m] - c[l, m] - c[m, l] + diag2g)
                    if k >= 1 and k + 1 <= n:
                        Ho[b, k - 1, l, m] += M * (Q[l, m] + c[l, m] - c[m, l] - diag2g)
    return E, grad, gseg, Hd, Ho


@numba.njit(cache=True)
def _chol_solve_inplace(S, L, rhs, K, ncol):
    """Cholesky of the K x K block ``S`` into ``L``; solves ``S x = rhs``
    in place for ``ncol`` columns.  Returns False if ``S`` is not positive definite."""
    for i in range(K):
        for j in range(i + 1):
            s = S[i, j]
            for p in range(j):
                s -= L[i, p] * L[j, p]
            if i == j:
                if not s > 0.0:
                    return False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    for col in range(ncol):
        for i in range(K):
            s = rhs[i, col]
            for p in range(i):
                s -= L[i, p] * rhs[p, col]
            rhs[i, col] = s / L[i, i]
        for i in range(K - 1, -1, -1):
            s = rhs[i, col]
            for p in range(i + 1, K):
                s -= L[p, i] * rhs[p, col]
            rhs[i, col] = s / L[i, i]
    return True


@numba.njit(cache=True)
def newton_direction(Hd, Ho, gseg, grad, lam):
    """Damped Newton directions ``(H + lam P) d = -grad`` per curve.

    ``P`` is the metric-weighted second-difference operator used by
    :func:`precondition`.  ``lam`` is raised (by 4x, from at least 1e-4)
    until the system is positive definite; the updated values are
    returned with the directions and slopes.
    """
    B, n, K = grad.shape
    M = n + 1
    direction = np.empty((B, n, K))
    slope = np.zeros(B)
    lam_out = lam.copy()
    Sb = np.empty((K, K))
    L = np.empty((K, K))
    Wt = np.empty((n, K, K))
    zt = np.empty((n, K, 1))
    y = np.empty((K, 1))
    rhsW = np.empty((K, K))
    for b in range(B):
        lb = lam_out[b]
        for _attempt in range(60):
            ok = True
            for p in range(n):
                for l in range(K):
                    for m in range(K):
                        Sb[l, m] = Hd[b, p, l, m]
                    Sb[l, l] += lb * 2.0 * M * (gseg[b, p, l] + gseg[b, p + 1, l])
                    y[l, 0] = -grad[b, p, l]
                if p > 0:
                    # S_p -= O^T W_{p-1};  y_p -= O^T z_{p-1}, O = Ho[p-1] + lam * Poff
                    for l in range(K):
                        for m in range(K):
                            acc = 0.0
                            for r in range(K):
                                o = Ho[b, p - 1, r, l]
                                if r == l:
                                    o -= lb * 2.0 * M * gseg[b, p, l]
                                acc += o * Wt[p - 1, r, m]
                            Sb[l, m] -= acc
                        acc = 0.0
                        for r in range(K):
                            o = Ho[b, p - 1, r, l]
                            if r == l:
                                o -= lb * 2.0 * M * gseg[b, p, l]
                            acc += o * zt[p - 1, r, 0]
                        y[l, 0] -= acc
                if p < n - 1:
                    for l in range(K):
                        for m in range(K):
                            o = Ho[b, p, l, m]
                            if l == m:
                                o -= lb * 2.0 * M * gseg[b, p + 1, l]
                            rhsW[l, m] = o
                    # Cholesky is recomputed for the second solve; blocks are tiny
                    for l in range(K):
                        for m in range(K):
                            L[l, m] = 0.0
                    if not _chol_solve_inplace(Sb, L, rhsW, K, K):
                        ok = False
                        break
                    for l in range(K):
                        for m in range(K):
                            Wt[p, l, m] = rhsW[l, m]
                if not _chol_solve_inplace(Sb, L, y, K, 1):
                    ok = False
                    break
                for l in range(K):
                    zt[p, l, 0] = y[l, 0]
            if ok:
                break
            lb = max(4.0 * lb, 1e-4)
        lam_out[b] = lb
        for l in range(K):
            direction[b, n - 1, l] = zt[n - 1, l, 0]
        for p in range(n - 2, -1, -1):
            for l in range(K):
                acc = zt[p, l, 0]
                for m in range(K):
                    acc -= Wt[p, l, m] * direction[b, p + 1, m]
                direction[b, p, l] = acc
        s = 0.0
        for p in range(n):
            for l in range(K):
                s += grad[b, p, l] * direction[b, p, l]
        slope[b] = s
    return direction, slope, lam_out


@numba.njit(cache=True)
def resample_polylines(points, offsets, M):
    """Resample ragged polylines to ``M + 1`` nodes evenly spaced in arc length.

    Polyline ``r`` is ``points[offsets[r]:offsets[r + 1]]``.  Consecutive
    duplicate points are dropped first; ``kept[r]`` is the number left.
    Interpolation follows ``np.interp`` so results match the NumPy version.
    """
    R = offsets.shape[0] - 1
    K = points.shape[1]
    out = np.empty((R, M + 1, K))
    kept = np.zeros(R, dtype=np.int64)
    for r in range(R):
        a = offsets[r]
        n_raw = offsets[r + 1] - a
        poly = np.empty((n_raw, K))
        n = 0
        for i in range(n_raw):
            same = n > 0
            if same:
                for j in range(K):
                    if points[a + i, j] != points[a + i - 1, j]:
                        same = False
                        break
            if not same:
                for j in range(K):
                    poly[n, j] = points[a + i, j]
                n += 1
        kept[r] = n
        if n <= 2:
            continue
        s = np.empty(n)
        s[0] = 0.0
        for i in range(1, n):
            acc = 0.0
            for j in range(K):
                d = poly[i, j] - poly[i - 1, j]
                acc += d * d
            s[i] = s[i - 1] + math.sqrt(acc)
        total = s[n - 1]
        step = total / M
        seg = 0
        for k in range(M + 1):
            x = k * step if k < M else total
            while seg < n - 2 and s[seg + 1] <= x:
                seg += 1
            for j in range(K):
                if x >= s[n - 1]:
                    out[r, k, j] = poly[n - 1, j]
                else:
                    slope = (poly[seg + 1, j] - poly[seg, j]) / (s[seg + 1] - s[seg])
                    out[r, k, j] = slope * (x - s[seg]) + poly[seg, j]
        for j in range(K):
            out[r, 0, j] = poly[0, j]
            out[r, M, j] = poly[n - 1, j]
    return out, kept
