# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled chain and Brownian-dynamics kernels.

Mirrors the pure-Python sampler step for step: same proposal construction,
same density bookkeeping, same rejection reasons.  Matrices are stored
column-major so LAPACK can work on them in place; the RNG is the C bit
generator behind a numpy Generator, drawn in the same call order as the
Python backend.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport INFINITY, M_PI, NAN, atan2, exp, fabs, isfinite, log, sqrt
from libc.string cimport memcpy, memset
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (random_standard_normal,
                                           random_standard_uniform)
# Dense linear algebra is hand-rolled below: the matrices here are tiny
# (ambient dimension a few dozen at most) and LAPACK's per-call locking
# serializes concurrent chains.

cnp.import_array()

DEF TAG_NONE = 0
DEF TAG_EQ = 1
DEF TAG_IN = 2

DEF KIND_PAIR = 0
DEF KIND_DIAGQ = 1

DEF W_CONST = 0
DEF W_STICKY = 1

DEF MV_SAME = 0
DEF MV_GAIN = 1
DEF MV_LOSE = 2

DEF R_ACCEPTED = 0
DEF R_NEWTON = 1
DEF R_ALPHA = 2
DEF R_INEQ = 3
DEF R_METROPOLIS = 4
DEF R_REV_NEWTON = 5
DEF R_REV_MISMATCH = 6
DEF R_REV_ALPHA = 7

DEF OBS_NONE = 0
DEF OBS_XY = 1
DEF OBS_TRIMER = 2
DEF OBS_BONDS = 3
DEF OBS_WALL = 4
DEF OBS_LEVEL = 5

DEF RANK_RTOL = 1e-10
DEF PROJ_RTOL = 1e-14
DEF REV_TOL = 1e-7

DEF LOG_2PI = 1.8378770664093453


cdef struct Ctx:
    # --- model ---
    int n, nf
    int *kind
    int *pi
    int *pj
    int *pdim
    double *target
    double *quad
    double *lin
    double *cst
    int weight_kind
    double *logc
    double *logkappa
    unsigned char *gauge
    double kbend
    int npart, pardim
    # --- stratification ---
    int explicit, nmanif
    signed char *labels_list
    int *gptr
    int *gtgt
    int *gfn
    unsigned char *gtwo
    int *lptr
    int *ltgt
    int *lfn
    unsigned char *ltwo
    unsigned char *fix
    unsigned char *twos
    # --- sampler parameters ---
    double sigma, sbdy, stan, lam_lose_p, lam_gain_p, ntol
    int maxiter
    # --- observables ---
    int obs_kind, nobs
    int *bit_of_fn
    int *type_code
    unsigned char *is_wall
    # --- rng ---
    bitgen_t *rng
    # --- chain state ---
    double *x
    signed char *lab
    double *T
    int d, man_idx
    int last_move
    # --- workspaces ---
    double *y
    double *xrev
    double *v
    double *vrev
    double *g
    double *g2
    double *un
    double *vopt
    double *tmp
    double *Qb        # n x (nf+1), base-point gradients (+ direction column)
    double *Qt        # n x (nf+1), gradients at the Newton iterate
    double *A         # n x n QR buffer
    double *tau
    double *work
    int lwork
    int *jpvt
    double *Thi       # tangent of the gain target at the source
    double *Ty        # tangent of the target manifold at y
    double *Tyh       # tangent of the source manifold at y (reverse gain)
    double *Tp        # perp basis 1
    double *Tp2       # perp basis 2
    double *M         # small square dets
    int *ipiv
    double *avec
    double *F
    double *Jm
    double *Qd        # distance-gauge gradients for the weight
    double *G
    signed char *lab_t
    signed char *lab_s
    int *eqb          # eq list buffer (proposals)
    int *eqs          # eq list buffer (density evaluation)
    # move-probability banks (A: current point, B: proposed point)
    int *gA_t
    int *gA_fn
    unsigned char *gA_two
    int *lA_t
    int *lA_fn
    unsigned char *lA_two
    int *gB_t
    int *gB_fn
    unsigned char *gB_two
    int *lB_t
    int *lB_fn
    unsigned char *lB_two


# ---------------------------------------------------------------------------
# constraint evaluation

cdef inline double fn_val(Ctx *c, int k, double *x) noexcept nogil:
    cdef int i, dim, o1, o2
    cdef double s = 0.0, dcomp
    if c.kind[k] == KIND_PAIR:
        dim = c.pdim[k]
        o1 = c.pi[k] * dim
        o2 = c.pj[k] * dim
        for i in range(dim):
            dcomp = x[o1 + i] - x[o2 + i]
            s += dcomp * dcomp
        return s - c.target[k] * c.target[k]
    for i in range(c.n):
        s += c.quad[k * c.n + i] * x[i] * x[i] + c.lin[k * c.n + i] * x[i]
    return s + c.cst[k]


cdef inline void fn_grad(Ctx *c, int k, double *x, double *g) noexcept nogil:
    cdef int i, dim, o1, o2
    cdef double dcomp
    if c.kind[k] == KIND_PAIR:
        memset(g, 0, c.n * sizeof(double))
        dim = c.pdim[k]
        o1 = c.pi[k] * dim
        o2 = c.pj[k] * dim
        for i in range(dim):
            dcomp = 2.0 * (x[o1 + i] - x[o2 + i])
            g[o1 + i] = dcomp
            g[o2 + i] = -dcomp
        return
    for i in range(c.n):
        g[i] = 2.0 * c.quad[k * c.n + i] * x[i] + c.lin[k * c.n + i]


cdef inline int eq_list(Ctx *c, signed char *lab, int *eq) noexcept nogil:
    cdef int k, m = 0
    for k in range(c.nf):
        if lab[k] == TAG_EQ:
            eq[m] = k
            m += 1
    return m


cdef void build_Q(Ctx *c, int *eq, int m, double *x, double *Q) noexcept nogil:
    cdef int j
    for j in range(m):
        fn_grad(c, eq[j], x, Q + j * c.n)


# ---------------------------------------------------------------------------
# small dense linear algebra (unblocked, lock free: LAPACK's per-call
# locking would serialize concurrent chains, and the matrices here are tiny)

cdef void apply_reflector(double *A, int n, int ncols, int row,
                          double *v, double tau) noexcept nogil:
    """Apply H = I - tau v v^T (v has an implicit 1 at `row`) to n x ncols A."""
    cdef int i, j
    cdef double s
    if tau == 0.0:
        return
    for j in range(ncols):
        s = A[j * n + row]
        for i in range(row + 1, n):
            s += v[i] * A[j * n + i]
        s *= tau
        A[j * n + row] -= s
        for i in range(row + 1, n):
            A[j * n + i] -= s * v[i]


cdef void qr_factor(double *A, int n, int m, double *tau, bint pivot) noexcept nogil:
    """Householder QR of column-major A (n x m), optionally column pivoted.

    Reflector tails overwrite the subdiagonal (scaled to a unit head); the
    diagonal receives the R diagonal.  Pivoting reorders columns in place
    (only the orthogonal factor is consumed downstream).
    """
    cdef int i, j, k, p, kmax = m if m < n else n
    cdef double sigma, alpha, mu, beta, v0, best, s
    for k in range(kmax):
        if pivot:
            p = k
            best = -1.0
            for j in range(k, m):
                s = 0.0
                for i in range(k, n):
                    s += A[j * n + i] * A[j * n + i]
                if s > best:
                    best = s
                    p = j
            if p != k:
                for i in range(n):
                    s = A[k * n + i]
                    A[k * n + i] = A[p * n + i]
                    A[p * n + i] = s
        alpha = A[k * n + k]
        sigma = 0.0
        for i in range(k + 1, n):
            sigma += A[k * n + i] * A[k * n + i]
        if sigma == 0.0:
            tau[k] = 0.0
            continue
        mu = sqrt(alpha * alpha + sigma)
        beta = -mu if alpha >= 0.0 else mu
        v0 = alpha - beta
        tau[k] = (beta - alpha) / beta
        for i in range(k + 1, n):
            A[k * n + i] /= v0
        A[k * n + k] = beta
        if k + 1 < m:
            apply_reflector(A + (k + 1) * n, n, m - k - 1, k, A + k * n, tau[k])


cdef void q_columns(double *A, int n, int nref, double *tau, int col0,
                    int ncols, double *out) noexcept nogil:
    """Columns col0.. of the full orthogonal factor, into out (n x ncols).

    Q = H_0 H_1 ... H_{nref-1} applied to identity columns, reflectors in
    reverse order.
    """
    cdef int j, k
    memset(out, 0, n * ncols * sizeof(double))
    for j in range(ncols):
        out[j * n + col0 + j] = 1.0
    for k in range(nref - 1, -1, -1):
        apply_reflector(out, n, ncols, k, A + k * n, tau[k])


cdef int lu_factor(double *M, int k, int *piv) noexcept nogil:
    """Partially pivoted LU of column-major M (k x k) in place; 0 on success."""
    cdef int i, j, p, col
    cdef double best, s
    for j in range(k):
        p = j
        best = fabs(M[j * k + j])
        for i in range(j + 1, k):
            if fabs(M[j * k + i]) > best:
                best = fabs(M[j * k + i])
                p = i
        piv[j] = p
        if best == 0.0:
            return 1
        if p != j:
            for col in range(k):
                s = M[col * k + j]
                M[col * k + j] = M[col * k + p]
                M[col * k + p] = s
        for i in range(j + 1, k):
            M[j * k + i] /= M[j * k + j]
            s = M[j * k + i]
            for col in range(j + 1, k):
                M[col * k + i] -= s * M[col * k + j]
    return 0


cdef int lu_solve(double *M, double *b, int k, int *piv) noexcept nogil:
    """Solve M x = b in place (b receives x); M must be lu_factor output."""
    cdef int i, j
    cdef double s
    for j in range(k):
        if piv[j] != j:
            s = b[j]
            b[j] = b[piv[j]]
            b[piv[j]] = s
        for i in range(j + 1, k):
            b[i] -= M[j * k + i] * b[j]
    for j in range(k - 1, -1, -1):
        s = b[j]
        for i in range(j + 1, k):
            s -= M[i * k + j] * b[i]
        b[j] = s / M[j * k + j]
    return 0


# ---------------------------------------------------------------------------
# tangent spaces

cdef int tangent(Ctx *c, double *Q, int m, double *T) noexcept nogil:
    """Orthonormal null-space basis of Q^T into T (n x d); returns d or -1."""
    cdef int n = c.n, d = n - m, i, j
    cdef double dmax, dmin, v
    if m == 0:
        memset(T, 0, n * n * sizeof(double))
        for i in range(n):
            T[i * n + i] = 1.0
        return n
    if d == 0:
        return 0
    memcpy(c.A, Q, n * m * sizeof(double))
    qr_factor(c.A, n, m, c.tau, False)
    dmax = 0.0
    dmin = INFINITY
    for j in range(m):
        v = fabs(c.A[j * n + j])
        if v > dmax:
            dmax = v
        if v < dmin:
            dmin = v
    if dmin < RANK_RTOL * dmax or dmax == 0.0:
        return -1
    q_columns(c.A, n, m, c.tau, m, d, T)
    return d


cdef int tanv(Ctx *c, double *T, int d, double *v, double *Tv) noexcept nogil:
    """Basis of span(T) orthogonal to tangent vector v, into Tv (n x d-1).

    Column pivoting keeps the result well-defined when v lines up exactly
    with a column of T (the projected matrix then has a zero column).
    """
    cdef int n = c.n, i, j, dm1 = d - 1
    cdef double proj
    if d < 2:
        return 0
    # A = (I - v v^T) T, column by column
    for j in range(d):
        proj = 0.0
        for i in range(n):
            proj += v[i] * T[j * n + i]
        for i in range(n):
            c.A[j * n + i] = T[j * n + i] - proj * v[i]
    qr_factor(c.A, n, d, c.tau, True)
    q_columns(c.A, n, dm1, c.tau, 0, dm1, Tv)
    return dm1


cdef double log_cross_det(Ctx *c, double *Ta, double *Tb, int k) noexcept nogil:
    """log |det(Ta^T Tb)| for two n x k bases; -INFINITY when singular."""
    cdef int n = c.n, i, j, l
    cdef double s, out = 0.0
    if k == 0:
        return 0.0
    for j in range(k):
        for i in range(k):
            s = 0.0
            for l in range(n):
                s += Ta[i * n + l] * Tb[j * n + l]
            c.M[j * k + i] = s
    if lu_factor(c.M, k, c.ipiv) != 0:
        return -INFINITY
    for i in range(k):
        out += log(fabs(c.M[i * k + i]))
    return out


# ---------------------------------------------------------------------------
# Newton projections

cdef int nes(Ctx *c, double *z, double *Q, int *eq, int m, double *yout) noexcept nogil:
    """Solve q_k(z + Q a) = 0 from a = 0; 1 on success, 0 on failure."""
    cdef int n = c.n, it, i, j, l
    cdef double fmax, s
    if m == 0:
        memcpy(yout, z, n * sizeof(double))
        return 1
    for i in range(m):
        c.avec[i] = 0.0
    memcpy(yout, z, n * sizeof(double))
    for it in range(c.maxiter):
        fmax = 0.0
        for i in range(m):
            c.F[i] = fn_val(c, eq[i], yout)
            if fabs(c.F[i]) > fmax:
                fmax = fabs(c.F[i])
        if fmax < c.ntol:
            return 1
        build_Q(c, eq, m, yout, c.Qt)
        for j in range(m):          # J = Qt^T Q, column-major m x m
            for i in range(m):
                s = 0.0
                for l in range(n):
                    s += c.Qt[i * n + l] * Q[j * n + l]
                c.Jm[j * m + i] = s
        for i in range(m):
            c.F[i] = -c.F[i]
        if lu_factor(c.Jm, m, c.ipiv) != 0:
            return 0
        lu_solve(c.Jm, c.F, m, c.ipiv)
        for i in range(m):
            if not isfinite(c.F[i]):
                return 0
            c.avec[i] += c.F[i]
        for i in range(n):
            s = z[i]
            for j in range(m):
                s += Q[j * n + i] * c.avec[j]
            yout[i] = s
    return 0


cdef int nes_l(Ctx *c, double *x, double *Qv, int *eq0, int m0, int i0,
               double *v, double *yout, double *alpha) noexcept nogil:
    """Lose-move projection with free step length; unknowns (a, alpha)."""
    cdef int n = c.n, m = m0 + 1, it, i, j, l
    cdef double fmax, s, den, h
    fn_grad(c, i0, x, c.g2)
    den = 0.0
    for i in range(n):
        den += c.g2[i] * v[i]
    if den == 0.0 or not isfinite(den):
        return 0
    h = -fn_val(c, i0, x) / den
    if not isfinite(h):
        return 0
    for i in range(m0):
        c.avec[i] = 0.0
    c.avec[m0] = h
    for i in range(n):
        yout[i] = x[i] + Qv[m0 * n + i] * h
    for it in range(c.maxiter):
        fmax = 0.0
        for i in range(m0):
            c.F[i] = fn_val(c, eq0[i], yout)
            if fabs(c.F[i]) > fmax:
                fmax = fabs(c.F[i])
        c.F[m0] = fn_val(c, i0, yout)
        if fabs(c.F[m0]) > fmax:
            fmax = fabs(c.F[m0])
        if fmax < c.ntol:
            alpha[0] = c.avec[m0]
            return 1
        for i in range(m0):
            fn_grad(c, eq0[i], yout, c.Qt + i * n)
        fn_grad(c, i0, yout, c.Qt + m0 * n)
        for j in range(m):
            for i in range(m):
                s = 0.0
                for l in range(n):
                    s += c.Qt[i * n + l] * Qv[j * n + l]
                c.Jm[j * m + i] = s
        for i in range(m):
            c.F[i] = -c.F[i]
        if lu_factor(c.Jm, m, c.ipiv) != 0:
            return 0
        lu_solve(c.Jm, c.F, m, c.ipiv)
        for i in range(m):
            if not isfinite(c.F[i]):
                return 0
            c.avec[i] += c.F[i]
        for i in range(n):
            s = x[i]
            for j in range(m):
                s += Qv[j * n + i] * c.avec[j]
            yout[i] = s
    return 0


# ---------------------------------------------------------------------------
# boundary geometry

cdef double hopt(Ctx *c, int k, double *x, double *T, int d) noexcept nogil:
    """Linearized in-manifold distance to the boundary q_k = 0."""
    cdef int i, j
    cdef double s, den = 0.0, gn = 0.0
    fn_grad(c, k, x, c.g)
    for j in range(d):
        s = 0.0
        for i in range(c.n):
            s += T[j * c.n + i] * c.g[i]
        den += s * s
    for i in range(c.n):
        gn += c.g[i] * c.g[i]
    den = sqrt(den)
    gn = sqrt(gn)
    if den <= PROJ_RTOL * (gn if gn > 1.0 else 1.0):
        return INFINITY
    return fabs(fn_val(c, k, x)) / den


cdef int proj_unit(Ctx *c, double *T, int d, double *g, double *out) noexcept nogil:
    """out = normalized projection of g onto span(T); 0 when degenerate."""
    cdef int i, j
    cdef double s, nrm = 0.0, gn = 0.0
    memset(out, 0, c.n * sizeof(double))
    for j in range(d):
        s = 0.0
        for i in range(c.n):
            s += T[j * c.n + i] * g[i]
        for i in range(c.n):
            out[i] += T[j * c.n + i] * s
    for i in range(c.n):
        nrm += out[i] * out[i]
        gn += g[i] * g[i]
    nrm = sqrt(nrm)
    gn = sqrt(gn)
    if nrm <= PROJ_RTOL * (gn if gn > 1.0 else 1.0):
        return 0
    for i in range(c.n):
        out[i] /= nrm
    return 1


# ---------------------------------------------------------------------------
# weights

cdef int chol_logdet(double *G, int m, double *out) noexcept nogil:
    """log sqrt(det G) for symmetric positive definite G, via Cholesky.

    Returns nonzero when G is not numerically positive definite.
    """
    cdef int i, j, k
    cdef double s, acc = 0.0
    for j in range(m):
        for i in range(j, m):
            s = G[j * m + i]
            for k in range(j):
                s -= G[k * m + i] * G[k * m + j]
            if i == j:
                if s <= 0.0:
                    return 1
                G[j * m + j] = sqrt(s)
                acc += log(G[j * m + j])
            else:
                G[j * m + i] = s / G[j * m + j]
    out[0] = acc
    return 0


cdef double log_weight(Ctx *c, double *x, signed char *lab, int man, int *ok) noexcept nogil:
    cdef int i, j, l, m = 0, k
    cdef double s = 0.0, r, cosang, b1, b2
    ok[0] = 1
    if c.weight_kind == W_CONST:
        return c.logc[man]
    for k in range(c.nf):
        if lab[k] == TAG_EQ:
            s += c.logkappa[k]
            fn_grad(c, k, x, c.Qd + m * c.n)
            if c.gauge[k]:
                r = 0.0
                for i in range(c.pdim[k]):
                    b1 = x[c.pi[k] * c.pdim[k] + i] - x[c.pj[k] * c.pdim[k] + i]
                    r += b1 * b1
                r = 2.0 * sqrt(r)
                for i in range(c.n):
                    c.Qd[m * c.n + i] /= r
            m += 1
    if m > 0:
        for j in range(m):          # G = Qd^T Qd
            for i in range(j + 1):
                r = 0.0
                for l in range(c.n):
                    r += c.Qd[i * c.n + l] * c.Qd[j * c.n + l]
                c.G[j * m + i] = r
                c.G[i * m + j] = r
        if chol_logdet(c.G, m, &r) != 0:
            ok[0] = 0
            return 0.0
        s -= r
    if c.kbend > 0.0:
        for i in range(c.npart - 2):
            cosang = 0.0
            for j in range(c.pardim):
                b1 = x[(i + 1) * c.pardim + j] - x[i * c.pardim + j]
                b2 = x[(i + 2) * c.pardim + j] - x[(i + 1) * c.pardim + j]
                cosang += b1 * b2
            s -= 0.5 * c.kbend * (1.0 - cosang)
    return s


# ---------------------------------------------------------------------------
# move probabilities

cdef void compute_mp(Ctx *c, double *x, signed char *lab, int man, double *T,
                     int d, int *g_t, int *g_fn, unsigned char *g_two, int *ng,
                     int *l_t, int *l_fn, unsigned char *l_two, int *nl,
                     double *lam_s, double *lam_g, double *lam_l) noexcept nogil:
    """Neighbour sets and move-type probabilities at one point."""
    cdef int k, p, free_tag
    ng[0] = 0
    nl[0] = 0
    if c.explicit:
        for p in range(c.gptr[man], c.gptr[man + 1]):
            g_t[ng[0]] = c.gtgt[p]
            g_fn[ng[0]] = c.gfn[p]
            g_two[ng[0]] = c.gtwo[p]
            ng[0] += 1
        for p in range(c.lptr[man], c.lptr[man + 1]):
            k = c.lfn[p]
            if hopt(c, k, x, T, d) < c.sbdy:
                l_t[nl[0]] = c.ltgt[p]
                l_fn[nl[0]] = k
                l_two[nl[0]] = c.ltwo[p]
                nl[0] += 1
    else:
        for k in range(c.nf):
            if c.fix[k]:
                continue
            free_tag = TAG_NONE if c.twos[k] else TAG_IN
            if lab[k] == TAG_EQ:
                g_t[ng[0]] = -1
                g_fn[ng[0]] = k
                g_two[ng[0]] = c.twos[k]
                ng[0] += 1
            elif lab[k] == free_tag:
                if hopt(c, k, x, T, d) < c.sbdy:
                    l_t[nl[0]] = -1
                    l_fn[nl[0]] = k
                    l_two[nl[0]] = c.twos[k]
                    nl[0] += 1
    lam_g[0] = c.lam_gain_p if ng[0] > 0 else 0.0
    lam_l[0] = c.lam_lose_p if nl[0] > 0 else 0.0
    lam_s[0] = 1.0 - lam_g[0] - lam_l[0]


cdef inline double lgauss(double sumsq, double scale, int dim) noexcept nogil:
    if dim == 0:
        return 0.0
    return -0.5 * dim * (LOG_2PI + 2.0 * log(scale)) - sumsq / (2.0 * scale * scale)


# ---------------------------------------------------------------------------
# transition density (forward and reverse share this)

cdef double trans_logdens(Ctx *c, int movetype,
                          double *xs, signed char *labs, double *Ts, int ds,
                          double *xd, double *Td, int dd,
                          int changed, int two,
                          double lam_s, double lam_g, double lam_l,
                          int ng, int nl, int near_has,
                          double *Thi, int *degen) noexcept nogil:
    """Log density of proposing xs -> xd, reconstructed from endpoints."""
    cdef int i, j, n = c.n, dlo, dhi, dp
    cdef double s, vn, cvv, alpha, logd, sumsq
    degen[0] = 0

    if movetype == MV_SAME:
        if lam_s <= 0.0:
            return -INFINITY
        sumsq = 0.0
        for j in range(ds):
            s = 0.0
            for i in range(n):
                s += Ts[j * n + i] * (xd[i] - xs[i])
            sumsq += s * s
        return log(lam_s) + lgauss(sumsq, c.sigma, ds)

    if movetype == MV_GAIN:
        if lam_g <= 0.0:
            return -INFINITY
        dhi = ds + 1
        fn_grad(c, changed, xs, c.g)
        if not proj_unit(c, Thi, dhi, c.g, c.un):
            degen[0] = 1
            return -INFINITY
        # v = P_hi (xd - xs); only components needed below are computed.
        vn = 0.0
        for i in range(n):
            c.tmp[i] = xd[i] - xs[i]
        memset(c.v, 0, n * sizeof(double))
        for j in range(dhi):
            s = 0.0
            for i in range(n):
                s += Thi[j * n + i] * c.tmp[i]
            for i in range(n):
                c.v[i] += Thi[j * n + i] * s
        for i in range(n):
            vn += c.v[i] * c.un[i]
        if two:
            if fabs(vn) > c.sbdy or vn == 0.0:
                return -INFINITY
            logd = -log(2.0 * c.sbdy)
        else:
            if vn <= 0.0 or vn > c.sbdy:
                return -INFINITY
            logd = -log(c.sbdy)
        logd += log(lam_g) - log(<double> ng)
        if ds >= 1:
            sumsq = 0.0
            for j in range(ds):
                s = 0.0
                for i in range(n):
                    s += Ts[j * n + i] * c.v[i]
                sumsq += s * s
            logd += lgauss(sumsq, c.stan * fabs(vn), ds)
        logd += log_cross_det(c, Thi, Td, dhi)
        return logd

    # MV_LOSE
    if lam_l <= 0.0 or not near_has:
        return -INFINITY
    dlo = ds - 1
    alpha = 0.0
    memset(c.v, 0, n * sizeof(double))
    for i in range(n):
        c.tmp[i] = xd[i] - xs[i]
    for j in range(ds):
        s = 0.0
        for i in range(n):
            s += Ts[j * n + i] * c.tmp[i]
        for i in range(n):
            c.v[i] += Ts[j * n + i] * s
    for i in range(n):
        alpha += c.v[i] * c.v[i]
    alpha = sqrt(alpha)
    if alpha <= 0.0:
        return -INFINITY
    for i in range(n):
        c.v[i] /= alpha
    fn_grad(c, changed, xs, c.g)
    if not proj_unit(c, Ts, ds, c.g, c.vopt):
        degen[0] = 1
        return -INFINITY
    if fn_val(c, changed, xs) >= 0.0:
        for i in range(n):
            c.vopt[i] = -c.vopt[i]
    cvv = 0.0
    for i in range(n):
        cvv += c.v[i] * c.vopt[i]
    if cvv <= 0.0:
        return -INFINITY
    logd = log(lam_l) - log(<double> nl)
    if ds >= 2:
        if tanv(c, Ts, ds, c.vopt, c.Tp) < 0:
            degen[0] = 1
            return -INFINITY
        sumsq = 0.0
        for j in range(dlo):
            s = 0.0
            for i in range(n):
                s += c.Tp[j * n + i] * c.v[i]
            s /= cvv
            sumsq += s * s
        logd += lgauss(sumsq, c.stan, dlo) - ds * log(cvv)
        if tanv(c, Ts, ds, c.v, c.Tp2) < 0:
            degen[0] = 1
            return -INFINITY
        logd += log_cross_det(c, c.Tp2, Td, dlo)
    if dlo > 0:
        logd -= dlo * log(alpha)
    return logd


# ---------------------------------------------------------------------------
# one chain step

cdef int do_step(Ctx *c) noexcept nogil:
    cdef int n = c.n, i, j, m0, m1, movetype, changed = -1, two = 0, tgt = -1
    cdef int ngA, nlA, ngB, nlB, pick, d1, dyh, ok, degen, near_has
    cdef double lamsA, lamgA, lamlA, lamsB, lamgB, lamlB
    cdef double u, vn, s, fwd, rev, lfx, lfy, log_ratio, acc, alpha = 0.0
    cdef double alpha_rev = 0.0

    compute_mp(c, c.x, c.lab, c.man_idx, c.T, c.d,
               c.gA_t, c.gA_fn, c.gA_two, &ngA,
               c.lA_t, c.lA_fn, c.lA_two, &nlA, &lamsA, &lamgA, &lamlA)

    u = random_standard_uniform(c.rng)
    if u < lamsA:
        movetype = MV_SAME
        memcpy(c.lab_t, c.lab, c.nf)
        tgt = c.man_idx
    elif u < lamsA + lamgA:
        movetype = MV_GAIN
        pick = <int>(random_standard_uniform(c.rng) * ngA)
        changed = c.gA_fn[pick]
        two = c.gA_two[pick]
        tgt = c.gA_t[pick]
        if c.explicit:
            memcpy(c.lab_t, c.labels_list + tgt * c.nf, c.nf)
        else:
            memcpy(c.lab_t, c.lab, c.nf)
            c.lab_t[changed] = TAG_NONE if two else TAG_IN
    else:
        movetype = MV_LOSE
        pick = <int>(random_standard_uniform(c.rng) * nlA)
        changed = c.lA_fn[pick]
        two = c.lA_two[pick]
        tgt = c.lA_t[pick]
        if c.explicit:
            memcpy(c.lab_t, c.labels_list + tgt * c.nf, c.nf)
        else:
            memcpy(c.lab_t, c.lab, c.nf)
            c.lab_t[changed] = TAG_EQ
    c.last_move = movetype

    if movetype == MV_SAME and c.d == 0:
        return R_ACCEPTED        # the proposal is the current point

    # ----- tangent step -----
    m0 = eq_list(c, c.lab, c.eqb)
    if movetype == MV_SAME:
        memset(c.v, 0, n * sizeof(double))
        for j in range(c.d):
            s = c.sigma * random_standard_normal(c.rng)
            for i in range(n):
                c.v[i] += c.T[j * n + i] * s
        m1 = eq_list(c, c.lab_t, c.eqs)
        build_Q(c, c.eqs, m1, c.x, c.Qb)
        for i in range(n):
            c.tmp[i] = c.x[i] + c.v[i]
        if not nes(c, c.tmp, c.Qb, c.eqs, m1, c.y):
            return R_NEWTON
    elif movetype == MV_GAIN:
        m1 = eq_list(c, c.lab_t, c.eqs)
        build_Q(c, c.eqs, m1, c.x, c.Qb)
        d1 = tangent(c, c.Qb, m1, c.Thi)
        if d1 < 0:
            return R_NEWTON
        fn_grad(c, changed, c.x, c.g)
        if not proj_unit(c, c.Thi, d1, c.g, c.un):
            return R_NEWTON
        u = random_standard_uniform(c.rng)
        vn = c.sbdy * (2.0 * u - 1.0) if two else c.sbdy * u
        if vn == 0.0:
            return R_METROPOLIS  # zero-measure degenerate draw
        for i in range(n):
            c.v[i] = vn * c.un[i]
        for j in range(c.d):
            s = (c.stan * fabs(vn)) * random_standard_normal(c.rng)
            for i in range(n):
                c.v[i] += c.T[j * n + i] * s
        for i in range(n):
            c.tmp[i] = c.x[i] + c.v[i]
        if not nes(c, c.tmp, c.Qb, c.eqs, m1, c.y):
            return R_NEWTON
    else:
        fn_grad(c, changed, c.x, c.g)
        if not proj_unit(c, c.T, c.d, c.g, c.vopt):
            return R_NEWTON
        if fn_val(c, changed, c.x) >= 0.0:
            for i in range(n):
                c.vopt[i] = -c.vopt[i]
        if c.d >= 2:
            if tanv(c, c.T, c.d, c.vopt, c.Tp) < 0:
                return R_NEWTON
            memcpy(c.v, c.vopt, n * sizeof(double))
            for j in range(c.d - 1):
                s = c.stan * random_standard_normal(c.rng)
                for i in range(n):
                    c.v[i] += c.Tp[j * n + i] * s
            s = 0.0
            for i in range(n):
                s += c.v[i] * c.v[i]
            s = sqrt(s)
            for i in range(n):
                c.v[i] /= s
        else:
            memcpy(c.v, c.vopt, n * sizeof(double))
        build_Q(c, c.eqb, m0, c.x, c.Qb)
        memcpy(c.Qb + m0 * n, c.v, n * sizeof(double))
        if not nes_l(c, c.x, c.Qb, c.eqb, m0, changed, c.v, c.y, &alpha):
            return R_NEWTON
        if alpha <= 0.0:
            return R_ALPHA

    # ----- inequality check on the target labels -----
    for i in range(c.nf):
        if c.lab_t[i] == TAG_IN and fn_val(c, i, c.y) < 0.0:
            return R_INEQ

    # ----- densities and Metropolis step -----
    m1 = eq_list(c, c.lab_t, c.eqs)
    build_Q(c, c.eqs, m1, c.y, c.Qt)   # gradients at y for the target basis
    d1 = tangent(c, c.Qt, m1, c.Ty)
    if d1 < 0:
        return R_METROPOLIS
    near_has = 0
    for i in range(nlA):
        if c.lA_fn[i] == changed:
            near_has = 1
    fwd = trans_logdens(c, movetype, c.x, c.lab, c.T, c.d, c.y, c.Ty, d1,
                        changed, two, lamsA, lamgA, lamlA, ngA, nlA, near_has,
                        c.Thi, &degen)
    if degen or fwd == -INFINITY:
        return R_METROPOLIS
    compute_mp(c, c.y, c.lab_t, tgt, c.Ty, d1,
               c.gB_t, c.gB_fn, c.gB_two, &ngB,
               c.lB_t, c.lB_fn, c.lB_two, &nlB, &lamsB, &lamgB, &lamlB)
    near_has = 0
    for i in range(nlB):
        if c.lB_fn[i] == changed:
            near_has = 1
    if movetype == MV_SAME:
        rev = trans_logdens(c, MV_SAME, c.y, c.lab_t, c.Ty, d1, c.x, c.T, c.d,
                            -1, 0, lamsB, lamgB, lamlB, ngB, nlB, 0, NULL, &degen)
    elif movetype == MV_GAIN:
        rev = trans_logdens(c, MV_LOSE, c.y, c.lab_t, c.Ty, d1, c.x, c.T, c.d,
                            changed, two, lamsB, lamgB, lamlB, ngB, nlB,
                            near_has, NULL, &degen)
    else:
        # Reverse Gain needs the tangent basis at y of the higher manifold.
        build_Q(c, c.eqb, m0, c.y, c.Qt)
        dyh = tangent(c, c.Qt, m0, c.Tyh)
        if dyh < 0:
            return R_METROPOLIS
        rev = trans_logdens(c, MV_GAIN, c.y, c.lab_t, c.Ty, d1, c.x, c.T, c.d,
                            changed, two, lamsB, lamgB, lamlB, ngB, nlB, 0,
                            c.Tyh, &degen)
    if degen:
        return R_METROPOLIS

    ok = 1
    lfx = log_weight(c, c.x, c.lab, c.man_idx, &ok)
    if not ok:
        return R_METROPOLIS
    lfy = log_weight(c, c.y, c.lab_t, tgt, &ok)
    if not ok:
        return R_METROPOLIS
    log_ratio = lfy + rev - lfx - fwd
    acc = 1.0 if log_ratio >= 0.0 else (exp(log_ratio) if log_ratio > -INFINITY else 0.0)
    if random_standard_uniform(c.rng) >= acc:
        return R_METROPOLIS

    # ----- reverse projection -----
    # Base matrices go into Qb: nes/nes_l use Qt internally for iterates.
    if movetype == MV_SAME:
        memset(c.vrev, 0, n * sizeof(double))
        for j in range(d1):
            s = 0.0
            for i in range(n):
                s += c.Ty[j * n + i] * (c.x[i] - c.y[i])
            for i in range(n):
                c.vrev[i] += c.Ty[j * n + i] * s
        build_Q(c, c.eqb, m0, c.y, c.Qb)
        for i in range(n):
            c.tmp[i] = c.y[i] + c.vrev[i]
        if not nes(c, c.tmp, c.Qb, c.eqb, m0, c.xrev):
            return R_REV_NEWTON
    elif movetype == MV_GAIN:
        memset(c.vrev, 0, n * sizeof(double))
        for j in range(d1):
            s = 0.0
            for i in range(n):
                s += c.Ty[j * n + i] * (c.x[i] - c.y[i])
            for i in range(n):
                c.vrev[i] += c.Ty[j * n + i] * s
        alpha_rev = 0.0
        for i in range(n):
            alpha_rev += c.vrev[i] * c.vrev[i]
        alpha_rev = sqrt(alpha_rev)
        if alpha_rev <= 0.0:
            return R_REV_NEWTON
        for i in range(n):
            c.vrev[i] /= alpha_rev
        build_Q(c, c.eqs, m1, c.y, c.Qb)
        memcpy(c.Qb + m1 * n, c.vrev, n * sizeof(double))
        if not nes_l(c, c.y, c.Qb, c.eqs, m1, changed, c.vrev, c.xrev, &alpha_rev):
            return R_REV_NEWTON
    else:
        memset(c.vrev, 0, n * sizeof(double))
        for j in range(dyh):
            s = 0.0
            for i in range(n):
                s += c.Tyh[j * n + i] * (c.x[i] - c.y[i])
            for i in range(n):
                c.vrev[i] += c.Tyh[j * n + i] * s
        build_Q(c, c.eqb, m0, c.y, c.Qb)
        for i in range(n):
            c.tmp[i] = c.y[i] + c.vrev[i]
        if not nes(c, c.tmp, c.Qb, c.eqb, m0, c.xrev):
            return R_REV_NEWTON
    for i in range(n):
        if fabs(c.xrev[i] - c.x[i]) >= REV_TOL:
            return R_REV_MISMATCH
    if movetype == MV_GAIN and alpha_rev <= 0.0:
        return R_REV_ALPHA

    # ----- accept -----
    memcpy(c.x, c.y, n * sizeof(double))
    memcpy(c.lab, c.lab_t, c.nf)
    memcpy(c.T, c.Ty, n * d1 * sizeof(double))
    c.d = d1
    c.man_idx = tgt
    return R_ACCEPTED


# ---------------------------------------------------------------------------
# observables

cdef void fill_obs(Ctx *c, double *obs) noexcept nogil:
    cdef int i, k, m = 0, naa = 0, nab = 0, nbb = 0, nwall = 0
    cdef double mask = 0.0, ux, uy, wx, wy, th, s
    if c.obs_kind == OBS_XY:
        obs[0] = c.x[0]
        obs[1] = c.x[1]
        return
    if c.obs_kind == OBS_TRIMER:
        ux = c.x[0] - c.x[2]
        uy = c.x[1] - c.x[3]
        wx = c.x[4] - c.x[2]
        wy = c.x[5] - c.x[3]
        th = atan2(ux * wy - uy * wx, ux * wx + uy * wy)
        obs[0] = th if th > 0.0 else th + 2.0 * M_PI
        return
    if c.obs_kind == OBS_BONDS:
        for k in range(c.nf):
            if c.lab[k] == TAG_EQ:
                m += 1
                if c.bit_of_fn[k] >= 0:
                    mask += (1 << c.bit_of_fn[k])
                    if c.type_code[k] == 0:
                        naa += 1
                    elif c.type_code[k] == 1:
                        nab += 1
                    elif c.type_code[k] == 2:
                        nbb += 1
        obs[0] = m
        obs[1] = naa
        obs[2] = nab
        obs[3] = nbb
        obs[4] = mask
        return
    if c.obs_kind == OBS_WALL:
        for k in range(c.nf):
            if c.is_wall[k] and c.lab[k] == TAG_EQ:
                nwall += 1
        obs[0] = nwall
        obs[1] = (<double> nwall) / c.npart
        s = 0.0
        for i in range(c.pardim):
            ux = c.x[i] - c.x[(c.npart - 1) * c.pardim + i]
            s += ux * ux
        obs[2] = sqrt(s)
        return
    if c.obs_kind == OBS_LEVEL:
        for k in range(c.nf):
            if c.lab[k] == TAG_EQ:
                m += 1
        obs[0] = m


cdef inline int count_eq(Ctx *c) noexcept nogil:
    cdef int k, m = 0
    for k in range(c.nf):
        if c.lab[k] == TAG_EQ:
            m += 1
    return m


# ---------------------------------------------------------------------------
# Python-facing kernel

cdef class ChainKernel:
    """Holds the flattened model arrays and runs chains over them."""

    cdef object arrs
    cdef int n, nf, nmanif, explicit, nvary
    cdef object vary_idx

    def __init__(self, arrs):
        self.arrs = arrs
        self.n = arrs["n"]
        self.nf = arrs["nf"]
        self.explicit = arrs["explicit"]
        self.nmanif = arrs["labels_list"].shape[0] if self.explicit else 0
        fix = np.asarray(arrs["fix"])
        self.vary_idx = np.flatnonzero(fix == 0).astype(np.int32)
        self.nvary = int(self.vary_idx.shape[0]) if not self.explicit else 0

    def run(self, x0, labels0, man0, params, n_steps, thin, rng):
        cdef Ctx c
        arrs = self.arrs
        n, nf = self.n, self.nf

        # model arrays (hold references for the duration of the run)
        cdef int[::1] kind = arrs["kind"]
        cdef int[::1] pi = arrs["pi"]
        cdef int[::1] pj = arrs["pj"]
        cdef int[::1] pdim = arrs["pdim"]
        cdef double[::1] target = arrs["target"]
        cdef double[:, ::1] quad = arrs["quad"]
        cdef double[:, ::1] lin = arrs["lin"]
        cdef double[::1] cst = arrs["cst"]
        cdef double[::1] logc = arrs["logc"]
        cdef double[::1] logkappa = arrs["logkappa"]
        cdef unsigned char[::1] gauge = arrs["gauge"]
        cdef signed char[:, ::1] labels_list = arrs["labels_list"]
        cdef int[::1] gptr = arrs["gptr"]
        cdef int[::1] gtgt = arrs["gtgt"]
        cdef int[::1] gfn = arrs["gfn"]
        cdef unsigned char[::1] gtwo = arrs["gtwo"]
        cdef int[::1] lptr = arrs["lptr"]
        cdef int[::1] ltgt = arrs["ltgt"]
        cdef int[::1] lfn = arrs["lfn"]
        cdef unsigned char[::1] ltwo = arrs["ltwo"]
        cdef unsigned char[::1] fix = arrs["fix"]
        cdef unsigned char[::1] twos = arrs["twos"]
        cdef int[::1] bit_of_fn = arrs["bit_of_fn"]
        cdef int[::1] type_code = arrs["type_code"]
        cdef unsigned char[::1] is_wall = arrs["is_wall"]

        c.n = n
        c.nf = nf
        c.kind = &kind[0]
        c.pi = &pi[0]
        c.pj = &pj[0]
        c.pdim = &pdim[0]
        c.target = &target[0]
        c.quad = &quad[0, 0]
        c.lin = &lin[0, 0]
        c.cst = &cst[0]
        c.weight_kind = arrs["weight_kind"]
        c.logc = &logc[0]
        c.logkappa = &logkappa[0]
        c.gauge = &gauge[0]
        c.kbend = arrs["kbend"]
        c.npart = arrs["npart"]
        c.pardim = arrs["pardim"]
        c.explicit = self.explicit
        c.nmanif = self.nmanif
        c.labels_list = &labels_list[0, 0]
        c.gptr = &gptr[0]
        c.gtgt = &gtgt[0]
        c.gfn = &gfn[0]
        c.gtwo = &gtwo[0]
        c.lptr = &lptr[0]
        c.ltgt = &ltgt[0]
        c.lfn = &lfn[0]
        c.ltwo = &ltwo[0]
        c.fix = &fix[0]
        c.twos = &twos[0]
        c.obs_kind = arrs["obs_kind"]
        c.nobs = arrs["nobs"]
        c.bit_of_fn = &bit_of_fn[0]
        c.type_code = &type_code[0]
        c.is_wall = &is_wall[0]

        c.sigma, c.sbdy, c.stan, c.lam_lose_p, c.lam_gain_p, c.ntol, miter = params
        c.maxiter = <int> miter

        # rng
        bitgen_obj = rng.bit_generator
        capsule = bitgen_obj.capsule
        c.rng = <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")

        # workspaces (per-run: concurrent runs over one kernel stay isolated)
        nn = n * n
        nf1 = nf + 1
        ws = {}

        def dbuf(name, size):
            a = np.zeros(size)
            ws[name] = a
            return a

        cdef double[::1] x_ = np.ascontiguousarray(x0, dtype=np.float64).copy()
        cdef signed char[::1] lab_ = np.ascontiguousarray(labels0, dtype=np.int8).copy()
        cdef double[::1] T_ = dbuf("T", nn)
        cdef double[::1] y_ = dbuf("y", n)
        cdef double[::1] xrev_ = dbuf("xrev", n)
        cdef double[::1] v_ = dbuf("v", n)
        cdef double[::1] vrev_ = dbuf("vrev", n)
        cdef double[::1] g_ = dbuf("g", n)
        cdef double[::1] g2_ = dbuf("g2", n)
        cdef double[::1] un_ = dbuf("un", n)
        cdef double[::1] vopt_ = dbuf("vopt", n)
        cdef double[::1] tmp_ = dbuf("tmp", n)
        cdef double[::1] Qb_ = dbuf("Qb", n * nf1)
        cdef double[::1] Qt_ = dbuf("Qt", n * nf1)
        cdef double[::1] A_ = dbuf("A", nn)
        cdef double[::1] tau_ = dbuf("tau", n)
        lwork = 64 * n + 1024
        cdef double[::1] work_ = dbuf("work", lwork)
        cdef double[::1] Thi_ = dbuf("Thi", nn)
        cdef double[::1] Ty_ = dbuf("Ty", nn)
        cdef double[::1] Tyh_ = dbuf("Tyh", nn)
        cdef double[::1] Tp_ = dbuf("Tp", nn)
        cdef double[::1] Tp2_ = dbuf("Tp2", nn)
        cdef double[::1] M_ = dbuf("M", nn)
        cdef double[::1] avec_ = dbuf("avec", nf1)
        cdef double[::1] F_ = dbuf("F", nf1)
        cdef double[::1] Jm_ = dbuf("Jm", nf1 * nf1)
        cdef double[::1] Qd_ = dbuf("Qd", n * nf)
        cdef double[::1] G_ = dbuf("G", nf * nf)
        cdef signed char[::1] lab_t_ = np.zeros(nf, dtype=np.int8)
        cdef signed char[::1] lab_s_ = np.zeros(nf, dtype=np.int8)
        cdef int[::1] jpvt_ = np.zeros(n, dtype=np.int32)
        # ipiv serves both dgesv (order <= nf+1) and dgetrf in the
        # cross-determinants (order <= n).
        cdef int[::1] ipiv_ = np.zeros(max(n, nf1), dtype=np.int32)
        cdef int[::1] eqb_ = np.zeros(nf1, dtype=np.int32)
        cdef int[::1] eqs_ = np.zeros(nf1, dtype=np.int32)
        cdef int[::1] gA_t_ = np.zeros(nf, dtype=np.int32)
        cdef int[::1] gA_fn_ = np.zeros(nf, dtype=np.int32)
        cdef unsigned char[::1] gA_two_ = np.zeros(nf, dtype=np.uint8)
        cdef int[::1] lA_t_ = np.zeros(nf, dtype=np.int32)
        cdef int[::1] lA_fn_ = np.zeros(nf, dtype=np.int32)
        cdef unsigned char[::1] lA_two_ = np.zeros(nf, dtype=np.uint8)
        cdef int[::1] gB_t_ = np.zeros(nf, dtype=np.int32)
        cdef int[::1] gB_fn_ = np.zeros(nf, dtype=np.int32)
        cdef unsigned char[::1] gB_two_ = np.zeros(nf, dtype=np.uint8)
        cdef int[::1] lB_t_ = np.zeros(nf, dtype=np.int32)
        cdef int[::1] lB_fn_ = np.zeros(nf, dtype=np.int32)
        cdef unsigned char[::1] lB_two_ = np.zeros(nf, dtype=np.uint8)

        c.x = &x_[0]
        c.lab = &lab_[0]
        c.T = &T_[0]
        c.y = &y_[0]
        c.xrev = &xrev_[0]
        c.v = &v_[0]
        c.vrev = &vrev_[0]
        c.g = &g_[0]
        c.g2 = &g2_[0]
        c.un = &un_[0]
        c.vopt = &vopt_[0]
        c.tmp = &tmp_[0]
        c.Qb = &Qb_[0]
        c.Qt = &Qt_[0]
        c.A = &A_[0]
        c.tau = &tau_[0]
        c.work = &work_[0]
        c.lwork = lwork
        c.jpvt = &jpvt_[0]
        c.Thi = &Thi_[0]
        c.Ty = &Ty_[0]
        c.Tyh = &Tyh_[0]
        c.Tp = &Tp_[0]
        c.Tp2 = &Tp2_[0]
        c.M = &M_[0]
        c.ipiv = &ipiv_[0]
        c.avec = &avec_[0]
        c.F = &F_[0]
        c.Jm = &Jm_[0]
        c.Qd = &Qd_[0]
        c.G = &G_[0]
        c.lab_t = &lab_t_[0]
        c.lab_s = &lab_s_[0]
        c.eqb = &eqb_[0]
        c.eqs = &eqs_[0]
        c.gA_t = &gA_t_[0]
        c.gA_fn = &gA_fn_[0]
        c.gA_two = &gA_two_[0]
        c.lA_t = &lA_t_[0]
        c.lA_fn = &lA_fn_[0]
        c.lA_two = &lA_two_[0]
        c.gB_t = &gB_t_[0]
        c.gB_fn = &gB_fn_[0]
        c.gB_two = &gB_two_[0]
        c.lB_t = &lB_t_[0]
        c.lB_fn = &lB_fn_[0]
        c.lB_two = &lB_two_[0]

        c.man_idx = man0
        c.last_move = 0

        # initial tangent basis
        m0 = int(np.count_nonzero(np.asarray(labels0) == TAG_EQ))
        cdef int m0c = m0
        c.d = -2
        with nogil:
            m0c = eq_list(&c, c.lab, c.eqb)
            build_Q(&c, c.eqb, m0c, c.x, c.Qb)
            c.d = tangent(&c, c.Qb, m0c, c.T)
        if c.d < 0:
            raise RuntimeError("degenerate constraint gradients at the "
                               "initial state")

        # output buffers
        n_rec = n_steps // thin
        nobs = c.nobs
        step_out = np.zeros(n_rec, dtype=np.int64)
        man_out = np.zeros(n_rec, dtype=np.int64)
        labrec_out = np.zeros((n_rec, nf), dtype=np.int8)
        m_out = np.zeros(n_rec, dtype=np.int64)
        obs_out = np.zeros((n_rec, max(nobs, 1)))
        reasons_out = np.zeros(8, dtype=np.int64)
        movereasons_out = np.zeros(24, dtype=np.int64)

        cdef long long[::1] step_v = step_out
        cdef long long[::1] man_v = man_out
        cdef signed char[:, ::1] labrec_v = labrec_out
        cdef long long[::1] m_v = m_out
        cdef double[:, ::1] obs_v = obs_out
        cdef long long[::1] reasons_v = reasons_out
        cdef long long[::1] mr_v = movereasons_out

        dense_visit = None
        visit_dict = None
        cdef long long[::1] visit_v = None
        cdef int[::1] vary_v = self.vary_idx
        cdef int nvary = self.nvary
        use_dense = False
        if self.explicit:
            dense_visit = np.zeros(self.nmanif, dtype=np.int64)
            visit_v = dense_visit
            use_dense = True
        elif nvary <= 20:
            dense_visit = np.zeros(1 << nvary, dtype=np.int64)
            visit_v = dense_visit
            use_dense = True
        else:
            visit_dict = {}

        cdef int nf_c = nf
        cdef bint dense = use_dense
        cdef bint expl = bool(self.explicit)
        cdef long long k
        cdef long long nsteps_c = n_steps
        cdef long long thin_c = thin
        cdef long long rec = 0
        cdef int reason, b, mask
        cdef int nobs_c = nobs

        with nogil:
            for k in range(1, nsteps_c + 1):
                reason = do_step(&c)
                reasons_v[reason] += 1
                mr_v[c.last_move * 8 + reason] += 1
                if dense:
                    if expl:
                        visit_v[c.man_idx] += 1
                    else:
                        mask = 0
                        for b in range(nvary):
                            if c.lab[vary_v[b]] == TAG_EQ:
                                mask |= 1 << b
                        visit_v[mask] += 1
                else:
                    with gil:
                        key = bytes(lab_[:nf])
                        visit_dict[key] = visit_dict.get(key, 0) + 1
                if thin_c > 0 and k % thin_c == 0:
                    step_v[rec] = k
                    man_v[rec] = c.man_idx
                    for b in range(nf_c):
                        labrec_v[rec, b] = c.lab[b]
                    m_v[rec] = count_eq(&c)
                    if nobs_c > 0:
                        fill_obs(&c, &obs_v[rec, 0])
                    rec += 1

        visit_obj = dense_visit if use_dense else visit_dict
        return (step_out, man_out, labrec_out, m_out, obs_out[:, :nobs],
                visit_obj, reasons_out, movereasons_out)

    # --- debug hooks used by the parity tests ---

    def dbg_tangent(self, Q):
        """Tangent basis from a gradient matrix, via the compiled path."""
        cdef Ctx c
        Qf = np.asfortranarray(np.asarray(Q, dtype=np.float64))
        cdef double[::1, :] Qv = Qf
        n, m = Qf.shape[0], Qf.shape[1]
        c.n = n
        A = np.zeros(n * n)
        tau = np.zeros(n)
        lwork = 64 * n + 1024
        work = np.zeros(lwork)
        T = np.zeros(n * n)
        cdef double[::1] A_ = A
        cdef double[::1] tau_ = tau
        cdef double[::1] work_ = work
        cdef double[::1] T_ = T
        c.A = &A_[0]
        c.tau = &tau_[0]
        c.work = &work_[0]
        c.lwork = lwork
        cdef int d
        cdef int mm = m
        d = tangent(&c, &Qv[0, 0] if m > 0 else NULL, mm, &T_[0])
        if d < 0:
            raise RuntimeError("rank deficient")
        return T[:n * d].reshape(d, n).T.copy()


# ---------------------------------------------------------------------------
# Brownian dynamics kernel for the six-sphere polymer

def run_bd(x0, double E, double rho, double kspring, double contact,
           double cutoff, double dt, long long n_steps, long long stride,
           long long skip, rng):
    """Euler-Maruyama integration with periodic bond censuses.

    Returns (step, bond_count, bond_mask) arrays for the recorded frames.
    """
    cdef double[::1] x = np.ascontiguousarray(x0, dtype=np.float64).copy()
    cdef int n = x.shape[0], N = n // 3
    cdef bitgen_t *bg = <bitgen_t *> PyCapsule_GetPointer(
        rng.bit_generator.capsule, "BitGenerator")

    n_rec_max = (n_steps - skip) // stride + 1 if n_steps > skip else 0
    step_out = np.zeros(n_rec_max, dtype=np.int64)
    m_out = np.zeros(n_rec_max, dtype=np.int64)
    mask_out = np.zeros(n_rec_max, dtype=np.int64)
    cdef long long[::1] step_v = step_out
    cdef long long[::1] m_v = m_out
    cdef long long[::1] mask_v = mask_out

    grad = np.zeros(n)
    cdef double[::1] g = grad
    cdef long long k, rec = 0
    cdef int i, j, a, c1, c2, bit, nb
    cdef double r, r2, d0, d1, d2, du, e, sq2dt = sqrt(2.0 * dt)
    cdef long long mask

    with nogil:
        for k in range(1, n_steps + 1):
            memset(&g[0], 0, n * sizeof(double))
            for i in range(N):
                for j in range(i + 1, N):
                    c1 = 3 * i
                    c2 = 3 * j
                    d0 = x[c1] - x[c2]
                    d1 = x[c1 + 1] - x[c2 + 1]
                    d2 = x[c1 + 2] - x[c2 + 2]
                    r2 = d0 * d0 + d1 * d1 + d2 * d2
                    r = sqrt(r2)
                    if j == i + 1:
                        du = kspring * (r - contact)
                    else:
                        e = exp(-rho * (r - contact))
                        du = 2.0 * E * rho * (1.0 - e) * e
                    du /= r
                    g[c1] += du * d0
                    g[c1 + 1] += du * d1
                    g[c1 + 2] += du * d2
                    g[c2] -= du * d0
                    g[c2 + 1] -= du * d1
                    g[c2 + 2] -= du * d2
            for i in range(n):
                x[i] += -g[i] * dt + sq2dt * random_standard_normal(bg)
            if k > skip and k % stride == 0:
                nb = N - 1
                mask = 0
                bit = 0
                for i in range(N):
                    for j in range(i + 1, N):
                        if j == i + 1:
                            continue
                        c1 = 3 * i
                        c2 = 3 * j
                        d0 = x[c1] - x[c2]
                        d1 = x[c1 + 1] - x[c2 + 1]
                        d2 = x[c1 + 2] - x[c2 + 2]
                        r2 = d0 * d0 + d1 * d1 + d2 * d2
                        if sqrt(r2) < cutoff:
                            nb += 1
                            mask |= (<long long> 1) << bit
                        bit += 1
                step_v[rec] = k
                m_v[rec] = nb
                mask_v[rec] = mask
                rec += 1

    return step_out[:rec], m_out[:rec], mask_out[:rec]
