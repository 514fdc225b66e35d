# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot numeric path.

Algorithmic twin of ``armpose._core_py`` (see that module for the parameter
layouts and damping schedule); keep both in lockstep when changing either.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt
from libc.string cimport memcpy, memset

cnp.import_array()

MODE_FULL = 0
MODE_WEAK = 1

DEF MAXK = 32          # max keypoints
DEF MAXJ = 8           # max joints
DEF NP10 = 10          # parameter count
DEF C_MODE_FULL = 0

cdef double MIN_DEPTH = 1e-6
cdef double LAMBDA_INIT = 1e-3
cdef double LAMBDA_UP = 10.0
cdef double LAMBDA_DOWN = 0.1
cdef double LAMBDA_MIN = 1e-12
cdef double LAMBDA_MAX = 1e12
cdef double INF = float("inf")


cdef void _rodrigues(const double* a, double angle, double* R) noexcept nogil:
    cdef double c = cos(angle)
    cdef double s = sin(angle)
    cdef double omc = 1.0 - c
    R[0] = c + omc * a[0] * a[0]
    R[1] = omc * a[0] * a[1] - s * a[2]
    R[2] = omc * a[0] * a[2] + s * a[1]
    R[3] = omc * a[1] * a[0] + s * a[2]
    R[4] = c + omc * a[1] * a[1]
    R[5] = omc * a[1] * a[2] - s * a[0]
    R[6] = omc * a[2] * a[0] - s * a[1]
    R[7] = omc * a[2] * a[1] + s * a[0]
    R[8] = c + omc * a[2] * a[2]


cdef void _mat3_mul(const double* A, const double* B, double* C) noexcept nogil:
    cdef int i, j, k
    for i in range(3):
        for j in range(3):
            C[3 * i + j] = (A[3 * i] * B[j] + A[3 * i + 1] * B[3 + j]
                            + A[3 * i + 2] * B[6 + j])


cdef void _mat3_vec(const double* A, const double* x, double* y) noexcept nogil:
    cdef int i
    for i in range(3):
        y[i] = A[3 * i] * x[0] + A[3 * i + 1] * x[1] + A[3 * i + 2] * x[2]


cdef void _rot_azelroll_jac(double az, double el, double roll,
                            double* R, double* dR) noexcept nogil:
    """R (9) and dR (3 x 9, order az/el/roll) for the package convention."""
    cdef double ca = cos(az), sa = sin(az)
    cdef double ce = cos(el), se = sin(el)
    cdef double cr = cos(roll), sr = sin(roll)
    cdef double r0[3]
    cdef double f[3]
    cdef double d0[3]
    cdef double dr0_az[3]
    cdef double df_az[3]
    cdef double df_el[3]
    cdef double dd0_az[3]
    cdef double dd0_el[3]
    cdef double row1[3]
    cdef double row2[3]
    cdef int i

    r0[0] = ca; r0[1] = sa; r0[2] = 0.0
    f[0] = -sa * ce; f[1] = ca * ce; f[2] = -se
    d0[0] = se * sa; d0[1] = -se * ca; d0[2] = -ce
    dr0_az[0] = -sa; dr0_az[1] = ca; dr0_az[2] = 0.0
    df_az[0] = -ca * ce; df_az[1] = -sa * ce; df_az[2] = 0.0
    df_el[0] = sa * se; df_el[1] = -ca * se; df_el[2] = -ce
    dd0_az[0] = se * ca; dd0_az[1] = se * sa; dd0_az[2] = 0.0
    dd0_el[0] = ce * sa; dd0_el[1] = -ce * ca; dd0_el[2] = se

    for i in range(3):
        row1[i] = cr * r0[i] + sr * d0[i]
        row2[i] = cr * d0[i] - sr * r0[i]
        R[i] = row1[i]
        R[3 + i] = row2[i]
        R[6 + i] = f[i]
        # az
        dR[i] = cr * dr0_az[i] + sr * dd0_az[i]
        dR[3 + i] = cr * dd0_az[i] - sr * dr0_az[i]
        dR[6 + i] = df_az[i]
        # el
        dR[9 + i] = sr * dd0_el[i]
        dR[12 + i] = cr * dd0_el[i]
        dR[15 + i] = df_el[i]
        # roll
        dR[18 + i] = row2[i]
        dR[21 + i] = -row1[i]
        dR[24 + i] = 0.0


cdef int _chol_solve(double* A, const double* b, double* x, int n) noexcept nogil:
    """Solves A x = b for SPD A (row-major, overwritten); 0 on success."""
    cdef int i, j, k
    cdef double s
    for i in range(n):
        for j in range(i + 1):
            s = A[n * i + j]
            for k in range(j):
                s -= A[n * i + k] * A[n * j + k]
            if i == j:
                if s <= 0.0:
                    return 1
                A[n * i + i] = sqrt(s)
            else:
                A[n * i + j] = s / A[n * j + j]
    # L y = b
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= A[n * i + k] * x[k]
        x[i] = s / A[n * i + i]
    # L^T x = y
    for i in range(n - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, n):
            s -= A[n * k + i] * x[k]
        x[i] = s / A[n * i + i]
    return 0


cdef class KernelModel:
    """Packed arm geometry plus the kernels that consume it."""

    cdef double[:, ::1] rest
    cdef int[:, ::1] kp_chain
    cdef int[::1] kp_njoints
    cdef double[:, ::1] axes
    cdef double[:, ::1] pivots
    cdef int[::1] parent
    cdef int[::1] topo
    cdef int n_kp, n_joints
    cdef int kp_last_arr[MAXK]

    def __init__(self, rest, kp_chain, kp_njoints, axes, pivots, parent, topo):
        # fresh copies: callers may hand in read-only arrays
        self.rest = np.array(rest, dtype=np.float64, order="C")
        self.kp_chain = np.array(kp_chain, dtype=np.int32, order="C")
        self.kp_njoints = np.array(kp_njoints, dtype=np.int32, order="C")
        self.axes = np.array(axes, dtype=np.float64, order="C")
        self.pivots = np.array(pivots, dtype=np.float64, order="C")
        self.parent = np.array(parent, dtype=np.int32, order="C")
        self.topo = np.array(topo, dtype=np.int32, order="C")
        self.n_kp = self.rest.shape[0]
        self.n_joints = self.axes.shape[0]
        if self.n_kp > MAXK or self.n_joints > MAXJ:
            raise ValueError("model too large for compiled kernels")
        cdef int k
        for k in range(self.n_kp):
            if self.kp_njoints[k] > 0:
                self.kp_last_arr[k] = self.kp_chain[k, self.kp_njoints[k] - 1]
            else:
                self.kp_last_arr[k] = -1

    # -- forward kinematics -------------------------------------------------

    cdef void _frames(self, const double* q, double* Rw, double* tw,
                      double* waxis, double* wpivot) noexcept nogil:
        cdef double A[9]
        cdef double tmpv[3]
        cdef double tmpv2[3]
        cdef int t, j, par, i
        for t in range(self.n_joints):
            j = self.topo[t]
            _rodrigues(&self.axes[j, 0], q[j], A)
            par = self.parent[j]
            _mat3_vec(A, &self.pivots[j, 0], tmpv)      # A @ pivot
            for i in range(3):
                tmpv[i] = self.pivots[j, i] - tmpv[i]    # pivot - A @ pivot
            if par < 0:
                memcpy(Rw + 9 * j, A, 9 * sizeof(double))
                memcpy(tw + 3 * j, tmpv, 3 * sizeof(double))
                memcpy(waxis + 3 * j, &self.axes[j, 0], 3 * sizeof(double))
                memcpy(wpivot + 3 * j, &self.pivots[j, 0], 3 * sizeof(double))
            else:
                _mat3_mul(Rw + 9 * par, A, Rw + 9 * j)
                _mat3_vec(Rw + 9 * par, tmpv, tmpv2)
                for i in range(3):
                    tw[3 * j + i] = tmpv2[i] + tw[3 * par + i]
                _mat3_vec(Rw + 9 * par, &self.axes[j, 0], waxis + 3 * j)
                _mat3_vec(Rw + 9 * par, &self.pivots[j, 0], tmpv2)
                for i in range(3):
                    wpivot[3 * j + i] = tmpv2[i] + tw[3 * par + i]

    cdef void _fk_pts(self, const double* q, double* pts) noexcept nogil:
        cdef double Rw[9 * MAXJ]
        cdef double tw[3 * MAXJ]
        cdef double waxis[3 * MAXJ]
        cdef double wpivot[3 * MAXJ]
        cdef int k, j, i
        self._frames(q, Rw, tw, waxis, wpivot)
        for k in range(self.n_kp):
            j = self.kp_last_arr[k]
            if j < 0:
                for i in range(3):
                    pts[3 * k + i] = self.rest[k, i]
            else:
                _mat3_vec(Rw + 9 * j, &self.rest[k, 0], pts + 3 * k)
                for i in range(3):
                    pts[3 * k + i] += tw[3 * j + i]

    cdef void _fk_jac(self, const double* q, double* pts, double* dpts) noexcept nogil:
        """dpts layout: [k][j][xyz], length n_kp * MAXJ * 3 (zero-filled)."""
        cdef double Rw[9 * MAXJ]
        cdef double tw[3 * MAXJ]
        cdef double waxis[3 * MAXJ]
        cdef double wpivot[3 * MAXJ]
        cdef double rel[3]
        cdef int k, j, i, c
        self._frames(q, Rw, tw, waxis, wpivot)
        memset(dpts, 0, self.n_kp * MAXJ * 3 * sizeof(double))
        for k in range(self.n_kp):
            j = self.kp_last_arr[k]
            if j < 0:
                for i in range(3):
                    pts[3 * k + i] = self.rest[k, i]
            else:
                _mat3_vec(Rw + 9 * j, &self.rest[k, 0], pts + 3 * k)
                for i in range(3):
                    pts[3 * k + i] += tw[3 * j + i]
            for c in range(self.kp_njoints[k]):
                j = self.kp_chain[k, c]
                for i in range(3):
                    rel[i] = pts[3 * k + i] - wpivot[3 * j + i]
                dpts[(k * MAXJ + j) * 3 + 0] = (waxis[3 * j + 1] * rel[2]
                                                - waxis[3 * j + 2] * rel[1])
                dpts[(k * MAXJ + j) * 3 + 1] = (waxis[3 * j + 2] * rel[0]
                                                - waxis[3 * j + 0] * rel[2])
                dpts[(k * MAXJ + j) * 3 + 2] = (waxis[3 * j + 0] * rel[1]
                                                - waxis[3 * j + 1] * rel[0])

    def fk(self, q):
        """World keypoint coordinates for joint angles q (radians)."""
        cdef double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
        out = np.empty((self.n_kp, 3))
        cdef double[:, ::1] ov = out
        self._fk_pts(&qv[0], &ov[0, 0])
        return out

    def fk_jac(self, q):
        """(points, d points / d q) with shapes (K,3) and (K,3,n_joints)."""
        cdef double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
        pts = np.empty((self.n_kp, 3))
        cdef double[:, ::1] pv = pts
        cdef double dpts[MAXK * MAXJ * 3]
        self._fk_jac(&qv[0], &pv[0, 0], dpts)
        jac = np.zeros((self.n_kp, 3, self.n_joints))
        cdef double[:, :, ::1] jv = jac
        cdef int k, j, i
        for k in range(self.n_kp):
            for j in range(self.n_joints):
                for i in range(3):
                    jv[k, i, j] = dpts[(k * MAXJ + j) * 3 + i]
        return pts, jac

    # -- residuals ------------------------------------------------------------

    cdef int _residual_jacobian(self, int mode, const double* params,
                                const double[:, ::1] y, const int* mask_idx,
                                int m, const double* intr4,
                                double* r, double* J) noexcept nogil:
        """Fills r (2m) and row-major J (2m x 10); returns 0 ok, 1 invalid."""
        cdef double pts[MAXK * 3]
        cdef double dpts[MAXK * MAXJ * 3]
        cdef double R[9]
        cdef double dR[27]
        cdef double rel[3]
        cdef double xc[3]
        cdef double dxc[3]
        cdef double du[3]
        cdef double dv[3]
        cdef double fx, fy, cx, cy, s, tx, ty, depth, inv
        cdef int i, k, a, j, row

        self._fk_jac(params + 6, pts, dpts)
        if mode == C_MODE_FULL:
            fx = intr4[0]; fy = intr4[1]; cx = intr4[2]; cy = intr4[3]
            _rot_azelroll_jac(params[3], params[4], params[5], R, dR)
            for i in range(m):
                k = mask_idx[i]
                for a in range(3):
                    rel[a] = pts[3 * k + a] - params[a]
                _mat3_vec(R, rel, xc)
                depth = xc[2]
                if depth <= MIN_DEPTH:
                    return 1
                inv = 1.0 / depth
                row = 2 * i
                r[row] = fx * xc[0] * inv + cx - y[k, 0]
                r[row + 1] = fy * xc[1] * inv + cy - y[k, 1]
                du[0] = fx * inv; du[1] = 0.0; du[2] = -fx * xc[0] * inv * inv
                dv[0] = 0.0; dv[1] = fy * inv; dv[2] = -fy * xc[1] * inv * inv
                for a in range(3):
                    # d xc / d C = -R: project through du/dv
                    J[10 * row + a] = -(du[0] * R[a] + du[1] * R[3 + a] + du[2] * R[6 + a])
                    J[10 * (row + 1) + a] = -(dv[0] * R[a] + dv[1] * R[3 + a] + dv[2] * R[6 + a])
                for a in range(3):
                    _mat3_vec(dR + 9 * a, rel, dxc)
                    J[10 * row + 3 + a] = du[0] * dxc[0] + du[1] * dxc[1] + du[2] * dxc[2]
                    J[10 * (row + 1) + 3 + a] = dv[0] * dxc[0] + dv[1] * dxc[1] + dv[2] * dxc[2]
                for j in range(4):
                    _mat3_vec(R, dpts + (k * MAXJ + j) * 3, dxc)
                    J[10 * row + 6 + j] = du[0] * dxc[0] + du[1] * dxc[1] + du[2] * dxc[2]
                    J[10 * (row + 1) + 6 + j] = dv[0] * dxc[0] + dv[1] * dxc[1] + dv[2] * dxc[2]
        else:
            s = params[0]
            _rot_azelroll_jac(params[1], params[2], params[3], R, dR)
            tx = params[4]; ty = params[5]
            for i in range(m):
                k = mask_idx[i]
                _mat3_vec(R, pts + 3 * k, xc)
                row = 2 * i
                r[row] = s * xc[0] + tx - y[k, 0]
                r[row + 1] = s * xc[1] + ty - y[k, 1]
                J[10 * row + 0] = xc[0]
                J[10 * (row + 1) + 0] = xc[1]
                for a in range(3):
                    _mat3_vec(dR + 9 * a, pts + 3 * k, dxc)
                    J[10 * row + 1 + a] = s * dxc[0]
                    J[10 * (row + 1) + 1 + a] = s * dxc[1]
                J[10 * row + 4] = 1.0
                J[10 * (row + 1) + 4] = 0.0
                J[10 * row + 5] = 0.0
                J[10 * (row + 1) + 5] = 1.0
                for j in range(4):
                    _mat3_vec(R, dpts + (k * MAXJ + j) * 3, dxc)
                    J[10 * row + 6 + j] = s * dxc[0]
                    J[10 * (row + 1) + 6 + j] = s * dxc[1]
        return 0

    def residual_jacobian(self, int mode, params, y, mask_idx, intr4):
        """Stacked pixel residuals and their 10-column Jacobian over the
        masked keypoints; returns (r, J, ok)."""
        cdef const double[::1] pv = np.ascontiguousarray(params, dtype=np.float64)
        cdef const double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
        cdef const int[::1] mv = np.ascontiguousarray(mask_idx, dtype=np.int32)
        cdef double i4[4]
        _fill_intr(intr4, i4)
        cdef int m = mv.shape[0]
        if m == 0 or m > MAXK:
            raise ValueError("mask must select between 1 and 32 keypoints")
        r = np.empty(2 * m)
        J = np.empty((2 * m, 10))
        cdef double[::1] rv = r
        cdef double[:, ::1] Jv = J
        cdef int bad = self._residual_jacobian(mode, &pv[0], yv, &mv[0], m,
                                               i4, &rv[0], &Jv[0, 0])
        return r, J, bad == 0

    def loss(self, int mode, params, y, mask_idx, intr4):
        r, _, ok = self.residual_jacobian(mode, params, y, mask_idx, intr4)
        if not ok:
            return INF, False
        return float(r @ r), True

    # -- damped least squares --------------------------------------------------

    def lm_solve(self, int mode, params0, y, mask_idx, intr4, lo, hi,
                 int max_iter, double tol):
        """Levenberg-Marquardt with multiplicative damping and box projection;
        see the python twin for the exact schedule. Returns
        (params, loss, iterations, converged, valid, trace)."""
        cdef const double[::1] p0 = np.ascontiguousarray(params0, dtype=np.float64)
        cdef const double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
        cdef const int[::1] mv = np.ascontiguousarray(mask_idx, dtype=np.int32)
        cdef const double[::1] lov = np.ascontiguousarray(lo, dtype=np.float64)
        cdef const double[::1] hiv = np.ascontiguousarray(hi, dtype=np.float64)
        cdef double i4[4]
        _fill_intr(intr4, i4)
        cdef int m = mv.shape[0]
        if m == 0 or m > MAXK:
            raise ValueError("mask must select between 1 and 32 keypoints")

        cdef double p[NP10]
        cdef double pn[NP10]
        cdef double g[NP10]
        cdef double delta[NP10]
        cdef double diag[NP10]
        cdef double H[NP10 * NP10]
        cdef double A[NP10 * NP10]
        cdef double rbuf[2 * MAXK]
        cdef double rbuf2[2 * MAXK]
        cdef double Jbuf[2 * MAXK * NP10]
        cdef double Jbuf2[2 * MAXK * NP10]
        cdef double* r = rbuf
        cdef double* rn = rbuf2
        cdef double* J = Jbuf
        cdef double* Jn = Jbuf2
        cdef double* swp
        cdef double loss, ln, lam, drop, s
        cdef int i, j, k, iters, converged, rows

        trace_arr = np.empty(max_iter + 1)
        cdef double[::1] tr = trace_arr
        cdef int ntrace = 0

        rows = 2 * m
        for i in range(NP10):
            p[i] = p0[i]
            if p[i] < lov[i]:
                p[i] = lov[i]
            elif p[i] > hiv[i]:
                p[i] = hiv[i]
        if self._residual_jacobian(mode, p, yv, &mv[0], m, i4, r, J) != 0:
            out0 = np.empty(NP10)
            for i in range(NP10):
                out0[i] = p[i]
            return (out0, INF, 0, False, False, [])
        loss = 0.0
        for i in range(rows):
            loss += r[i] * r[i]
        lam = LAMBDA_INIT
        tr[0] = loss
        ntrace = 1
        iters = 0
        converged = 0
        while iters < max_iter:
            iters += 1
            # g = J^T r ; H = J^T J
            for i in range(NP10):
                s = 0.0
                for k in range(rows):
                    s += J[NP10 * k + i] * r[k]
                g[i] = s
            for i in range(NP10):
                for j in range(i, NP10):
                    s = 0.0
                    for k in range(rows):
                        s += J[NP10 * k + i] * J[NP10 * k + j]
                    H[NP10 * i + j] = s
                    H[NP10 * j + i] = s
            # active set: coordinates pinned at a bound with an outward
            # gradient are frozen so the free subspace can converge
            for i in range(NP10):
                if (p[i] <= lov[i] and g[i] > 0.0) or (p[i] >= hiv[i] and g[i] < 0.0):
                    for j in range(NP10):
                        H[NP10 * i + j] = 0.0
                        H[NP10 * j + i] = 0.0
                    H[NP10 * i + i] = 1.0
                    g[i] = 0.0
            for i in range(NP10):
                diag[i] = H[NP10 * i + i]
                if diag[i] < 1e-12:
                    diag[i] = 1e-12
            for i in range(NP10):
                for j in range(NP10):
                    A[NP10 * i + j] = H[NP10 * i + j]
                A[NP10 * i + i] += lam * diag[i]
                g[i] = -g[i]
            if _chol_solve(A, g, delta, NP10) != 0:
                for i in range(NP10):
                    g[i] = -g[i]
                lam = lam * LAMBDA_UP
                if lam > LAMBDA_MAX:
                    lam = LAMBDA_MAX
                continue
            for i in range(NP10):
                g[i] = -g[i]
                pn[i] = p[i] + delta[i]
                if pn[i] < lov[i]:
                    pn[i] = lov[i]
                elif pn[i] > hiv[i]:
                    pn[i] = hiv[i]
            if self._residual_jacobian(mode, pn, yv, &mv[0], m, i4, rn, Jn) != 0:
                ln = INF
            else:
                ln = 0.0
                for i in range(rows):
                    ln += rn[i] * rn[i]
            if ln < loss:
                drop = loss - ln
                memcpy(p, pn, NP10 * sizeof(double))
                swp = r; r = rn; rn = swp
                swp = J; J = Jn; Jn = swp
                loss = ln
                lam = lam * LAMBDA_DOWN
                if lam < LAMBDA_MIN:
                    lam = LAMBDA_MIN
                tr[ntrace] = loss
                ntrace += 1
                if drop <= tol:
                    converged = 1
                    break
            else:
                lam = lam * LAMBDA_UP
                if lam > LAMBDA_MAX:
                    # damping exhausted: no direction improves
                    converged = 1
                    break
        out = np.empty(NP10)
        cdef double[::1] ov = out
        for i in range(NP10):
            ov[i] = p[i]
        return (out, loss, iters, bool(converged), True,
                [float(tr[i]) for i in range(ntrace)])


cdef void _fill_intr(object intr4, double* out):
    cdef int i
    if intr4 is None:
        for i in range(4):
            out[i] = 0.0
    else:
        for i in range(4):
            out[i] = float(intr4[i])
