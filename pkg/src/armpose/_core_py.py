"""Pure-numpy fallback kernels for the hot numeric path.

Mirrors the compiled extension ``armpose._core`` function-for-function; the
compiled module is preferred at import time by ``armpose.kernels``. Keep the
two in algorithmic lockstep: same update rules, same damping schedule, same
parameter layouts.

Parameter layouts (radians internally):

* full perspective (mode 0): [Cx, Cy, Cz, az, el, roll, q0, q1, q2, q3]
  where C is the camera location in world cm.
* weak perspective (mode 1): [s, az, el, roll, tx, ty, q0, q1, q2, q3]
  with s in pixels/cm and (tx, ty) an image-plane offset in pixels.
"""

from __future__ import annotations

import math

import numpy as np

MIN_DEPTH = 1e-6
LM_LAMBDA_INIT = 1e-3
LM_LAMBDA_UP = 10.0
LM_LAMBDA_DOWN = 0.1
LM_LAMBDA_MIN = 1e-12
LM_LAMBDA_MAX = 1e12

MODE_FULL = 0
MODE_WEAK = 1


def _rodrigues(axis, angle):
    c, s = math.cos(angle), math.sin(angle)
    ax, ay, az = axis
    cross = np.array([[0.0, -az, ay], [az, 0.0, -ax], [-ay, ax, 0.0]])
    return c * np.eye(3) + s * cross + (1.0 - c) * np.outer(axis, axis)


def rotation_azelroll_jac(az, el, roll):
    """R plus dR/d(az, el, roll), all 3x3."""
    ca, sa = math.cos(az), math.sin(az)
    ce, se = math.cos(el), math.sin(el)
    cr, sr = math.cos(roll), math.sin(roll)
    r0 = np.array([ca, sa, 0.0])
    f = np.array([-sa * ce, ca * ce, -se])
    d0 = np.array([se * sa, -se * ca, -ce])
    dr0_az = np.array([-sa, ca, 0.0])
    df_az = np.array([-ca * ce, -sa * ce, 0.0])
    df_el = np.array([sa * se, -ca * se, -ce])
    dd0_az = np.array([se * ca, se * sa, 0.0])
    dd0_el = np.array([ce * sa, -ce * ca, se])

    row1 = cr * r0 + sr * d0
    row2 = cr * d0 - sr * r0
    R = np.stack([row1, row2, f])
    dR = np.empty((3, 3, 3))
    dR[0] = np.stack([cr * dr0_az + sr * dd0_az, cr * dd0_az - sr * dr0_az, df_az])
    dR[1] = np.stack([sr * dd0_el, cr * dd0_el, df_el])
    dR[2] = np.stack([row2, -row1, np.zeros(3)])
    return R, dR


class KernelModel:
    """Packed arm geometry plus the kernels that consume it."""

    def __init__(self, rest, kp_chain, kp_njoints, axes, pivots, parent, topo):
        self.rest = np.ascontiguousarray(rest, dtype=float)
        self.kp_chain = np.ascontiguousarray(kp_chain, dtype=np.int32)
        self.kp_njoints = np.ascontiguousarray(kp_njoints, dtype=np.int32)
        self.axes = np.ascontiguousarray(axes, dtype=float)
        self.pivots = np.ascontiguousarray(pivots, dtype=float)
        self.parent = np.ascontiguousarray(parent, dtype=np.int32)
        self.topo = np.ascontiguousarray(topo, dtype=np.int32)
        self.n_kp = self.rest.shape[0]
        self.n_joints = self.axes.shape[0]
        # deepest actuated joint per keypoint, -1 for static parts
        self.kp_last = np.array(
            [self.kp_chain[k, self.kp_njoints[k] - 1] if self.kp_njoints[k] > 0 else -1
             for k in range(self.n_kp)], dtype=np.int32)
        # membership mask: joint j moves keypoint k
        self.kp_affected = np.zeros((self.n_kp, self.n_joints), dtype=bool)
        for k in range(self.n_kp):
            for c in range(self.kp_njoints[k]):
                self.kp_affected[k, self.kp_chain[k, c]] = True

    # -- forward kinematics --------------------------------------------------

    def _frames(self, q):
        nj = self.n_joints
        Rw = np.empty((nj, 3, 3))
        tw = np.empty((nj, 3))
        waxis = np.empty((nj, 3))
        wpivot = np.empty((nj, 3))
        for j in self.topo:
            A = _rodrigues(self.axes[j], q[j])
            par = self.parent[j]
            if par < 0:
                Rp, tp = np.eye(3), np.zeros(3)
            else:
                Rp, tp = Rw[par], tw[par]
            Rw[j] = Rp @ A
            tw[j] = Rp @ (self.pivots[j] - A @ self.pivots[j]) + tp
            waxis[j] = Rp @ self.axes[j]
            wpivot[j] = Rp @ self.pivots[j] + tp
        return Rw, tw, waxis, wpivot

    def fk(self, q):
        """World keypoint coordinates for joint angles q (radians)."""
        Rw, tw, _, _ = self._frames(np.asarray(q, dtype=float))
        pts = self.rest.copy()
        for k in range(self.n_kp):
            j = self.kp_last[k]
            if j >= 0:
                pts[k] = Rw[j] @ self.rest[k] + tw[j]
        return pts

    def fk_jac(self, q):
        """(points, d points / d q) with shapes (K,3) and (K,3,4)."""
        Rw, tw, waxis, wpivot = self._frames(np.asarray(q, dtype=float))
        K = self.n_kp
        pts = self.rest.copy()
        for k in range(K):
            j = self.kp_last[k]
            if j >= 0:
                pts[k] = Rw[j] @ self.rest[k] + tw[j]
        jac = np.zeros((K, 3, self.n_joints))
        for k in range(K):
            for c in range(self.kp_njoints[k]):
                j = self.kp_chain[k, c]
                jac[k, :, j] = np.cross(waxis[j], pts[k] - wpivot[j])
        return pts, jac

    # -- residuals ------------------------------------------------------------

    def residual_jacobian(self, mode, params, y, mask_idx, intr4):
        """Stacked pixel residuals (u-y_u, v-y_v) and their 10-column Jacobian
        over the masked keypoints. Returns (r, J, ok); ok=False when a masked
        point falls behind the camera in full-perspective mode."""
        params = np.asarray(params, dtype=float)
        mask_idx = np.asarray(mask_idx, dtype=np.int64)
        q = params[6:10]
        pts, dpts = self.fk_jac(q)
        m = len(mask_idx)
        r = np.empty(2 * m)
        J = np.empty((2 * m, 10))
        if mode == MODE_FULL:
            fx, fy, cx, cy = intr4
            C = params[0:3]
            R, dR = rotation_azelroll_jac(params[3], params[4], params[5])
            rel = pts[mask_idx] - C
            xc = rel @ R.T
            depth = xc[:, 2]
            if np.any(depth <= MIN_DEPTH):
                return r, J, False
            u = fx * xc[:, 0] / depth + cx
            v = fy * xc[:, 1] / depth + cy
            r[0::2] = u - y[mask_idx, 0]
            r[1::2] = v - y[mask_idx, 1]
            # rows of d(u,v)/d(x_cam)
            du = np.stack([fx / depth, np.zeros(m), -fx * xc[:, 0] / depth ** 2], axis=1)
            dv = np.stack([np.zeros(m), fy / depth, -fy * xc[:, 1] / depth ** 2], axis=1)
            J[0::2, 0:3] = -(du @ R)
            J[1::2, 0:3] = -(dv @ R)
            for a in range(3):
                dxc = rel @ dR[a].T
                J[0::2, 3 + a] = np.einsum("ij,ij->i", du, dxc)
                J[1::2, 3 + a] = np.einsum("ij,ij->i", dv, dxc)
            for j in range(4):
                dxc = dpts[mask_idx, :, j] @ R.T
                J[0::2, 6 + j] = np.einsum("ij,ij->i", du, dxc)
                J[1::2, 6 + j] = np.einsum("ij,ij->i", dv, dxc)
        else:
            s = params[0]
            R, dR = rotation_azelroll_jac(params[1], params[2], params[3])
            tx, ty = params[4], params[5]
            xc = pts[mask_idx] @ R.T
            r[0::2] = s * xc[:, 0] + tx - y[mask_idx, 0]
            r[1::2] = s * xc[:, 1] + ty - y[mask_idx, 1]
            J[0::2, 0] = xc[:, 0]
            J[1::2, 0] = xc[:, 1]
            for a in range(3):
                dxc = pts[mask_idx] @ dR[a].T
                J[0::2, 1 + a] = s * dxc[:, 0]
                J[1::2, 1 + a] = s * dxc[:, 1]
            J[0::2, 4] = 1.0
            J[1::2, 4] = 0.0
            J[0::2, 5] = 0.0
            J[1::2, 5] = 1.0
            for j in range(4):
                dxc = dpts[mask_idx, :, j] @ R.T
                J[0::2, 6 + j] = s * dxc[:, 0]
                J[1::2, 6 + j] = s * dxc[:, 1]
        return r, J, True

    def loss(self, mode, params, y, mask_idx, intr4):
        r, _, ok = self.residual_jacobian(mode, params, y, mask_idx, intr4)
        if not ok:
            return math.inf, False
        return float(r @ r), True

    # -- damped least squares ---------------------------------------------------

    def lm_solve(self, mode, params0, y, mask_idx, intr4, lo, hi, max_iter, tol):
        """Levenberg-Marquardt with multiplicative damping (x10 on reject,
        x0.1 on accept) and box projection after every step.

        Returns (params, loss, iterations, converged, valid, trace) where
        trace is the sequence of accepted losses and valid=False means the
        initialization itself had no valid projection.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        p = np.clip(np.asarray(params0, dtype=float), lo, hi)
        r, J, ok = self.residual_jacobian(mode, p, y, mask_idx, intr4)
        if not ok:
            return p, math.inf, 0, False, False, []
        loss = float(r @ r)
        lam = LM_LAMBDA_INIT
        trace = [loss]
        iters = 0
        converged = False
        while iters < max_iter:
            iters += 1
            g = J.T @ r
            H = (J.T @ J).copy()
            # active set: coordinates pinned at a bound with an outward
            # gradient are frozen so the free subspace can converge
            act = ((p <= lo) & (g > 0)) | ((p >= hi) & (g < 0))
            if act.any():
                H[act, :] = 0.0
                H[:, act] = 0.0
                H[act, act] = 1.0
                g = g.copy()
                g[act] = 0.0
            d = np.diag(H).copy()
            d[d < 1e-12] = 1e-12
            try:
                delta = np.linalg.solve(H + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam = min(lam * LM_LAMBDA_UP, LM_LAMBDA_MAX)
                continue
            pn = np.clip(p + delta, lo, hi)
            rn, Jn, okn = self.residual_jacobian(mode, pn, y, mask_idx, intr4)
            ln = float(rn @ rn) if okn else math.inf
            if ln < loss:
                drop = loss - ln
                p, r, J, loss = pn, rn, Jn, ln
                lam = max(lam * LM_LAMBDA_DOWN, LM_LAMBDA_MIN)
                trace.append(loss)
                if drop <= tol:
                    converged = True
                    break
            else:
                lam = lam * LM_LAMBDA_UP
                if lam > LM_LAMBDA_MAX:
                    # damping exhausted: no direction improves, numerically a minimum
                    converged = True
                    break
        return p, loss, iters, converged, True, trace
