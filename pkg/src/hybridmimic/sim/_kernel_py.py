"""Pure-numpy simulation kernel, vectorised over worlds.

Reference implementation for the compiled kernel in ``_kernel.pyx``; both
expose ``step_batch`` and ``fk_batch`` with identical signatures.
"""
from __future__ import annotations

import numpy as np

_EYE = np.eye(3)


def _axis_rot(axis, angle):
    """Rotation matrices (N, 3, 3) about a unit axis by angles (N,)."""
    c = np.cos(angle)[:, None, None]
    s = np.sin(angle)[:, None, None]
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return _EYE + s * k + (1.0 - c) * (k @ k)


def quat_to_mat(q):
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1).reshape(-1, 3, 3)


def _fk(m, q, root_pos, root_quat):
    n = q.shape[0]
    nj = len(m.parents)
    nd = len(m.dof_joint)
    R = np.empty((n, nj, 3, 3))
    p = np.empty((n, nj, 3))
    ax = np.zeros((n, nd, 3))
    piv = np.zeros((n, nd, 3))
    root_R = quat_to_mat(root_quat)
    for j in range(nj):
        first, count = m.dof_first[j], m.dof_count[j]
        if j == 0:
            cur = root_R
            pp = root_pos.copy()
            for d in range(first, first + count):
                if m.dof_type[d] == 1:
                    ax[:, d] = m.dof_axis[d]
                    pp = pp + q[:, d, None] * m.dof_axis[d]
        else:
            par = m.parents[j]
            cur = R[:, par]
            pp = p[:, par] + cur @ m.offsets[j]
        for d in range(first, first + count):
            if m.dof_type[d] == 0:
                ax[:, d] = cur @ m.dof_axis[d]
                piv[:, d] = pp
                cur = cur @ _axis_rot(m.dof_axis[d], q[:, d])
        R[:, j] = cur
        p[:, j] = pp
    return R, p, ax, piv


def _jac(m, ax, piv, x, joints):
    """Point Jacobian columns (N, P, D, 3) for points ``x`` (N, P, 3) on ``joints``."""
    anc = m.anc[joints].astype(float)  # (P, D)
    lever = x[:, :, None, :] - piv[:, None, :, :]
    cols = np.cross(np.broadcast_to(ax[:, None], lever.shape), lever)
    slide = m.dof_type == 1
    if slide.any():
        cols[:, :, slide] = ax[:, None, slide]
    return cols * anc[None, :, :, None]


# explicit-stability caps: k w h^2 <= STIFF_CAP and c w h <= DAMP_CAP per contact
STIFF_CAP = 0.5
DAMP_CAP = 0.25


def _contact(m, depth, normal, vrel, w):
    """Penalty force on the first body; inactive where depth <= 0.

    ``w`` is an isotropic bound on the contact point's inverse effective mass;
    stiffness, damping and the regularised friction slope are capped by it.
    """
    w = np.maximum(w, 1e-12)  # points on a fixed root
    k = np.minimum(m.k, STIFF_CAP / (m.h * m.h * w))
    cmax = DAMP_CAP / (m.h * w)
    c = np.minimum(m.c, cmax)
    vn = np.sum(vrel * normal, axis=-1)
    fn = np.maximum(0.0, k * depth - c * vn)
    fn = np.where(depth > 0, fn, 0.0)
    vt = vrel - vn[..., None] * normal
    speed = np.linalg.norm(vt, axis=-1)
    slope = np.minimum(m.mu * fn / np.maximum(speed, m.v_eps), cmax)
    return fn[..., None] * normal - slope[..., None] * vt


def _box_contact(center, half, x, r):
    """Depth and outward normal of spheres against an axis-aligned static box."""
    d = x - center
    clamped = np.clip(d, -half, half)
    diff = d - clamped
    dist = np.linalg.norm(diff, axis=-1)
    outside = dist > 1e-12
    normal_out = diff / np.where(outside, dist, 1.0)[..., None]
    # centre inside: push out through the nearest face
    gap = half - np.abs(d)
    face = np.argmin(gap, axis=-1)
    normal_in = np.zeros_like(d)
    np.put_along_axis(normal_in, face[..., None], np.take_along_axis(np.sign(d) + (d == 0), face[..., None], -1), -1)
    depth_in = r + np.take_along_axis(gap, face[..., None], -1)[..., 0]
    normal = np.where(outside[..., None], normal_out, normal_in)
    depth = np.where(outside, r - dist, depth_in)
    return depth, normal


def _forces(m, q, qd, root_pos, root_quat, obj, q_target):
    n = q.shape[0]
    R, p, ax, piv = _fk(m, q, root_pos, root_quat)

    tau_pd = np.clip(m.kp * (q_target - q) - m.kd * qd, -m.tau_lim, m.tau_lim)
    tau = tau_pd.copy()

    # gravity on link centres of mass
    com = p + np.einsum("njab,jb->nja", R, m.link_com)
    jc = _jac(m, ax, piv, com, np.arange(len(m.parents)))
    fg = m.link_mass[None, :, None] * m.gravity
    tau += np.einsum("njdc,njc->nd", jc, np.broadcast_to(fg, com.shape))

    # spheres
    xs = p[:, m.sph_joint] + np.einsum("nsab,sb->nsa", R[:, m.sph_joint], m.sph_local)
    js = _jac(m, ax, piv, xs, m.sph_joint)
    vs = np.einsum("nsdc,nd->nsc", js, qd)
    ws = np.einsum("nsdc,nsdc,d->ns", js, js, 1.0 / m.inertia)
    o_imin = 1.0 / np.min(m.obj_inertia)
    r = m.sph_r[None, :]
    fs = np.zeros_like(xs)

    opos, oquat, ovel, oang = obj[:, 0:3], obj[:, 3:7], obj[:, 7:10], obj[:, 10:13]
    oR = quat_to_mat(oquat)
    f_obj = np.zeros((n, 3))
    t_obj = np.zeros((n, 3))

    if m.has_ground:
        depth = r - xs[..., 2]
        normal = np.broadcast_to(np.array([0.0, 0.0, 1.0]), xs.shape)
        fs += _contact(m, depth, normal, vs, ws)
    if m.has_table:
        depth, normal = _box_contact(m.table_center, m.table_half, xs, r)
        fs += _contact(m, depth, normal, vs, ws)

    # spheres against the object's convex hull
    xb = np.einsum("nba,nsb->nsa", oR, xs - opos[:, None])  # body frame
    sd = np.einsum("pa,nsa->nsp", m.planes[:, :3], xb) + m.planes[:, 3]
    best = np.argmax(sd, axis=-1)
    smax = np.take_along_axis(sd, best[..., None], -1)[..., 0]
    nb = m.planes[best, :3]
    nw = np.einsum("nab,nsb->nsa", oR, nb)
    depth = r - smax
    pc = xs - nw * (r - 0.5 * depth)[..., None]
    lever = pc - opos[:, None]
    vo = ovel[:, None] + np.cross(np.broadcast_to(oang[:, None], lever.shape), lever)
    wo = ws + 1.0 / m.obj_mass + o_imin * np.sum(lever * lever, axis=-1)
    fo = _contact(m, depth, nw, vs - vo, wo)
    fs += fo
    f_obj -= fo.sum(axis=1)
    t_obj -= np.cross(lever, fo).sum(axis=1)

    tau += np.einsum("nsdc,nsc->nd", js, fs)
    sensor = np.zeros((n, m.n_sensor))
    mag = np.linalg.norm(fs, axis=-1)
    mask = m.sph_sensor >= 0
    sensor[:, m.sph_sensor[mask]] = mag[:, mask]

    # object hull vertices against ground and table
    hv = opos[:, None] + np.einsum("nab,vb->nva", oR, m.hull)
    lever = hv - opos[:, None]
    vv = ovel[:, None] + np.cross(np.broadcast_to(oang[:, None], lever.shape), lever)
    wv = 1.0 / m.obj_mass + o_imin * np.sum(lever * lever, axis=-1)
    if m.has_ground:
        depth = -hv[..., 2]
        normal = np.broadcast_to(np.array([0.0, 0.0, 1.0]), hv.shape)
        fv = _contact(m, depth, normal, vv, wv)
        f_obj += fv.sum(axis=1)
        t_obj += np.cross(lever, fv).sum(axis=1)
    if m.has_table:
        depth, normal = _box_contact(m.table_center, m.table_half, hv, 0.0)
        fv = _contact(m, depth, normal, vv, wv)
        f_obj += fv.sum(axis=1)
        t_obj += np.cross(lever, fv).sum(axis=1)

    qdd = tau / m.inertia
    a_obj = f_obj / m.obj_mass + m.gravity
    wb = np.einsum("nba,nb->na", oR, oang)
    tb = np.einsum("nba,nb->na", oR, t_obj)
    alpha_b = (tb - np.cross(wb, m.obj_inertia * wb)) / m.obj_inertia
    alpha = np.einsum("nab,nb->na", oR, alpha_b)
    return qdd, a_obj, alpha, sensor, tau_pd


def _quat_step(quat, w, h):
    """Left-multiply by exp(w h) and renormalise."""
    angle = np.linalg.norm(w, axis=-1) * h
    half = 0.5 * angle
    small = angle < 1e-12
    k = np.where(small, 0.5 * h, np.sin(half) / np.where(small, 1.0, np.linalg.norm(w, axis=-1)))
    dq = np.concatenate([np.cos(half)[:, None], k[:, None] * w], axis=1)
    aw, ax_, ay, az = dq.T
    bw, bx, by, bz = quat.T
    out = np.stack([
        aw * bw - ax_ * bx - ay * by - az * bz,
        aw * bx + ax_ * bw + ay * bz - az * by,
        aw * by - ax_ * bz + ay * bw + az * bx,
        aw * bz + ax_ * by - ay * bx + az * bw,
    ], axis=1)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def step_batch(m, q, qd, root_pos, root_quat, obj, q_target, sensor_out, torque_out):
    """Advance every world by one control step (``nsub`` velocity-Verlet substeps), in place."""
    h = m.h
    nsub = m.nsub
    qdd, a, alpha, sensor, tau = _forces(m, q, qd, root_pos, root_quat, obj, q_target)
    sens_acc = 0.5 * h * sensor
    tau_acc = 0.5 * h * tau
    for s in range(nsub):
        qd += 0.5 * h * qdd
        obj[:, 7:10] += 0.5 * h * a
        obj[:, 10:13] += 0.5 * h * alpha
        q += h * qd
        lo = q < m.q_lo
        hi = q > m.q_hi
        q[:] = np.clip(q, m.q_lo, m.q_hi)
        qd[:] = np.where(lo, np.maximum(qd, 0.0), np.where(hi, np.minimum(qd, 0.0), qd))
        obj[:, 0:3] += h * obj[:, 7:10]
        obj[:, 3:7] = _quat_step(obj[:, 3:7], obj[:, 10:13], h)
        qdd, a, alpha, sensor, tau = _forces(m, q, qd, root_pos, root_quat, obj, q_target)
        qd += 0.5 * h * qdd
        obj[:, 7:10] += 0.5 * h * a
        obj[:, 10:13] += 0.5 * h * alpha
        w = 0.5 * h if s == nsub - 1 else h
        sens_acc += w * sensor
        tau_acc += w * tau
    total = h * nsub
    sensor_out[:] = sens_acc / total
    torque_out[:] = tau_acc / total


def fk_batch(m, q, qd, root_pos, root_quat):
    """World joint positions, rotation matrices, linear and angular velocities."""
    R, p, ax, piv = _fk(m, q, root_pos, root_quat)
    jac = _jac(m, ax, piv, p, np.arange(len(m.parents)))
    lin = np.einsum("njdc,nd->njc", jac, qd)
    hinge = (m.dof_type == 0).astype(float)
    ang = np.einsum("jd,ndc,nd->njc", m.anc.astype(float) * hinge, ax, qd)
    return p, R, lin, ang
