# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernel; mirrors ``_kernel_py`` one world at a time."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sin, cos, fabs

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef Py_ssize_t idx


cdef inline void mat_vec(const f64* M, const f64* v, f64* out) noexcept nogil:
    out[0] = M[0] * v[0] + M[1] * v[1] + M[2] * v[2]
    out[1] = M[3] * v[0] + M[4] * v[1] + M[5] * v[2]
    out[2] = M[6] * v[0] + M[7] * v[1] + M[8] * v[2]


cdef inline void mat_t_vec(const f64* M, const f64* v, f64* out) noexcept nogil:
    out[0] = M[0] * v[0] + M[3] * v[1] + M[6] * v[2]
    out[1] = M[1] * v[0] + M[4] * v[1] + M[7] * v[2]
    out[2] = M[2] * v[0] + M[5] * v[1] + M[8] * v[2]


cdef inline void mat_mul(const f64* A, const f64* B, f64* out) noexcept nogil:
    cdef int i, j
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = A[3 * i] * B[j] + A[3 * i + 1] * B[3 + j] + A[3 * i + 2] * B[6 + j]


cdef inline void axis_rot(const f64* a, f64 angle, f64* out) noexcept nogil:
    cdef f64 c = cos(angle), s = sin(angle), t = 1.0 - c
    cdef f64 x = a[0], y = a[1], z = a[2]
    out[0] = c + t * x * x
    out[1] = t * x * y - s * z
    out[2] = t * x * z + s * y
    out[3] = t * x * y + s * z
    out[4] = c + t * y * y
    out[5] = t * y * z - s * x
    out[6] = t * x * z - s * y
    out[7] = t * y * z + s * x
    out[8] = c + t * z * z


cdef inline void quat_mat(const f64* q, f64* out) noexcept nogil:
    cdef f64 w = q[0], x = q[1], y = q[2], z = q[3]
    out[0] = 1 - 2 * (y * y + z * z)
    out[1] = 2 * (x * y - w * z)
    out[2] = 2 * (x * z + w * y)
    out[3] = 2 * (x * y + w * z)
    out[4] = 1 - 2 * (x * x + z * z)
    out[5] = 2 * (y * z - w * x)
    out[6] = 2 * (x * z - w * y)
    out[7] = 2 * (y * z + w * x)
    out[8] = 1 - 2 * (x * x + y * y)


cdef inline void cross(const f64* a, const f64* b, f64* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline f64 dot(const f64* a, const f64* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef struct Model:
    idx nj
    idx nd
    idx ns
    idx nsens
    idx nplanes
    idx nhull
    const idx* parents
    const f64* offsets
    const f64* link_mass
    const f64* link_com
    const idx* dof_type
    const f64* dof_axis
    const idx* dof_first
    const idx* dof_count
    const cnp.uint8_t* anc
    const f64* inertia
    const f64* kp
    const f64* kd
    const f64* tau_lim
    const f64* q_lo
    const f64* q_hi
    const idx* sph_joint
    const f64* sph_local
    const f64* sph_r
    const idx* sph_sensor
    f64 obj_mass
    const f64* obj_inertia
    const f64* planes
    const f64* hull
    const f64* tc
    const f64* th
    int has_table
    int has_ground
    const f64* g
    f64 h
    int nsub
    f64 mu
    f64 k
    f64 c
    f64 v_eps


cdef struct Scratch:
    f64* R      # nj * 9
    f64* p      # nj * 3
    f64* ax     # nd * 3
    f64* piv    # nd * 3
    f64* tau    # nd
    f64* tau_pd # nd
    f64* sensor # nsens


cdef void fk(const Model* m, const f64* q, const f64* root_pos, const f64* root_quat, Scratch* s) noexcept nogil:
    cdef idx j, d, par
    cdef f64 cur[9]
    cdef f64 tmp[9]
    cdef f64 rot[9]
    cdef f64 pp[3]
    cdef f64 v[3]
    cdef int i
    for j in range(m.nj):
        if j == 0:
            quat_mat(root_quat, cur)
            for i in range(3):
                pp[i] = root_pos[i]
            for d in range(m.dof_first[0], m.dof_first[0] + m.dof_count[0]):
                if m.dof_type[d] == 1:
                    for i in range(3):
                        s.ax[3 * d + i] = m.dof_axis[3 * d + i]
                        s.piv[3 * d + i] = 0.0
                        pp[i] += q[d] * m.dof_axis[3 * d + i]
        else:
            par = m.parents[j]
            for i in range(9):
                cur[i] = s.R[9 * par + i]
            mat_vec(cur, &m.offsets[3 * j], v)
            for i in range(3):
                pp[i] = s.p[3 * par + i] + v[i]
        for d in range(m.dof_first[j], m.dof_first[j] + m.dof_count[j]):
            if m.dof_type[d] == 0:
                mat_vec(cur, &m.dof_axis[3 * d], &s.ax[3 * d])
                for i in range(3):
                    s.piv[3 * d + i] = pp[i]
                axis_rot(&m.dof_axis[3 * d], q[d], rot)
                mat_mul(cur, rot, tmp)
                for i in range(9):
                    cur[i] = tmp[i]
        for i in range(9):
            s.R[9 * j + i] = cur[i]
        for i in range(3):
            s.p[3 * j + i] = pp[i]


cdef inline void point_velocity(const Model* m, const Scratch* s, idx joint, const f64* x,
                                const f64* qd, f64* out) noexcept nogil:
    cdef idx d
    cdef f64 lever[3]
    cdef f64 c[3]
    cdef int i
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    for d in range(m.nd):
        if m.anc[joint * m.nd + d] == 0 or qd[d] == 0.0:
            continue
        if m.dof_type[d] == 1:
            for i in range(3):
                out[i] += s.ax[3 * d + i] * qd[d]
        else:
            for i in range(3):
                lever[i] = x[i] - s.piv[3 * d + i]
            cross(&s.ax[3 * d], lever, c)
            for i in range(3):
                out[i] += c[i] * qd[d]


cdef inline void apply_force(const Model* m, Scratch* s, idx joint, const f64* x, const f64* f) noexcept nogil:
    cdef idx d
    cdef f64 lever[3]
    cdef f64 c[3]
    cdef int i
    for d in range(m.nd):
        if m.anc[joint * m.nd + d] == 0:
            continue
        if m.dof_type[d] == 1:
            s.tau[d] += dot(&s.ax[3 * d], f)
        else:
            for i in range(3):
                lever[i] = x[i] - s.piv[3 * d + i]
            cross(lever, f, c)
            s.tau[d] += dot(&s.ax[3 * d], c)


cdef f64 STIFF_CAP = 0.5
cdef f64 DAMP_CAP = 0.25


cdef inline f64 point_inv_mass(const Model* m, const Scratch* s, idx joint, const f64* x) noexcept nogil:
    """Sum over DoFs of |J_d|^2 / I_d for a point on ``joint``."""
    cdef idx d
    cdef f64 lever[3]
    cdef f64 c[3]
    cdef f64 w = 0.0
    cdef int i
    for d in range(m.nd):
        if m.anc[joint * m.nd + d] == 0:
            continue
        if m.dof_type[d] == 1:
            w += 1.0 / m.inertia[d]
        else:
            for i in range(3):
                lever[i] = x[i] - s.piv[3 * d + i]
            cross(&s.ax[3 * d], lever, c)
            w += dot(c, c) / m.inertia[d]
    return w


cdef inline void contact_force(const Model* m, f64 depth, const f64* n, const f64* vrel, f64 w, f64* f) noexcept nogil:
    cdef f64 vn, fn, vt[3], speed, slope, k, c, cmax
    cdef int i
    f[0] = 0.0
    f[1] = 0.0
    f[2] = 0.0
    if depth <= 0.0:
        return
    if w < 1e-12:
        w = 1e-12
    k = STIFF_CAP / (m.h * m.h * w)
    if m.k < k:
        k = m.k
    cmax = DAMP_CAP / (m.h * w)
    c = m.c if m.c < cmax else cmax
    vn = dot(vrel, n)
    fn = k * depth - c * vn
    if fn < 0.0:
        fn = 0.0
    for i in range(3):
        vt[i] = vrel[i] - vn * n[i]
    speed = sqrt(dot(vt, vt))
    if speed < m.v_eps:
        speed = m.v_eps
    slope = m.mu * fn / speed
    if slope > cmax:
        slope = cmax
    for i in range(3):
        f[i] = fn * n[i] - slope * vt[i]


cdef inline f64 box_contact(const Model* m, const f64* x, f64 r, f64* normal) noexcept nogil:
    """Depth of a sphere against the static table box; fills the outward normal."""
    cdef f64 d[3], diff[3], dist2 = 0.0, dist, gap, best_gap = 1e300
    cdef int i, face = 0
    for i in range(3):
        d[i] = x[i] - m.tc[i]
        if d[i] > m.th[i]:
            diff[i] = d[i] - m.th[i]
        elif d[i] < -m.th[i]:
            diff[i] = d[i] + m.th[i]
        else:
            diff[i] = 0.0
        dist2 += diff[i] * diff[i]
    dist = sqrt(dist2)
    if dist > 1e-12:
        for i in range(3):
            normal[i] = diff[i] / dist
        return r - dist
    for i in range(3):
        gap = m.th[i] - fabs(d[i])
        if gap < best_gap:
            best_gap = gap
            face = i
    for i in range(3):
        normal[i] = 0.0
    normal[face] = -1.0 if d[face] < 0.0 else 1.0
    return r + best_gap


cdef void forces(const Model* m, const f64* q, const f64* qd, const f64* root_pos, const f64* root_quat,
                 const f64* obj, const f64* q_target, Scratch* s, f64* qdd, f64* a_obj, f64* alpha) noexcept nogil:
    cdef idx j, d, si, pl, best, v
    cdef int i
    cdef f64 x[3], vel[3], f[3], fsum[3], n[3], xb[3], rel[3], lever[3], vo[3], tmp[3], nb[3]
    cdef f64 oR[9], f_obj[3], t_obj[3], wb[3], tb[3], Iw[3], ab[3]
    cdef f64 r, depth, sd, smax, tau_v, mag, ws, wv, o_imin
    o_imin = m.obj_inertia[0]
    for i in range(1, 3):
        if m.obj_inertia[i] < o_imin:
            o_imin = m.obj_inertia[i]
    o_imin = 1.0 / o_imin
    cdef const f64* opos = obj
    cdef const f64* ovel = &obj[7]
    cdef const f64* oang = &obj[10]

    fk(m, q, root_pos, root_quat, s)

    for d in range(m.nd):
        tau_v = m.kp[d] * (q_target[d] - q[d]) - m.kd[d] * qd[d]
        if tau_v > m.tau_lim[d]:
            tau_v = m.tau_lim[d]
        elif tau_v < -m.tau_lim[d]:
            tau_v = -m.tau_lim[d]
        s.tau_pd[d] = tau_v
        s.tau[d] = tau_v
    for i in range(m.nsens):
        s.sensor[i] = 0.0

    # gravity on link centres of mass
    for j in range(m.nj):
        if m.link_mass[j] == 0.0:
            continue
        mat_vec(&s.R[9 * j], &m.link_com[3 * j], x)
        for i in range(3):
            x[i] += s.p[3 * j + i]
            f[i] = m.link_mass[j] * m.g[i]
        apply_force(m, s, j, x, f)

    quat_mat(&obj[3], oR)
    for i in range(3):
        f_obj[i] = 0.0
        t_obj[i] = 0.0

    for si in range(m.ns):
        j = m.sph_joint[si]
        r = m.sph_r[si]
        mat_vec(&s.R[9 * j], &m.sph_local[3 * si], x)
        for i in range(3):
            x[i] += s.p[3 * j + i]
            fsum[i] = 0.0
        point_velocity(m, s, j, x, qd, vel)
        ws = point_inv_mass(m, s, j, x)
        if m.has_ground:
            n[0] = 0.0
            n[1] = 0.0
            n[2] = 1.0
            contact_force(m, r - x[2], n, vel, ws, f)
            for i in range(3):
                fsum[i] += f[i]
        if m.has_table:
            depth = box_contact(m, x, r, n)
            contact_force(m, depth, n, vel, ws, f)
            for i in range(3):
                fsum[i] += f[i]
        # object hull
        for i in range(3):
            rel[i] = x[i] - opos[i]
        mat_t_vec(oR, rel, xb)
        smax = -1e300
        best = 0
        for pl in range(m.nplanes):
            sd = dot(&m.planes[4 * pl], xb) + m.planes[4 * pl + 3]
            if sd > smax:
                smax = sd
                best = pl
        depth = r - smax
        if depth > 0.0:
            mat_vec(oR, &m.planes[4 * best], n)
            for i in range(3):
                lever[i] = x[i] - n[i] * (r - 0.5 * depth) - opos[i]
            cross(oang, lever, tmp)
            for i in range(3):
                vo[i] = vel[i] - ovel[i] - tmp[i]
            wv = ws + 1.0 / m.obj_mass + o_imin * dot(lever, lever)
            contact_force(m, depth, n, vo, wv, f)
            for i in range(3):
                fsum[i] += f[i]
                f_obj[i] -= f[i]
            cross(lever, f, tmp)
            for i in range(3):
                t_obj[i] -= tmp[i]
        apply_force(m, s, j, x, fsum)
        if m.sph_sensor[si] >= 0:
            mag = sqrt(dot(fsum, fsum))
            s.sensor[m.sph_sensor[si]] = mag

    # object hull vertices against ground and table
    for v in range(m.nhull):
        mat_vec(oR, &m.hull[3 * v], lever)
        for i in range(3):
            x[i] = opos[i] + lever[i]
        cross(oang, lever, tmp)
        for i in range(3):
            vel[i] = ovel[i] + tmp[i]
        wv = 1.0 / m.obj_mass + o_imin * dot(lever, lever)
        if m.has_ground:
            n[0] = 0.0
            n[1] = 0.0
            n[2] = 1.0
            contact_force(m, -x[2], n, vel, wv, f)
            for i in range(3):
                f_obj[i] += f[i]
            cross(lever, f, tmp)
            for i in range(3):
                t_obj[i] += tmp[i]
        if m.has_table:
            depth = box_contact(m, x, 0.0, n)
            contact_force(m, depth, n, vel, wv, f)
            for i in range(3):
                f_obj[i] += f[i]
            cross(lever, f, tmp)
            for i in range(3):
                t_obj[i] += tmp[i]

    for d in range(m.nd):
        qdd[d] = s.tau[d] / m.inertia[d]
    for i in range(3):
        a_obj[i] = f_obj[i] / m.obj_mass + m.g[i]
    mat_t_vec(oR, oang, wb)
    mat_t_vec(oR, t_obj, tb)
    for i in range(3):
        Iw[i] = m.obj_inertia[i] * wb[i]
    cross(wb, Iw, tmp)
    for i in range(3):
        ab[i] = (tb[i] - tmp[i]) / m.obj_inertia[i]
    mat_vec(oR, ab, alpha)


cdef inline void quat_step(f64* quat, const f64* w, f64 h) noexcept nogil:
    cdef f64 wn = sqrt(dot(w, w))
    cdef f64 half = 0.5 * wn * h
    cdef f64 k, dq[4], out[4], norm
    cdef int i
    if wn * h < 1e-12:
        k = 0.5 * h
    else:
        k = sin(half) / wn
    dq[0] = cos(half)
    dq[1] = k * w[0]
    dq[2] = k * w[1]
    dq[3] = k * w[2]
    out[0] = dq[0] * quat[0] - dq[1] * quat[1] - dq[2] * quat[2] - dq[3] * quat[3]
    out[1] = dq[0] * quat[1] + dq[1] * quat[0] + dq[2] * quat[3] - dq[3] * quat[2]
    out[2] = dq[0] * quat[2] - dq[1] * quat[3] + dq[2] * quat[0] + dq[3] * quat[1]
    out[3] = dq[0] * quat[3] + dq[1] * quat[2] - dq[2] * quat[1] + dq[3] * quat[0]
    norm = sqrt(out[0] * out[0] + out[1] * out[1] + out[2] * out[2] + out[3] * out[3])
    for i in range(4):
        quat[i] = out[i] / norm


cdef Model make_model(m, dict keep):
    cdef Model M
    cdef cnp.ndarray arr
    names = ("parents", "offsets", "link_mass", "link_com", "dof_type", "dof_axis", "dof_first",
             "dof_count", "anc", "inertia", "kp", "kd", "tau_lim", "q_lo", "q_hi", "sph_joint",
             "sph_local", "sph_r", "sph_sensor", "obj_inertia", "planes", "hull", "table_center",
             "table_half", "gravity")
    for name in names:
        keep[name] = np.ascontiguousarray(getattr(m, name))
    M.nj = len(keep["parents"])
    M.nd = len(keep["dof_type"])
    M.ns = len(keep["sph_joint"])
    M.nsens = m.n_sensor
    M.nplanes = len(keep["planes"])
    M.nhull = len(keep["hull"])
    arr = keep["parents"]; M.parents = <const idx*> arr.data
    arr = keep["offsets"]; M.offsets = <const f64*> arr.data
    arr = keep["link_mass"]; M.link_mass = <const f64*> arr.data
    arr = keep["link_com"]; M.link_com = <const f64*> arr.data
    arr = keep["dof_type"]; M.dof_type = <const idx*> arr.data
    arr = keep["dof_axis"]; M.dof_axis = <const f64*> arr.data
    arr = keep["dof_first"]; M.dof_first = <const idx*> arr.data
    arr = keep["dof_count"]; M.dof_count = <const idx*> arr.data
    arr = keep["anc"]; M.anc = <const cnp.uint8_t*> arr.data
    arr = keep["inertia"]; M.inertia = <const f64*> arr.data
    arr = keep["kp"]; M.kp = <const f64*> arr.data
    arr = keep["kd"]; M.kd = <const f64*> arr.data
    arr = keep["tau_lim"]; M.tau_lim = <const f64*> arr.data
    arr = keep["q_lo"]; M.q_lo = <const f64*> arr.data
    arr = keep["q_hi"]; M.q_hi = <const f64*> arr.data
    arr = keep["sph_joint"]; M.sph_joint = <const idx*> arr.data
    arr = keep["sph_local"]; M.sph_local = <const f64*> arr.data
    arr = keep["sph_r"]; M.sph_r = <const f64*> arr.data
    arr = keep["sph_sensor"]; M.sph_sensor = <const idx*> arr.data
    arr = keep["obj_inertia"]; M.obj_inertia = <const f64*> arr.data
    arr = keep["planes"]; M.planes = <const f64*> arr.data
    arr = keep["hull"]; M.hull = <const f64*> arr.data
    arr = keep["table_center"]; M.tc = <const f64*> arr.data
    arr = keep["table_half"]; M.th = <const f64*> arr.data
    arr = keep["gravity"]; M.g = <const f64*> arr.data
    M.obj_mass = m.obj_mass
    M.has_table = m.has_table
    M.has_ground = m.has_ground
    M.h = m.h
    M.nsub = m.nsub
    M.mu = m.mu
    M.k = m.k
    M.c = m.c
    M.v_eps = m.v_eps
    return M


def step_batch(m, f64[:, ::1] q, f64[:, ::1] qd, f64[:, ::1] root_pos, f64[:, ::1] root_quat,
               f64[:, ::1] obj, f64[:, ::1] q_target, f64[:, ::1] sensor_out, f64[:, ::1] torque_out):
    """Advance every world by one control step (``nsub`` velocity-Verlet substeps), in place."""
    keep = {}
    cdef Model M = make_model(m, keep)
    cdef idx nw = q.shape[0], w, d
    cdef int sub, i
    cdef f64 h = M.h, wgt, total = M.h * M.nsub
    cdef cnp.ndarray R = np.empty(M.nj * 9)
    cdef cnp.ndarray P = np.empty(M.nj * 3)
    cdef cnp.ndarray AX = np.zeros(M.nd * 3)
    cdef cnp.ndarray PIV = np.zeros(M.nd * 3)
    cdef cnp.ndarray TAU = np.empty(M.nd)
    cdef cnp.ndarray TPD = np.empty(M.nd)
    cdef cnp.ndarray SEN = np.zeros(max(M.nsens, 1))
    cdef cnp.ndarray QDD = np.empty(M.nd)
    cdef Scratch S
    S.R = <f64*> R.data
    S.p = <f64*> P.data
    S.ax = <f64*> AX.data
    S.piv = <f64*> PIV.data
    S.tau = <f64*> TAU.data
    S.tau_pd = <f64*> TPD.data
    S.sensor = <f64*> SEN.data
    cdef f64* qdd = <f64*> QDD.data
    cdef f64 a[3]
    cdef f64 alpha[3]
    with nogil:
        for w in range(nw):
            forces(&M, &q[w, 0], &qd[w, 0], &root_pos[w, 0], &root_quat[w, 0], &obj[w, 0],
                   &q_target[w, 0], &S, qdd, a, alpha)
            for i in range(M.nsens):
                sensor_out[w, i] = 0.5 * h * S.sensor[i]
            for d in range(M.nd):
                torque_out[w, d] = 0.5 * h * S.tau_pd[d]
            for sub in range(M.nsub):
                for d in range(M.nd):
                    qd[w, d] += 0.5 * h * qdd[d]
                for i in range(3):
                    obj[w, 7 + i] += 0.5 * h * a[i]
                    obj[w, 10 + i] += 0.5 * h * alpha[i]
                for d in range(M.nd):
                    q[w, d] += h * qd[w, d]
                    if q[w, d] < M.q_lo[d]:
                        q[w, d] = M.q_lo[d]
                        if qd[w, d] < 0.0:
                            qd[w, d] = 0.0
                    elif q[w, d] > M.q_hi[d]:
                        q[w, d] = M.q_hi[d]
                        if qd[w, d] > 0.0:
                            qd[w, d] = 0.0
                for i in range(3):
                    obj[w, i] += h * obj[w, 7 + i]
                quat_step(&obj[w, 3], &obj[w, 10], h)
                forces(&M, &q[w, 0], &qd[w, 0], &root_pos[w, 0], &root_quat[w, 0], &obj[w, 0],
                       &q_target[w, 0], &S, qdd, a, alpha)
                for d in range(M.nd):
                    qd[w, d] += 0.5 * h * qdd[d]
                for i in range(3):
                    obj[w, 7 + i] += 0.5 * h * a[i]
                    obj[w, 10 + i] += 0.5 * h * alpha[i]
                wgt = 0.5 * h if sub == M.nsub - 1 else h
                for i in range(M.nsens):
                    sensor_out[w, i] += wgt * S.sensor[i]
                for d in range(M.nd):
                    torque_out[w, d] += wgt * S.tau_pd[d]
            for i in range(M.nsens):
                sensor_out[w, i] /= total
            for d in range(M.nd):
                torque_out[w, d] /= total


def fk_batch(m, f64[:, ::1] q, f64[:, ::1] qd, f64[:, ::1] root_pos, f64[:, ::1] root_quat):
    """World joint positions, rotation matrices, linear and angular velocities."""
    keep = {}
    cdef Model M = make_model(m, keep)
    cdef idx nw = q.shape[0], w, j, d
    cdef int i
    pos_a = np.empty((nw, M.nj, 3))
    rot_a = np.empty((nw, M.nj, 3, 3))
    lin_a = np.zeros((nw, M.nj, 3))
    ang_a = np.zeros((nw, M.nj, 3))
    cdef f64[:, :, ::1] pos = pos_a
    cdef f64[:, :, :, ::1] rot = rot_a
    cdef f64[:, :, ::1] lin = lin_a
    cdef f64[:, :, ::1] ang = ang_a
    cdef cnp.ndarray R = np.empty(M.nj * 9)
    cdef cnp.ndarray P = np.empty(M.nj * 3)
    cdef cnp.ndarray AX = np.zeros(M.nd * 3)
    cdef cnp.ndarray PIV = np.zeros(M.nd * 3)
    cdef Scratch S
    S.R = <f64*> R.data
    S.p = <f64*> P.data
    S.ax = <f64*> AX.data
    S.piv = <f64*> PIV.data
    cdef f64 v[3]
    with nogil:
        for w in range(nw):
            fk(&M, &q[w, 0], &root_pos[w, 0], &root_quat[w, 0], &S)
            for j in range(M.nj):
                for i in range(3):
                    pos[w, j, i] = S.p[3 * j + i]
                for i in range(9):
                    rot[w, j, i // 3, i % 3] = S.R[9 * j + i]
                point_velocity(&M, &S, j, &S.p[3 * j], &qd[w, 0], v)
                for i in range(3):
                    lin[w, j, i] = v[i]
                for d in range(M.nd):
                    if M.anc[j * M.nd + d] and M.dof_type[d] == 0:
                        for i in range(3):
                            ang[w, j, i] += S.ax[3 * d + i] * qd[w, d]
    return pos_a, rot_a, lin_a, ang_a
