"""Slow, literal reference implementations shared by the unit and acceptance tests."""
import math

import numpy as np


def contact_oracle(s_obj, s_hand, tau):
    """1-based transcription of the contact-label algorithm; speeds at t=1 are never read."""
    T = len(s_obj)
    c = {1: 0}
    for t in range(2, T + 1):
        if s_obj[t - 1] >= tau:
            c[t] = 1
        elif s_hand[t - 1] >= tau:
            c[t] = 0
        else:
            c[t] = c[t - 1]
    t = T - 1
    while t >= 2:
        if c[t + 1] == 1 and s_obj[t - 1] < tau and s_hand[t - 1] < tau:
            c[t] = 1
        t -= 1
    return [c[t] for t in range(1, T + 1)]


def gae_oracle(rewards, values, dones, last_value, gamma, lam):
    """A_t as the explicit sum over l of (gamma*lam)^l * delta_{t+l}, truncated at episode ends."""
    T = len(rewards)
    nxt = list(values[1:]) + [last_value]
    deltas = [rewards[t] + gamma * nxt[t] * (1.0 - dones[t]) - values[t] for t in range(T)]
    adv = []
    for t in range(T):
        total, w = 0.0, 1.0
        for u in range(t, T):
            total += w * deltas[u]
            if dones[u]:
                break
            w *= gamma * lam
        adv.append(total)
    return np.array(adv), np.array(adv) + np.asarray(values, dtype=float)


def segment_hits_triangle(o, p, a, b, c):
    """Does the open segment o->p cross triangle abc strictly before p? Solved via a 3x3 linear system."""
    d = p - o
    m = np.column_stack([-d, b - a, c - a])
    if abs(np.linalg.det(m)) < 1e-12:
        return False
    t, u, v = np.linalg.solve(m, o - a)
    return u >= -1e-9 and v >= -1e-9 and u + v <= 1 + 1e-9 and 1e-9 < t < 1 - 1e-6


def visible_oracle(vertices, faces, center, cam):
    out = []
    for p in vertices:
        pc = cam.to_camera(p)
        if pc[2] <= 1e-6:
            out.append(False)
            continue
        u = cam.focal * pc[0] / pc[2] + cam.cx
        v = cam.focal * pc[1] / pc[2] + cam.cy
        if not (0 <= u <= cam.width and 0 <= v <= cam.height):
            out.append(False)
            continue
        hidden = any(segment_hits_triangle(center, p, *vertices[f]) for f in faces)
        out.append(not hidden)
    return np.array(out)


def uv_sphere(radius=0.1, n_lat=8, n_lon=12):
    verts = [np.array([0, 0, radius])]
    for i in range(1, n_lat):
        th = math.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * math.pi * j / n_lon
            verts.append(radius * np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)]))
    verts.append(np.array([0, 0, -radius]))
    faces = []
    ring = lambda i, j: 1 + (i - 1) * n_lon + (j % n_lon)
    for j in range(n_lon):
        faces.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b, c, d = ring(i, j), ring(i + 1, j), ring(i + 1, j + 1), ring(i, j + 1)
            faces += [(a, b, c), (a, c, d)]
    last = len(verts) - 1
    for j in range(n_lon):
        faces.append((last, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)))
    return np.array(verts), np.array(faces)


def _qm(q):
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                     [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                     [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])


def fk_loop(skel, root_t, root_q, local):
    J = len(skel.parents)
    R = [None] * J
    P = [None] * J
    R[0] = _qm(root_q) @ _qm(local[0])
    P[0] = np.asarray(root_t, dtype=float)
    for j in range(1, J):
        p = skel.parents[j]
        P[j] = P[p] + R[p] @ skel.offsets[j]
        R[j] = R[p] @ _qm(local[j])
    return np.array(P)


def alignment_oracle(problem, poses):
    """The four alignment losses by explicit loops over frames and joints."""
    cam = problem.camera
    Rc = cam.rotation.as_matrix()
    F = len(poses)
    pos = [fk_loop(problem.skeleton, problem.root_translation[t], problem.root_orientation[t], poses[t])
           for t in range(F)]

    def proj(x):
        pc = Rc @ x + cam.translation
        return np.array([cam.focal * pc[0] / pc[2] + cam.cx, cam.focal * pc[1] / pc[2] + cam.cy])

    def l2d(ids, obs):
        if len(ids) == 0:
            return 0.0
        tot = 0.0
        for t in range(F):
            for k, j in enumerate(ids):
                e = proj(pos[t][j]) - obs[t][k]
                tot += e[0] ** 2 + e[1] ** 2
        return tot / (F * len(ids))

    def geo(a, b):
        c = (np.trace(_qm(a).T @ _qm(b)) - 1) / 2
        return math.acos(min(1.0, max(-1.0, c)))

    def ltc(ids):
        if len(ids) == 0:
            return 0.0
        return sum(sum(geo(poses[t][j], poses[t + 1][j]) for j in ids) / len(ids) for t in range(F - 1))

    best = math.inf
    for t in range(F):
        c = 0.0
        for j in problem.part_joints:
            c += min(float(np.sum((pos[t][j] - v) ** 2)) for v in problem.object_vertices)
        best = min(best, c / len(problem.part_joints))
    return {"L_b": l2d(problem.body_ids, problem.body_2d), "L_h": l2d(problem.hand_ids, problem.hand_2d),
            "L_tc": ltc(problem.body_ids) + ltc(problem.hand_ids), "L_HOI": best}
