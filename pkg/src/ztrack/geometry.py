"""Vectorized 2D geometric kernels shared by the network and kinetics layers.

All coordinates are in mm. Functions accept single points (shape ``(2,)``)
or batches (shape ``(n, 2)``) and broadcast accordingly.
"""

import numpy as np


def cross2(u, v):
    """z-component of the 2D cross product u x v."""
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def norm2(v):
    return np.sqrt(v[..., 0] ** 2 + v[..., 1] ** 2)


def unit(v, out_zero=0.0):
    """Normalize rows of v; zero-length rows map to out_zero."""
    n = norm2(v)
    safe = np.where(n > 0.0, n, 1.0)
    u = v / safe[..., None]
    if np.ndim(n):
        u[n == 0.0] = out_zero
    elif n == 0.0:
        u = np.full_like(v, out_zero)
    return u


def menger_curvature(pa, pb, pc):
    """Signed curvature and circumcenter of the circle through (pa, pb, pc).

    The sign follows the turn direction of the polyline pa -> pb -> pc
    (positive for a counter-clockwise turn). Collinear triplets return
    curvature 0 and an invalid-center mask.

    Returns
    -------
    kappa : ndarray
        Signed curvature 2*cross/(|ab||bc||ac|), exact 1/R on circles.
    center : ndarray
        Circumcenter; rows for collinear triplets are left at pb.
    valid : ndarray of bool
        False where the triplet is (numerically) collinear.
    """
    pa = np.asarray(pa, dtype=float)
    pb = np.asarray(pb, dtype=float)
    pc = np.asarray(pc, dtype=float)
    ab = pb - pa
    bc = pc - pb
    ac = pc - pa
    twice_area = cross2(ab, ac)
    la, lb, lc = norm2(ab), norm2(bc), norm2(ac)
    denom = la * lb * lc
    # collinearity threshold relative to segment scale
    scale = np.maximum(np.maximum(la, lb), lc)
    valid = np.abs(twice_area) > 1e-14 * scale * scale
    kappa = np.where(valid, 2.0 * twice_area / np.where(denom > 0, denom, 1.0), 0.0)

    # circumcenter relative to pa for precision
    d = 2.0 * cross2(ab, ac)
    d_safe = np.where(valid, d, 1.0)
    ab2 = ab[..., 0] ** 2 + ab[..., 1] ** 2
    ac2 = ac[..., 0] ** 2 + ac[..., 1] ** 2
    ux = (ac[..., 1] * ab2 - ab[..., 1] * ac2) / d_safe
    uy = (ab[..., 0] * ac2 - ac[..., 0] * ab2) / d_safe
    center = pa + np.stack([ux, uy], axis=-1)
    if np.ndim(valid):
        center[~valid] = pb[~valid] if pb.ndim == center.ndim else pb
    elif not valid:
        center = pb.copy()
    return kappa, center, valid


def polygon_area(points):
    """Signed shoelace area of a closed polygon (CCW positive)."""
    p = np.asarray(points, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def polygon_centroid(points):
    p = np.asarray(points, dtype=float)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    w = x * yn - xn * y
    a = 0.5 * np.sum(w)
    if abs(a) < 1e-300:
        return p.mean(axis=0)
    cx = np.sum((x + xn) * w) / (6.0 * a)
    cy = np.sum((y + yn) * w) / (6.0 * a)
    return np.array([cx, cy])


def project_point_to_segment(p, a, b):
    """Closest point to p on segment [a, b] and its parameter in [0, 1]."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = ab[..., 0] ** 2 + ab[..., 1] ** 2
    t = np.where(denom > 0, ((p - a) * ab).sum(axis=-1) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    q = a + t[..., None] * ab
    return q, t


def point_segment_distance(p, a, b):
    q, _ = project_point_to_segment(p, a, b)
    return norm2(np.asarray(p, dtype=float) - q)


def segment_circle_params(a, b, center, radius):
    """Intersection parameters t in [0, 1] of segment a+t(b-a) with a circle.

    Returns a sorted list with 0, 1 or 2 parameters strictly inside (0, 1).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(center, dtype=float)
    d = b - a
    f = a - c
    qa = d @ d
    if qa == 0.0:
        return []
    qb = 2.0 * (f @ d)
    qc = f @ f - radius * radius
    disc = qb * qb - 4.0 * qa * qc
    if disc <= 0.0:
        return []
    s = np.sqrt(disc)
    ts = [(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)]
    return sorted(t for t in ts if 1e-12 < t < 1.0 - 1e-12)


def clip_polygon_halfplane(points, n, c):
    """Sutherland-Hodgman clip of polygon against half-plane n.x <= c."""
    out = []
    m = len(points)
    if m == 0:
        return out
    prev = points[-1]
    prev_in = prev[0] * n[0] + prev[1] * n[1] <= c
    for cur in points:
        cur_in = cur[0] * n[0] + cur[1] * n[1] <= c
        if cur_in != prev_in:
            # edge crosses the boundary line
            d0 = prev[0] * n[0] + prev[1] * n[1] - c
            d1 = cur[0] * n[0] + cur[1] * n[1] - c
            t = d0 / (d0 - d1)
            out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
        if cur_in:
            out.append(cur)
        prev, prev_in = cur, cur_in
    return out
