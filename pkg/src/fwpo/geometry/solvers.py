"""Iterative and enumerative solvers behind the set oracles."""

import itertools
from math import comb

import numpy as np

from .errors import ConvergenceError


def dykstra(projectors, z, max_passes=10_000, tol=1e-8, feasible=None):
    """Dykstra's alternating projections onto the intersection of convex sets.

    ``projectors`` is a sequence of callables each returning the Euclidean
    projection onto one convex set.  Stops once a full cyclic pass changes
    neither the iterate nor the correction terms by more than ``tol`` (the
    iterate alone can stall for several passes far from the solution) and
    ``feasible(x)`` holds, when given.
    """
    x = np.array(z, dtype=float)
    increments = [np.zeros_like(x) for _ in projectors]
    moved = np.inf
    for _ in range(max_passes):
        start = x
        shift = 0.0
        for i, proj in enumerate(projectors):
            w = x + increments[i]
            y = proj(w)
            new_inc = w - y
            shift += float(np.sum((new_inc - increments[i]) ** 2))
            increments[i] = new_inc
            x = y
        moved = max(float(np.linalg.norm(x - start)), np.sqrt(shift))
        if moved < tol and (feasible is None or feasible(x)):
            return x
    raise ConvergenceError(
        f"Dykstra did not converge in {max_passes} passes (last move {moved:.3g})",
        last=x, residual=moved)


def project_box_hyperplane(lo, hi, e, d, z):
    """Project ``z`` onto ``{lo <= x <= hi, <e, x> = d}``.

    The minimizer is ``clip(z - lam * e, lo, hi)`` for the multiplier ``lam``
    solving the monotone, piecewise-linear equation ``<e, x(lam)> = d``; the
    root is bracketed between breakpoints and finished by interpolation.
    """
    nz = e != 0
    def level(lam):
        return float(e @ np.clip(z - lam * e, lo, hi))

    bps = np.unique(np.concatenate([(z[nz] - lo[nz]) / e[nz], (z[nz] - hi[nz]) / e[nz]]))
    # level() is nonincreasing in lam
    vals = np.array([level(t) for t in bps])
    if d >= vals[0]:
        lam = bps[0]
    elif d <= vals[-1]:
        lam = bps[-1]
    else:
        j = int(np.searchsorted(-vals, -d, side="right"))
        lam_lo, lam_hi = bps[j - 1], bps[j]
        f_lo, f_hi = vals[j - 1], vals[j]
        lam = lam_lo + (f_lo - d) * (lam_hi - lam_lo) / (f_lo - f_hi)
    return np.clip(z - lam * e, lo, hi)


def project_weighted_l1(w, budget, z):
    """Project ``z`` onto ``{x : sum_i |w_i x_i| <= budget}``.

    Coordinates with zero weight are untouched.  Otherwise the solution is the
    weighted soft-threshold ``sign(z) * max(|z| - lam * w, 0)`` with ``lam``
    found from the piecewise-linear budget equation.
    """
    az = np.abs(z)
    if w @ az <= budget:
        return np.array(z, dtype=float)
    act = w > 0
    ratio = az[act] / w[act]
    order = np.argsort(-ratio)
    r_sorted = ratio[order]
    ww = (w[act] ** 2)[order]
    wz = (w[act] * az[act])[order]
    cw = np.cumsum(ww)
    cz = np.cumsum(wz)
    # with the top-k coordinates active: lam = (cz_k - budget) / cw_k
    lam_k = (cz - budget) / cw
    nxt = np.append(r_sorted[1:], 0.0)
    k = int(np.flatnonzero(lam_k >= nxt)[0])
    lam = max(lam_k[k], 0.0)
    out = np.array(z, dtype=float)
    out[act] = np.sign(z[act]) * np.maximum(az[act] - lam * w[act], 0.0)
    return out


def ball_polyhedron_faces(A, b, E, d, center, radius, max_faces=64):
    """Precompute the affine faces of ``{A x <= b, E x = d}`` relevant to a ball.

    A face is the equality rows plus an independent subset of inequality rows
    taken as active.  Returns stacked arrays: ``P[f] @ y + offset[f]`` projects
    onto face ``f``'s affine hull, ``c_face[f]`` is the ball centre's
    projection, ``gap2[f]`` the squared radius left on the face (negative when
    the face misses the ball) and ``is_point[f]`` marks zero-dimensional faces.
    Raises ``OverflowError`` beyond ``max_faces`` subsets.
    """
    n = center.size
    m = A.shape[0]
    rank_e = np.linalg.matrix_rank(E) if E.shape[0] else 0
    max_k = min(m, n - rank_e)
    if sum(comb(m, k) for k in range(max_k + 1)) > max_faces:
        raise OverflowError("too many faces to enumerate")
    Ps, offsets, points = [], [], []
    for k in range(max_k + 1):
        for subset in itertools.combinations(range(m), k):
            M = np.vstack([E, A[list(subset)]])
            h = np.concatenate([d, b[list(subset)]])
            if M.shape[0] == 0:
                Ps.append(np.eye(n))
                offsets.append(np.zeros(n))
                points.append(False)
                continue
            rank = np.linalg.matrix_rank(M)
            if k and rank < rank_e + k:
                continue
            pinv = np.linalg.pinv(M)
            offset = pinv @ h
            if np.linalg.norm(M @ offset - h) > 1e-9 * (1.0 + np.linalg.norm(h)):
                continue
            Ps.append(np.eye(n) - pinv @ M)
            offsets.append(offset)
            points.append(rank >= n)
    P = np.array(Ps).reshape(-1, n, n)
    offset = np.array(offsets).reshape(-1, n)
    c_face = P @ center + offset
    gap2 = radius ** 2 - ((c_face - center) ** 2).sum(axis=1)
    return {"P": P, "offset": offset, "c_face": c_face, "gap2": gap2,
            "is_point": np.array(points, dtype=bool)}


def ball_polyhedron_candidates(faces, z=None, g=None):
    """Candidate optima of a projection (``z``) or linear maximization (``g``)
    over a ball intersected with a polyhedron, given its precomputed faces.

    Every KKT point lies on some affine face with the ball either active or
    not, and each face admits one closed-form candidate per case.  Returns a
    ``(k, n)`` array that the caller filters for feasibility, plus a flag set
    when ``g`` has no component along some face (the maximizer is then not
    unique and the caller should tilt ``g``).
    """
    P, offset, c_face, gap2, is_point = (
        faces["P"], faces["offset"], faces["c_face"], faces["gap2"], faces["is_point"])
    round_ok = (gap2 >= 0.0) & ~is_point
    radius_left = np.sqrt(np.maximum(gap2, 0.0))[:, None]
    if z is not None:
        y = P @ z + offset
        v = y - c_face
        nv = np.linalg.norm(v, axis=1)
        sel = round_ok & (nv > 0.0)
        on_sphere = c_face[sel] + radius_left[sel] * v[sel] / nv[sel, None]
        # re-snap onto each face to remove rounding drift
        on_sphere = np.einsum("fij,fj->fi", P[sel], on_sphere) + offset[sel]
        return np.vstack([y, on_sphere]), False
    gf = P @ g
    ng = np.linalg.norm(gf, axis=1)
    flat = ng <= 1e-9 * np.linalg.norm(g)
    sel = round_ok & ~flat
    on_sphere = c_face[sel] + radius_left[sel] * gf[sel] / ng[sel, None]
    on_sphere = np.einsum("fij,fj->fi", P[sel], on_sphere) + offset[sel]
    return np.vstack([c_face[is_point], on_sphere]), bool(np.any(round_ok & flat))


def ball_polyhedron_candidates_many(faces, Z=None, G=None):
    """Batched :func:`ball_polyhedron_candidates`.

    Returns candidates of shape ``(B, K, n)`` with a ``(B, K)`` validity mask
    (same candidate order as the single-point version); for directions also a
    per-row degeneracy flag.
    """
    P, offset, c_face, gap2, is_point = (
        faces["P"], faces["offset"], faces["c_face"], faces["gap2"], faces["is_point"])
    round_ok = (gap2 >= 0.0) & ~is_point
    radius_left = np.sqrt(np.maximum(gap2, 0.0))[None, :, None]
    if Z is not None:
        y = np.einsum("fij,bj->bfi", P, Z) + offset
        v = y - c_face
        nv = np.linalg.norm(v, axis=2)
        ok = round_ok[None, :] & (nv > 0.0)
        sphere = c_face + radius_left * v / np.where(nv > 0.0, nv, 1.0)[:, :, None]
        sphere = np.einsum("fij,bfj->bfi", P, sphere) + offset
        valid = np.concatenate([np.ones(y.shape[:2], dtype=bool), ok], axis=1)
        return np.concatenate([y, sphere], axis=1), valid
    gf = np.einsum("fij,bj->bfi", P, G)
    ng = np.linalg.norm(gf, axis=2)
    flat = ng <= 1e-9 * np.linalg.norm(G, axis=1)[:, None]
    ok = round_ok[None, :] & ~flat
    sphere = c_face + radius_left * gf / np.where(flat, 1.0, ng)[:, :, None]
    sphere = np.einsum("fij,bfj->bfi", P, sphere) + offset
    B = G.shape[0]
    points = np.broadcast_to(c_face[is_point], (B, int(is_point.sum()), c_face.shape[1]))
    valid = np.concatenate([np.ones(points.shape[:2], dtype=bool), ok], axis=1)
    degenerate = np.any(round_ok[None, :] & flat, axis=1)
    return np.concatenate([points, sphere], axis=1), valid, degenerate


def vertices(A, b, E=None, d=None, tol=1e-9):
    """All vertices of ``{A x <= b, E x = d}`` by brute-force enumeration."""
    n = A.shape[1]
    E = np.zeros((0, n)) if E is None else E
    d = np.zeros(0) if d is None else d
    rank_e = np.linalg.matrix_rank(E) if E.shape[0] else 0
    found = []
    for subset in itertools.combinations(range(A.shape[0]), n - rank_e):
        M = np.vstack([E, A[list(subset)]])
        h = np.concatenate([d, b[list(subset)]])
        if np.linalg.matrix_rank(M) < n:
            continue
        x, *_ = np.linalg.lstsq(M, h, rcond=None)
        if np.any(A @ x > b + tol * (1 + np.abs(b))):
            continue
        if E.shape[0] and np.any(np.abs(E @ x - d) > tol * (1 + np.abs(d))):
            continue
        if not any(np.allclose(x, v, atol=1e-9) for v in found):
            found.append(x)
    return np.array(found).reshape(-1, n)
