"""Convex action sets with membership, linear-maximization and projection oracles.

Every set is immutable after construction.  Leaf kinds:

* :class:`Box` -- ``lo <= x <= hi``
* :class:`Halfspaces` -- ``A x <= b``
* :class:`Hyperplanes` -- ``E x = d``
* :class:`L2Ball` -- ``||x - center|| <= radius``
* :class:`QuadraticGroups` -- ``sum_{i in g} x_i^2 <= r_g^2`` per index group
* :class:`WeightedL1` -- ``sum_i |w_i x_i| <= budget``

and the combinator :class:`Intersection`, which carries a feasible anchor.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConvergenceError, GeometryError, InfeasibleError, UnboundedError
from .simplex import simplex_solve
from .solvers import (
    ball_polyhedron_candidates,
    ball_polyhedron_candidates_many,
    ball_polyhedron_faces,
    dykstra,
    project_box_hyperplane,
    project_weighted_l1,
    vertices,
)

DEFAULT_TOL = 1e-6
DYKSTRA_MAX_PASSES = 10_000
DYKSTRA_TOL = 1e-8
PGA_ITERS = 1_000
PGA_TOL = 1e-8
EXACT_DIAMETER_MAX_DIM = 4


def _vec(x, name="vector"):
    arr = np.array(x, dtype=float).ravel()
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


def _mat(x, ncols=None, name="matrix"):
    arr = np.array(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, ncols or 0)
    if arr.ndim != 2 or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be a finite 2-D array")
    arr.setflags(write=False)
    return arr


class ConstraintSet:
    """Common interface.  Subclasses set ``kind`` and implement the oracles."""

    kind = "abstract"
    polyhedral = False

    @property
    def dim(self):
        raise NotImplementedError

    def _check(self, z, name="point"):
        z = np.asarray(z, dtype=float).ravel()
        if z.size != self.dim:
            raise ValueError(f"{name} has dimension {z.size}, set has dimension {self.dim}")
        return z

    def contains(self, z, tol=DEFAULT_TOL):
        return self.violation(self._check(z)) <= tol

    def violation(self, z):
        """Largest amount by which any defining constraint is violated at ``z``."""
        raise NotImplementedError

    def project(self, z):
        raise NotImplementedError

    def lmo(self, g):
        raise NotImplementedError

    def diameter(self):
        raise NotImplementedError

    def project_many(self, Z):
        """Row-wise projection of a batch."""
        return np.stack([self.project(z) for z in np.atleast_2d(Z)])

    def lmo_many(self, G):
        """Row-wise linear maximization for a batch of directions."""
        return np.stack([self.lmo(g) for g in np.atleast_2d(G)])

    def covered(self):
        """Boolean mask of coordinates this set bounds on its own."""
        return np.zeros(self.dim, dtype=bool)

    def projectors(self):
        """Closed-form projections whose intersection is this set (for Dykstra)."""
        return [self.project]

    def rows(self):
        """``(A, b, E, d)`` for polyhedral sets."""
        raise TypeError(f"{self.kind} is not polyhedral")

    def to_dict(self):
        raise NotImplementedError

    def _require_bounded(self):
        if not self.covered().all():
            raise UnboundedError(f"{self.kind} set is unbounded in some coordinate")


@dataclass(frozen=True, eq=False)
class Box(ConstraintSet):
    lo: np.ndarray
    hi: np.ndarray
    kind = "box"
    polyhedral = True

    def __post_init__(self):
        lo, hi = _vec(self.lo, "lo"), _vec(self.hi, "hi")
        if lo.shape != hi.shape:
            raise ValueError("lo and hi differ in length")
        if np.any(lo > hi):
            raise InfeasibleError("box is empty (lo > hi)")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    def violation(self, z):
        return float(max(np.max(self.lo - z, initial=0.0), np.max(z - self.hi, initial=0.0)))

    def project(self, z):
        return np.clip(self._check(z), self.lo, self.hi)

    def lmo(self, g):
        g = self._check(g, "direction")
        return np.where(g > 0, self.hi, self.lo)

    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def covered(self):
        return np.ones(self.dim, dtype=bool)

    def rows(self):
        n = self.dim
        eye = np.eye(n)
        return (np.vstack([eye, -eye]), np.concatenate([self.hi, -self.lo]),
                np.zeros((0, n)), np.zeros(0))

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class Halfspaces(ConstraintSet):
    A: np.ndarray
    b: np.ndarray
    kind = "halfspaces"
    polyhedral = True

    def __post_init__(self):
        b = _vec(self.b, "b")
        A = _mat(self.A, name="A")
        if A.shape[0] != b.size:
            raise ValueError("A and b differ in row count")
        zero = ~np.any(A != 0, axis=1)
        if np.any(b[zero] < 0):
            raise InfeasibleError("zero row with negative right-hand side")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.A.shape[1]

    def violation(self, z):
        return float(np.max(self.A @ z - self.b, initial=0.0))

    def projectors(self):
        out = []
        for a, beta in zip(self.A, self.b):
            nrm2 = float(a @ a)
            if nrm2 == 0.0:
                continue
            out.append(_halfspace_projector(a, beta, nrm2))
        return out

    def project(self, z):
        z = self._check(z)
        if self.violation(z) <= 0.0:
            return z.copy()
        projs = self.projectors()
        if len(projs) == 1:
            return projs[0](z)
        return dykstra(projs, z, DYKSTRA_MAX_PASSES, DYKSTRA_TOL,
                       feasible=lambda x: self.violation(x) <= 1e-9)

    def lmo(self, g):
        g = self._check(g, "direction")
        return simplex_solve(self.A, self.b, None, None, g)

    def diameter(self):
        return _polyhedral_diameter(self)

    def rows(self):
        return self.A, self.b, np.zeros((0, self.dim)), np.zeros(0)

    def to_dict(self):
        return {"kind": self.kind, "A": self.A.tolist(), "b": self.b.tolist()}


def _halfspace_projector(a, beta, nrm2):
    def proj(x):
        excess = a @ x - beta
        return x - (excess / nrm2) * a if excess > 0 else x
    return proj


@dataclass(frozen=True, eq=False)
class Hyperplanes(ConstraintSet):
    E: np.ndarray
    d: np.ndarray
    kind = "hyperplanes"
    polyhedral = True

    def __post_init__(self):
        d = _vec(self.d, "d")
        E = _mat(self.E, name="E")
        if E.shape[0] != d.size:
            raise ValueError("E and d differ in row count")
        pinv = np.linalg.pinv(E)
        if np.linalg.norm(E @ (pinv @ d) - d) > 1e-9 * (1.0 + np.linalg.norm(d)):
            raise InfeasibleError("equality system is inconsistent")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "_pinv", pinv)

    @property
    def dim(self):
        return self.E.shape[1]

    def violation(self, z):
        return float(np.max(np.abs(self.E @ z - self.d), initial=0.0))

    def project(self, z):
        z = self._check(z)
        return z - self._pinv @ (self.E @ z - self.d)

    def lmo(self, g):
        g = self._check(g, "direction")
        return simplex_solve(None, None, self.E, self.d, g)

    def diameter(self):
        return _polyhedral_diameter(self)

    def rows(self):
        return np.zeros((0, self.dim)), np.zeros(0), self.E, self.d

    def to_dict(self):
        return {"kind": self.kind, "E": self.E.tolist(), "d": self.d.tolist()}


@dataclass(frozen=True, eq=False)
class L2Ball(ConstraintSet):
    center: np.ndarray
    radius: float
    kind = "l2ball"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, "center"))
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.size

    def violation(self, z):
        return max(float(np.linalg.norm(z - self.center)) - self.radius, 0.0)

    def project(self, z):
        z = self._check(z)
        v = z - self.center
        nrm = np.linalg.norm(v)
        if nrm <= self.radius:
            return z.copy()
        return self.center + (self.radius / nrm) * v

    def lmo(self, g):
        g = self._check(g, "direction")
        nrm = np.linalg.norm(g)
        if nrm == 0.0:
            return self.center.copy()
        return self.center + (self.radius / nrm) * g

    def diameter(self):
        return 2.0 * self.radius

    def covered(self):
        return np.ones(self.dim, dtype=bool)

    def to_dict(self):
        return {"kind": self.kind, "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class QuadraticGroups(ConstraintSet):
    """Origin-centred balls on index groups; ``n`` fixes the ambient dimension."""

    groups: tuple
    n: int
    kind = "quadratic_groups"

    def __post_init__(self):
        groups = []
        for idx, radius in self.groups:
            idx = tuple(int(i) for i in idx)
            if not idx or min(idx) < 0 or max(idx) >= self.n or len(set(idx)) != len(idx):
                raise ValueError(f"bad index group {idx}")
            if not radius > 0:
                raise ValueError("group radius must be positive")
            groups.append((idx, float(radius)))
        object.__setattr__(self, "groups", tuple(groups))

    @property
    def dim(self):
        return self.n

    @cached_property
    def disjoint(self):
        seen = [i for idx, _ in self.groups for i in idx]
        return len(seen) == len(set(seen))

    def violation(self, z):
        return max([float(np.linalg.norm(z[list(idx)])) - r for idx, r in self.groups] + [0.0])

    def projectors(self):
        return [_group_projector(list(idx), r) for idx, r in self.groups]

    def project(self, z):
        z = self._check(z)
        projs = self.projectors()
        if self.disjoint:
            for p in projs:
                z = p(z)
            return z
        return dykstra(projs, z, DYKSTRA_MAX_PASSES, DYKSTRA_TOL,
                       feasible=lambda x: self.violation(x) <= 1e-9)

    def lmo(self, g):
        g = self._check(g, "direction")
        self._require_bounded()
        if not self.disjoint:
            return _pga_lmo(self, g, np.zeros(self.dim), self.diameter())
        out = np.zeros(self.dim)
        for idx, r in self.groups:
            gi = g[list(idx)]
            nrm = np.linalg.norm(gi)
            if nrm > 0:
                out[list(idx)] = r * gi / nrm
        return out

    def diameter(self):
        self._require_bounded()
        if self.disjoint:
            return 2.0 * float(np.sqrt(sum(r * r for _, r in self.groups)))
        # each coordinate lies in [-r, r] for the smallest group holding it
        half = np.full(self.dim, np.inf)
        for idx, r in self.groups:
            half[list(idx)] = np.minimum(half[list(idx)], r)
        return 2.0 * float(np.linalg.norm(half))

    def covered(self):
        mask = np.zeros(self.dim, dtype=bool)
        for idx, _ in self.groups:
            mask[list(idx)] = True
        return mask

    def to_dict(self):
        return {"kind": self.kind, "n": self.n,
                "groups": [[list(idx), r] for idx, r in self.groups]}


def _group_projector(idx, r):
    def proj(x):
        sub = x[idx]
        nrm = np.linalg.norm(sub)
        if nrm <= r:
            return x
        out = x.copy()
        out[idx] = sub * (r / nrm)
        return out
    return proj


@dataclass(frozen=True, eq=False)
class WeightedL1(ConstraintSet):
    weights: np.ndarray
    budget: float
    kind = "weighted_l1"

    def __post_init__(self):
        w = _vec(self.weights, "weights")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "budget", float(self.budget))

    @property
    def dim(self):
        return self.weights.size

    def violation(self, z):
        return max(float(np.abs(self.weights * z).sum()) - self.budget, 0.0)

    def project(self, z):
        return project_weighted_l1(self.weights, self.budget, self._check(z))

    def lmo(self, g):
        g = self._check(g, "direction")
        self._require_bounded()
        out = np.zeros(self.dim)
        score = np.abs(g) / self.weights
        if score.max() == 0.0:
            return out
        i = int(np.argmax(score))
        out[i] = np.sign(g[i]) * self.budget / self.weights[i]
        return out

    def diameter(self):
        self._require_bounded()
        return 2.0 * self.budget / float(self.weights.min())

    def covered(self):
        return self.weights > 0

    def to_dict(self):
        return {"kind": self.kind, "weights": self.weights.tolist(), "budget": self.budget}


class Intersection(ConstraintSet):
    """Intersection of member sets, with a feasible ``anchor`` point.

    Nested intersections are flattened and Box members are merged.
    """

    kind = "intersection"

    def __init__(self, members, anchor):
        flat = []
        for m in members:
            flat.extend(m.members if isinstance(m, Intersection) else [m])
        if not flat:
            raise ValueError("intersection needs at least one member")
        n = flat[0].dim
        if any(m.dim != n for m in flat):
            raise ValueError("members disagree on dimension")
        boxes = [m for m in flat if isinstance(m, Box)]
        if len(boxes) > 1:
            lo = np.max([bx.lo for bx in boxes], axis=0)
            hi = np.min([bx.hi for bx in boxes], axis=0)
            flat = [Box(lo, hi)] + [m for m in flat if not isinstance(m, Box)]
        self.members = tuple(flat)
        self.anchor = _vec(anchor, "anchor")
        if self.anchor.size != n:
            raise ValueError("anchor has the wrong dimension")
        if not self.contains(self.anchor, DEFAULT_TOL):
            raise InfeasibleError("anchor is not feasible for the intersection")
        strong = np.zeros(n, dtype=bool)
        for m in self.members:
            strong |= m.covered()
        for m in self.members:
            if isinstance(m, WeightedL1) and not strong[m.weights == 0].all():
                raise UnboundedError("zero-weight coordinates of a WeightedL1 member are not bounded")
        self._strong = strong
        self.polyhedral = all(m.polyhedral for m in self.members)

    def __setattr__(self, name, value):
        if name in self.__dict__ and name != "polyhedral":
            raise AttributeError("Intersection is immutable")
        object.__setattr__(self, name, value)

    def __repr__(self):
        return f"Intersection({list(self.members)!r}, anchor={self.anchor.tolist()})"

    @property
    def dim(self):
        return self.anchor.size

    def violation(self, z):
        return max(m.violation(z) for m in self.members)

    def covered(self):
        return self._strong.copy()

    @cached_property
    def _rows(self):
        n = self.dim
        parts = [m.rows() for m in self.members if m.polyhedral]
        A = np.vstack([p[0] for p in parts] + [np.zeros((0, n))])
        b = np.concatenate([p[1] for p in parts] + [np.zeros(0)])
        E = np.vstack([p[2] for p in parts] + [np.zeros((0, n))])
        d = np.concatenate([p[3] for p in parts] + [np.zeros(0)])
        return A, b, E, d

    def rows(self):
        if not self.polyhedral:
            raise TypeError("intersection has non-polyhedral members")
        return self._rows

    def projectors(self):
        out = []
        for m in self.members:
            out.extend(m.projectors())
        return out

    @cached_property
    def _box_hyperplane(self):
        """``(lo, hi, e, d)`` when the set is a box cut by one hyperplane."""
        kinds = sorted(m.kind for m in self.members)
        if kinds != ["box", "hyperplanes"]:
            return None
        box = next(m for m in self.members if isinstance(m, Box))
        hyp = next(m for m in self.members if isinstance(m, Hyperplanes))
        if hyp.E.shape[0] != 1 or not np.any(hyp.E[0] != 0):
            return None
        return box.lo, box.hi, hyp.E[0], float(hyp.d[0])

    @cached_property
    def _box_wl1(self):
        """``(lo, hi, weights, budget)`` for a 0-containing box cut by a weighted-L1 ball."""
        kinds = sorted(m.kind for m in self.members)
        if kinds != ["box", "weighted_l1"]:
            return None
        box = next(m for m in self.members if isinstance(m, Box))
        wl1 = next(m for m in self.members if isinstance(m, WeightedL1))
        if np.any(box.lo > 0) or np.any(box.hi < 0):
            return None
        return box.lo, box.hi, wl1.weights, wl1.budget

    @cached_property
    def _ball_faces(self):
        balls = [m for m in self.members if isinstance(m, L2Ball)]
        others = [m for m in self.members if not isinstance(m, L2Ball)]
        if len(balls) != 1 or not all(m.polyhedral for m in others):
            return None
        n = self.dim
        parts = [m.rows() for m in others]
        A = np.vstack([p[0] for p in parts] + [np.zeros((0, n))])
        b = np.concatenate([p[1] for p in parts] + [np.zeros(0)])
        E = np.vstack([p[2] for p in parts] + [np.zeros((0, n))])
        d = np.concatenate([p[3] for p in parts] + [np.zeros(0)])
        ball = balls[0]
        try:
            faces = ball_polyhedron_faces(A, b, E, d, ball.center, ball.radius)
        except OverflowError:
            return None
        faces["rows"] = (A, b, E, d)
        faces["ball"] = (ball.center, ball.radius)
        return faces

    def _feasible_rows(self, Y, tol=1e-9):
        """Vectorized membership for the ball-plus-polyhedron structure."""
        A, b, E, d = self._ball_faces["rows"]
        center, radius = self._ball_faces["ball"]
        ok = np.linalg.norm(Y - center, axis=1) <= radius + tol
        if A.shape[0]:
            ok &= np.all(Y @ A.T <= b + tol, axis=1)
        if E.shape[0]:
            ok &= np.all(np.abs(Y @ E.T - d) <= tol, axis=1)
        return ok

    def project(self, z, method="auto"):
        z = self._check(z)
        if self.violation(z) <= 0.0:
            return z.copy()
        if method == "auto":
            if self._box_hyperplane is not None:
                return project_box_hyperplane(*self._box_hyperplane, z)
            if self._ball_faces is not None:
                cands, _ = ball_polyhedron_candidates(self._ball_faces, z=z)
                ok = self._feasible_rows(cands)
                if ok.any():
                    cands = cands[ok]
                    return cands[np.argmin(((cands - z) ** 2).sum(axis=1))].copy()
        elif method != "dykstra":
            raise ValueError(f"unknown projection method {method!r}")
        return self.dykstra(z)

    def project_many(self, Z):
        Z = np.array(np.atleast_2d(Z), dtype=float)
        if Z.shape[1] != self.dim:
            raise ValueError(f"points have dimension {Z.shape[1]}, set has dimension {self.dim}")
        if self._ball_faces is None:
            return super().project_many(Z)
        out = Z.copy()
        bad = np.flatnonzero(~self._feasible_rows(Z, tol=0.0))
        if bad.size == 0:
            return out
        cands, valid = ball_polyhedron_candidates_many(self._ball_faces, Z=Z[bad])
        B, K, n = cands.shape
        valid &= self._feasible_rows(cands.reshape(-1, n)).reshape(B, K)
        dist = np.where(valid, ((cands - Z[bad, None, :]) ** 2).sum(axis=2), np.inf)
        best = np.argmin(dist, axis=1)
        for row, i in enumerate(bad):
            if valid[row].any():
                out[i] = cands[row, best[row]]
            else:
                out[i] = self.dykstra(Z[i])
        return out

    def lmo_many(self, G):
        G = np.array(np.atleast_2d(G), dtype=float)
        if G.shape[1] != self.dim:
            raise ValueError(f"directions have dimension {G.shape[1]}, set has dimension {self.dim}")
        if self.polyhedral or self._ball_faces is None:
            return super().lmo_many(G)
        out = np.empty_like(G)
        scale = np.linalg.norm(G, axis=1)
        zero = ~(scale > 0)
        out[zero] = self.anchor
        idx = np.flatnonzero(~zero)
        if idx.size == 0:
            return out
        Gn = G[idx] / scale[idx, None]
        cands, valid, degenerate = ball_polyhedron_candidates_many(self._ball_faces, G=Gn)
        B, K, n = cands.shape
        valid &= self._feasible_rows(cands.reshape(-1, n)).reshape(B, K)
        score = np.where(valid, np.einsum("bkn,bn->bk", cands, Gn), -np.inf)
        best = np.argmax(score, axis=1)
        for row, i in enumerate(idx):
            if degenerate[row] or not valid[row].any():
                out[i] = self.lmo(G[i])
            else:
                out[i] = cands[row, best[row]]
        return out

    def dykstra(self, z):
        z = self._check(z)
        return dykstra(self.projectors(), z, DYKSTRA_MAX_PASSES, DYKSTRA_TOL,
                       feasible=lambda x: self.violation(x) <= 1e-9)

    def lmo(self, g, method="auto"):
        """Linear maximization; ``method`` is ``"auto"``, ``"simplex"`` or ``"pga"``."""
        g = self._check(g, "direction")
        if method not in ("auto", "simplex", "pga"):
            raise ValueError(f"unknown lmo method {method!r}")
        scale = np.linalg.norm(g)
        if not scale > 0:
            return self.anchor.copy()
        # the maximizer is scale-free; normalizing avoids under/overflow
        g = g / scale
        if self.polyhedral:
            if method == "auto" and self._box_hyperplane is not None and np.all(self._box_hyperplane[2] > 0):
                return _box_hyperplane_lmo(*self._box_hyperplane, g)
            A, b, E, d = self._rows
            return simplex_solve(A, b, E, d, g)
        self._require_bounded()
        if method == "auto":
            if self._box_wl1 is not None:
                return _box_wl1_lmo(*self._box_wl1, g)
            if self._ball_faces is not None:
                cands, degenerate = ball_polyhedron_candidates(self._ball_faces, g=g)
                if degenerate:
                    tilt = np.arange(1.0, self.dim + 1.0)
                    g_t = g + 1e-7 * np.linalg.norm(g) * tilt / np.linalg.norm(tilt)
                    cands, _ = ball_polyhedron_candidates(self._ball_faces, g=g_t)
                ok = self._feasible_rows(cands)
                if ok.any():
                    cands = cands[ok]
                    return cands[np.argmax(cands @ g)].copy()
        elif method == "simplex":
            raise TypeError("simplex needs a polyhedral set")
        return _pga_lmo(self, g, self.anchor, self._member_diameter)

    @cached_property
    def _member_diameter(self):
        ds = []
        for m in self.members:
            try:
                ds.append(m.diameter())
            except (UnboundedError, GeometryError):
                continue
        if not ds:
            raise UnboundedError("no bounded member")
        return min(ds)

    @cached_property
    def _diameter(self):
        if self.polyhedral:
            return _polyhedral_diameter(self)
        self._require_bounded()
        hi = np.array([self.lmo(e)[i] for i, e in enumerate(np.eye(self.dim))])
        lo = np.array([self.lmo(-e)[i] for i, e in enumerate(np.eye(self.dim))])
        return min(float(np.linalg.norm(hi - lo)), self._member_diameter)

    def diameter(self):
        return self._diameter

    def to_dict(self):
        return {"kind": self.kind, "members": [m.to_dict() for m in self.members],
                "anchor": self.anchor.tolist()}


def _box_hyperplane_lmo(lo, hi, e, d, g):
    # equality knapsack with positive coefficients: start at lo, then raise
    # coordinates in order of gain per unit of constraint until d is met
    out = lo.copy()
    remaining = d - float(e @ lo)
    for i in np.argsort(-(g / e), kind="stable"):
        if remaining <= 0:
            break
        amount = min(hi[i] - lo[i], remaining / e[i])
        out[i] += amount
        remaining -= amount * e[i]
    return out


def _box_wl1_lmo(lo, hi, w, budget, g):
    # fractional knapsack: spend the budget on the best gain per unit weight
    out = np.zeros_like(g)
    free = w == 0
    out[free] = np.where(g[free] > 0, hi[free], lo[free])
    remaining = budget
    gain = np.where(free, -1.0, np.abs(g) / np.where(free, 1.0, w))
    for i in np.argsort(-gain, kind="stable"):
        if free[i] or g[i] == 0 or remaining <= 0:
            continue
        cap = hi[i] if g[i] > 0 else -lo[i]
        amount = min(cap, remaining / w[i])
        out[i] = np.sign(g[i]) * amount
        remaining -= amount * w[i]
    return out


def _pga_lmo(cset, g, start, diam):
    """Projected gradient ascent on ``<x, g>`` from ``start``."""
    step = 0.1 * diam / np.linalg.norm(g)
    x = np.array(start, dtype=float)
    moved = np.inf
    for _ in range(PGA_ITERS):
        x_new = cset.project(x + step * g)
        moved = np.linalg.norm(x_new - x)
        x = x_new
        if moved < PGA_TOL:
            return x
    raise ConvergenceError(
        f"projected gradient ascent did not converge (last move {moved:.3g})",
        last=x, residual=moved)


def _polyhedral_diameter(cset):
    A, b, E, d = cset.rows()
    n = cset.dim
    bbox_hi = np.array([simplex_solve(A, b, E, d, e)[i] for i, e in enumerate(np.eye(n))])
    bbox_lo = np.array([simplex_solve(A, b, E, d, -e)[i] for i, e in enumerate(np.eye(n))])
    if n > EXACT_DIAMETER_MAX_DIM:
        return float(np.linalg.norm(bbox_hi - bbox_lo))
    V = vertices(A, b, E, d)
    if len(V) == 0:
        raise InfeasibleError("polytope has no vertices")
    diffs = V[:, None, :] - V[None, :, :]
    return float(np.sqrt((diffs ** 2).sum(-1).max()))


def contains(cset, z, tol=DEFAULT_TOL):
    return cset.contains(z, tol)


def lmo(cset, g):
    return cset.lmo(g)


def project(cset, z):
    return cset.project(z)


def diameter(cset):
    return cset.diameter()


def fw_gap_point(cset, x, g, tol=DEFAULT_TOL):
    """Frank-Wolfe gap ``<lmo(g) - x, g>`` of a feasible point ``x``."""
    x = cset._check(x)
    if not cset.contains(x, tol):
        raise InfeasibleError("gap requested at an infeasible point")
    g = cset._check(g, "direction")
    return float((cset.lmo(g) - x) @ g)


_KINDS = {
    "box": lambda s: Box(s["lo"], s["hi"]),
    "halfspaces": lambda s: Halfspaces(s["A"], s["b"]),
    "hyperplanes": lambda s: Hyperplanes(s["E"], s["d"]),
    "l2ball": lambda s: L2Ball(s["center"], s["radius"]),
    "quadratic_groups": lambda s: QuadraticGroups(
        tuple((tuple(idx), r) for idx, r in s["groups"]), int(s["n"])),
    "weighted_l1": lambda s: WeightedL1(s["weights"], s["budget"]),
    "intersection": lambda s: Intersection([from_dict(m) for m in s["members"]], s["anchor"]),
}


def from_dict(desc):
    """Build a set from its nested description (the inverse of ``to_dict``)."""
    try:
        build = _KINDS[desc["kind"]]
    except KeyError:
        raise ValueError(f"unknown constraint kind in {desc!r}") from None
    try:
        return build(desc)
    except KeyError as exc:
        raise ValueError(f"{desc['kind']} is missing field {exc}") from None
