"""Penetration depth between airflow/cage volumes and minimal-translation repair.

Every propeller is wrapped in an airflow cylinder (length ``4 r_p``, radius
``r_p + 1 mm``) centred on the motor and aligned with its thrust axis.  The
cylinders are discretised as regular 16-gon prisms that circumscribe the
true cylinder, so a reported depth over-estimates the exact cylinder depth
by at most ``radius * (1 / cos(pi / 16) - 1)`` (about 2 % of the radius).

Penetration depth is computed exactly for these polytopes from the facets
of their Minkowski difference, built from pairwise support points with
qhull.  The repair problem keeps orientations fixed, so every pairwise
Minkowski difference is computed once and each candidate translation only
moves the query point; that makes the penalty landscape cheap enough for a
population-based search.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import ConvexHull

from .design_space import MIRROR, N_INDEPENDENT, N_MOTORS, BodyGeometry, MotorLayout

log = logging.getLogger(__name__)

PRISM_SIDES = 16
AIRFLOW_MARGIN = 1e-3
FEASIBILITY_TOL = 1e-6


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CollisionBody:
    """Convex collision volume: a cylinder (prism hull) or a cuboid.

    ``params`` is ``(radius, length)`` for cylinders and the three
    half-extents for cuboids.  The cylinder axis is the local z-axis.
    """

    kind: str
    position: np.ndarray
    rotation: np.ndarray
    params: tuple

    def __post_init__(self):
        if self.kind not in ("cylinder", "cuboid"):
            raise GeometryError(f"unknown body kind '{self.kind}'")
        expect = 2 if self.kind == "cylinder" else 3
        if len(self.params) != expect or min(self.params) <= 0:
            raise GeometryError(f"degenerate {self.kind} parameters {self.params}")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def local_vertices(self) -> np.ndarray:
        return _local_vertices(self.kind, self.params)

    def shape_vertices(self) -> np.ndarray:
        """Vertices rotated into the world frame but not translated."""
        return self.local_vertices() @ self.rotation.T

    def vertices(self) -> np.ndarray:
        return self.shape_vertices() + self.position

    def translated(self, delta) -> "CollisionBody":
        return CollisionBody(self.kind, self.position + np.asarray(delta, dtype=float), self.rotation, self.params)


@lru_cache(maxsize=256)
def _local_vertices(kind, params):
    if kind == "cuboid":
        h = np.asarray(params)
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return signs * h
    radius, length = params
    ang = 2 * np.pi * (np.arange(PRISM_SIDES) + 0.5) / PRISM_SIDES
    rv = radius / np.cos(np.pi / PRISM_SIDES)
    ring = np.stack([rv * np.cos(ang), rv * np.sin(ang)], axis=1)
    top = np.column_stack([ring, np.full(PRISM_SIDES, 0.5 * length)])
    bottom = np.column_stack([ring, np.full(PRISM_SIDES, -0.5 * length)])
    return np.vstack([top, bottom])


def airflow_cylinder(position, rotation, propeller_radius: float) -> CollisionBody:
    return CollisionBody("cylinder", position, rotation,
                         (propeller_radius + AIRFLOW_MARGIN, 4.0 * propeller_radius))


def cage_cuboid(geom: BodyGeometry) -> CollisionBody:
    return CollisionBody("cuboid", np.zeros(3), np.eye(3), tuple(geom.half_extents))


def build_collision_set(layout: MotorLayout, geom: BodyGeometry | None = None) -> list[CollisionBody]:
    """Six airflow cylinders (motor order) followed by the cage cuboid."""
    geom = geom or BodyGeometry(propeller_radius=layout.propeller_radius)
    bodies = [airflow_cylinder(m.position, m.rotation, layout.propeller_radius) for m in layout.motors]
    bodies.append(cage_cuboid(geom))
    return bodies


def minkowski_facets(a: CollisionBody, b: CollisionBody):
    """Outward facet planes ``n.x + d <= 0`` of ``shape(a) - shape(b)``.

    Positions are ignored; the bodies collide iff ``b.position - a.position``
    lies strictly inside this polytope.
    """
    va, vb = a.shape_vertices(), b.shape_vertices()
    diff = (va[:, None, :] - vb[None, :, :]).reshape(-1, 3)
    hull = ConvexHull(diff)
    eq = hull.equations
    # qhull triangulates facets; merge duplicate planes to keep the sets small
    eq = np.unique(np.round(eq, 12), axis=0)
    return eq[:, :3], eq[:, 3]


def signed_separation(a: CollisionBody, b: CollisionBody) -> float:
    """Positive lower bound on the gap when disjoint, minus the depth otherwise."""
    normals, offsets = minkowski_facets(a, b)
    q = b.position - a.position
    return float(np.max(normals @ q + offsets))


def penetration_depth(a: CollisionBody, b: CollisionBody) -> float:
    """Minimum translation distance that separates ``a`` and ``b`` (0 if disjoint)."""
    return max(0.0, -signed_separation(a, b))


def pairwise_depths(bodies) -> np.ndarray:
    """Symmetric matrix of penetration depths for a body list."""
    n = len(bodies)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = penetration_depth(bodies[i], bodies[j])
    return out


def max_penetration(layout: MotorLayout, geom: BodyGeometry | None = None) -> float:
    return float(np.max(pairwise_depths(build_collision_set(layout, geom))))


@dataclass
class RepairConfig:
    seed: int = 0
    population: int = 30
    generations: int = 80
    mutation: float = 0.7
    crossover: float = 0.9
    box: float = 0.4
    penalty_start: float = 10.0
    penalty_end: float = 1e4
    polish_rounds: int = 12
    polish_starts: int = 4
    margin: float = 1e-7
    tol: float = FEASIBILITY_TOL


@dataclass
class RepairResult:
    translations: np.ndarray
    repaired_layout: MotorLayout
    total_cost: float
    iterations: int
    converged: bool
    max_penetration: float
    message: str = ""
    history: list = field(default_factory=list, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "translations": self.translations.tolist(),
            "total_cost": float(self.total_cost),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "max_penetration": float(self.max_penetration),
            "message": self.message,
            "layout": self.repaired_layout.to_json_dict(),
        }


def _expand(x):
    """9-vector of motor 1-3 translations -> (6, 3) with mirrors."""
    x = np.asarray(x, dtype=float)
    t = x.reshape(x.shape[:-1] + (N_INDEPENDENT, 3))
    return np.concatenate([t, t @ MIRROR], axis=-2)


def _selector(i):
    """(3, 9) matrix giving motor ``i``'s translation from the 9-vector."""
    g = np.zeros((3, 3 * N_INDEPENDENT))
    base = i % N_INDEPENDENT
    g[:, 3 * base:3 * base + 3] = MIRROR if i >= N_INDEPENDENT else np.eye(3)
    return g


class _ConstraintSet:
    """All pair constraints as affine functions of the 9-D translation."""

    def __init__(self, layout: MotorLayout, geom: BodyGeometry):
        bodies = build_collision_set(layout, geom)
        cage = len(bodies) - 1
        rows, offs, seg = [], [], []
        self.pairs = []
        for i in range(N_MOTORS):
            for j in list(range(i + 1, N_MOTORS)) + [cage]:
                n, d = minkowski_facets(bodies[i], bodies[j])
                q0 = bodies[j].position - bodies[i].position
                gi = _selector(i)
                gj = _selector(j) if j != cage else np.zeros_like(gi)
                rows.append(n @ (gj - gi))
                offs.append(n @ q0 + d)
                seg.append(len(n))
                self.pairs.append((i, j))
        self.A = np.vstack(rows)
        self.b = np.concatenate(offs)
        self.starts = np.concatenate([[0], np.cumsum(seg)[:-1]])
        self.seg = np.asarray(seg)
        self.n_pairs = len(seg)

    def separations(self, X):
        """Per-pair signed separation, shape (P, n_pairs) for X of shape (P, 9)."""
        S = np.atleast_2d(X) @ self.A.T + self.b
        return np.maximum.reduceat(S, self.starts, axis=1)

    def depths(self, X):
        return np.maximum(0.0, -self.separations(X))

    def active_rows(self, x, margin):
        """Pick, per pair, the most-separating facet that the 9-D motion can move."""
        s = self.A @ x + self.b
        movable = np.linalg.norm(self.A, axis=1) > 1e-12
        usable = movable | (s >= margin)
        picks = []
        for p in range(self.n_pairs):
            lo, hi = self.starts[p], self.starts[p] + self.seg[p]
            cand = np.where(usable[lo:hi], s[lo:hi], -np.inf)
            picks.append(lo + int(np.argmax(cand)))
        return np.asarray(picks)


def _cost(X):
    t = np.atleast_2d(X).reshape(-1, N_INDEPENDENT, 3)
    return 2.0 * np.linalg.norm(t, axis=2).sum(axis=1)


class _Polisher:
    """Convex subproblem with one separating facet fixed per pair."""

    def __init__(self, n_pairs):
        import cvxpy as cp

        self.x = cp.Variable(3 * N_INDEPENDENT)
        self.A = cp.Parameter((n_pairs, 3 * N_INDEPENDENT))
        self.b = cp.Parameter(n_pairs)
        obj = 2 * sum(cp.norm(self.x[3 * k:3 * k + 3]) for k in range(N_INDEPENDENT))
        self.problem = cp.Problem(cp.Minimize(obj), [self.A @ self.x + self.b >= 0])

    def solve(self, A, b):
        import cvxpy as cp

        self.A.value, self.b.value = A, b
        try:
            self.problem.solve(solver=cp.CLARABEL)
        except cp.error.SolverError:
            return None
        if self.problem.status not in ("optimal", "optimal_inaccurate") or self.x.value is None:
            return None
        return np.asarray(self.x.value, dtype=float)


def _better(c1, x1, c2, x2, rtol=1e-9):
    """Lower cost wins; near-ties go to the lexicographically smaller vector."""
    if x2 is None:
        return True
    if abs(c1 - c2) > rtol * max(1.0, abs(c2)):
        return c1 < c2
    return tuple(np.round(x1, 12)) < tuple(np.round(x2, 12))


def repair(layout: MotorLayout, geom: BodyGeometry | None = None, cfg: RepairConfig | None = None) -> RepairResult:
    """Translate motors as little as possible so that no volumes collide.

    Minimises the summed translation norm over all six motors subject to
    zero penetration between every pair of airflow cylinders and between
    each cylinder and the cage, with motors 4-6 moving as mirrors of 1-3.
    Orientations and spins are never touched.
    """
    geom = geom or BodyGeometry(propeller_radius=layout.propeller_radius)
    cfg = cfg or RepairConfig()
    cons = _ConstraintSet(layout, geom)
    zero = np.zeros(3 * N_INDEPENDENT)

    if np.max(cons.depths(zero)) < cfg.tol and max_penetration(layout, geom) < cfg.tol:
        return RepairResult(np.zeros((N_MOTORS, 3)), layout, 0.0, 0, True, 0.0, "already feasible")

    rng = np.random.default_rng(cfg.seed)
    dim = 3 * N_INDEPENDENT
    P = cfg.population
    pop = rng.uniform(-cfg.box, cfg.box, size=(P, dim))
    pop[: P // 2] = rng.normal(scale=0.05, size=(P // 2, dim))
    pop[0] = 0.0
    G = max(cfg.generations, 1)
    weights = np.geomspace(cfg.penalty_start, cfg.penalty_end, G)

    def energy(X, w):
        return _cost(X) + w * cons.depths(X).sum(axis=1)

    for g in range(G):
        w = weights[g]
        fit = energy(pop, w)
        idx = np.array([rng.choice(P - 1, 3, replace=False) for _ in range(P)])
        idx += idx >= np.arange(P)[:, None]
        mutant = pop[idx[:, 0]] + cfg.mutation * (pop[idx[:, 1]] - pop[idx[:, 2]])
        mask = rng.random((P, dim)) < cfg.crossover
        mask[np.arange(P), rng.integers(0, dim, P)] = True
        trial = np.clip(np.where(mask, mutant, pop), -cfg.box, cfg.box)
        better = energy(trial, w) <= fit
        pop[better] = trial[better]

    final = energy(pop, weights[-1])
    order = np.argsort(final, kind="stable")
    starts = [pop[i].copy() for i in order[: cfg.polish_starts]] + [zero]

    polisher = _Polisher(cons.n_pairs)
    best_x, best_c, iters, history = None, np.inf, 0, []
    for x0 in starts:
        x, picked = x0, None
        for _ in range(cfg.polish_rounds):
            rows = cons.active_rows(x, cfg.margin)
            if picked is not None and np.array_equal(rows, picked):
                break
            picked = rows
            sol = polisher.solve(cons.A[rows], cons.b[rows] - cfg.margin)
            iters += 1
            if sol is None:
                break
            x = sol
        if np.max(cons.depths(x)) < cfg.tol:
            c = float(_cost(x)[0])
            history.append(c)
            if _better(c, x, best_c, best_x):
                best_x, best_c = x, c

    if best_x is None:
        # no polish succeeded: fall back to the best penalised DE member
        x = pop[order[0]]
        moved = layout.with_positions(layout.positions + _expand(x))
        depth = max_penetration(moved, geom)
        return RepairResult(_expand(x), moved, float(_cost(x)[0]), iters + G, False, depth,
                            "no feasible translation found", history)

    moved = layout.with_positions(layout.positions + _expand(best_x))
    depth = max_penetration(moved, geom)
    ok = depth < cfg.tol
    if not ok:
        log.warning("repair verification failed: residual depth %.3g m", depth)
    return RepairResult(_expand(best_x), moved, best_c, iters + G, ok, depth,
                        "repaired" if ok else "residual penetration above tolerance", history)
