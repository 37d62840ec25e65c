"""Independent reference implementations used only by the tests."""
import numpy as np

from aforge.geometry_repair import PRISM_SIDES


def fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    r = np.sqrt(1 - z * z)
    phi = np.pi * (1 + 5 ** 0.5) * k
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _normals_edges(body):
    R = body.rotation
    if body.kind == "cuboid":
        return R.T.copy(), R.T.copy()
    ang = 2 * np.pi * np.arange(PRISM_SIDES) / PRISM_SIDES
    side = np.column_stack([np.cos(ang), np.sin(ang), np.zeros_like(ang)])
    ring = np.column_stack([-np.sin(ang), np.cos(ang), np.zeros_like(ang)])
    ez = np.array([[0.0, 0.0, 1.0]])
    return np.vstack([side, ez]) @ R.T, np.vstack([ring, ez]) @ R.T


def sat_axes(a, b):
    na, ea = _normals_edges(a)
    nb, eb = _normals_edges(b)
    cross = np.cross(ea[:, None, :], eb[None, :, :]).reshape(-1, 3)
    axes = np.vstack([na, nb, cross])
    norm = np.linalg.norm(axes, axis=1)
    axes = axes[norm > 1e-9] / norm[norm > 1e-9, None]
    return axes


def directional_depth(a, b, n_dirs=4000):
    """Smallest translation of ``b`` along sampled directions that separates it.

    For each direction the separating magnitude is exact under the
    separating-axis theorem, so the only approximation is the direction grid.
    """
    axes = sat_axes(a, b)
    pa = a.vertices() @ axes.T
    pb = b.vertices() @ axes.T
    a_lo, a_hi = pa.min(0), pa.max(0)
    b_lo, b_hi = pb.min(0), pb.max(0)
    if np.any(a_hi < b_lo) or np.any(b_hi < a_lo):
        return 0.0
    dirs = fibonacci_sphere(n_dirs)
    proj = dirs @ axes.T  # (dirs, axes)
    with np.errstate(divide="ignore"):
        s_pos = np.where(proj > 1e-12, (a_hi - b_lo) / proj, np.inf)
        s_neg = np.where(proj < -1e-12, (b_hi - a_lo) / -proj, np.inf)
    s = np.minimum(s_pos, s_neg).min(axis=1)
    return float(s.min())


def dense_gate_walk(p0, p1, center, half_width, n=4001):
    """Classify a segment against a gate by walking it on a fine grid."""
    t = np.linspace(0.0, 1.0, n)
    pts = p0[None] + t[:, None] * (p1 - p0)[None]
    s = pts[:, 0] - center[0]
    if not (s[0] < 0 <= s[-1]):
        return 0
    k = int(np.argmax(s >= 0))
    # bisect inside the bracketing grid cell
    lo, hi = t[k - 1], t[k]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if p0[0] + mid * (p1[0] - p0[0]) - center[0] >= 0:
            hi = mid
        else:
            lo = mid
    hit = p0 + hi * (p1 - p0)
    inside = abs(hit[1] - center[1]) <= half_width and abs(hit[2] - center[2]) <= half_width
    return 1 if inside else -1


def separation_gap(a, b):
    """Largest projected gap over the separating axes; positive iff disjoint.

    It is a lower bound on the Euclidean distance between the two bodies.
    """
    axes = sat_axes(a, b)
    pa = a.vertices() @ axes.T
    pb = b.vertices() @ axes.T
    return float(np.max(np.maximum(pb.min(0) - pa.max(0), pa.min(0) - pb.max(0))))
