"""2-D Delaunay triangulation of chart positions, point location, barycentrics.

Bowyer-Watson insertion with a super-triangle bootstrap.  Orientation and
in-circumcircle tests evaluate the float determinant against a forward error
bound and fall back to exact rational arithmetic when inconclusive, so
predicate signs are always correct.  Exactly cocircular quadruples keep the
diagonal chosen by insertion (index) order.
"""

import dataclasses
from fractions import Fraction

import numpy as np
import scipy.spatial

OUTSIDE = -1

_ORIENT_BOUND = 1e-15
_INCIRCLE_BOUND = 1e-14
DEDUP_TOL = 1e-9


class GeometryError(ValueError):
    pass


def _sign(x):
    return int(x > 0) - int(x < 0)


def orient2d(a, b, c):
    """Sign of the (a, b, c) turn: +1 counterclockwise, -1 clockwise, 0 collinear."""
    detl = (b[0] - a[0]) * (c[1] - a[1])
    detr = (b[1] - a[1]) * (c[0] - a[0])
    det = detl - detr
    perm = abs(detl) + abs(detr)
    if abs(det) > _ORIENT_BOUND * perm:
        return _sign(det)
    ax, ay = Fraction(float(a[0])), Fraction(float(a[1]))
    bx, by = Fraction(float(b[0])), Fraction(float(b[1]))
    cx, cy = Fraction(float(c[0])), Fraction(float(c[1]))
    return _sign((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))


def incircle(a, b, c, d):
    """+1 when d lies strictly inside the circumcircle of CCW triangle (a,b,c)."""
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    al = adx * adx + ady * ady
    bl = bdx * bdx + bdy * bdy
    cl = cdx * cdx + cdy * cdy
    det = adx * (bdy * cl - cdy * bl) - ady * (bdx * cl - cdx * bl) + al * (bdx * cdy - cdx * bdy)
    perm = (
        abs(adx) * (abs(bdy * cl) + abs(cdy * bl))
        + abs(ady) * (abs(bdx * cl) + abs(cdx * bl))
        + al * (abs(bdx * cdy) + abs(cdx * bdy))
    )
    if abs(det) > _INCIRCLE_BOUND * perm:
        return _sign(det)
    return _incircle_exact(a, b, c, d)


def _incircle_exact(a, b, c, d):
    dx, dy = Fraction(float(d[0])), Fraction(float(d[1]))
    rows = []
    for p in (a, b, c):
        px, py = Fraction(float(p[0])) - dx, Fraction(float(p[1])) - dy
        rows.append((px, py, px * px + py * py))
    (ax, ay, al), (bx, by, bl), (cx, cy, cl) = rows
    det = ax * (by * cl - cy * bl) - ay * (bx * cl - cx * bl) + al * (bx * cy - cx * by)
    return _sign(det)


def barycentric(verts, p):
    """Affine barycentric coordinates of p wrt a 3-vertex triangle."""
    (x1, y1), (x2, y2), (x3, y3) = np.asarray(verts, dtype=np.float64)
    px, py = float(p[0]), float(p[1])
    det = (x1 - x3) * (y2 - y3) - (x2 - x3) * (y1 - y3)
    if det == 0.0:
        raise GeometryError("zero-area triangle")
    c1 = ((y2 - y3) * (px - x3) + (x3 - x2) * (py - y3)) / det
    c2 = ((y3 - y1) * (px - x3) + (x1 - x3) * (py - y3)) / det
    return np.array([c1, c2, 1.0 - c1 - c2])


@dataclasses.dataclass(eq=False)
class Triangulation:
    points: np.ndarray  # (V, 2) deduplicated chart positions
    dataset_indices: np.ndarray  # (V,) original dataset index per vertex
    triangles: np.ndarray  # (T, 3) vertex ids, CCW
    neighbors: np.ndarray  # (T, 3); neighbors[t, e] faces vertex e, -1 on hull

    def __post_init__(self):
        self._vert2tri = np.full(len(self.points), -1, dtype=np.int64)
        for t in range(len(self.triangles) - 1, -1, -1):
            self._vert2tri[self.triangles[t]] = t
        self._kdtree = None

    @property
    def num_triangles(self):
        return len(self.triangles)

    def hull_vertex_count(self):
        hull = set()
        for t, nbrs in enumerate(self.neighbors):
            for e in range(3):
                if nbrs[e] == -1:
                    tri = self.triangles[t]
                    hull.add(int(tri[(e + 1) % 3]))
                    hull.add(int(tri[(e + 2) % 3]))
        return len(hull)

    def _contains(self, t, p):
        """Min over edges of the orientation sign of p (1 interior, 0 border)."""
        tri = self.triangles[t]
        worst = 1
        for e in range(3):
            v1 = self.points[tri[(e + 1) % 3]]
            v2 = self.points[tri[(e + 2) % 3]]
            s = orient2d(v1, v2, p)
            if s < 0:
                return -1
            worst = min(worst, s)
        return worst

    def locate(self, p, max_steps=None):
        """Index of a triangle containing p (boundary inclusive) or OUTSIDE.

        Walks from the triangle of the nearest vertex; when p sits exactly on
        a shared edge or vertex the lowest adjacent triangle index wins.
        """
        p = np.asarray(p, dtype=np.float64)
        if self._kdtree is None:
            self._kdtree = scipy.spatial.cKDTree(self.points)
        t = int(self._vert2tri[int(self._kdtree.query(p)[1])])
        if max_steps is None:
            max_steps = 4 * len(self.triangles) + 16
        prev = -1
        for _ in range(max_steps):
            tri = self.triangles[t]
            step = -1
            on_border = False
            for e in range(3):
                v1 = self.points[tri[(e + 1) % 3]]
                v2 = self.points[tri[(e + 2) % 3]]
                s = orient2d(v1, v2, p)
                if s < 0:
                    nxt = int(self.neighbors[t, e])
                    if nxt == -1:
                        return OUTSIDE
                    if nxt != prev or step == -1:
                        step = nxt
                elif s == 0:
                    on_border = True
            if step == -1:
                if not on_border:
                    return t
                return self._lowest_containing(t, p)
            prev, t = t, step
        # walk failed to settle; exhaustive fallback keeps the result correct
        for t in range(len(self.triangles)):
            if self._contains(t, p) >= 0:
                return t
        return OUTSIDE

    def _lowest_containing(self, t, p):
        best = t
        seen = {t}
        stack = [t]
        while stack:
            cur = stack.pop()
            for nb in self.neighbors[cur]:
                nb = int(nb)
                if nb == -1 or nb in seen:
                    continue
                seen.add(nb)
                if self._contains(nb, p) >= 0:
                    best = min(best, nb)
                    stack.append(nb)
        return best

    def barycentric_of(self, t, p):
        return barycentric(self.points[self.triangles[t]], p)

    def export_csv(self, path):
        """Triangle list then edge list, for plotting."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("kind,a,b,c\n")
            for tri in self.triangles:
                fh.write(f"triangle,{tri[0]},{tri[1]},{tri[2]}\n")
            edges = set()
            for tri in self.triangles:
                for e in range(3):
                    u, v = int(tri[e]), int(tri[(e + 1) % 3])
                    edges.add((min(u, v), max(u, v)))
            for u, v in sorted(edges):
                fh.write(f"edge,{u},{v},\n")


def _dedup(points, tol):
    tree = scipy.spatial.cKDTree(points)
    parent = np.arange(len(points))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in tree.query_pairs(tol):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(points))])
    keep = np.unique(roots)
    return points[keep], keep


def delaunay(points, dataset_indices=None, dedup_tol=DEDUP_TOL) -> Triangulation:
    """Delaunay triangulation via Bowyer-Watson insertion.

    Points within ``dedup_tol`` collapse to the lowest dataset index.  Raises
    :class:`GeometryError` for fewer than 3 distinct points or an all-collinear
    set.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise GeometryError("points must be (L, 2)")
    if dataset_indices is None:
        dataset_indices = np.arange(len(pts))
    pts, keep = _dedup(pts, dedup_tol)
    dataset_indices = np.asarray(dataset_indices)[keep]
    V = len(pts)
    if V < 3:
        raise GeometryError("need at least 3 distinct points")
    if not any(orient2d(pts[0], pts[1], pts[i]) != 0 for i in range(2, V)):
        raise GeometryError("all points are collinear")

    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    center = (lo + hi) / 2.0
    # far enough that the bootstrap vertices sit outside every circumcircle
    # of real boundary triangles (10x the bbox is not; sliver hull triangles
    # have circumradii far beyond it)
    size = 1e6 * max(hi[0] - lo[0], hi[1] - lo[1], 1.0)
    coords = np.vstack(
        [
            pts,
            [center[0] - 3.0 * size, center[1] - size],
            [center[0] + 3.0 * size, center[1] - size],
            [center[0], center[1] + 3.0 * size],
        ]
    )
    s0, s1, s2 = V, V + 1, V + 2

    tris = [(s0, s1, s2)]
    alive = [True]

    for ip in range(V):
        p = coords[ip]
        live = np.flatnonzero(alive)
        tarr = np.array([tris[t] for t in live])
        a = coords[tarr[:, 0]]
        b = coords[tarr[:, 1]]
        c = coords[tarr[:, 2]]
        adx, ady = a[:, 0] - p[0], a[:, 1] - p[1]
        bdx, bdy = b[:, 0] - p[0], b[:, 1] - p[1]
        cdx, cdy = c[:, 0] - p[0], c[:, 1] - p[1]
        al = adx * adx + ady * ady
        bl = bdx * bdx + bdy * bdy
        cl = cdx * cdx + cdy * cdy
        t1 = bdy * cl - cdy * bl
        t2 = bdx * cl - cdx * bl
        t3 = bdx * cdy - cdx * bdy
        det = adx * t1 - ady * t2 + al * t3
        perm = (
            np.abs(adx) * (np.abs(bdy * cl) + np.abs(cdy * bl))
            + np.abs(ady) * (np.abs(bdx * cl) + np.abs(cdx * bl))
            + al * (np.abs(bdx * cdy) + np.abs(cdx * bdy))
        )
        bad = det > _INCIRCLE_BOUND * perm
        unsure = np.flatnonzero(~bad & (np.abs(det) <= _INCIRCLE_BOUND * perm))
        for u in unsure:
            t = live[u]
            bad[u] = incircle(coords[tris[t][0]], coords[tris[t][1]], coords[tris[t][2]], p) > 0
        cavity = live[bad]
        if len(cavity) == 0:
            # p duplicates an existing vertex to within rounding; dedup should
            # have removed it, but stay safe
            continue
        edge_count = {}
        for t in cavity:
            v0, v1, v2 = tris[t]
            for u, w in ((v0, v1), (v1, v2), (v2, v0)):
                key = (min(u, w), max(u, w))
                if key in edge_count:
                    edge_count.pop(key)
                else:
                    edge_count[key] = (u, w)
            alive[t] = False
        for u, w in edge_count.values():
            if orient2d(coords[u], coords[w], p) > 0:
                tris.append((u, w, ip))
            else:
                tris.append((w, u, ip))
            alive.append(True)

    final = [
        t for t, ok in zip(tris, alive) if ok and max(t) < V
    ]
    if not final:
        raise GeometryError("triangulation collapsed (degenerate input)")
    # canonical deterministic order: smallest vertex first, then sorted rows
    canon = []
    for t in final:
        r = int(np.argmin(t))
        canon.append((t[r], t[(r + 1) % 3], t[(r + 2) % 3]))
    canon.sort()
    triangles = np.array(canon, dtype=np.int64)

    neighbors = np.full((len(triangles), 3), -1, dtype=np.int64)
    edge_owner = {}
    for t, tri in enumerate(triangles):
        for e in range(3):
            u, w = int(tri[(e + 1) % 3]), int(tri[(e + 2) % 3])
            key = (min(u, w), max(u, w))
            if key in edge_owner:
                t2, e2 = edge_owner.pop(key)
                neighbors[t, e] = t2
                neighbors[t2, e2] = t
            else:
                edge_owner[key] = (t, e)

    return Triangulation(pts, dataset_indices, triangles, neighbors)
