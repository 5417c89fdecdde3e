"""Domains, collocation point generation, and nearest-seed assignment."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29)


class DegenerateDomainError(ValueError):
    """Rejection sampling found (almost) no point inside the domain."""


class GeometryFileError(ValueError):
    """Malformed polygon file; message carries the offending line number."""


# ---------------------------------------------------------------------- Halton


def digit_permutation(base: int, seed: int | None) -> np.ndarray:
    """Digit permutation for a generalized Halton sequence.

    ``seed=None`` gives the identity. Zero always maps to zero so that every
    index keeps a finite digit expansion.
    """
    perm = np.arange(base)
    if seed is not None:
        rng = np.random.default_rng([int(seed), base])
        perm[1:] = rng.permutation(perm[1:])
    return perm


def halton(index: int, base: int, perm=None) -> float:
    """Radical inverse of ``index`` in ``base`` (optionally digit-permuted)."""
    if index < 1:
        raise ValueError("Halton index starts at 1")
    num, den = 0, 1
    while index > 0:
        index, digit = divmod(index, base)
        if perm is not None:
            digit = int(perm[digit])
        num = num * base + digit
        den *= base
    return num / den


def radical_inverse(indices: np.ndarray, base: int, perm=None) -> np.ndarray:
    """Vectorised :func:`halton` over an integer array."""
    idx = np.asarray(indices, dtype=np.int64).copy()
    num = np.zeros_like(idx)
    den = np.ones_like(idx)
    perm = None if perm is None else np.asarray(perm, dtype=np.int64)
    while np.any(idx > 0):
        active = idx > 0
        digit = idx % base
        if perm is not None:
            digit = perm[digit]
        num = np.where(active, num * base + digit, num)
        den = np.where(active, den * base, den)
        idx //= base
    return num / den


def halton_sequence(n: int, dim: int, start: int = 1, scramble_seed: int | None = None) -> np.ndarray:
    """Points ``start .. start+n-1`` of the ``dim``-dimensional Halton sequence."""
    idx = np.arange(start, start + n, dtype=np.int64)
    cols = [
        radical_inverse(idx, b, None if scramble_seed is None else digit_permutation(b, scramble_seed))
        for b in PRIMES[:dim]
    ]
    return np.stack(cols, axis=1)


# --------------------------------------------------------------------- domains


@dataclass(frozen=True)
class Segment:
    """Boundary piece: a straight line ``p0 -> p1`` or a circular arc."""

    tag: str
    kind: str
    p0: tuple = ()
    p1: tuple = ()
    center: tuple = ()
    radius: float = 0.0
    theta0: float = 0.0
    theta1: float = 0.0

    @property
    def length(self) -> float:
        if self.kind == "line":
            return float(np.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1]))
        return self.radius * abs(self.theta1 - self.theta0)

    def at(self, s: np.ndarray) -> np.ndarray:
        """Points at fractional arc length ``s`` in [0, 1]."""
        s = np.asarray(s, dtype=float)[:, None]
        if self.kind == "line":
            p0, p1 = np.asarray(self.p0), np.asarray(self.p1)
            return p0 + s * (p1 - p0)
        th = self.theta0 + s[:, 0] * (self.theta1 - self.theta0)
        c = np.asarray(self.center)
        return np.stack([c[0] + self.radius * np.cos(th), c[1] + self.radius * np.sin(th)], axis=1)


@dataclass(frozen=True)
class Hole:
    center: tuple
    radius: float


@dataclass
class Domain:
    kind: str  # rectangle | polygon | rectangle-with-circular-holes | space-time-box
    bbox: tuple  # ((lo, hi), (lo, hi))
    segments: list
    vertices: np.ndarray | None = None
    holes: tuple = ()

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        (x0, x1), (y0, y1) = self.bbox
        inside = (p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1)
        if self.vertices is not None:
            inside &= _point_in_polygon(p, self.vertices)
        for h in self.holes:
            d2 = (p[:, 0] - h.center[0]) ** 2 + (p[:, 1] - h.center[1]) ** 2
            inside &= d2 > h.radius**2
        return inside

    @property
    def tags(self) -> list[str]:
        out = []
        for s in self.segments:
            if s.tag not in out:
                out.append(s.tag)
        return out

    def validate(self) -> None:
        """Check holes sit strictly inside the outer region."""
        for k, h in enumerate(self.holes, 1):
            ring = Segment("", "arc", center=h.center, radius=h.radius * (1 + 1e-9),
                           theta0=0.0, theta1=2 * np.pi).at(np.linspace(0, 1, 64, endpoint=False))
            outer = Domain(self.kind, self.bbox, [], self.vertices, ())
            if not np.all(outer.contains(ring)):
                raise ValueError(f"hole {k} is not strictly inside the domain")


def _point_in_polygon(p: np.ndarray, verts: np.ndarray) -> np.ndarray:
    # even-odd rule, horizontal ray towards +x
    x, y = p[:, 0:1], p[:, 1:2]
    xa, ya = verts[:, 0], verts[:, 1]
    xb, yb = np.roll(xa, -1), np.roll(ya, -1)
    straddle = (ya > y) != (yb > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = xa + (y - ya) * (xb - xa) / (yb - ya)
    hits = straddle & (x < x_cross)
    return (hits.sum(axis=1) % 2) == 1


def rectangle(lo, hi, tags=("bottom-edge", "right-edge", "top-edge", "left-edge")) -> Domain:
    (x0, y0), (x1, y1) = lo, hi
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    segs = [Segment(t, "line", corners[k], corners[(k + 1) % 4]) for k, t in enumerate(tags)]
    return Domain("rectangle", ((x0, x1), (y0, y1)), segs)


def space_time_box(t_range=(0.0, 1.0), x_range=(0.0, 1.0)) -> Domain:
    """(t, x) box; edges tagged initial (t=t0), final, left (x=x0), right (x=x1)."""
    (t0, t1), (x0, x1) = t_range, x_range
    segs = [
        Segment("initial", "line", (t0, x0), (t0, x1)),
        Segment("right", "line", (t0, x1), (t1, x1)),
        Segment("final", "line", (t1, x1), (t1, x0)),
        Segment("left", "line", (t1, x0), (t0, x0)),
    ]
    return Domain("space-time-box", ((t0, t1), (x0, x1)), segs)


def _hole_segments(holes, split_top_quarter: bool) -> list:
    segs = []
    for k, h in enumerate(holes, 1):
        if split_top_quarter:
            segs.append(Segment(f"hole-{k}-top", "arc", center=h.center, radius=h.radius,
                                theta0=np.pi / 4, theta1=3 * np.pi / 4))
            segs.append(Segment(f"hole-{k}", "arc", center=h.center, radius=h.radius,
                                theta0=3 * np.pi / 4, theta1=9 * np.pi / 4))
        else:
            segs.append(Segment(f"hole-{k}", "arc", center=h.center, radius=h.radius,
                                theta0=0.0, theta1=2 * np.pi))
    return segs


def plate_with_holes(lo, hi, holes, split_top_quarter: bool = False, check: bool = True) -> Domain:
    """Rectangle minus circular holes; hole arcs tagged ``hole-k`` (and ``hole-k-top``)."""
    holes = tuple(h if isinstance(h, Hole) else Hole(tuple(h[0]), float(h[1])) for h in holes)
    base = rectangle(lo, hi)
    dom = Domain("rectangle-with-circular-holes", base.bbox,
                 base.segments + _hole_segments(holes, split_top_quarter), None, holes)
    if check:
        dom.validate()
    return dom


def polygon(vertices, holes=(), check: bool = True) -> Domain:
    verts = np.asarray(vertices, dtype=float)
    if len(verts) < 3:
        raise ValueError("a polygon needs at least 3 vertices")
    holes = tuple(h if isinstance(h, Hole) else Hole(tuple(h[0]), float(h[1])) for h in holes)
    segs = [Segment("outer", "line", tuple(verts[k]), tuple(verts[(k + 1) % len(verts)]))
            for k in range(len(verts))]
    bbox = ((verts[:, 0].min(), verts[:, 0].max()), (verts[:, 1].min(), verts[:, 1].max()))
    dom = Domain("polygon", bbox, segs + _hole_segments(holes, False), verts, holes)
    if check:
        if _self_intersects(verts):
            raise ValueError("polygon is self-intersecting")
        dom.validate()
    return dom


def _self_intersects(v: np.ndarray) -> bool:
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            c, d = v[j], v[(j + 1) % n]
            if _segments_cross(a, b, c, d):
                return True
    return False


def _segments_cross(a, b, c, d) -> bool:
    def orient(p, q, r):
        return np.sign((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))

    return orient(a, b, c) * orient(a, b, d) < 0 and orient(c, d, a) * orient(c, d, b) < 0


def load_polygon_file(path) -> Domain:
    """Read ``x y`` vertex lines and ``hole cx cy r`` lines ('#' comments)."""
    verts, holes = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "hole":
                if len(parts) != 4:
                    raise ValueError("expected 'hole cx cy r'")
                holes.append(Hole((float(parts[1]), float(parts[2])), float(parts[3])))
            else:
                if len(parts) != 2:
                    raise ValueError("expected 'x y'")
                verts.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise GeometryFileError(f"{path}:{lineno}: {exc}") from None
    try:
        return polygon(verts, holes)
    except ValueError as exc:
        raise GeometryFileError(f"{path}: {exc}") from None


def write_polygon_file(path, vertices, holes=()) -> None:
    lines = [f"{x:.17g} {y:.17g}" for x, y in vertices]
    lines += [f"hole {h.center[0]:.17g} {h.center[1]:.17g} {h.radius:.17g}" for h in holes]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------- sampling


@dataclass
class PointSet:
    points: np.ndarray
    role: str  # interior | boundary | seed
    tags: np.ndarray | None = None

    def __len__(self):
        return len(self.points)

    def head(self, n: int, role: str | None = None) -> "PointSet":
        tags = None if self.tags is None else self.tags[:n]
        return PointSet(self.points[:n], role or self.role, tags)


def sample_interior(domain: Domain, n: int, generator: str = "halton", seed: int | None = 0,
                    scramble_seed: int | None = None) -> PointSet:
    """``n`` points inside ``domain`` by rejection from the bounding box.

    Halton indices advance monotonically across rejected candidates, so the
    accepted points are a subsequence of one Halton stream.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lo = np.array([b[0] for b in domain.bbox])
    span = np.array([b[1] - b[0] for b in domain.bbox])
    rng = np.random.default_rng(seed)
    accepted, n_acc, tried, next_index = [], 0, 0, 1
    while n_acc < n:
        block = max(2 * (n - n_acc), 1024)
        if generator == "halton":
            unit = halton_sequence(block, 2, start=next_index, scramble_seed=scramble_seed)
            next_index += block
        elif generator == "uniform-random":
            unit = rng.random((block, 2))
        else:
            raise ValueError(f"unknown generator {generator!r}")
        cand = lo + unit * span
        keep = cand[domain.contains(cand)]
        accepted.append(keep)
        n_acc += len(keep)
        tried += block
        if tried >= 1_000_000 and n_acc / tried < 1e-4:
            raise DegenerateDomainError(
                f"acceptance rate {n_acc / tried:.2e} over {tried} candidates"
            )
    return PointSet(np.concatenate(accepted)[:n], "interior")


def sample_boundary(domain: Domain, n: int, seed: int | None = 0, tags=None,
                    generator: str = "uniform-random") -> PointSet:
    """``n`` points uniform in arc length over the selected boundary segments.

    ``tags`` restricts sampling to segments with those tags (e.g. the
    ``initial`` face of a space-time box). Each point carries its segment tag.
    """
    segs = [s for s in domain.segments if tags is None or s.tag in tags]
    if not segs:
        raise ValueError(f"no boundary segments match {tags!r}")
    lengths = np.array([s.length for s in segs])
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    if generator == "uniform-random":
        u = np.random.default_rng(seed).random(n)
    elif generator == "halton":
        u = radical_inverse(np.arange(1, n + 1), 2)
    else:
        raise ValueError(f"unknown generator {generator!r}")
    s = u * cum[-1]
    which = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(segs) - 1)
    pts = np.empty((n, 2))
    out_tags = np.empty(n, dtype=object)
    for k, seg in enumerate(segs):
        mask = which == k
        if np.any(mask):
            local = (s[mask] - cum[k]) / lengths[k]
            pts[mask] = seg.at(np.clip(local, 0.0, 1.0))
            out_tags[mask] = seg.tag
    return PointSet(pts, "boundary", out_tags.astype(str))


# ----------------------------------------------------------------- nearest seed


@dataclass
class NearestSeedIndex:
    rho: np.ndarray  # collocation index -> seed index
    n_seeds: int = field(default=0)

    def __len__(self):
        return len(self.rho)


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ((a - b) ** 2).sum(axis=-1)


def nearest_seed_bruteforce(collocation, seeds) -> NearestSeedIndex:
    """O(N S) scan; ``argmin`` picks the lowest seed index on ties."""
    x = _points(collocation)
    s = _points(seeds)
    rho = np.empty(len(x), dtype=np.int64)
    step = max(1, 4_000_000 // max(len(s), 1))
    for a in range(0, len(x), step):
        d = _sq_dist(x[a : a + step, None, :], s[None, :, :])
        rho[a : a + step] = np.argmin(d, axis=1)
    return NearestSeedIndex(rho, len(s))


def nearest_seed(collocation, seeds, k: int = 4) -> NearestSeedIndex:
    """Exact nearest seed via a k-d tree, matching the brute-force tie rule.

    The tree proposes ``k`` candidates. When the k-th candidate is not
    clearly farther than the first, the point is resolved by a radius query,
    so the chosen seed is always the lowest-index minimiser of the same
    squared-distance arithmetic the brute-force scan uses.
    """
    x = _points(collocation)
    s = _points(seeds)
    if len(x) == 0 or len(s) == 0:
        raise ValueError("collocation and seed sets must be non-empty")
    if x.shape[1] != s.shape[1]:
        raise ValueError("dimension mismatch between collocation points and seeds")
    k = min(k, len(s))
    tree = cKDTree(s)
    dist, cand = tree.query(x, k=k)
    if k == 1:
        dist, cand = dist[:, None], cand[:, None]
    d2 = _sq_dist(x[:, None, :], s[cand])
    best = d2.min(axis=1)
    # lowest index among exact minimisers within the candidate list
    masked = np.where(d2 == best[:, None], cand, np.iinfo(np.int64).max)
    rho = masked.min(axis=1)
    if k < len(s):
        ambiguous = np.nonzero(dist[:, -1] <= dist[:, 0] * (1 + 1e-9) + 1e-300)[0]
        for j in ambiguous:
            r = dist[j, 0] * (1 + 1e-9) + 1e-300
            near = np.array(sorted(tree.query_ball_point(x[j], r)), dtype=np.int64)
            dj = _sq_dist(x[j][None, :], s[near])
            rho[j] = near[dj == dj.min()].min()
    return NearestSeedIndex(rho.astype(np.int64), len(s))


def _points(p) -> np.ndarray:
    return np.asarray(p.points if isinstance(p, PointSet) else p, dtype=float)
