"""Random obstacle fields: the quenched heterogeneity f(x, y).

The field is a sum of identical smooth radial bumps placed at random
centers.  Centers live in R^n x [r1, inf) so no obstacle support crosses
the starting line {y = 0}.  Sampling is windowed and counter-based: every
unit cell of a fixed decomposition of space owns an independent keyed RNG
stream, so two windows that share cells produce identical obstacles in the
intersection, regardless of evaluation order or thread count.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import WindowError

# splitmix64 constants, used to derive per-cell RNG keys
_SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM64_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x):
    """One splitmix64 scrambling round (vectorized, wrapping uint64)."""
    with np.errstate(over="ignore"):
        x = (x + _SM64_GAMMA).astype(np.uint64)
        x = ((x ^ (x >> np.uint64(30))) * _SM64_M1).astype(np.uint64)
        x = ((x ^ (x >> np.uint64(27))) * _SM64_M2).astype(np.uint64)
        return (x ^ (x >> np.uint64(31))).astype(np.uint64)


def cell_key(seed, coords):
    """64-bit key for an integer cell coordinate tuple, mixed with the seed.

    Used to seed one Philox stream per cell; disjoint cells get
    independent streams and the same cell always gets the same stream.
    """
    h = _splitmix64(np.uint64(np.int64(seed)))
    for c in coords:
        h = _splitmix64(h ^ np.uint64(np.int64(c) + np.int64(2**31)))
    return h


def _cell_generator(seed, coords, stream=0):
    key = np.array([cell_key(seed, coords), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class ObstacleShape:
    """Smooth compactly supported radial bump in R^{n+1}.

    phi(z) = -amplitude * exp(-s t^2 / (1 - t^2)),  t = |z| / r1  (t < 1)
    phi(z) = 0 for |z| >= r1.

    The amplitude is fixed so that phi <= -1 on the closed inf-ball of
    radius r0, whose farthest point from the origin is the corner at
    Euclidean distance sqrt(n+1) * r0.  This forces r1 > sqrt(n+1) * r0
    strictly (at equality the required amplitude diverges).
    """

    n: int
    r0: float
    r1: float
    smoothness: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension n must be >= 1")
        if not (self.r0 > 0 and self.r1 > 0 and self.smoothness > 0):
            raise ValueError("r0, r1, smoothness must be positive")
        corner = math.sqrt(self.n + 1) * self.r0
        if self.r1 <= corner:
            raise ValueError(
                f"support radius r1={self.r1} must exceed sqrt(n+1)*r0={corner:.6g} "
                "so the core condition and the support condition are compatible"
            )

    @property
    def corner_t(self):
        return math.sqrt(self.n + 1) * self.r0 / self.r1

    @property
    def amplitude(self):
        # 1e-9 relative pad keeps phi <= -1 on the whole core robust to
        # rounding of downstream grid evaluations.
        return (1.0 + 1e-9) / self._bump(np.asarray(self.corner_t)).item()

    def _bump(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        inside = t < 1.0
        ti = t[inside]
        out[inside] = np.exp(-self.smoothness * ti * ti / (1.0 - ti * ti))
        return out

    def _bump_prime(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        inside = t < 1.0
        ti = t[inside]
        one = 1.0 - ti * ti
        out[inside] = (
            np.exp(-self.smoothness * ti * ti / one)
            * (-self.smoothness)
            * 2.0
            * ti
            / (one * one)
        )
        return out

    def phi_radial(self, r):
        """phi as a function of the Euclidean distance r = |z|."""
        return -self.amplitude * self._bump(np.asarray(r, dtype=float) / self.r1)

    def phi(self, dx, dy):
        """phi at offset z = (dx, dy); dx has shape (..., n) or (...) for n=1."""
        dx = np.asarray(dx, dtype=float)
        dy = np.asarray(dy, dtype=float)
        if dx.ndim == dy.ndim:  # scalar lateral coordinate (n = 1)
            r2 = dx * dx + dy * dy
        else:
            r2 = np.sum(dx * dx, axis=-1) + dy * dy
        return self.phi_radial(np.sqrt(r2))

    def dphi_dy(self, dx, dy):
        """Height derivative of phi at offset (dx, dy)."""
        dx = np.asarray(dx, dtype=float)
        dy = np.asarray(dy, dtype=float)
        if dx.ndim == dy.ndim:
            r2 = dx * dx + dy * dy
        else:
            r2 = np.sum(dx * dx, axis=-1) + dy * dy
        r = np.sqrt(r2)
        t = r / self.r1
        with np.errstate(invalid="ignore", divide="ignore"):
            grad = -self.amplitude * self._bump_prime(t) * dy / (r * self.r1)
        return np.where(r > 0, grad, 0.0)

    def dphi_dy_max(self):
        """Upper bound for sup |d phi / d y| (fine grid plus safety factor)."""
        t = np.linspace(0.0, 1.0, 200001)
        peak = np.max(np.abs(self._bump_prime(t)))
        return 1.05 * self.amplitude * peak / self.r1


@dataclass(frozen=True)
class StrengthDistribution:
    """Obstacle strength law with a closed-form upper tail.

    kinds: "constant" (a=value), "uniform" (a=lo, b=hi), "exponential"
    (a=scale).  All strengths are strictly positive.
    """

    kind: str
    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "uniform", "exponential"):
            raise ValueError(f"unknown strength distribution kind {self.kind!r}")
        if self.kind == "uniform":
            if not (0.0 < self.a < self.b):
                raise ValueError("uniform strengths need 0 < lo < hi")
        elif self.a <= 0.0:
            raise ValueError("strength parameter must be positive")

    def tail(self, fbar):
        """P(f1 >= fbar), exact."""
        if self.kind == "constant":
            return 1.0 if fbar <= self.a else 0.0
        if self.kind == "uniform":
            if fbar <= self.a:
                return 1.0
            if fbar >= self.b:
                return 0.0
            return (self.b - fbar) / (self.b - self.a)
        return math.exp(-max(fbar, 0.0) / self.a)

    def max_fbar_with_tail(self, floor):
        """Largest threshold fbar with tail(fbar) >= floor."""
        if not (0.0 < floor <= 1.0):
            raise ValueError("tail floor must lie in (0, 1]")
        if self.kind == "constant":
            return self.a
        if self.kind == "uniform":
            return self.b - floor * (self.b - self.a)
        return -self.a * math.log(floor)

    def sample(self, rng, size):
        if self.kind == "constant":
            return np.full(size, self.a)
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size)
        return rng.exponential(self.a, size)


@dataclass(frozen=True)
class Window:
    """Axis-aligned sampling box in R^n x [r1, inf)."""

    x_lo: tuple
    x_hi: tuple
    y_lo: float
    y_hi: float

    @property
    def n(self):
        return len(self.x_lo)

    @property
    def volume(self):
        v = self.y_hi - self.y_lo
        for lo, hi in zip(self.x_lo, self.x_hi):
            v *= hi - lo
        return v

    def validate(self, shape):
        if len(self.x_lo) != len(self.x_hi):
            raise WindowError("window lateral bounds have mismatched dimensions")
        for lo, hi in zip(self.x_lo, self.x_hi):
            if not hi > lo:
                raise WindowError("window has empty lateral extent")
        if not self.y_hi > self.y_lo:
            raise WindowError("window has empty vertical extent")
        if self.y_lo < shape.r1 - 1e-12:
            raise WindowError(
                f"window starts at y={self.y_lo} below r1={shape.r1}: obstacles "
                "must not cross the starting line y = 0"
            )


def _expand_ranges(starts, ends):
    """CSR range expansion: row index and flat position arrays."""
    counts = ends - starts
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    rows = np.repeat(np.arange(len(starts)), counts)
    shift = np.repeat(starts - np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
    return rows, np.arange(total) + shift


class _HashGrid:
    """Uniform hash grid over obstacle centers, cell size >= 2 * r1.

    Queries return (query_index, obstacle_index) edge arrays for all
    obstacles within Euclidean distance r1 of each query point; with cell
    size 2 * r1 the 3-neighborhood per axis is always sufficient.
    """

    def __init__(self, points, cell):
        self.cell = cell
        self.dim = points.shape[1]
        if len(points) == 0:
            self.ids_sorted = np.empty(0, dtype=np.int64)
            self.order = np.empty(0, dtype=np.int64)
            return
        cells = np.floor(points / cell).astype(np.int64)
        self.base = cells.min(axis=0) - 1
        self.dims = cells.max(axis=0) - self.base + 3
        ids = self._linearize(cells)
        self.order = np.argsort(ids, kind="stable")
        self.ids_sorted = ids[self.order]
        offsets = np.stack(
            np.meshgrid(*([np.array([-1, 0, 1])] * self.dim), indexing="ij"), axis=-1
        ).reshape(-1, self.dim)
        self.offsets = offsets

    def _linearize(self, cells):
        rel = cells - self.base
        out = np.zeros(len(cells), dtype=np.int64)
        oob = np.zeros(len(cells), dtype=bool)
        for d in range(self.dim):
            oob |= (rel[:, d] < 0) | (rel[:, d] >= self.dims[d])
            out = out * self.dims[d] + np.clip(rel[:, d], 0, self.dims[d] - 1)
        out[oob] = -1
        return out

    def query(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if len(self.ids_sorted) == 0 or len(points) == 0:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        cells = np.floor(points / self.cell).astype(np.int64)
        rows_all = []
        obs_all = []
        for off in self.offsets:
            ids = self._linearize(cells + off)
            starts = np.searchsorted(self.ids_sorted, ids, side="left")
            ends = np.searchsorted(self.ids_sorted, ids, side="right")
            valid = ids >= 0
            starts = np.where(valid, starts, 0)
            ends = np.where(valid, ends, 0)
            rows, flat = _expand_ranges(starts, ends)
            rows_all.append(rows)
            obs_all.append(self.order[flat])
        return np.concatenate(rows_all), np.concatenate(obs_all)


@dataclass
class ObstacleField:
    """A sampled obstacle configuration plus the shared bump shape.

    ``period`` (torus side lengths, lateral only) switches evaluation to
    wrapped distances; it is set by the torus sampler used for the
    simulations.  Fields are immutable after construction: evaluation is
    safe under concurrent reads.
    """

    shape: ObstacleShape
    centers_x: np.ndarray  # (m, n)
    centers_y: np.ndarray  # (m,)
    strengths: np.ndarray  # (m,)
    window: Window
    lam: float
    seed: int
    dist: StrengthDistribution
    kind: str = "poisson"
    period: tuple | None = None
    _grid: _HashGrid | None = field(default=None, repr=False, compare=False)
    _ghost_parent: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.centers_x = np.atleast_2d(np.asarray(self.centers_x, dtype=float))
        if self.centers_x.size == 0:
            self.centers_x = self.centers_x.reshape(0, self.shape.n)
        if self.centers_x.shape[0] != len(np.atleast_1d(self.centers_y)):
            self.centers_x = self.centers_x.T
        self.centers_y = np.asarray(self.centers_y, dtype=float)
        self.strengths = np.asarray(self.strengths, dtype=float)

    @property
    def n(self):
        return self.shape.n

    @property
    def count(self):
        return len(self.centers_y)

    def _ensure_grid(self):
        if self._grid is not None:
            return
        r1 = self.shape.r1
        px = self.centers_x
        py = self.centers_y
        parent = np.arange(self.count)
        if self.period is not None and self.count:
            # ghost copies across each lateral face make wrapped lookups exact
            gx = [px]
            gy = [py]
            gp = [parent]
            for d in range(self.n):
                side = self.period[d]
                cur_x = np.concatenate(gx)
                cur_y = np.concatenate(gy)
                cur_p = np.concatenate(gp)
                lo = cur_x[:, d] < r1
                hi = cur_x[:, d] > side - r1
                for mask, shift in ((lo, side), (hi, -side)):
                    if mask.any():
                        xx = cur_x[mask].copy()
                        xx[:, d] += shift
                        gx.append(xx)
                        gy.append(cur_y[mask])
                        gp.append(cur_p[mask])
                px = np.concatenate(gx)
                py = np.concatenate(gy)
                parent = np.concatenate(gp)
                gx, gy, gp = [px], [py], [parent]
        pts = np.column_stack([px, py]) if self.count else np.empty((0, self.n + 1))
        self._grid = _HashGrid(pts, cell=2.0 * r1)
        self._ghost_parent = parent
        self._ghost_x = px
        self._ghost_y = py

    def neighbors(self, x, y):
        """Edges (query_index, obstacle_index, dx, dy) within support range."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n and x.shape[0] == self.n:
            x = x.T
        y = np.atleast_1d(np.asarray(y, dtype=float))
        self._ensure_grid()
        q = np.column_stack([x, y])
        rows, obs = self._grid.query(q)
        if len(rows) == 0:
            return rows, obs, np.empty((0, self.n)), np.empty(0)
        dx = x[rows] - self._ghost_x[obs]
        dy = y[rows] - self._ghost_y[obs]
        r2 = np.sum(dx * dx, axis=1) + dy * dy
        keep = r2 < self.shape.r1**2
        return rows[keep], self._ghost_parent[obs[keep]], dx[keep], dy[keep]

    def eval(self, x, y, warn_incomplete=False):
        """f(x, y) = sum_i strength_i * phi(x - x_i, y - y_i); exact sum.

        warn_incomplete flags queries outside the region where the window
        is guaranteed to contain every contributing obstacle.
        """
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if warn_incomplete and not np.all(self.query_complete(x, y)):
            import warnings

            warnings.warn(
                "field query outside the guaranteed-complete region: values "
                "may be truncated near the window faces", stacklevel=2)
        rows, obs, dx, dy = self.neighbors(x, y)
        if not len(rows):
            return np.zeros(len(y))
        vals = self.strengths[obs] * self.shape.phi(dx, dy)
        return np.bincount(rows, weights=vals, minlength=len(y))

    def eval_dy(self, x, y):
        """df/dy at (x, y)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        rows, obs, dx, dy = self.neighbors(x, y)
        if not len(rows):
            return np.zeros(len(y))
        vals = self.strengths[obs] * self.shape.dphi_dy(dx, dy)
        return np.bincount(rows, weights=vals, minlength=len(y))

    def query_complete(self, x, y):
        """True where the window guarantees every contributing obstacle was
        sampled (at least r1 from the lateral faces; torus fields are
        complete everywhere laterally)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n and x.shape[0] == self.n:
            x = x.T
        y = np.atleast_1d(np.asarray(y, dtype=float))
        ok = (y <= self.window.y_hi - self.shape.r1) | (y <= 0.0)
        if self.period is None:
            for d in range(self.n):
                ok &= x[:, d] >= self.window.x_lo[d] + self.shape.r1
                ok &= x[:, d] <= self.window.x_hi[d] - self.shape.r1
        return ok

    def max_abs_f(self, x_lo, x_hi, y_lo, y_hi, resolution=0.02):
        """M = max |f| over a fine grid of the region (escape-test bound)."""
        axes = [
            np.arange(lo, hi + resolution / 2, resolution)
            for lo, hi in zip(np.atleast_1d(x_lo), np.atleast_1d(x_hi))
        ]
        ys = np.arange(y_lo, y_hi + resolution / 2, resolution)
        grids = np.meshgrid(*axes, ys, indexing="ij")
        pts_x = np.column_stack([g.ravel() for g in grids[:-1]])
        pts_y = grids[-1].ravel()
        m = 0.0
        step = 200000
        for i in range(0, len(pts_y), step):
            vals = self.eval(pts_x[i : i + step], pts_y[i : i + step])
            if len(vals):
                m = max(m, float(np.max(np.abs(vals))))
        return m

    def max_abs_df_dy(self, x_lo, x_hi, y_lo, y_hi, resolution=0.02):
        """Grid estimate of sup |df/dy| over the region, with safety factor."""
        axes = [
            np.arange(lo, hi + resolution / 2, resolution)
            for lo, hi in zip(np.atleast_1d(x_lo), np.atleast_1d(x_hi))
        ]
        ys = np.arange(y_lo, y_hi + resolution / 2, resolution)
        grids = np.meshgrid(*axes, ys, indexing="ij")
        pts_x = np.column_stack([g.ravel() for g in grids[:-1]])
        pts_y = grids[-1].ravel()
        m = 0.0
        step = 200000
        for i in range(0, len(pts_y), step):
            vals = self.eval_dy(pts_x[i : i + step], pts_y[i : i + step])
            if len(vals):
                m = max(m, float(np.max(np.abs(vals))))
        return 1.5 * m

    def to_text(self):
        """Flat text export: header comments, one obstacle per line."""
        buf = io.StringIO()
        buf.write("# quenchpin obstacle field v1\n")
        buf.write(f"# n = {self.n}\n")
        buf.write(f"# kind = {self.kind}\n")
        buf.write(f"# seed = {self.seed}\n")
        buf.write(f"# lambda = {self.lam!r}\n")
        buf.write(f"# r0 = {self.shape.r0!r}\n")
        buf.write(f"# r1 = {self.shape.r1!r}\n")
        buf.write(f"# smoothness = {self.shape.smoothness!r}\n")
        buf.write(f"# strength = {self.dist.kind} a={self.dist.a!r} b={self.dist.b!r}\n")
        buf.write(f"# window_x_lo = {' '.join(repr(v) for v in self.window.x_lo)}\n")
        buf.write(f"# window_x_hi = {' '.join(repr(v) for v in self.window.x_hi)}\n")
        buf.write(f"# window_y = {self.window.y_lo!r} {self.window.y_hi!r}\n")
        if self.period is not None:
            buf.write(f"# period = {' '.join(repr(v) for v in self.period)}\n")
        buf.write("# columns: " + " ".join(f"x{i+1}" for i in range(self.n)) + " y strength\n")
        for i in range(self.count):
            xs = " ".join(repr(float(v)) for v in self.centers_x[i])
            buf.write(f"{xs} {float(self.centers_y[i])!r} {float(self.strengths[i])!r}\n")
        return buf.getvalue()

    @staticmethod
    def from_text(text):
        head = {}
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    head[k.strip()] = v.strip()
                continue
            rows.append([float(tok) for tok in line.split()])
        n = int(head["n"])
        shape = ObstacleShape(
            n=n,
            r0=float(head["r0"]),
            r1=float(head["r1"]),
            smoothness=float(head["smoothness"]),
        )
        skind, sa, sb = head["strength"].split()
        dist = StrengthDistribution(
            kind=skind, a=float(sa.split("=")[1]), b=float(sb.split("=")[1])
        )
        y_lo, y_hi = (float(t) for t in head["window_y"].split())
        window = Window(
            x_lo=tuple(float(t) for t in head["window_x_lo"].split()),
            x_hi=tuple(float(t) for t in head["window_x_hi"].split()),
            y_lo=y_lo,
            y_hi=y_hi,
        )
        period = None
        if "period" in head:
            period = tuple(float(t) for t in head["period"].split())
        data = np.array(rows) if rows else np.empty((0, n + 2))
        return ObstacleField(
            shape=shape,
            centers_x=data[:, :n],
            centers_y=data[:, n],
            strengths=data[:, n + 1],
            window=window,
            lam=float(head["lambda"]),
            seed=int(head["seed"]),
            dist=dist,
            kind=head["kind"],
            period=period,
        )


def _window_cells(window, r1):
    """Integer cells of the fixed unit decomposition intersecting the window.

    Lateral cells are [i, i+1) on the integer lattice; vertical cells are
    [r1 + j, r1 + j + 1) for j >= 0, so cells never depend on the window.
    """
    ax = [
        range(math.floor(lo), math.ceil(hi))
        for lo, hi in zip(window.x_lo, window.x_hi)
    ]
    j_lo = max(0, math.floor(window.y_lo - r1))
    j_hi = math.ceil(window.y_hi - r1)
    return ax, range(j_lo, j_hi)


def sample_field(window, lam, dist, shape, seed):
    """Draw a Poisson obstacle configuration on the window.

    Every unit cell intersecting the window is sampled in full from its own
    keyed stream (count ~ Poisson(lam), positions uniform, strengths iid)
    and then clipped to the window, so overlapping windows agree exactly on
    their intersection.
    """
    window.validate(shape)
    if lam <= 0:
        raise ValueError("intensity lambda must be positive")
    n = shape.n
    ax, jrange = _window_cells(window, shape.r1)
    xs, ys, ss = [], [], []
    import itertools

    for coords in itertools.product(*ax, jrange):
        rng = _cell_generator(seed, coords)
        count = rng.poisson(lam)
        if count == 0:
            continue
        u = rng.random((count, n + 1))
        s = dist.sample(rng, count)
        pos_x = u[:, :n] + np.array(coords[:n], dtype=float)
        pos_y = u[:, n] + shape.r1 + coords[n]
        keep = np.ones(count, dtype=bool)
        for d in range(n):
            keep &= (pos_x[:, d] >= window.x_lo[d]) & (pos_x[:, d] < window.x_hi[d])
        keep &= (pos_y >= window.y_lo) & (pos_y < window.y_hi)
        if keep.any():
            xs.append(pos_x[keep])
            ys.append(pos_y[keep])
            ss.append(s[keep])
    if xs:
        cx = np.concatenate(xs)
        cy = np.concatenate(ys)
        cs = np.concatenate(ss)
    else:
        cx = np.empty((0, n))
        cy = np.empty(0)
        cs = np.empty(0)
    return ObstacleField(
        shape=shape,
        centers_x=cx,
        centers_y=cy,
        strengths=cs,
        window=window,
        lam=lam,
        seed=seed,
        dist=dist,
    )


def sample_field_torus(sides, y_hi, lam, dist, shape, seed):
    """Poisson field on the fundamental domain of a lateral torus.

    Evaluation wraps lateral distances, so the field is complete everywhere
    on the torus cross-section.
    """
    sides = tuple(float(s) for s in np.atleast_1d(sides))
    window = Window(
        x_lo=tuple(0.0 for _ in sides),
        x_hi=sides,
        y_lo=shape.r1,
        y_hi=float(y_hi),
    )
    f = sample_field(window, lam, dist, shape, seed)
    f.period = sides
    return f


def sample_lattice_field(spacing, dist, shape, seed, window):
    """Regular-lattice variant: centers at (i * spacing, (j + 1/2) * spacing).

    Strengths are iid, keyed per lattice site.  Requires spacing > 2 * r1 so
    neighboring obstacles do not overlap.
    """
    if spacing <= 2.0 * shape.r1:
        raise ValueError(
            f"lattice spacing {spacing} must exceed 2*r1 = {2 * shape.r1}: "
            "overlapping pinning sites are outside this model"
        )
    window.validate(shape)
    n = shape.n
    ax = [
        range(math.ceil(lo / spacing), math.floor(hi / spacing) + 1)
        for lo, hi in zip(window.x_lo, window.x_hi)
    ]
    j_lo = math.ceil(window.y_lo / spacing - 0.5)
    j_hi = math.floor(window.y_hi / spacing - 0.5)
    xs, ys, ss = [], [], []
    import itertools

    for coords in itertools.product(*ax, range(j_lo, j_hi + 1)):
        y = (coords[n] + 0.5) * spacing
        if y < window.y_lo or y > window.y_hi:
            continue
        rng = _cell_generator(seed, coords, stream=1)
        xs.append([c * spacing for c in coords[:n]])
        ys.append(y)
        ss.append(dist.sample(rng, 1)[0])
    cx = np.array(xs, dtype=float) if xs else np.empty((0, n))
    cy = np.array(ys, dtype=float)
    cs = np.array(ss, dtype=float)
    return ObstacleField(
        shape=shape,
        centers_x=cx,
        centers_y=cy,
        strengths=cs,
        window=window,
        lam=0.0,
        seed=seed,
        dist=dist,
        kind="lattice",
    )


def eval_f_max_local_sum(field, x_lo, x_hi, y_lo, y_hi, resolution=0.02):
    """Escape-test bound: M = max over a fine grid of |f|.

    An external force F > M gives every point of the interface positive
    mean velocity, certifying escape.
    """
    return field.max_abs_f(x_lo, x_hi, y_lo, y_hi, resolution=resolution)
