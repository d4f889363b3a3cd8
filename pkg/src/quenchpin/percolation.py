"""Minimal 1-Lipschitz surfaces of open sites over a periodic torus.

A site (k, j), k in the torus Z^n / extent, j in 1..cap, is open either
with iid probability p (Bernoulli fields) or because a strong-enough
obstacle sits in the corresponding space cuboid (obstacle-derived fields).
The minimal surface is computed by a monotone value iteration whose fixed
point is the pointwise-minimal 1-Lipschitz height function hitting only
open sites; absence of such a surface below the cap raises CapExceeded.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapExceeded, WindowError
from .obstacles import _cell_generator

P_C_FORMULA = "1 - (2n+2)^-2"


def critical_probability(n):
    """Site-percolation threshold below which no surface is guaranteed."""
    return 1.0 - (2 * n + 2) ** -2


def decay_ratio(p, n):
    """Theoretical geometric tail ratio nu = (2n+2)(1-p) for p above threshold."""
    return (2 * n + 2) * (1.0 - p)


@dataclass
class SiteGeometry:
    """Cuboid layout tying torus sites to space: columns of side l spaced by
    gaps d, heights in slabs of thickness h starting at r1, centers accepted
    only in the reduced box (inset r1 per side)."""

    l: float
    d: float
    h: float
    fbar: float
    r1: float

    @property
    def cell(self):
        return self.l + self.d


@dataclass
class SiteField:
    n: int
    extent: tuple
    cap: int
    openness: np.ndarray  # bool, shape extent + (cap,)
    origin: str = "bernoulli"
    p: float | None = None
    seed: int | None = None
    geometry: SiteGeometry | None = None
    empirical_open_fraction: float | None = None
    theoretical_marginal: float | None = None


@dataclass
class LipschitzSurface:
    L: np.ndarray  # int heights >= 1, shape extent
    iterations: int
    cap: int

    def to_text(self):
        buf = io.StringIO()
        buf.write("# columns: " + " ".join(f"k{i+1}" for i in range(self.L.ndim)) + " L\n")
        for idx in np.ndindex(self.L.shape):
            buf.write(" ".join(str(i) for i in idx) + f" {int(self.L[idx])}\n")
        return buf.getvalue()


def bernoulli_site_field(extent, cap, p, seed):
    """Iid open/closed sites on the torus with marginal p."""
    extent = tuple(int(e) for e in np.atleast_1d(extent))
    rng = _cell_generator(seed, (971, len(extent)) + extent + (cap,), stream=2)
    u = rng.random(extent + (int(cap),))
    return SiteField(
        n=len(extent), extent=extent, cap=int(cap), openness=u < p,
        origin="bernoulli", p=float(p), seed=int(seed),
    )


def _next_open_table(openness, cap):
    """next_open[..., q] = smallest open height >= q, sentinel cap + 1."""
    shape = openness.shape[:-1]
    table = np.full(shape + (cap + 2,), cap + 1, dtype=np.int64)
    for j in range(cap, 0, -1):
        table[..., j] = np.where(openness[..., j - 1], j, table[..., j + 1])
    return table


def _neighbor_max(L, axes):
    nb = None
    for ax in axes:
        for shift in (1, -1):
            rolled = np.roll(L, shift, axis=ax)
            nb = rolled if nb is None else np.maximum(nb, rolled)
    return nb


def _value_iterate(openness, cap, torus_axes):
    """Monotone value iteration to the minimal open Lipschitz surface.

    openness may carry leading batch axes; torus_axes index its spatial
    axes.  Returns (L, iterations, failed) where failed marks instances
    whose columns would exceed the cap (their L rows are left at cap + 1
    where stuck).
    """
    table = _next_open_table(openness, cap)
    shape = openness.shape[:-1]
    L = np.take_along_axis(table, np.ones(shape + (1,), dtype=np.int64), axis=-1)[..., 0]
    iterations = 0
    while True:
        iterations += 1
        nb = _neighbor_max(L, torus_axes) - 1
        lb = np.maximum(L, np.maximum(nb, 1))
        lb = np.minimum(lb, cap + 1)  # sentinel rows stay at cap + 1
        new = np.take_along_axis(table, lb[..., None], axis=-1)[..., 0]
        if np.array_equal(new, L):
            break
        L = new
    failed = np.any(L > cap, axis=tuple(torus_axes))
    return L, iterations, failed


def minimal_lipschitz_surface(sites):
    """Pointwise-minimal 1-Lipschitz function whose graph hits open sites.

    Starts at L = 1 and repeatedly lifts each column to the smallest open
    height compatible with its own value and its neighbors minus one; the
    iteration is monotone nondecreasing, so it either reaches the fixed
    point or crosses the cap (CapExceeded).
    """
    axes = tuple(range(sites.n))
    L, iterations, failed = _value_iterate(sites.openness, sites.cap, axes)
    if bool(np.any(failed)):
        raise CapExceeded(max_height=int(np.max(L)), cap=sites.cap)
    return LipschitzSurface(L=L.astype(np.int64), iterations=iterations, cap=sites.cap)


def openness_from_field(field, l, d, h, fbar, cells, cap):
    """Site (k, j) is open iff an obstacle of strength >= fbar has its center
    in the reduced cuboid of column k, height slab j.

    Reports the empirical open fraction next to the exact Poisson marginal
    1 - exp(-lam (l - 2 r1)^n h tail(fbar)).
    """
    r1 = field.shape.r1
    n = field.n
    if l <= 2.0 * r1:
        raise ValueError(f"column side l={l} must exceed 2*r1={2 * r1}")
    cells = tuple(int(c) for c in np.atleast_1d(cells))
    if len(cells) == 1 and n > 1:
        cells = cells * n
    cell = l + d
    # the window must contain every queried cuboid
    need_x_hi = [c * cell - d - r1 for c in cells]  # last reduced box ends at cells*cell - d - r1
    need_y_hi = cap * h + r1
    for dim in range(n):
        if field.window.x_lo[dim] > 0.0 + 1e-12 or field.window.x_hi[dim] < need_x_hi[dim] - 1e-12:
            raise WindowError(
                f"field window axis {dim} [{field.window.x_lo[dim]}, {field.window.x_hi[dim]}] "
                f"does not cover queried cuboids [0, {need_x_hi[dim]}]"
            )
    if field.window.y_lo > r1 + 1e-12 or field.window.y_hi < need_y_hi - 1e-12:
        raise WindowError(
            f"field window y [{field.window.y_lo}, {field.window.y_hi}] does not cover "
            f"queried cuboids [{r1}, {need_y_hi}]"
        )

    openness = np.zeros(cells + (cap,), dtype=bool)
    if field.count:
        strong = field.strengths >= fbar
        x = field.centers_x[strong]
        y = field.centers_y[strong]
        k = np.floor(x / cell).astype(np.int64)
        off = x - k * cell
        inside = np.ones(len(y), dtype=bool)
        for dim in range(n):
            inside &= (off[:, dim] >= r1) & (off[:, dim] <= l - r1)
            inside &= (k[:, dim] >= 0) & (k[:, dim] < cells[dim])
        j = np.floor((y - r1) / h).astype(np.int64) + 1
        inside &= (j >= 1) & (j <= cap)
        idx = tuple(k[inside, dim] for dim in range(n)) + (j[inside] - 1,)
        openness[idx] = True

    theo = None
    if field.kind == "poisson":
        vol = (l - 2.0 * r1) ** n * h
        theo = 1.0 - math.exp(-field.lam * vol * field.dist.tail(fbar))
    return SiteField(
        n=n, extent=cells, cap=int(cap), openness=openness,
        origin="obstacles", seed=field.seed,
        geometry=SiteGeometry(l=l, d=d, h=h, fbar=fbar, r1=r1),
        empirical_open_fraction=float(np.mean(openness)),
        theoretical_marginal=theo,
    )


@dataclass
class SelectedObstacles:
    """One qualifying obstacle per torus column: the lowest (then
    lexicographically smallest center) obstacle of strength >= fbar inside
    the open cuboid the surface picked."""

    extent: tuple
    index: np.ndarray      # (num_columns,) obstacle index into the field
    centers_x: np.ndarray  # (num_columns, n)
    centers_y: np.ndarray
    strengths: np.ndarray
    geometry: SiteGeometry

    def column(self, k):
        flat = np.ravel_multi_index(tuple(k), self.extent)
        return int(self.index[flat])


def select_obstacles(field, sites, surface):
    """Pick the selected obstacle for every column of the surface."""
    geo = sites.geometry
    if geo is None:
        raise ValueError("site field carries no cuboid geometry")
    n = field.n
    cell = geo.cell
    num = int(np.prod(sites.extent))
    chosen = np.full(num, -1, dtype=np.int64)
    cx = np.zeros((num, n))
    cy = np.zeros(num)
    cs = np.zeros(num)

    strong = np.flatnonzero(field.strengths >= geo.fbar)
    x = field.centers_x[strong]
    y = field.centers_y[strong]
    k = np.floor(x / cell).astype(np.int64)
    off = x - k * cell
    inside = np.ones(len(y), dtype=bool)
    for dim in range(n):
        inside &= (off[:, dim] >= geo.r1) & (off[:, dim] <= geo.l - geo.r1)
        inside &= (k[:, dim] >= 0) & (k[:, dim] < sites.extent[dim])
    j = np.floor((y - geo.r1) / geo.h).astype(np.int64) + 1

    L_flat = surface.L.ravel()
    cols = np.full(len(y), -1, dtype=np.int64)
    if len(y):
        idx_ok = np.flatnonzero(inside)
        flat_cols = np.ravel_multi_index(tuple(k[idx_ok].T), sites.extent)
        match = j[idx_ok] == L_flat[flat_cols]
        cols[idx_ok[match]] = flat_cols[match]

    order_keys = [y] + [x[:, dim] for dim in range(n)]
    order = np.lexsort(tuple(reversed(order_keys)))  # primary y, then lexicographic x
    for cand in order:
        c = cols[cand]
        if c >= 0 and chosen[c] < 0:
            chosen[c] = strong[cand]
            cx[c] = x[cand]
            cy[c] = y[cand]
            cs[c] = field.strengths[strong[cand]]
    if np.any(chosen < 0):
        missing = np.transpose(np.unravel_index(np.flatnonzero(chosen < 0), sites.extent))
        raise RuntimeError(
            "open site without a qualifying obstacle (internal inconsistency) "
            f"at columns {missing[:5].tolist()}"
        )
    return SelectedObstacles(
        extent=sites.extent, index=chosen, centers_x=cx, centers_y=cy,
        strengths=cs, geometry=geo,
    )


# --- tail statistics -------------------------------------------------------


@dataclass
class SurvivalCurve:
    p: float
    n: int
    trials: int
    cap: int
    side: int
    ks: np.ndarray          # k = 0 .. cap-1
    survivors: np.ndarray   # count of L(0) > k
    cap_exceeded: int
    above_threshold: bool

    @property
    def p_hat(self):
        return self.survivors / self.trials

    def wilson_ci(self, z=1.959963984540054):
        ph = self.p_hat
        nt = self.trials
        denom = 1.0 + z * z / nt
        center = (ph + z * z / (2 * nt)) / denom
        half = z * np.sqrt(ph * (1 - ph) / nt + z * z / (4 * nt * nt)) / denom
        return np.clip(center - half, 0, 1), np.clip(center + half, 0, 1)

    def to_csv(self):
        lo, hi = self.wilson_ci()
        buf = io.StringIO()
        buf.write("k,survivors,trials,p_hat,ci_lo,ci_hi\n")
        for i, k in enumerate(self.ks):
            buf.write(
                f"{int(k)},{int(self.survivors[i])},{self.trials},"
                f"{self.p_hat[i]!r},{float(lo[i])!r},{float(hi[i])!r}\n"
            )
        return buf.getvalue()

    def envelope_ratio(self, min_survivors=50):
        """Weighted log-linear fit of the survival decay.

        Returns (ratio, ratio_hi) where ratio_hi adds two standard errors;
        the geometric tail bound holds when ratio_hi <= nu.  Uses only k with
        enough survivors for a stable log, skipping the saturated k = 0.
        """
        ph = self.p_hat
        use = (self.survivors >= min_survivors) & (ph < 1.0) & (self.ks >= 1)
        if np.count_nonzero(use) < 2:
            return math.nan, math.nan
        k = self.ks[use].astype(float)
        logp = np.log(ph[use])
        # binomial delta-method weights: var(log p_hat) ~ (1-p)/(n p)
        w = self.trials * ph[use] / np.clip(1.0 - ph[use], 1e-12, None)
        W = np.sum(w)
        kbar = np.sum(w * k) / W
        ybar = np.sum(w * logp) / W
        sxx = np.sum(w * (k - kbar) ** 2)
        slope = np.sum(w * (k - kbar) * (logp - ybar)) / sxx
        se = math.sqrt(1.0 / sxx)
        return math.exp(slope), math.exp(slope + 2.0 * se)


def _l0_batch(p, n, cap, side, seed, batch_index, batch_size):
    extent = (side,) * n
    rng = _cell_generator(seed, (4242, batch_index), stream=3)
    u = rng.random((batch_size,) + extent + (cap,))
    openness = u < p
    axes = tuple(range(1, n + 1))
    L, _, failed = _value_iterate(openness, cap, axes)
    l0 = L[(slice(None),) + (0,) * n]
    return l0, failed


def tail_statistics(p, n, trials, seed, cap=12, side=None, batch_size=1024,
                    executor=None):
    """Monte Carlo survival curve of L(0) over independent Bernoulli tori.

    The torus side defaults to 4 * cap so wrap-around cannot influence
    column 0 below the cap.  Trials whose surface exceeds the cap are
    counted as surviving every k (conservative) and reported.
    """
    if side is None:
        side = 4 * cap
    above = p > critical_probability(n)
    nb = (trials + batch_size - 1) // batch_size
    sizes = [batch_size] * (nb - 1) + [trials - batch_size * (nb - 1)]

    def work(i):
        return _l0_batch(p, n, cap, side, seed, i, sizes[i])

    if executor is None:
        results = [work(i) for i in range(nb)]
    else:
        results = list(executor.map(work, range(nb)))

    survivors = np.zeros(cap, dtype=np.int64)
    cap_exceeded = 0
    for l0, failed in results:
        cap_exceeded += int(np.count_nonzero(failed))
        for k in range(cap):
            survivors[k] += int(np.count_nonzero(l0 > k))
    return SurvivalCurve(
        p=float(p), n=int(n), trials=int(trials), cap=int(cap), side=int(side),
        ks=np.arange(cap), survivors=survivors, cap_exceeded=cap_exceeded,
        above_threshold=bool(above),
    )
