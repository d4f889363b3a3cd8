"""Smooth interpolation of per-box target heights across gap strips.

The torus splits into boxes of side l separated by gaps of width d.  The
glue function equals its cell value on every box and crosses each gap with
a fixed C^2 quintic blend, so its gradient is supported in the gaps and
its derivatives scale like h/d and h/d^2 for cell values varying by at
most 2h between neighbors.  The proportionality constants are measured
from the blend profile, not assumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


def smoothstep(t):
    """Quintic blend 6t^5 - 15t^4 + 10t^3 on [0, 1] (C^2 at both ends)."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def smoothstep_d1(t):
    t = np.clip(t, 0.0, 1.0)
    return 30.0 * t * t * (1.0 - t) ** 2


def smoothstep_d2(t):
    t = np.clip(t, 0.0, 1.0)
    return 60.0 * t * (2.0 * t - 1.0) * (t - 1.0)


@dataclass
class GlueFunction:
    """Box-constant heights with smooth gap transitions on a torus.

    cell_values has one entry per torus cell (shape = cells tuple); axis a
    of space has period cells[a] * (l + d).
    """

    cell_values: np.ndarray
    l: float
    d: float

    @property
    def n(self):
        return self.cell_values.ndim

    @property
    def cells(self):
        return self.cell_values.shape

    @property
    def cell_size(self):
        return self.l + self.d

    def _axis_factors(self, x):
        """Per-axis blend data: cell index, weights and derivatives for the
        two cells an x-slab can touch."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cell = self.cell_size
        ks, w0, w1, d1_0, d1_1, d2_0, d2_1 = [], [], [], [], [], [], []
        for a in range(self.n):
            k = np.floor(x[:, a] / cell).astype(np.int64)
            xi = x[:, a] - k * cell
            in_gap = xi > self.l
            t = np.where(in_gap, (xi - self.l) / self.d, 0.0)
            s = smoothstep(t)
            s1 = np.where(in_gap, smoothstep_d1(t) / self.d, 0.0)
            s2 = np.where(in_gap, smoothstep_d2(t) / (self.d * self.d), 0.0)
            ks.append(np.mod(k, self.cells[a]))
            w0.append(1.0 - s)
            w1.append(s)
            d1_0.append(-s1)
            d1_1.append(s1)
            d2_0.append(-s2)
            d2_1.append(s2)
        return x.shape[0], ks, (w0, w1), (d1_0, d1_1), (d2_0, d2_1)

    def _combo_values(self, ks, bits):
        idx = tuple(
            np.mod(ks[a] + bits[a], self.cells[a]) for a in range(self.n)
        )
        return self.cell_values[idx]

    def value(self, x):
        m, ks, w, _, _ = self._axis_factors(x)
        out = np.zeros(m)
        for bits in np.ndindex(*(2,) * self.n):
            prod = np.ones(m)
            for a in range(self.n):
                prod = prod * w[bits[a]][a]
            out += self._combo_values(ks, bits) * prod
        return out

    def gradient(self, x):
        m, ks, w, d1, _ = self._axis_factors(x)
        out = np.zeros((m, self.n))
        for bits in np.ndindex(*(2,) * self.n):
            vals = self._combo_values(ks, bits)
            for g in range(self.n):
                prod = np.ones(m)
                for a in range(self.n):
                    fac = d1[bits[a]][a] if a == g else w[bits[a]][a]
                    prod = prod * fac
                out[:, g] += vals * prod
        return out

    def hessian(self, x):
        m, ks, w, d1, d2 = self._axis_factors(x)
        out = np.zeros((m, self.n, self.n))
        for bits in np.ndindex(*(2,) * self.n):
            vals = self._combo_values(ks, bits)
            for i in range(self.n):
                for j in range(i, self.n):
                    prod = np.ones(m)
                    for a in range(self.n):
                        if i == j and a == i:
                            fac = d2[bits[a]][a]
                        elif a == i or a == j:
                            fac = d1[bits[a]][a]
                        else:
                            fac = w[bits[a]][a]
                        prod = prod * fac
                    out[:, i, j] += vals * prod
                    if i != j:
                        out[:, j, i] = out[:, i, j]
        return out

    def laplacian(self, x):
        return np.trace(self.hessian(x), axis1=1, axis2=2)

    def measured_norms(self, resolution=None, max_points=400_000):
        """Sampled sup norms (grad euclidean, |laplacian|, max |hessian entry|)."""
        if resolution is None:
            resolution = min(self.d, self.l) / 50.0
        side = [self.cells[a] * self.cell_size for a in range(self.n)]
        npts = 1
        axes = []
        for a in range(self.n):
            cnt = max(int(side[a] / resolution), 8)
            npts *= cnt
            axes.append(np.linspace(0.0, side[a], cnt, endpoint=False))
        while npts > max_points:
            axes = [ax[::2] for ax in axes]
            npts = int(np.prod([len(ax) for ax in axes]))
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([g.ravel() for g in grids])
        sup_grad = sup_lap = sup_hess = 0.0
        step = 200_000
        for i in range(0, len(pts), step):
            chunk = pts[i : i + step]
            g = self.gradient(chunk)
            h = self.hessian(chunk)
            sup_grad = max(sup_grad, float(np.max(np.linalg.norm(g, axis=1))))
            sup_lap = max(sup_lap, float(np.max(np.abs(np.trace(h, axis1=1, axis2=2)))))
            sup_hess = max(sup_hess, float(np.max(np.abs(h))))
        return {"grad": sup_grad, "lap": sup_lap, "hess": sup_hess}


def build_glue(cell_values, l, d, h, strict=True):
    """Assemble the glue from per-column target heights.

    Adjacent (torus) cell values must differ by at most 2h: one surface
    step times the slab height plus the intra-slab spread.  A violation
    points at a bug upstream in the surface/selection stage.
    """
    cell_values = np.asarray(cell_values, dtype=float)
    if strict:
        for ax in range(cell_values.ndim):
            jump = np.max(np.abs(cell_values - np.roll(cell_values, 1, axis=ax))) if cell_values.shape[ax] > 1 else 0.0
            if jump > 2.0 * h + 1e-9:
                raise RuntimeError(
                    f"adjacent glue cell values differ by {jump} > 2h = {2 * h}: "
                    "surface/selection inconsistency"
                )
    return GlueFunction(cell_values=cell_values, l=l, d=d)


@lru_cache(maxsize=8)
def blend_constants(n):
    """Measured worst-case blend constants (c_grad, c_lap, c_hess).

    Built from unit-h, unit-d glue on adversarial cell configurations with
    neighbor differences at the 2h limit, so that for any admissible glue
    ||grad|| <= c_grad h/d, ||lap|| <= c_lap h/d^2, entries <= c_hess h/d^2.
    """
    if n == 1:
        configs = [np.array([0.0, 2.0, 0.0])]
    elif n == 2:
        configs = [
            np.array([[0.0, 2.0], [2.0, 0.0]]),          # checkerboard
            np.array([[0.0, 2.0, 0.0], [0.0, 2.0, 0.0], [0.0, 2.0, 0.0]]),  # 1d ridge
            np.array([[0.0, 2.0, 0.0], [2.0, 3.0, 2.0], [0.0, 2.0, 0.0]]),  # peak
        ]
    else:
        raise NotImplementedError("blend constants measured for n in {1, 2}")
    c_grad = c_lap = c_hess = 0.0
    for cfg in configs:
        glue = GlueFunction(cell_values=cfg, l=1.0, d=1.0)
        norms = glue.measured_norms(resolution=1.0 / 400.0)
        c_grad = max(c_grad, norms["grad"])
        c_lap = max(c_lap, norms["lap"])
        c_hess = max(c_hess, norms["hess"])
    return c_grad, c_lap, c_hess
