"""Stationary supersolution for graph mean curvature flow.

Same architecture as the semilinear barrier, with the radial pieces
replaced by constant-mean-curvature surfaces: a spherical cap of radius
F_in inside the obstacle (curvature 1/F_in under the graph normalization
kappa(u) = div(grad u / (n sqrt(1 + |grad u|^2)))), and a rotationally
symmetric annulus profile of constant curvature F_out < 0 obtained by
integrating the first-order CMC relation

    w'(r) = S / sqrt(1 - S^2),   S(r) = |F_out| (r_out^n - r^n) / r^{n-1},

which vanishes at the Neumann wall r_out.  The profile exists only while
S < 1; parameters keep S(r_in) well inside that range.

Note: the closed-form slope used here follows from the defining integral
(and is what the constant-curvature finite-difference oracle reproduces);
the companion scaling function g(r_out, c) is the same slope at r_in after
substituting F_out = -c r_in^{n-1} / r_out^n.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError
from .glue import blend_constants, build_glue
from .obstacles import sample_field_torus
from .percolation import (
    critical_probability,
    minimal_lipschitz_surface,
    openness_from_field,
    select_obstacles,
)
from .qew import CertificateReport, RegionResidual, _grid_points


@dataclass(frozen=True)
class McfParams:
    n: int
    fbar: float
    F_in: float      # cap sphere radius; cap curvature is 1/F_in
    r_in: float
    F_out: float     # annulus mean curvature, negative
    r_out: float
    c: float         # scaling coefficient, F_out = -c r_in^{n-1} / r_out^n
    h: float
    d: float
    l: float
    C0: float
    C1: float
    F_star: float
    r0: float
    r1: float
    p_target: float
    tail_prob: float
    lam: float
    s_max: float = 0.8       # cap on S(r_in), keeps the integrand well-defined
    lap_margin: float = 3.0  # |F_out| >= lap_margin * C1 h/d^2
    c_lin: float = 1.0       # |F_out| >= c_lin * h/d
    quad_tol: float = 1e-10

    def S(self, r):
        r = np.asarray(r, dtype=float)
        return abs(self.F_out) * (self.r_out**self.n - r**self.n) / r ** (self.n - 1)


def w_in_eval(r, params):
    """Spherical cap: value -sqrt(F_in^2 - r^2) + sqrt(F_in^2 - r_in^2)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < -1e-12) or np.any(r > params.r_in + 1e-9):
        raise ValueError("w_in evaluated outside [0, r_in]")
    F = params.F_in
    value = -np.sqrt(F * F - r * r) + math.sqrt(F * F - params.r_in**2)
    slope = r / np.sqrt(F * F - r * r)
    return value, slope


def w_in_slope_at_rin(params):
    return params.r_in / math.sqrt(params.F_in**2 - params.r_in**2)


def w_out_slope(r, params):
    """Annulus slope S/sqrt(1-S^2); errors when the radicand is not positive."""
    r = np.asarray(r, dtype=float)
    S = params.S(r)
    bad = S >= 1.0
    if np.any(bad):
        raise ValueError(
            f"annulus slope undefined: S(r) >= 1 at r={np.asarray(r)[bad][:3]} "
            "(|F_out| too large for this annulus)"
        )
    return S / np.sqrt(1.0 - S * S)


def w_out_slope_deriv(r, params):
    """d(slope)/dr, closed form: S' / (1 - S^2)^{3/2}."""
    r = np.asarray(r, dtype=float)
    n = params.n
    S = params.S(r)
    Sp = -abs(params.F_out) * (n + (n - 1) * ((params.r_out / r) ** n - 1.0))
    return Sp / (1.0 - S * S) ** 1.5


class DelaunayProfile:
    """Cached quadrature of the annulus profile with Hermite interpolation.

    Values come from composite Gauss-Legendre integration of the analytic
    slope between table nodes; evaluation uses cubic Hermite pieces with
    the exact slope at the nodes, so interpolation error is negligible
    against the certification tolerances.
    """

    def __init__(self, params, nodes=4096, extend=0.02):
        self.params = params
        r_lo_safe = max(params.r_in * (1.0 - extend), 1e-6)
        # keep the downward extension inside the S < 1 region
        while float(params.S(np.asarray(r_lo_safe))) >= 0.98 and r_lo_safe < params.r_in:
            r_lo_safe = 0.5 * (r_lo_safe + params.r_in)
        r_hi = params.r_out * (1.0 + extend)
        # enough nodes that the extension below r_in spans several panels
        span = r_hi - r_lo_safe
        nodes_eff = min(max(nodes, int(span / max((params.r_in - r_lo_safe) / 4.0,
                                                  1e-9)) + 1), 500_000)
        dr = span / nodes_eff
        # keep r_in an exact node (normalization w(r_in) = 0 is then exact)
        # without dropping the lower edge below the safe radius
        k_lo = int(math.floor((params.r_in - r_lo_safe) / dr))
        r_lo = params.r_in - k_lo * dr
        self.r_lo, self.r_hi = r_lo, r_hi
        count = int(round((r_hi - r_lo) / dr)) + 1
        self.rs = r_lo + dr * np.arange(count)
        self.r_hi = float(self.rs[-1])
        self.ws = self._cumulative(self.rs, order=8)
        ws_check = self._cumulative(self.rs, order=16)
        self.quad_error = float(np.max(np.abs(ws_check - self.ws)))
        if self.quad_error > params.quad_tol * 1e3 + 1e-8:
            raise RuntimeError(
                f"annulus quadrature did not converge: error bound {self.quad_error}"
            )
        self.slopes = self._slope(self.rs)

    def _slope(self, r):
        r = np.asarray(r, dtype=float)
        S = self.params.S(r)
        S = np.clip(S, None, 0.999999)
        return S / np.sqrt(1.0 - S * S)

    def _cumulative(self, rs, order=8):
        # Gauss-Legendre on every panel, summed to a cumulative table
        xg, wg = np.polynomial.legendre.leggauss(order)
        a = rs[:-1]
        b = rs[1:]
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        pts = mid[:, None] + half[:, None] * xg[None, :]
        vals = self._slope(pts.ravel()).reshape(pts.shape)
        panel = half * np.sum(vals * wg[None, :], axis=1)
        w = np.concatenate(([0.0], np.cumsum(panel)))
        # normalize w(r_in) = 0; r_in is a node of the full table
        i0 = int(np.argmin(np.abs(rs - self.params.r_in)))
        return w - w[i0]

    def value(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < self.r_lo - 1e-12) or np.any(r > self.r_hi + 1e-12):
            raise ValueError("annulus profile evaluated outside its table range")
        dr = self.rs[1] - self.rs[0]
        i = np.clip(((r - self.r_lo) / dr).astype(np.int64), 0, len(self.rs) - 2)
        t = (r - self.rs[i]) / dr
        h00 = (1 + 2 * t) * (1 - t) ** 2
        h10 = t * (1 - t) ** 2
        h01 = t * t * (3 - 2 * t)
        h11 = t * t * (t - 1)
        return (
            h00 * self.ws[i]
            + h10 * dr * self.slopes[i]
            + h01 * self.ws[i + 1]
            + h11 * dr * self.slopes[i + 1]
        )


_PROFILE_CACHE: dict = {}


def annulus_profile(params):
    prof = _PROFILE_CACHE.get(params)
    if prof is None:
        prof = DelaunayProfile(params)
        _PROFILE_CACHE[params] = prof
    return prof


def w_out_eval(r, params):
    """Annulus profile value (quadrature), normalized to 0 at r_in."""
    r = np.asarray(r, dtype=float)
    if np.any(r < params.r_in - 1e-9) or np.any(r > params.r_out * (1 + 1e-9)):
        raise ValueError("w_out evaluated outside [r_in, r_out]")
    return annulus_profile(params).value(r)


def w_local_eval(r, params):
    """Cap / annulus / +inf dispatch on the radius."""
    r = np.asarray(r, dtype=float)
    value = np.full(r.shape, np.inf)
    piece = np.full(r.shape, 2, dtype=np.int8)
    core = r < params.r_in
    ann = (~core) & (r <= params.r_out * (1 + 1e-12))
    if np.any(core):
        value[core] = w_in_eval(r[core], params)[0]
        piece[core] = 0
    if np.any(ann):
        value[ann] = w_out_eval(np.minimum(r[ann], params.r_out), params)
        piece[ann] = 1
    return value, piece


def g_scaling(r_out, c, r_in, n):
    """Outgoing annulus slope at r_in with F_out = -c r_in^{n-1} / r_out^n.

    g = S / sqrt(1 - S^2) with S = c (1 - (r_in / r_out)^n); this is the
    substitution of the scaling ansatz into the slope formula, so it equals
    w_out_slope at r_in identically.
    """
    S = c * (1.0 - (r_in / np.asarray(r_out, dtype=float)) ** n)
    if np.any(S >= 1.0):
        raise ValueError("scaling function undefined: S >= 1")
    return S / np.sqrt(1.0 - S * S)


def exhibit_c2(r_out_range, r_in, n, c2=None, samples=200):
    """Exhibit (C2, c_max) with g(r_out, c) < C2 c for all c <= c_max on the
    given r_out range (numeric sweep; the constant is existential in the
    scaling argument, concrete here)."""
    r_outs = np.linspace(r_out_range[0], r_out_range[1], samples)
    if c2 is None:
        c2 = 1.1
    # g/c = (1-rho)/sqrt(1 - c^2 (1-rho)^2) < C2  <=>  c^2 < (1 - ((1-rho)/C2)^2)/(1-rho)^2
    rho = (r_in / r_outs) ** n
    one = 1.0 - rho
    bound = (1.0 - (one / c2) ** 2) / one**2
    if np.any(bound <= 0):
        raise ValueError(f"C2={c2} too small for this range")
    c_max = float(np.sqrt(np.min(bound))) * (1.0 - 1e-9)
    # verify on a grid
    cs = np.linspace(c_max * 1e-3, c_max, 64)
    for c in cs:
        g = g_scaling(r_outs, c, r_in, n)
        if not np.all(g < c2 * c):
            raise AssertionError("exhibited C2 failed verification sweep")
    return c2, c_max


def check_mcf_conditions(params, fbar=None, F=None):
    """The four local-solution conditions, plus both readings of (i).

    Condition (i) is checked twice: once treating F_in as a force threshold
    and once through the cap curvature 1/F_in that the profile formula
    implies.  The force reading is advisory; the direct certificate is the
    final authority either way.
    """
    if fbar is None:
        fbar = params.fbar
    if F is None:
        F = params.F_star
    out = {}
    out["(i) force reading (advisory): 0 >= F_in - fbar + F"] = \
        params.F_in - fbar + F <= 0
    out["(i) curvature: 0 >= 1/F_in - fbar + F"] = 1.0 / params.F_in - fbar + F <= 0
    out["(ii) 0 >= F_out + F"] = params.F_out + F <= 0
    out["(iii) cap depth F_in - sqrt(F_in^2 - r_in^2) <= r0"] = (
        params.F_in - math.sqrt(params.F_in**2 - params.r_in**2) <= params.r0 + 1e-12
    )
    slope_out = float(w_out_slope(np.asarray(params.r_in), params))
    slope_in = w_in_slope_at_rin(params)
    out["(iv) outgoing slope < cap slope at r_in"] = slope_out < slope_in
    out["integrand well-defined: S(r_in) < 1"] = float(params.S(np.asarray(params.r_in))) < 1.0
    # same bound read at distance r_in from the outer wall; weaker than the
    # operative S(r_in) < 1 whenever r_out > 2 r_in, reported for reference
    rr = params.r_out - params.r_in
    wall_offset = rr ** (params.n - 1) / (params.r_out**params.n - rr**params.n)
    out["integrand wall-offset reading (advisory): "
        "(r_out-r_in)^{n-1}/(r_out^n-(r_out-r_in)^n) > |F_out|"] = (
        wall_offset > abs(params.F_out)
    )
    return out


def choose_parameters_mcf(
    shape,
    lam,
    dist,
    p_target=None,
    tail_floor=0.5,
    kappa_fraction=0.45,
    cap_radius_fraction=0.9,
    slope_margin=0.10,
    s_max=0.8,
    lap_margin=3.0,
    c_lin=1.0,
    f_star_safety=0.95,
    h_grid=None,
    d_grid=None,
):
    """Recipe: fix the cap (r_in and the sphere radius F_in, hence the
    maximal outgoing slope G), then search (h, d, c) so the annulus slope
    stays below G and |F_out| dominates the glue terms.

    Gluing is required in the strengthened form |F_out| > c_lin h/d on top
    of the Laplacian bound lap_margin C1 h/d^2; the certificate is the
    final authority on the composite inequality.
    """
    n = shape.n
    p_c = critical_probability(n)
    if p_target is None:
        p_target = p_c + 0.35 * (1.0 - p_c)
    if not p_target > p_c:
        raise InfeasibleError(f"p_target={p_target} must exceed p_c={p_c}")
    fbar = dist.max_fbar_with_tail(tail_floor)
    tail = dist.tail(fbar)
    r_in = cap_radius_fraction * shape.r0
    F_in = 1.02 * max(1.0 / (kappa_fraction * fbar), r_in)
    if F_in - fbar + kappa_fraction * fbar > 0 or 1.0 / F_in - fbar + 1.0 > 0:
        raise InfeasibleError(
            f"strength threshold fbar={fbar} too small for a cap satisfying both "
            "readings of the strength condition"
        )
    depth = F_in - math.sqrt(F_in**2 - r_in**2)
    if depth > shape.r0:
        raise InfeasibleError(f"cap depth {depth} exceeds r0={shape.r0}")
    G = r_in / math.sqrt(F_in**2 - r_in**2)

    C0 = (-math.log(1.0 - p_target) / (lam * tail)) ** (1.0 / n)
    c_grad, c_lap, c_hess = blend_constants(n)
    C1 = 1.1 * max(c_grad, c_lap, c_hess)

    if h_grid is None:
        h_grid = np.geomspace(1e-4, 5.0, 61)
    if d_grid is None:
        d_grid = np.geomspace(0.5, 250.0, 61)

    g_cap = G / (1.0 + slope_margin)
    s_from_g = g_cap / math.sqrt(1.0 + g_cap * g_cap)
    best = None
    for h in h_grid:
        l = C0 * h ** (-1.0 / n) + 2 * shape.r1
        for d in d_grid:
            r_out = math.sqrt(n) * (l + d / 2 - shape.r1)
            shrink = 1.0 - (r_in / r_out) ** n
            # 10% slack over both gluing floors
            fout_floor = 1.1 * max(lap_margin * C1 * h / d**2, c_lin * h / d)
            c_lo = fout_floor * r_out**n / r_in ** (n - 1)
            c_hi = min(s_max, s_from_g) / shrink
            if c_lo <= c_hi:
                cell = l + d
                if best is None or cell < best[0]:
                    best = (cell, h, d, l, r_out, math.sqrt(c_lo * c_hi))
    if best is None:
        raise InfeasibleError(
            "no (h, d, c) satisfies the annulus-slope and gluing constraints "
            "on the search grid", ["mcf scaling"],
        )
    _, h, d, l, r_out, c = best
    F_out = -c * r_in ** (n - 1) / r_out**n
    F_star = f_star_safety * min(-F_out / 2.0, fbar / 2.0)
    params = McfParams(
        n=n, fbar=fbar, F_in=F_in, r_in=r_in, F_out=F_out, r_out=r_out, c=float(c),
        h=float(h), d=float(d), l=float(l), C0=C0, C1=C1, F_star=F_star,
        r0=shape.r0, r1=shape.r1, p_target=float(p_target), tail_prob=float(tail),
        lam=float(lam), s_max=s_max, lap_margin=lap_margin, c_lin=c_lin,
    )
    cond = check_mcf_conditions(params)
    needed = [k for k, ok in cond.items() if not ok and "advisory" not in k]
    if needed:
        raise InfeasibleError(f"recipe produced invalid parameters: {needed}", needed)
    return params


# --- assembled supersolution --------------------------------------------------


@dataclass
class SupersolutionMCF:
    field: object
    selected: object
    params: McfParams
    glue: object

    @property
    def n(self):
        return self.params.n

    @property
    def sides(self):
        cell = self.params.l + self.params.d
        return tuple(c * cell for c in self.selected.extent)

    def branch(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = self.n
        extent = self.selected.extent
        cell = self.params.l + self.params.d
        sides = np.array(self.sides)
        k = np.floor(x / cell).astype(np.int64)
        best_r2 = np.full(len(x), np.inf)
        best_col = np.zeros(len(x), dtype=np.int64)
        for off in np.ndindex(*(3,) * n):
            koff = np.mod(k + (np.array(off) - 1), extent)
            flat = np.ravel_multi_index(tuple(koff.T), extent)
            centers = self.selected.centers_x[flat]
            dx = x - centers
            dx -= np.round(dx / sides) * sides
            r2 = np.sum(dx * dx, axis=1)
            better = r2 < best_r2
            best_r2[better] = r2[better]
            best_col[better] = flat[better]
        return np.sqrt(best_r2), best_col

    def eval(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r, col = self.branch(x)
        if np.any(r > self.params.r_out * (1 + 1e-9)):
            raise RuntimeError("covering violated for MCF barrier")
        w, piece = w_local_eval(np.minimum(r, self.params.r_out), self.params)
        return w + self.glue.value(x), piece, r, col

    def piece_value(self, x, piece, col):
        """Value of the given smooth piece extended slightly past its
        boundary (for one-piece FD stencils)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sides = np.array(self.sides)
        centers = self.selected.centers_x[col]
        dx = x - centers
        dx -= np.round(dx / sides) * sides
        r = np.sqrt(np.sum(dx * dx, axis=1))
        if piece == 0:
            F = self.params.F_in
            prof = -np.sqrt(F * F - r * r) + math.sqrt(F * F - self.params.r_in**2)
        else:
            prof = annulus_profile(self.params).value(r)
        return prof + self.glue.value(x), r


def build_supersolution_mcf(field, sites, surface, selected, params):
    cell_values = (selected.centers_y + params.r0).reshape(selected.extent)
    glue = build_glue(cell_values, params.l, params.d, params.h)
    return SupersolutionMCF(field=field, selected=selected, params=params, glue=glue)


def build_mcf_pipeline(shape, lam, dist, seed, cells, cap=8, params=None, **recipe_kw):
    if params is None:
        params = choose_parameters_mcf(shape, lam, dist, **recipe_kw)
    cells_t = tuple(int(c) for c in np.atleast_1d(cells))
    if len(cells_t) == 1 and shape.n > 1:
        cells_t = cells_t * shape.n
    cell = params.l + params.d
    sides = tuple(c * cell for c in cells_t)
    y_hi = cap * params.h + 2 * shape.r1 + shape.r0 + params.r_in + 1.0
    field = sample_field_torus(sides, y_hi, lam, dist, shape, seed)
    sites = openness_from_field(field, params.l, params.d, params.h, params.fbar,
                                cells_t, cap)
    surface = minimal_lipschitz_surface(sites)
    selected = select_obstacles(field, sites, surface)
    sup = build_supersolution_mcf(field, sites, surface, selected, params)
    return sup, sites, surface


# --- curvature via finite differences -----------------------------------------


_FD1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_FD2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_OFFS = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])


def kappa_fd(value_fn, x, delta, n):
    """Graph mean curvature div(grad u/(n sqrt(1+|grad u|^2))) by 4th-order
    central differences of the scalar field value_fn (2nd-order mixed term).

    x: (m, n) points; value_fn maps (m', n) -> (m',).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m = len(x)
    grads = np.zeros((m, n))
    d2 = np.zeros((m, n, n))
    for a in range(n):
        pts = x[None, :, :] + np.zeros((5, m, n))
        pts[:, :, a] += _OFFS[:, None] * delta
        vals = value_fn(pts.reshape(-1, n)).reshape(5, m)
        grads[:, a] = np.tensordot(_FD1, vals, axes=(0, 0)) / delta
        d2[:, a, a] = np.tensordot(_FD2, vals, axes=(0, 0)) / delta**2
    for a in range(n):
        for b in range(a + 1, n):
            ea = np.zeros(n); ea[a] = delta
            eb = np.zeros(n); eb[b] = delta
            vpp = value_fn(x + ea + eb)
            vpm = value_fn(x + ea - eb)
            vmp = value_fn(x - ea + eb)
            vmm = value_fn(x - ea - eb)
            mixed = (vpp - vpm - vmp + vmm) / (4 * delta * delta)
            d2[:, a, b] = mixed
            d2[:, b, a] = mixed
    nu2 = 1.0 + np.sum(grads * grads, axis=1)
    nu = np.sqrt(nu2)
    lap = np.trace(d2, axis1=1, axis2=2)
    quad = np.einsum("mab,ma,mb->m", d2, grads, grads)
    return (lap / nu - quad / (nu2 * nu)) / n, grads, d2


def expansion_terms(sup, x):
    """The divergence-expansion term groups for kappa(w_out + glue) at one
    annulus point, each evaluated numerically (diagnostic only)."""
    params = sup.params
    n = params.n
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _, col = sup.branch(x)
    sides = np.array(sup.sides)
    dx = x - sup.selected.centers_x[col]
    dx -= np.round(dx / sides) * sides
    r = np.sqrt(np.sum(dx * dx, axis=1))
    xhat = dx / r[:, None]
    w1 = w_out_slope(r, params)
    w2 = w_out_slope_deriv(r, params)
    grad_w = w1[:, None] * xhat
    eye = np.eye(n)[None, :, :]
    proj = xhat[:, :, None] * xhat[:, None, :]
    hess_w = w2[:, None, None] * proj + (w1 / r)[:, None, None] * (eye - proj)
    grad_g = sup.glue.gradient(x)
    hess_g = sup.glue.hessian(x)
    grad_t = grad_w + grad_g
    nu_w = np.sqrt(1.0 + np.sum(grad_w**2, axis=1))
    nu_t = np.sqrt(1.0 + np.sum(grad_t**2, axis=1))
    lap_w = np.trace(hess_w, axis1=1, axis2=2)
    lap_g = np.trace(hess_g, axis1=1, axis2=2)
    q = lambda H, u, v: np.einsum("mab,ma,mb->m", H, u, v)
    terms = {
        "kappa(w_out)": (lap_w / nu_w - q(hess_w, grad_w, grad_w) / nu_w**3) / n,
        "lap_glue/nu": lap_g / nu_t / n,
        "lap_w nu-shift": lap_w * (1.0 / nu_t - 1.0 / nu_w) / n,
        "(D2w gw, gw) nu3-shift": q(hess_w, grad_w, grad_w)
        * (1.0 / nu_w**3 - 1.0 / nu_t**3) / n,
        "(D2g gt, gt)/nu3": -q(hess_g, grad_t, grad_t) / nu_t**3 / n,
        "2(D2w gw, gg)/nu3": -2.0 * q(hess_w, grad_w, grad_g) / nu_t**3 / n,
        "(D2w gg, gg)/nu3": -q(hess_w, grad_g, grad_g) / nu_t**3 / n,
    }
    return terms


def certify_mcf(sup, F, grid_spacing=0.05, tol=1e-4, fd_delta=None):
    """Grid verification of 0 >= kappa(w) + f(x, w) + F.

    kappa of the composite is computed per smooth piece by finite
    differences of piece values (profile quadrature plus glue), so the
    check is independent of the analytic curvature algebra.  Points whose
    stencil crosses a piece boundary fall into the thin ridge bands covered
    by the jump-sign checks.
    """
    params = sup.params
    n = sup.n
    if fd_delta is None:
        fd_delta = min(params.r_in, params.d) / 60.0
    pts = _grid_points(sup.sides, grid_spacing)
    w, piece, r, col = sup.eval(pts)
    fvals = sup.field.eval(pts, w)

    prof = annulus_profile(params)
    residual = np.full(len(pts), -np.inf)
    skipped = 0
    for pc in (0, 1):
        mask = piece == pc
        if pc == 0:
            ok = mask & (r + 2.5 * fd_delta < params.F_in) & (r < params.r_in - fd_delta * 0)
        else:
            ok = mask & (r - 2.5 * fd_delta > prof.r_lo) & (r + 2.5 * fd_delta < prof.r_hi)
        skipped += int(np.count_nonzero(mask & ~ok))
        if not np.any(ok):
            continue
        idx = np.flatnonzero(ok)
        cols = col[idx]

        def piece_fn(q, _pc=pc, _cols=cols, _m=len(idx)):
            reps = len(q) // _m
            cc = np.tile(_cols, reps)
            return sup.piece_value(np.mod(q, np.array(sup.sides)), _pc, cc)[0]

        kap, grads, _ = kappa_fd(piece_fn, pts[idx], fd_delta, n)
        # stencil must stay on the same branch; points near Voronoi ridges
        # are skipped (their kink is a downward min-jump checked separately)
        rr, cc2 = sup.branch(pts[idx])
        same = cc2 == cols
        residual[idx[same]] = (kap + fvals[idx] + F)[same]
        skipped += int(np.count_nonzero(~same))

    cell = params.l + params.d
    xi = pts - np.floor(pts / cell) * cell
    in_gap = np.any(xi > params.l, axis=1)
    evaluated = residual > -np.inf
    regions = []
    for name, mask in (
        ("cap", (piece == 0) & ~in_gap & evaluated),
        ("annulus", (piece == 1) & ~in_gap & evaluated),
        ("glue", in_gap & evaluated),
    ):
        if np.any(mask):
            worst_i = np.argmax(np.where(mask, residual, -np.inf))
            regions.append(RegionResidual(
                name=name, count=int(np.count_nonzero(mask)),
                worst=float(residual[worst_i]),
                worst_at=tuple(float(cq) for cq in pts[worst_i]), tol=tol,
            ))
        else:
            regions.append(RegionResidual(name=name, count=0, worst=-np.inf,
                                          worst_at=(), tol=tol))

    # inner-sphere jump: cap slope vs annulus slope, one-sided differences
    sphere_checks = sphere_failures = 0
    delta = fd_delta / 2.0
    for ci in range(len(sup.selected.centers_y)):
        center = sup.selected.centers_x[ci]
        for axis in range(n):
            for sgn in (-1.0, 1.0):
                e = np.zeros(n)
                e[axis] = sgn
                ts = params.r_in + delta * np.array([-2.0, -1.0, 1.0, 2.0])
                qs = np.mod(center[None, :] + ts[:, None] * e[None, :],
                            np.array(sup.sides))
                vv = sup.eval(qs)[0]
                s_in = (vv[1] - vv[0]) / delta
                s_out = (vv[3] - vv[2]) / delta
                curv = abs(float(w_out_slope_deriv(np.asarray(params.r_in), params))) + \
                    params.F_in / max(params.F_in**2 - params.r_in**2, 1e-12)
                tol_j = 4.0 * delta * curv + 1e-9
                sphere_checks += 1
                if s_out > s_in + tol_j:
                    sphere_failures += 1
    slope_in = w_in_slope_at_rin(params)
    slope_out = float(w_out_slope(np.asarray(params.r_in), params))
    analytic_jump_ok = slope_out <= slope_in + 1e-12

    # Voronoi ridges: min of radial profiles, jump down by construction;
    # verified on a sample of branch-flip grid edges
    ridge_checks = ridge_failures = 0
    shape_grid = tuple(len(np.arange(0.0, s, grid_spacing)) for s in sup.sides)
    col_grid = col.reshape(shape_grid)
    pts_grid = pts.reshape(shape_grid + (n,))
    for axis in range(n):
        flip = col_grid != np.roll(col_grid, -1, axis=axis)
        idx = np.argwhere(flip)
        if len(idx) > 200:
            sel = np.linspace(0, len(idx) - 1, 200).astype(int)
            idx = idx[sel]
        e = np.zeros(n)
        e[axis] = 1.0
        for ij in idx:
            a = pts_grid[tuple(ij)]
            cols_a = col_grid[tuple(ij)]
            lo, hi = 0.0, grid_spacing
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                q = np.mod(a + mid * e, np.array(sup.sides))
                if sup.branch(q[None, :])[1][0] == cols_a:
                    lo = mid
                else:
                    hi = mid
            t_star = 0.5 * (lo + hi)
            ts = t_star + delta * np.array([-2.0, -1.0, 1.0, 2.0])
            qs = np.mod(a[None, :] + ts[:, None] * e[None, :], np.array(sup.sides))
            vv = sup.eval(qs)[0]
            s_before = (vv[1] - vv[0]) / delta
            s_after = (vv[3] - vv[2]) / delta
            # curvature bound at the branch radius of the crossing point
            r_star = max(float(sup.branch(qs[1:2])[0][0]), params.r_in)
            curv = 2.0 * abs(float(w_out_slope_deriv(
                np.asarray(r_star), params))) + abs(params.F_out) * 4
            tol_j = 4.0 * delta * curv + 1e-9
            ridge_checks += 1
            if s_after > s_before + tol_j:
                ridge_failures += 1

    cond = check_mcf_conditions(params, F=F)
    operative = [ok for k, ok in cond.items() if "advisory" not in k]
    w_min = float(np.min(w))
    passed = (
        all(rr.ok for rr in regions)
        and ridge_failures == 0
        and sphere_failures == 0
        and analytic_jump_ok
        and all(operative)
        and w_min >= 0.0
    )
    notes = {
        "conditions": cond,
        "skipped_stencil_points": skipped,
        "fd_delta": fd_delta,
        "quad_error": prof.quad_error,
        "glue_norms": sup.glue.measured_norms(),
    }
    # expansion-term diagnostic at the worst evaluated glue point
    gap_eval = in_gap & evaluated & (piece == 1)
    if np.any(gap_eval):
        wi = np.argmax(np.where(gap_eval, residual, -np.inf))
        terms = expansion_terms(sup, pts[wi][None, :])
        notes["expansion_terms_at_worst_glue"] = {
            k: float(v[0]) for k, v in terms.items()
        }
    return CertificateReport(
        model="mcf", passed=bool(passed), F=float(F), regions=regions,
        ridge_checks=ridge_checks, ridge_failures=ridge_failures,
        sphere_checks=sphere_checks, sphere_failures=sphere_failures,
        param_checks=cond, v_min=w_min,
        grid_spacing=float(grid_spacing), grid_points=len(pts), notes=notes,
    )
