"""Explicit time integration of the interface models on a periodic torus.

Both models advance with forward Euler under a monotone CFL bound, so the
discrete comparison principle holds: ordered states stay ordered, and with
the obstacle-free start (no forcing below y = 0) every update is
nonnegative.  The obstacle field is evaluated through a precomputed
(grid point, obstacle) adjacency, one bincount per step.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Outcome(Enum):
    PINNED = "pinned"
    ESCAPED = "escaped"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Grid:
    n: int
    points: tuple  # nodes per axis
    side: tuple    # physical torus side per axis

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("simulation supports n in {1, 2}")
        if len(self.points) != self.n or len(self.side) != self.n:
            raise ValueError("points/side must have one entry per axis")

    @property
    def dx(self):
        return tuple(s / p for s, p in zip(self.side, self.points))

    @property
    def total(self):
        return int(np.prod(self.points))

    def axes(self):
        return [np.arange(p) * d for p, d in zip(self.points, self.dx)]

    def coordinates(self):
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.column_stack([g.ravel() for g in grids])


class GridField:
    """Field values on the fixed lateral grid, fast in the moving height.

    Precomputes, for every grid node, the obstacles within lateral reach
    r1 (wrapped); each step only the height offsets change.
    """

    def __init__(self, grid, obstacle_field):
        self.grid = grid
        self.field = obstacle_field
        self.r1 = obstacle_field.shape.r1
        shape = obstacle_field.shape
        m = obstacle_field.count
        if m == 0:
            self.edge_pt = np.empty(0, dtype=np.int64)
            self.edge_obs = np.empty(0, dtype=np.int64)
            self.edge_dx2 = np.empty(0)
            self.obs_y = np.empty(0)
            self.obs_s = np.empty(0)
            return
        per_axis_idx = []
        per_axis_dx = []
        for a in range(grid.n):
            dxa = grid.dx[a]
            na = grid.points[a]
            half = int(np.floor(self.r1 / dxa)) + 1
            offs = np.arange(-half, half + 1)
            j0 = np.round(obstacle_field.centers_x[:, a] / dxa).astype(np.int64)
            idx = (j0[:, None] + offs[None, :]) % na
            dd = idx * dxa - obstacle_field.centers_x[:, a][:, None]
            dd -= np.round(dd / grid.side[a]) * grid.side[a]
            per_axis_idx.append(idx)
            per_axis_dx.append(dd)
        if grid.n == 1:
            pt = per_axis_idx[0]
            dx2 = per_axis_dx[0] ** 2
            obs = np.repeat(np.arange(m), pt.shape[1])
            pt = pt.ravel()
            dx2 = dx2.ravel()
        else:
            wx = per_axis_idx[0].shape[1]
            wy = per_axis_idx[1].shape[1]
            pt = (per_axis_idx[0][:, :, None] * grid.points[1]
                  + per_axis_idx[1][:, None, :])
            dx2 = per_axis_dx[0][:, :, None] ** 2 + per_axis_dx[1][:, None, :] ** 2
            obs = np.repeat(np.arange(m), wx * wy)
            pt = pt.reshape(m, -1).ravel()
            dx2 = dx2.reshape(m, -1).ravel()
        keep = dx2 < self.r1**2
        edge_pt = pt[keep]
        edge_obs = obs[keep]
        edge_dx2 = dx2[keep]
        obs_y = obstacle_field.centers_y[edge_obs]
        # sort edges by obstacle height: steps only touch the prefix of
        # obstacles the interface can currently reach
        order = np.argsort(obs_y, kind="stable")
        self.edge_pt = edge_pt[order]
        self.edge_obs = edge_obs[order]
        self.edge_dx2 = edge_dx2[order]
        self.obs_y = obs_y[order]
        self.obs_s = obstacle_field.strengths[self.edge_obs]
        self._amp = shape.amplitude
        self._smooth = shape.smoothness

    def f_of(self, u_flat, u_range=None):
        """f(x_i, u_i) for the whole grid, exact within support.

        Only edges whose obstacle height lies within r1 of the current
        height range contribute; the rest of the sorted edge list is
        skipped without being touched.
        """
        if len(self.edge_pt) == 0:
            return np.zeros(self.grid.total)
        if u_range is None:
            u_range = (float(np.min(u_flat)), float(np.max(u_flat)))
        lo = np.searchsorted(self.obs_y, u_range[0] - self.r1, side="left")
        hi = np.searchsorted(self.obs_y, u_range[1] + self.r1, side="right")
        if lo >= hi:
            return np.zeros(self.grid.total)
        pt = self.edge_pt[lo:hi]
        dy = u_flat[pt] - self.obs_y[lo:hi]
        r2 = self.edge_dx2[lo:hi] + dy * dy
        mask = r2 < self.r1**2
        t2 = r2[mask] / self.r1**2
        vals = -self._amp * self.obs_s[lo:hi][mask] * np.exp(
            -self._smooth * t2 / (1.0 - t2)
        )
        return np.bincount(pt[mask], weights=vals, minlength=self.grid.total)

    def df_dy_sup(self, y_hi=None, resolution=0.04):
        """Grid estimate of sup |df/dy| for the step-size bound."""
        f = self.field
        if f.count == 0:
            return 0.0
        if y_hi is None:
            y_hi = f.window.y_hi
        return f.max_abs_df_dy(
            [0.0] * self.grid.n, list(self.grid.side), 0.0, y_hi,
            resolution=resolution,
        )


@dataclass
class SimState:
    grid: Grid
    u: np.ndarray          # flattened height field
    t: float
    F: float
    model: str             # "qew" | "mcf"
    gridfield: GridField | None = None
    grad_cap: float = 10.0
    L_f: float | None = None

    @classmethod
    def initial(cls, grid, obstacle_field=None, F=0.0, model="qew", u0=None,
                grad_cap=10.0):
        u = np.zeros(grid.total) if u0 is None else np.asarray(u0, dtype=float).ravel().copy()
        gf = GridField(grid, obstacle_field) if obstacle_field is not None else None
        return cls(grid=grid, u=u, t=0.0, F=float(F), model=model,
                   gridfield=gf, grad_cap=grad_cap)

    def f_values(self):
        if self.gridfield is None:
            return np.zeros(self.grid.total)
        return self.gridfield.f_of(self.u)

    def shaped(self):
        return self.u.reshape(self.grid.points)

    def lap(self):
        v = self.shaped()
        out = np.zeros_like(v)
        for a in range(self.grid.n):
            out += (np.roll(v, 1, axis=a) + np.roll(v, -1, axis=a) - 2.0 * v) \
                / self.grid.dx[a] ** 2
        return out.ravel()

    def gradients(self):
        v = self.shaped()
        gs = []
        for a in range(self.grid.n):
            gs.append(((np.roll(v, -1, axis=a) - np.roll(v, 1, axis=a))
                       / (2.0 * self.grid.dx[a])).ravel())
        return gs

    def max_grad(self):
        gs = self.gradients()
        g2 = np.zeros_like(gs[0])
        for g in gs:
            g2 += g * g
        return float(np.sqrt(np.max(g2)))

    def copy(self):
        return SimState(grid=self.grid, u=self.u.copy(), t=self.t, F=self.F,
                        model=self.model, gridfield=self.gridfield,
                        grad_cap=self.grad_cap, L_f=self.L_f)


def cfl_dt_qew(state, factor=0.9):
    """Monotone step bound 0.9 / (2n/dx^2 + L_f).

    Stronger than each of the two separate bounds (diffusion, forcing
    slope); the combination keeps the update monotone in the own-node
    value, which the discrete comparison principle needs.  Returns
    (dt, diffusion_bound, forcing_bound).
    """
    diff = sum(2.0 / d**2 for d in state.grid.dx)
    if state.L_f is None:
        state.L_f = state.gridfield.df_dy_sup() if state.gridfield else 0.0
    dt = factor / (diff + state.L_f + 1e-300)
    return dt, factor * 1.0 / diff, factor / (state.L_f + 1e-300)


def cfl_dt_mcf(state, factor=0.9):
    """Curvature-operator bound 0.9 dx^2 n / (2 (1 + max|grad u|^2))."""
    g = state.max_grad()
    dxmin = min(state.grid.dx)
    return factor * dxmin**2 * state.grid.n / (2.0 * (1.0 + g * g))


def step_qew(state, dt, clamp=None):
    """One explicit Euler step of du/dt = Lap u + f(x, u) + F.

    Returns the applied update array.  clamp: None | "up" | "down" for the
    one-sided phase dynamics.
    """
    required, _, _ = cfl_dt_qew(state)
    if dt > required * (1.0 + 1e-9):
        raise ValueError(f"step dt={dt} violates the monotone bound {required}")
    du = dt * (state.lap() + state.f_values() + state.F)
    if clamp == "up":
        du = np.maximum(du, 0.0)
    elif clamp == "down":
        du = np.minimum(du, 0.0)
    state.u += du
    state.t += dt
    return du


def step_mcf(state, dt, clamp=None):
    """One explicit Euler step of the graph flow

    du/dt = (Lap u - (D2u grad u, grad u)/(1+|grad u|^2)) / n
            + sqrt(1+|grad u|^2) (f(x, u) + F)
    """
    g = state.max_grad()
    if g > state.grad_cap:
        raise RuntimeError(
            f"gradient {g} exceeded cap {state.grad_cap}: interface left the "
            "graph regime"
        )
    dxmin = min(state.grid.dx)
    required = 0.9 * dxmin**2 * state.grid.n / (2.0 * (1.0 + g * g))
    if dt > required * (1.0 + 1e-9):
        raise ValueError(f"step dt={dt} violates the curvature bound {required}")
    v = state.shaped()
    n = state.grid.n
    grads = []
    lap = np.zeros_like(v)
    for a in range(n):
        grads.append((np.roll(v, -1, axis=a) - np.roll(v, 1, axis=a))
                     / (2.0 * state.grid.dx[a]))
        lap += (np.roll(v, 1, axis=a) + np.roll(v, -1, axis=a) - 2.0 * v) \
            / state.grid.dx[a] ** 2
    g2 = np.zeros_like(v)
    for ga in grads:
        g2 += ga * ga
    quad = np.zeros_like(v)
    for a in range(n):
        for b in range(n):
            if a == b:
                dab = (np.roll(v, 1, axis=a) + np.roll(v, -1, axis=a) - 2.0 * v) \
                    / state.grid.dx[a] ** 2
            else:
                dab = (np.roll(np.roll(v, -1, axis=a), -1, axis=b)
                       - np.roll(np.roll(v, -1, axis=a), 1, axis=b)
                       - np.roll(np.roll(v, 1, axis=a), -1, axis=b)
                       + np.roll(np.roll(v, 1, axis=a), 1, axis=b)) \
                    / (4.0 * state.grid.dx[a] * state.grid.dx[b])
            quad += dab * grads[a] * grads[b]
    nu = np.sqrt(1.0 + g2)
    curvature = (lap - quad / (1.0 + g2)) / n
    forcing = nu.ravel() * (state.f_values() + state.F)
    du = dt * (curvature.ravel() + forcing)
    if clamp == "up":
        du = np.maximum(du, 0.0)
    elif clamp == "down":
        du = np.minimum(du, 0.0)
    state.u += du
    state.t += dt
    return du


def step(state, dt, clamp=None):
    if state.model == "qew":
        return step_qew(state, dt, clamp=clamp)
    return step_mcf(state, dt, clamp=clamp)


@dataclass(frozen=True)
class StopSpec:
    """Stopping rules: pin detection (sustained small updates), escape
    height, and a wall time in simulated units."""

    v_tol: float          # velocity threshold; pinned when max|du|/dt < v_tol
    tau: float            # quiet window duration
    H_esc: float          # escape height
    T_max: float
    sample_dt: float = 0.1


@dataclass
class Trace:
    rows: list = field(default_factory=list)
    min_update: float = np.inf
    max_velocity_seen: float = 0.0
    max_dt: float = 0.0

    def add(self, t, u, max_du, max_grad):
        self.rows.append((t, float(np.mean(u)), float(np.max(u)), float(np.min(u)),
                          float(max_du), float(max_grad)))

    def to_csv(self):
        buf = io.StringIO()
        buf.write("t,mean_u,max_u,min_u,max_step_update,max_grad\n")
        for r in self.rows:
            buf.write(",".join(repr(float(x)) for x in r) + "\n")
        return buf.getvalue()

    @property
    def t(self):
        return np.array([r[0] for r in self.rows])

    @property
    def mean_u(self):
        return np.array([r[1] for r in self.rows])


def run_until(state, stop, clamp=None, dt=None, snapshot_dt=None,
              snapshots=None):
    """Advance until Pinned, Escaped, or Timeout; returns (outcome, trace).

    Pinned: every per-step update stayed below v_tol * dt for a window of
    duration tau.  Escaped: max u reached H_esc.  Timeout otherwise.
    With snapshot_dt set, (t, field copy) pairs are appended to the
    snapshots list at that interval.
    """
    trace = Trace()
    if dt is None:
        dt = cfl_dt_qew(state)[0] if state.model == "qew" else None
    t_quiet_start = state.t
    next_sample = state.t
    next_snapshot = state.t if snapshot_dt is not None else None
    last_max_du = 0.0
    last_recorded = -np.inf

    def record():
        nonlocal last_recorded
        if state.t > last_recorded:
            trace.add(state.t, state.u, last_max_du, state.max_grad())
            last_recorded = state.t

    while True:
        if state.t >= next_sample - 1e-12:
            record()
            next_sample += stop.sample_dt
        if next_snapshot is not None and state.t >= next_snapshot - 1e-12:
            snapshots.append((state.t, state.u.copy()))
            next_snapshot += snapshot_dt
        if float(np.max(state.u)) >= stop.H_esc:
            record()
            return Outcome.ESCAPED, trace
        if state.t - t_quiet_start >= stop.tau and state.t > 0:
            record()
            return Outcome.PINNED, trace
        if state.t >= stop.T_max:
            record()
            return Outcome.TIMEOUT, trace
        dt_step = dt if dt is not None else cfl_dt_mcf(state)
        dt_step = min(dt_step, stop.T_max - state.t + 1e-15)
        du = step(state, dt_step, clamp=clamp)
        last_max_du = float(np.max(np.abs(du)))
        trace.min_update = min(trace.min_update, float(np.min(du)))
        trace.max_velocity_seen = max(trace.max_velocity_seen, last_max_du / dt_step)
        trace.max_dt = max(trace.max_dt, dt_step)
        if last_max_du >= stop.v_tol * dt_step:
            t_quiet_start = state.t
    # unreachable


def update_roundoff_scale(state, dt):
    """Magnitude of the largest term entering one explicit update: the
    Laplacian contribution dt * max|u| / dx^2.  Monotonicity can only be
    asserted down to roundoff of this scale."""
    umax = float(np.max(np.abs(state.u))) + 1.0
    return max(dt, 1e-300) * umax / min(state.grid.dx) ** 2


def comparison_check(state_lo, state_hi, steps, dt=None, tol=0.0):
    """Step two ordered states with the common field and force; true iff
    the pointwise ordering survives every step."""
    if dt is None:
        dt = min(cfl_dt_qew(state_lo)[0], cfl_dt_qew(state_hi)[0]) \
            if state_lo.model == "qew" else min(cfl_dt_mcf(state_lo), cfl_dt_mcf(state_hi))
    if np.any(state_lo.u > state_hi.u + tol):
        return False
    for _ in range(steps):
        step(state_lo, dt)
        step(state_hi, dt)
        if np.any(state_lo.u > state_hi.u + tol):
            return False
    return True


def monotone_check(trace, tol):
    """True iff no grid point ever moved down by more than tol in one step."""
    return trace.min_update >= -tol
