"""Convexified per-iteration subproblem.

The decision vector holds (x_t, y_t, z_t, q_t) for t = 1..N, flattened slot
by slot. Internally every slot-local function is evaluated on an extended
vector ``u = [ghost(-1), ghost(0), v]`` where the two ghost slots carry the
fixed start waypoint and, for receding-horizon plans, the altitude before it.
Index arrays therefore never need special cases at t = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .banded import StructuredMatrix
from .power import DomainError, PropulsionParams, SolarLinearApprox
from .scenario import ScenarioConfig, TargetTrack, TrajectoryPlan

N_GHOST = 8  # two ghost slots of four entries each
Q_MIN = 1e-6


class InfeasibleIterateError(RuntimeError):
    """The expansion point violates the constraint set; run phase-1 first."""


# ----------------------------------------------------------------------------
# scalar pieces


@dataclass(frozen=True)
class SCAExpansion:
    """Affine minorant const + cx*dx + cy*dy + cq*q of q^2 + |dxy|^2 / v0hat^2."""

    const: np.ndarray
    cx: np.ndarray
    cy: np.ndarray
    cq: np.ndarray
    v0hat_sq: float

    def value(self, dx, dy, q):
        return self.const + self.cx * dx + self.cy * dy + self.cq * q

    def rhs_exact(self, dx, dy, q):
        return np.asarray(q) ** 2 + (np.asarray(dx) ** 2 + np.asarray(dy) ** 2) / self.v0hat_sq


def expand_q_constraint(iterate: TrajectoryPlan, slot, cfg: ScenarioConfig) -> SCAExpansion:
    """Linearise the right side of 1/q^2 <= q^2 + |dxy|^2/v0hat^2 at ``iterate``.

    ``slot`` is a 1-based slot index or an index array; ``slice(None)`` expands
    every slot.
    """
    steps = iterate.steps()
    if isinstance(slot, slice):
        idx = np.arange(iterate.n_slots)[slot]
    else:
        idx = np.atleast_1d(np.asarray(slot)) - 1
    ql = iterate.q[idx]
    if np.any(ql <= 0):
        raise DomainError("expansion point needs q > 0; clamp to q_min first")
    v0hat_sq = (cfg.propulsion.v0 * cfg.delta) ** 2
    ul, wl = steps[idx, 0], steps[idx, 1]
    const = -(ql**2) - (ul**2 + wl**2) / v0hat_sq
    out = SCAExpansion(const, 2 * ul / v0hat_sq, 2 * wl / v0hat_sq, 2 * ql, v0hat_sq)
    if np.ndim(slot) == 0 and not isinstance(slot, slice):
        return SCAExpansion(*(np.asarray(a)[0] for a in (out.const, out.cx, out.cy, out.cq)), v0hat_sq)
    return out


def propulsion_coeffs(p: PropulsionParams, delta: float) -> tuple[float, float]:
    """Coefficients of |dxy|^2 and |dxy|^3 in the surrogate propulsion power."""
    k_sq = 3 * p.p0 / (p.u_tip**2 * delta**2)
    k_cube = p.d_f * p.rho * p.s * p.a_disc / (2 * delta**3)
    return k_sq, k_cube


def surrogate_propulsion(dx, dy, q, p: PropulsionParams, delta: float):
    """Convex surrogate propulsion power of one slot (W)."""
    if not delta > 0:
        raise DomainError("slot duration must be > 0")
    k_sq, k_cube = propulsion_coeffs(p, delta)
    r2 = np.asarray(dx, dtype=float) ** 2 + np.asarray(dy, dtype=float) ** 2
    out = p.p0 + k_sq * r2 + p.p1 * np.asarray(q, dtype=float) + k_cube * r2**1.5
    return float(out) if np.ndim(out) == 0 else out


def plan_surrogate_propulsion(plan: TrajectoryPlan, cfg: ScenarioConfig) -> np.ndarray:
    st = plan.steps()
    return surrogate_propulsion(st[:, 0], st[:, 1], plan.q, cfg.propulsion, cfg.delta)


def plan_thrust(plan: TrajectoryPlan, cfg: ScenarioConfig) -> np.ndarray:
    return cfg.thrust.weight_force * plan.steps()[:, 2] / cfg.delta


def energy_causality_rows(
    plan: TrajectoryPlan, approx: SolarLinearApprox, cfg: ScenarioConfig, carry: float = 0.0
) -> np.ndarray:
    """Cumulative energy margins (in W*slot units); feasible iff all >= 0.

    ``carry`` is the net surplus (harvested minus consumed) already banked
    by earlier slots, in the same units.
    """
    consumed = plan_surrogate_propulsion(plan, cfg) + plan_thrust(plan, cfg)
    harvested = approx(plan.waypoints[1:, 2])
    return np.cumsum(harvested - consumed) + cfg.eta0 * cfg.e0 / cfg.delta + carry


def gradient_f(plan: TrajectoryPlan, track: TargetTrack, cfg: ScenarioConfig,
               mu1: float | None = None, mu2: float | None = None) -> np.ndarray:
    """Gradient of sum_t f_t over the decision vector, shape (N, 4)."""
    mu1 = cfg.mu1 if mu1 is None else mu1
    mu2 = cfg.mu2 if mu2 is None else mu2
    n = plan.n_slots
    wp = plan.waypoints
    g = np.zeros((n, 4))
    g[:, 0] = 2 * mu1 * (wp[1:, 0] - track.a[1 : n + 1])
    g[:, 1] = 2 * mu1 * (wp[1:, 1] - track.b[1 : n + 1])
    dz = np.diff(wp[:, 2])
    g[:, 2] = 2 * mu2 * dz
    g[:-1, 2] -= 2 * mu2 * dz[1:]
    return g


def gradient_pv(cfg: ScenarioConfig, n_slots: int | None = None) -> np.ndarray:
    """Gradient of the summed thrust power, shape (N, 4).

    The per-slot terms telescope, so only the last altitude keeps a nonzero
    coefficient (the start altitude is fixed).
    """
    n = cfg.n_slots if n_slots is None else n_slots
    g = np.zeros((n, 4))
    w = cfg.thrust.weight_force / cfg.delta
    g[:, 2] += w
    g[:-1, 2] -= w
    return g


def surrogate_objective(plan: TrajectoryPlan, track: TargetTrack, cfg: ScenarioConfig,
                        mu1=None, mu2=None, dst: bool = False) -> float:
    """Unscaled objective sum_t (P~_h + P_v - f_t); the DST variant swaps the
    propulsion sum for the squared 2D path length."""
    from .scenario import disguise_metric

    f = disguise_metric(plan, track, cfg, mu1, mu2).sum()
    pv = plan_thrust(plan, cfg).sum()
    if dst:
        return float(np.linalg.norm(plan.steps()[:, :2], axis=1).sum() ** 2 + pv - f)
    return float(plan_surrogate_propulsion(plan, cfg).sum() + pv - f)


# ----------------------------------------------------------------------------
# subproblem assembly


@dataclass
class BuildOptions:
    mdr: bool = False
    dst: bool = False
    q_min: float = Q_MIN
    smoothing_eps: float = 1e-6
    # net surplus banked before slot 1 (W*slot units)
    carry: float = 0.0
    # climb of the slot preceding slot 1 (receding horizon); None offline
    prev_dz: float | None = None
    # per-slot tightening of the flight region (m)
    ffr_margin: np.ndarray | None = None
    # replace the 3D distance rows by this quadratic penalty weight
    soft_distance: float | None = None
    mu1: float | None = None
    mu2: float | None = None


@dataclass
class LocalBlock:
    """Rows g_i(u) <= 0 that each touch a handful of entries of u."""

    name: str
    idx: np.ndarray  # (m, k) indices into u
    kind: str  # 'affine' or 'convex'
    n_rows: int  # descriptor count (two-sided rows count once)
    coef: np.ndarray | None = None  # affine rows: (m, k)
    const: np.ndarray | None = None  # affine rows: (m,)
    fn: object = None  # convex rows: u -> (vals, grads, hess)

    def evaluate(self, u):
        if self.kind == "affine":
            vals = (self.coef * u[self.idx]).sum(axis=1) + self.const
            return vals, self.coef, None
        return self.fn(u)

    def values(self, u):
        if self.kind == "affine":
            return (self.coef * u[self.idx]).sum(axis=1) + self.const
        return self.fn(u, values_only=True)


@dataclass
class ConvexSubproblem:
    n_slots: int
    ghost: np.ndarray  # (8,)
    center: np.ndarray  # proximal centre, (4N,)
    M: float
    linear_cost: np.ndarray  # (4N,)
    blocks: list[LocalBlock]
    causality: "CausalityRows | None"
    propulsion: PropulsionParams
    delta: float
    smoothing_eps: float
    dst: bool = False
    soft_distance: "SoftDistance | None" = None
    row_counts: dict = field(default_factory=dict)
    _pairs: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return 4 * self.n_slots

    @property
    def n_u(self) -> int:
        return self.n + N_GHOST

    @property
    def n_constraints(self) -> int:
        return sum(self.row_counts.values())

    def extend(self, v):
        return np.concatenate([self.ghost, v])

    # --- objective ---------------------------------------------------------

    def _steps(self, u):
        pos = u.reshape(-1, 4)[1:]  # slots 0..N
        return np.diff(pos[:, :2], axis=0)

    def smooth_cost(self, v, exact: bool = False) -> float:
        """Convex propulsion part of the objective (DST: squared path length)."""
        u = self.extend(v)
        st = self._steps(u)
        eps = 0.0 if exact else self.smoothing_eps
        r2 = (st**2).sum(axis=1)
        if self.dst:
            return float((np.sqrt(r2 + eps**2) - eps).sum() ** 2)
        k_sq, k_cube = propulsion_coeffs(self.propulsion, self.delta)
        q = v[3::4]
        return float(
            (self.propulsion.p0 + k_sq * r2 + self.propulsion.p1 * q
             + k_cube * ((r2 + eps**2) ** 1.5 - eps**3)).sum()
        )

    def objective(self, v) -> float:
        val = self.linear_cost @ v + 0.5 * self.M * np.sum((v - self.center) ** 2) + self.smooth_cost(v)
        if self.soft_distance is not None:
            val += self.soft_distance.value(self.extend(v))
        return float(val)

    def objective_derivs(self, v, structured: bool = False):
        """Value, gradient and Hessian of the subproblem objective.

        The Hessian is dense unless ``structured``, in which case it is a
        StructuredMatrix (band plus low-rank terms).
        """
        n = self.n
        u = self.extend(v)
        grad_u = np.zeros(self.n_u)
        band = np.zeros((self.bandwidth + 1, n))
        terms = []
        st = self._steps(u)
        if self.dst:
            sidx = _step_index(self.n_slots)
            val_s, g_u, h_pairs, rank1 = _dst_terms(st, self.smoothing_eps, self.n_slots)
            np.add.at(grad_u, sidx, g_u)
            self._band_scatter("dst", sidx, h_pairs, band)
            gvec = np.zeros(self.n_u)
            np.add.at(gvec, sidx, rank1)
            terms.append((gvec[N_GHOST:, None], np.array([[2.0]])))
        else:
            val_s, g_loc, h_loc = _propulsion_local(st, v[3::4], self.propulsion, self.delta, self.smoothing_eps)
            idx = _prop_index(self.n_slots)
            np.add.at(grad_u, idx, g_loc)
            self._band_scatter("propulsion", idx, h_loc, band)
        if self.soft_distance is not None:
            sv, sidx, sg, sh = self.soft_distance.derivs(u)
            val_s += sv
            np.add.at(grad_u, sidx, sg)
            self._band_scatter("soft_distance", sidx, sh, band)
        grad = grad_u[N_GHOST:] + self.linear_cost + self.M * (v - self.center)
        band[0] += self.M
        hess = StructuredMatrix(band, terms)
        val = self.linear_cost @ v + 0.5 * self.M * np.sum((v - self.center) ** 2) + val_s
        return float(val), grad, (hess if structured else hess.dense())

    # --- constraints -------------------------------------------------------

    def constraint_values(self, v) -> np.ndarray:
        u = self.extend(v)
        parts = [b.values(u) for b in self.blocks]
        if self.causality is not None:
            parts.append(self.causality.values(u))
        return np.concatenate(parts) if parts else np.zeros(0)

    def named_values(self, v) -> dict:
        u = self.extend(v)
        out = {b.name: b.values(u) for b in self.blocks}
        if self.causality is not None:
            out["causality"] = self.causality.values(u)
        return out

    def barrier_terms(self, v, a, b, structured: bool = False):
        """Return (sum a_i grad g_i, sum a_i hess g_i + b_i grad g_i grad g_i^T)
        restricted to the decision variables; ``a`` and ``b`` are aligned with
        ``constraint_values``. The matrix is dense unless ``structured``."""
        u = self.extend(v)
        grad = np.zeros(self.n_u)
        band = np.zeros((self.bandwidth + 1, self.n))
        terms = []
        pos = 0
        for blk in self.blocks:
            vals, grads, hess = blk.evaluate(u)
            m = len(vals)
            aa, bb = a[pos : pos + m], b[pos : pos + m]
            pos += m
            np.add.at(grad, blk.idx, grads * aa[:, None])
            w = bb[:, None, None] * grads[:, :, None] * grads[:, None, :]
            if hess is not None:
                w = w + aa[:, None, None] * hess
            self._band_scatter(blk.name, blk.idx, w, band)
        if self.causality is not None:
            m = self.n_slots
            g_c, local, u_mat, c_mat = self.causality.barrier_parts(u, a[pos : pos + m], b[pos : pos + m])
            grad += g_c
            self._band_scatter("causality", self.causality.idx, local, band)
            terms.append((u_mat[N_GHOST:], c_mat))
        out = StructuredMatrix(band, terms)
        return grad[N_GHOST:], (out if structured else out.dense())

    def weighted_jacobian_sum(self, v, w):
        """sum_i w_i grad g_i over decision variables."""
        u = self.extend(v)
        grad = np.zeros(self.n_u)
        pos = 0
        for blk in self.blocks:
            vals, grads, _ = blk.evaluate(u)
            m = len(vals)
            np.add.at(grad, blk.idx, grads * w[pos : pos + m, None])
            pos += m
        if self.causality is not None:
            grad += self.causality.vjp(u, w[pos : pos + self.n_slots])
        return grad[N_GHOST:]

    def jacobian_product(self, v, dv):
        """J dv: directional derivative of every constraint along ``dv``."""
        u = self.extend(v)
        du = np.concatenate([np.zeros(N_GHOST), np.asarray(dv, dtype=float)])
        parts = []
        for blk in self.blocks:
            _, grads, _ = blk.evaluate(u)
            parts.append(np.sum(grads * du[blk.idx], axis=1))
        if self.causality is not None:
            parts.append(self.causality.jvp(u, du))
        return np.concatenate(parts) if parts else np.zeros(0)

    @property
    def bandwidth(self) -> int:
        """Largest |i - j| over variable pairs coupled by one local term."""
        if "__bandwidth" not in self._pairs:
            sets = [b.idx for b in self.blocks] + [_prop_index(self.n_slots), _step_index(self.n_slots)]
            if self.causality is not None:
                sets.append(self.causality.idx)
            if self.soft_distance is not None:
                sets.append(self.soft_distance.idx)
            self._pairs["__bandwidth"] = int(max((int(np.max(i.max(axis=1) - i.min(axis=1))) for i in sets
                                                  if i.size), default=0))
        return self._pairs["__bandwidth"]

    def _band_scatter(self, key, idx, local, band):
        """Accumulate local (m, k, k) matrices on u-indices ``idx`` into the
        lower band of the decision-variable matrix, dropping ghost entries."""
        if key not in self._pairs:
            i, j = np.broadcast_arrays(idx[:, :, None] - N_GHOST, idx[:, None, :] - N_GHOST)
            keep = ((i >= j) & (j >= 0)).ravel()
            flat = ((i - j) * self.n + j).ravel()[keep]
            self._pairs[key] = (keep, flat)
        keep, flat = self._pairs[key]
        band += np.bincount(flat, weights=np.asarray(local).reshape(-1)[keep],
                            minlength=band.size).reshape(band.shape)

def _slot_base(t):
    """Offset in u of slot t (t = -1, 0, 1, ...)."""
    return 4 * (np.asarray(t) + 1)


def _step_index(n_slots):
    t = np.arange(1, n_slots + 1)
    cur, prev = _slot_base(t), _slot_base(t - 1)
    return np.column_stack([cur, prev, cur + 1, prev + 1])


def _prop_index(n_slots):
    t = np.arange(1, n_slots + 1)
    return np.column_stack([_step_index(n_slots), _slot_base(t) + 3])


def _uw_to_local(gu, gw, huu, huw, hww):
    """Map derivatives in (u, w) = (x_t - x_{t-1}, y_t - y_{t-1}) onto the
    local order [x_t, x_{t-1}, y_t, y_{t-1}]."""
    d = np.array([1.0, -1.0])
    grads = np.column_stack([gu, -gu, gw, -gw])
    m = len(gu)
    hess = np.zeros((m, 4, 4))
    dd = np.outer(d, d)
    hess[:, :2, :2] = huu[:, None, None] * dd
    hess[:, :2, 2:] = huw[:, None, None] * dd
    hess[:, 2:, :2] = huw[:, None, None] * dd
    hess[:, 2:, 2:] = hww[:, None, None] * dd
    return grads, hess


def _propulsion_local(st, q, p, delta, eps):
    """Smoothed surrogate propulsion: total value and per-slot derivatives on
    [x_t, x_{t-1}, y_t, y_{t-1}, q_t]."""
    k_sq, k_cube = propulsion_coeffs(p, delta)
    u, w = st[:, 0], st[:, 1]
    r2 = u * u + w * w
    s = r2 + eps * eps
    rs = np.sqrt(s)
    val = float((p.p0 + k_sq * r2 + p.p1 * q + k_cube * (s * rs - eps**3)).sum())
    alpha = 2 * k_sq + 3 * k_cube * rs
    beta = 3 * k_cube / rs
    g4, h4 = _uw_to_local(alpha * u, alpha * w, alpha + beta * u * u, beta * u * w, alpha + beta * w * w)
    m = len(u)
    grads = np.zeros((m, 5))
    grads[:, :4] = g4
    grads[:, 4] = p.p1
    hess = np.zeros((m, 5, 5))
    hess[:, :4, :4] = h4
    return val, grads, hess


def _dst_terms(st, eps, n_slots):
    """(sum_t S_t)^2 with S_t = sqrt(|dxy|^2 + eps^2) - eps."""
    u, w = st[:, 0], st[:, 1]
    s = u * u + w * w + eps * eps
    rs = np.sqrt(s)
    total = float((rs - eps).sum())
    gu, gw = u / rs, w / rs
    g4, h4 = _uw_to_local(gu, gw, (s - u * u) / s / rs, -u * w / s / rs, (s - w * w) / s / rs)
    return total**2, 2 * total * g4, 2 * total * h4, g4


class CausalityRows:
    """Cumulative energy rows sum_{n<=t} (P~_h^n + P_v^n - c1 z_n - c2) <= budget."""

    def __init__(self, n_slots, propulsion, delta, weight_force, approx, budget, eps):
        self.n_slots = n_slots
        self.p = propulsion
        self.delta = delta
        self.wf = weight_force / delta
        self.c1 = approx.c1
        self.c2 = approx.c2
        self.budget = budget
        self.eps = eps
        t = np.arange(1, n_slots + 1)
        self.idx = np.column_stack([_prop_index(n_slots), _slot_base(t) + 2, _slot_base(t - 1) + 2])

    def _slot_terms(self, u, derivs=True):
        pos = u.reshape(-1, 4)[1:]
        st = np.diff(pos[:, :2], axis=0)
        q = pos[1:, 3]
        z = pos[:, 2]
        k_sq, k_cube = propulsion_coeffs(self.p, self.delta)
        r2 = (st**2).sum(axis=1)
        s = r2 + self.eps**2
        ph = self.p.p0 + k_sq * r2 + self.p.p1 * q + k_cube * (s**1.5 - self.eps**3)
        terms = ph + self.wf * np.diff(z) - self.c1 * z[1:] - self.c2
        if not derivs:
            return terms
        _, g5, h5 = _propulsion_local(st, q, self.p, self.delta, self.eps)
        m = self.n_slots
        grads = np.zeros((m, 7))
        grads[:, :5] = g5
        grads[:, 5] = self.wf - self.c1
        grads[:, 6] = -self.wf
        hess = np.zeros((m, 7, 7))
        hess[:, :5, :5] = h5
        return terms, grads, hess

    def values(self, u):
        return np.cumsum(self._slot_terms(u, derivs=False)) - self.budget

    def _slot_matrix(self, grads, n_u):
        """Sparse (N, n_u) matrix of per-slot term gradients; rows cumulate to J."""
        rows = np.repeat(np.arange(self.n_slots), self.idx.shape[1])
        return scipy.sparse.csr_matrix((grads.ravel(), (rows, self.idx.ravel())), shape=(self.n_slots, n_u))

    def jacobian(self, u):
        _, grads, _ = self._slot_terms(u)
        return np.cumsum(self._slot_matrix(grads, len(u)).toarray(), axis=0)

    def vjp(self, u, w):
        """J^T w without forming J."""
        _, grads, _ = self._slot_terms(u)
        w_rev = np.cumsum(np.asarray(w)[::-1])[::-1]
        return self._slot_matrix(grads, len(u)).T @ w_rev

    def jvp(self, u, du):
        _, grads, _ = self._slot_terms(u)
        return np.cumsum(self._slot_matrix(grads, len(u)) @ du)

    def barrier_parts(self, u, a, b):
        """Gradient sum a_t grad g_t and the Hessian split into local slot
        blocks plus S^T C S, with S the per-slot gradients and
        C_ij = sum_{t >= max(i, j)} b_t."""
        _, grads, hess = self._slot_terms(u)
        s_mat = self._slot_matrix(grads, len(u))
        a_rev = np.cumsum(a[::-1])[::-1]
        b_rev = np.cumsum(b[::-1])[::-1]
        grad = s_mat.T @ a_rev
        # hessian of row t is the sum of slot hessians n <= t
        local = hess * a_rev[:, None, None]
        k = np.arange(self.n_slots)
        c_mat = b_rev[np.maximum.outer(k, k)]
        return grad, local, s_mat.T.tocsr(), c_mat


class SoftDistance:
    """weight * sum_t max(0, |p_t - target_t|^2 - D_t^2)^2 on [x_t, y_t, z_t]."""

    def __init__(self, n_slots, targets, altitude, bound, weight):
        self.targets = np.asarray(targets, dtype=float)
        self.altitude = altitude
        self.bound_sq = np.asarray(bound, dtype=float) ** 2
        self.weight = weight
        t = np.arange(1, n_slots + 1)
        base = _slot_base(t)
        self.idx = np.column_stack([base, base + 1, base + 2])

    def _excess(self, u):
        p = u[self.idx]
        diff = np.column_stack([p[:, :2] - self.targets, p[:, 2] - self.altitude])
        return diff, np.maximum((diff**2).sum(axis=1) - self.bound_sq, 0.0)

    def value(self, u):
        _, e = self._excess(u)
        return float(self.weight * (e**2).sum())

    def derivs(self, u):
        diff, e = self._excess(u)
        grads = 4 * self.weight * e[:, None] * diff
        active = (e > 0).astype(float)
        hess = 8 * self.weight * active[:, None, None] * diff[:, :, None] * diff[:, None, :]
        hess += 4 * self.weight * e[:, None, None] * np.eye(3)[None]
        return float(self.weight * (e**2).sum()), self.idx, grads, hess


def _quad_rows(n_slots, idx, fn, name, n_rows):
    return LocalBlock(name=name, idx=idx, kind="convex", n_rows=n_rows, fn=fn)


def build_subproblem(
    iterate: TrajectoryPlan,
    center,
    track: TargetTrack,
    cfg: ScenarioConfig,
    M: float,
    approx: SolarLinearApprox,
    options: BuildOptions | None = None,
    check: bool = True,
    tol: float = 1e-9,
) -> ConvexSubproblem:
    """Assemble the proximal convex subproblem expanded at ``iterate``.

    ``center`` is the extrapolated point (a plan or a flat vector). ``track``
    must hold the target waypoints aligned with the plan's slots 0..N.
    """
    opts = options or BuildOptions()
    if not M > 0:
        raise DomainError("proximal weight M must be > 0")
    n = iterate.n_slots
    if len(track) < n + 1:
        raise DomainError("target track shorter than the plan")
    lam = center.decision_vector() if isinstance(center, TrajectoryPlan) else np.asarray(center, dtype=float)
    if lam.shape != (4 * n,):
        raise DomainError("extrapolated point has the wrong length")
    mu1 = cfg.mu1 if opts.mu1 is None else opts.mu1
    mu2 = cfg.mu2 if opts.mu2 is None else opts.mu2

    start = iterate.start
    ghost = np.zeros(N_GHOST)
    ghost[4:7] = start
    ghost[3] = ghost[7] = 1.0
    ghost[:3] = start
    if opts.prev_dz is not None:
        ghost[2] = start[2] - opts.prev_dz

    # expansion point with clamped q
    q_l = np.maximum(iterate.q, opts.q_min)
    expansion = TrajectoryPlan(iterate.waypoints, q_l)
    sca = expand_q_constraint(expansion, slice(None), cfg)

    lin = (gradient_pv(cfg, n) - gradient_f(iterate, track, cfg, mu1, mu2)).ravel()

    t = np.arange(1, n + 1)
    cur, prev = _slot_base(t), _slot_base(t - 1)
    a_t = track.a[1 : n + 1]
    b_t = track.b[1 : n + 1]
    margin = np.zeros(n) if opts.ffr_margin is None else np.asarray(opts.ffr_margin, dtype=float)
    H = cfg.target_alt_H
    hop_sq = cfg.hop_max**2
    climb = cfg.climb_max
    blocks: list[LocalBlock] = []
    counts: dict[str, int] = {}

    # horizontal speed
    step_idx = _step_index(n)

    def horiz(u, values_only=False):
        uu = u[step_idx]
        du, dw = uu[:, 0] - uu[:, 1], uu[:, 2] - uu[:, 3]
        vals = du * du + dw * dw - hop_sq
        if values_only:
            return vals
        g, h = _uw_to_local(2 * du, 2 * dw, np.full(n, 2.0), np.zeros(n), np.full(n, 2.0))
        return vals, g, h

    blocks.append(_quad_rows(n, step_idx, horiz, "horizontal_speed", n))

    # vertical speed, two-sided
    zi = np.column_stack([cur + 2, prev + 2])
    blocks.append(LocalBlock(
        "vertical_speed", np.vstack([zi, zi]), "affine", n,
        coef=np.vstack([np.tile([1.0, -1.0], (n, 1)), np.tile([-1.0, 1.0], (n, 1))]),
        const=np.full(2 * n, -climb),
    ))
    counts["mobility"] = 2 * n

    # altitude-rate change
    first = 1 if opts.prev_dz is not None else 2
    ta = np.arange(first, n + 1)
    if len(ta):
        ai = np.column_stack([_slot_base(ta) + 2, _slot_base(ta - 1) + 2, _slot_base(ta - 2) + 2])
        c = np.tile([1.0, -2.0, 1.0], (len(ta), 1))
        blocks.append(LocalBlock("vertical_accel", np.vstack([ai, ai]), "affine", len(ta),
                                 coef=np.vstack([c, -c]), const=np.full(2 * len(ta), -climb)))
    counts["accel"] = len(ta)

    # flight region
    d_bound = cfg.d_max - margin
    if np.any(d_bound <= 0):
        raise DomainError("flight-region margin exceeds the distance bound")
    pi = np.column_stack([cur, cur + 1, cur + 2])
    soft = None
    if opts.soft_distance is None:
        d_sq = d_bound**2

        def dist(u, values_only=False):
            p = u[pi]
            diff = np.column_stack([p[:, 0] - a_t, p[:, 1] - b_t, p[:, 2] - H])
            vals = (diff**2).sum(axis=1) - d_sq
            if values_only:
                return vals
            return vals, 2 * diff, np.broadcast_to(2 * np.eye(3), (n, 3, 3))

        blocks.append(_quad_rows(n, pi, dist, "ffr_distance", n))
    else:
        soft = SoftDistance(n, np.column_stack([a_t, b_t]), H, d_bound, opts.soft_distance)
    ones = np.ones((n, 1))
    blocks.append(LocalBlock("ffr_trail_x", (cur)[:, None], "affine", n, coef=ones, const=-(a_t - margin)))
    blocks.append(LocalBlock("ffr_trail_y", (cur + 1)[:, None], "affine", n, coef=ones, const=-(b_t - margin)))
    blocks.append(LocalBlock("ffr_floor", (cur + 2)[:, None], "affine", n, coef=-ones,
                             const=np.full(n, cfg.z_lower)))
    counts["ffr"] = 4 * n if soft is None else 3 * n

    # linearised slack constraint 1/q^2 <= affine
    sca_idx = _prop_index(n)
    v0hat_sq = sca.v0hat_sq

    def sca_rows(u, values_only=False):
        uu = u[sca_idx]
        du, dw, q = uu[:, 0] - uu[:, 1], uu[:, 2] - uu[:, 3], uu[:, 4]
        with np.errstate(divide="ignore"):
            inv = np.where(q > 0, 1.0 / np.where(q > 0, q, 1.0) ** 2, np.inf)
        vals = inv - sca.value(du, dw, q)
        if values_only:
            return vals
        g4, h4 = _uw_to_local(-sca.cx, -sca.cy, np.zeros(n), np.zeros(n), np.zeros(n))
        grads = np.zeros((n, 5))
        grads[:, :4] = g4
        grads[:, 4] = -2.0 / q**3 - sca.cq
        hess = np.zeros((n, 5, 5))
        hess[:, 4, 4] = 6.0 / q**4
        return vals, grads, hess

    blocks.append(_quad_rows(n, sca_idx, sca_rows, "sca_q", n))
    counts["sca"] = n
    blocks.append(LocalBlock("q_nonneg", (cur + 3)[:, None], "affine", n, coef=-ones, const=np.zeros(n)))
    counts["q_nonneg"] = n

    if opts.mdr:
        da = np.diff(track.a[: n + 1])
        if np.any(da <= 0):
            raise DomainError("heading rows need a target moving strictly forward in x")
        kappa = np.diff(track.b[: n + 1]) / da
        hi = np.column_stack([cur, prev, cur + 1, prev + 1])
        slope = kappa + cfg.c3
        coef_h = np.column_stack([slope, -slope, -np.ones(n), np.ones(n)])
        coef_f = np.column_stack([-np.ones(n), np.ones(n), np.zeros(n), np.zeros(n)])
        blocks.append(LocalBlock("heading", np.vstack([hi, hi]), "affine", n,
                                 coef=np.vstack([coef_h, coef_f]), const=np.zeros(2 * n)))
        counts["heading"] = n

    budget = cfg.eta0 * cfg.e0 / cfg.delta + opts.carry
    causality = CausalityRows(n, cfg.propulsion, cfg.delta, cfg.thrust.weight_force, approx, budget,
                              opts.smoothing_eps)
    counts["causality"] = n

    sub = ConvexSubproblem(
        n_slots=n, ghost=ghost, center=lam, M=float(M), linear_cost=lin, blocks=blocks,
        causality=causality, propulsion=cfg.propulsion, delta=cfg.delta,
        smoothing_eps=opts.smoothing_eps, dst=opts.dst, soft_distance=soft, row_counts=counts,
    )
    if check:
        worst = sub.constraint_values(expansion.decision_vector()).max()
        if worst > tol:
            raise InfeasibleIterateError(
                f"expansion point violates the constraint set by {worst:.3g}; restore feasibility first"
            )
    return sub
