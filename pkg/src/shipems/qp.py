"""Dense convex QP solver for horizon-profile problems.

Solves min 0.5*sum_k d_k x_k^2 + sum_k q_k x_k over the polytope cut out by
per-step box bounds, step-to-step ramp bounds anchored at a previous value,
and optional cumulative-sum (state-of-charge type) bounds. The method is
projected gradient with the projection onto the intersection computed by
Dykstra's alternating scheme over the three constraint families; a final
active-set polish (KKT solve on the identified active rows, certified by
nonnegative-least-squares multipliers) brings solutions to near machine
precision. The diagonal Hessian makes every step closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

try:
    from numba import njit

    NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"
FEASIBLE = "feasible"


@dataclass(eq=False)
class HorizonQp:
    """One horizon QP instance.

    ``lower``/``upper``/``quad_diag``/``lin`` accept scalars and are
    broadcast to length ``h``. ``cumsum_coeff`` = 0 disables the
    cumulative-sum constraints; otherwise they read
    cumsum_lower <= cumsum_init - cumsum_coeff * sum_{j<=k} x_j <= cumsum_upper
    for every k.
    """

    h: int
    quad_diag: np.ndarray
    lin: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    ramp_limit: float
    prev_value: float
    cumsum_coeff: float = 0.0
    cumsum_init: float = 0.0
    cumsum_lower: float = 0.0
    cumsum_upper: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.h, (int, np.integer)) and self.h >= 1):
            raise ValueError(f"h must be a positive integer, got {self.h}")
        self.h = int(self.h)
        for name in ("quad_diag", "lin", "lower", "upper"):
            arr = np.broadcast_to(
                np.asarray(getattr(self, name), dtype=float), (self.h,)
            ).copy()
            setattr(self, name, arr)
        self.ramp_limit = float(self.ramp_limit)
        self.prev_value = float(self.prev_value)
        self.cumsum_coeff = float(self.cumsum_coeff)
        if not np.all(self.quad_diag > 0.0):
            raise ValueError("quad_diag must be strictly positive componentwise")
        if not np.all(np.isfinite(self.quad_diag)):
            raise ValueError("quad_diag must be finite")
        if not np.all(np.isfinite(self.lin)):
            raise ValueError("lin must be finite")
        if np.any(self.lower > self.upper):
            raise ValueError("lower must be <= upper componentwise")
        if not self.ramp_limit > 0.0:
            raise ValueError(f"ramp_limit must be > 0, got {self.ramp_limit}")
        if not np.isfinite(self.prev_value):
            raise ValueError("prev_value must be finite")
        if self.cumsum_coeff != 0.0:
            if not (self.cumsum_lower <= self.cumsum_init <= self.cumsum_upper):
                raise ValueError(
                    "require cumsum_lower <= cumsum_init <= cumsum_upper, got "
                    f"{self.cumsum_lower}, {self.cumsum_init}, {self.cumsum_upper}"
                )

    def effective_box(self):
        """Box bounds with the k=0 ramp anchor folded into the first step."""
        lo = self.lower.copy()
        hi = self.upper.copy()
        lo[0] = max(lo[0], self.prev_value - self.ramp_limit)
        hi[0] = min(hi[0], self.prev_value + self.ramp_limit)
        return lo, hi

    def prefix_bounds(self):
        """Bounds on prefix sums s_k = sum_{j<=k} x_j implied by the cumsum
        constraints, or (None, None) when disabled."""
        c = self.cumsum_coeff
        if c == 0.0:
            return None, None
        a = (self.cumsum_init - self.cumsum_upper) / c
        b = (self.cumsum_init - self.cumsum_lower) / c
        lo, hi = (a, b) if c > 0.0 else (b, a)
        return np.full(self.h, lo), np.full(self.h, hi)

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ (self.quad_diag * x)) + float(self.lin @ x)

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint violation of x (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.effective_box()
        v = max(float(np.max(lo - x, initial=0.0)), float(np.max(x - hi, initial=0.0)))
        d = np.diff(x)
        if d.size:
            v = max(v, float(np.max(np.abs(d))) - self.ramp_limit)
        plo, phi = self.prefix_bounds()
        if plo is not None:
            s = np.cumsum(x)
            v = max(v, float(np.max(plo - s)), float(np.max(s - phi)))
        return max(v, 0.0)

    def constraint_rows(self):
        """All inequalities as (A, b) with rows scaled to unit norm dropped
        for infinite bounds. Used by the polish step."""
        h = self.h
        lo, hi = self.effective_box()
        rows, rhs = [], []
        eye = np.eye(h)
        for k in range(h):
            if np.isfinite(hi[k]):
                rows.append(eye[k]); rhs.append(hi[k])
            if np.isfinite(lo[k]):
                rows.append(-eye[k]); rhs.append(-lo[k])
        if np.isfinite(self.ramp_limit):
            for k in range(1, h):
                r = eye[k] - eye[k - 1]
                rows.append(r); rhs.append(self.ramp_limit)
                rows.append(-r); rhs.append(self.ramp_limit)
        plo, phi = self.prefix_bounds()
        if plo is not None:
            for k in range(h):
                pref = np.zeros(h)
                pref[: k + 1] = 1.0
                rows.append(pref); rhs.append(phi[k])
                rows.append(-pref); rhs.append(-plo[k])
        if not rows:
            return np.zeros((0, h)), np.zeros(0)
        return np.array(rows), np.array(rhs)


@dataclass
class QpSolution:
    profile: np.ndarray
    objective: float
    iterations: int
    primal_residual: float  # max constraint violation of profile
    status: str
    fixed_point_residual: float = field(default=np.nan)


@njit(cache=True)
def _dykstra(y, lo, hi, ramp, m_pref, pref_lo, pref_hi, tol, max_sweeps):
    """Project y onto box (anchor folded) ∩ ramp slabs ∩ prefix slabs."""
    h = y.shape[0]
    x = y.copy()
    cb = np.zeros(h)
    cd = np.zeros(h - 1 if h > 1 else 0)
    cp = np.zeros(m_pref)
    for _ in range(max_sweeps):
        delta = 0.0
        # box family
        for k in range(h):
            yk = x[k] + cb[k]
            xk = min(max(yk, lo[k]), hi[k])
            cb[k] = yk - xk
            if abs(xk - x[k]) > delta:
                delta = abs(xk - x[k])
            x[k] = xk
        # difference slabs |x_k - x_{k-1}| <= ramp, normal (e_k - e_{k-1})
        for k in range(1, h):
            ya = x[k - 1] - cd[k - 1]
            yb = x[k] + cd[k - 1]
            v = yb - ya
            t = min(max(v, -ramp), ramp)
            theta = 0.5 * (v - t)
            na = ya + theta
            nb = yb - theta
            if abs(na - x[k - 1]) > delta:
                delta = abs(na - x[k - 1])
            if abs(nb - x[k]) > delta:
                delta = abs(nb - x[k])
            x[k - 1] = na
            x[k] = nb
            cd[k - 1] = theta
        # prefix slabs pref_lo[k] <= sum_{j<=k} x_j <= pref_hi[k]
        for k in range(m_pref):
            s = 0.0
            for j in range(k + 1):
                s += x[j] + cp[k]
            t = min(max(s, pref_lo[k]), pref_hi[k])
            theta = (s - t) / (k + 1)
            shift = cp[k] - theta
            if abs(shift) > delta:
                delta = abs(shift)
            for j in range(k + 1):
                x[j] += shift
            cp[k] = theta
        if delta <= tol:
            break
    return x


@njit(cache=True)
def _pg_iterate(x0, d, q, lo, hi, ramp, m_pref, pref_lo, pref_hi, tol, max_iter):
    """Projected gradient to a fixed point; returns (x, iterations, residual).

    The residual is the last step length ||x_{t+1} - x_t||_inf, with the
    tolerance applied relative to max(1, ||x||_inf).
    """
    big = d[0]
    for k in range(1, d.shape[0]):
        if d[k] > big:
            big = d[k]
    x = x0.copy()
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        y = x - (d * x + q) / big
        scale = 1.0
        for k in range(x.shape[0]):
            if abs(x[k]) > scale:
                scale = abs(x[k])
        dyk_tol = 0.02 * tol * scale
        xn = _dykstra(y, lo, hi, ramp, m_pref, pref_lo, pref_hi, dyk_tol, 2000)
        res = 0.0
        for k in range(x.shape[0]):
            if abs(xn[k] - x[k]) > res:
                res = abs(xn[k] - x[k])
        x = xn
        if res <= tol * scale:
            break
    return x, it, res


def _certified_polish(qp: HorizonQp, x: np.ndarray, act_tol: float):
    """KKT polish on the active set detected at x.

    Solves the equality-constrained QP on rows within act_tol of activity,
    then certifies with primal feasibility and a nonnegative multiplier fit.
    Returns the polished point or None when certification fails.
    """
    a, b = qp.constraint_rows()
    d, q = qp.quad_diag, qp.lin
    if a.shape[0] == 0:
        xu = -q / d
        return xu if qp.violation(xu) == 0.0 else None
    row_scale = np.maximum(1.0, np.abs(b))
    act = (b - a @ x) <= act_tol * row_scale
    n = qp.h
    if not np.any(act):
        x_hat = -q / d
    else:
        s = a[act]
        k = s.shape[0]
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = np.diag(d)
        kkt[:n, n:] = s.T
        kkt[n:, :n] = s
        rhs = np.concatenate([-q, b[act]])
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        x_hat = sol[:n]
    if not np.all(np.isfinite(x_hat)):
        return None
    xscale = max(1.0, float(np.abs(x_hat).max()))
    if qp.violation(x_hat) > 1e-11 * xscale:
        return None
    # stationarity with sign-constrained multipliers on the active rows
    g = d * x_hat + q
    gscale = max(1.0, float(np.abs(g).max()), float(np.abs(d * x_hat).max()))
    act_hat = (b - a @ x_hat) <= 1e-9 * row_scale
    if not np.any(act_hat):
        resid = float(np.abs(g).max())
    else:
        _, resid = scipy.optimize.nnls(a[act_hat].T, -g)
    if resid > 1e-9 * gscale:
        return None
    return x_hat


def _chain_feasible(qp: HorizonQp) -> bool:
    """Exact emptiness test for the box∩ramp chain by forward interval
    propagation (the reachable set at each step is an interval)."""
    lo, hi = qp.effective_box()
    reach_lo, reach_hi = lo[0], hi[0]
    if reach_lo > reach_hi:
        return False
    for k in range(1, qp.h):
        a = max(lo[k], reach_lo - qp.ramp_limit)
        b = min(hi[k], reach_hi + qp.ramp_limit)
        if a > b:
            return False
        reach_lo, reach_hi = a, b
    return True


def feasibility_check(qp: HorizonQp) -> str:
    """Decide emptiness of the constraint polytope.

    Box-and-ramp chains are decided exactly by forward interval propagation;
    with cumulative-sum constraints active, a Phase-1 LP settles the general
    case.
    """
    if not _chain_feasible(qp):
        return INFEASIBLE
    if qp.cumsum_coeff == 0.0:
        return FEASIBLE
    plo, phi = qp.prefix_bounds()
    a_ub, b_ub = [], []
    h = qp.h
    for k in range(1, h):
        r = np.zeros(h)
        r[k], r[k - 1] = 1.0, -1.0
        a_ub.append(r); b_ub.append(qp.ramp_limit)
        a_ub.append(-r); b_ub.append(qp.ramp_limit)
    for k in range(h):
        pref = np.zeros(h)
        pref[: k + 1] = 1.0
        a_ub.append(pref); b_ub.append(phi[k])
        a_ub.append(-pref); b_ub.append(-plo[k])
    lo, hi = qp.effective_box()
    res = scipy.optimize.linprog(
        c=np.zeros(h),
        A_ub=np.array(a_ub),
        b_ub=np.array(b_ub),
        bounds=list(zip(lo, hi)),
        method="highs",
    )
    return FEASIBLE if res.status == 0 else INFEASIBLE


def solve(qp: HorizonQp, tol: float = 1e-8, max_iter: int = 100_000,
          x0: np.ndarray | None = None, polish: bool = True) -> QpSolution:
    """Minimize the QP; see module docstring for the method.

    ``status`` is "infeasible" when the polytope is empty (profile is all
    zeros, objective inf), "max_iter" when the fixed-point residual never
    reached tol (best iterate returned), "optimal" otherwise. ``polish=False``
    skips the active-set finish, leaving the projected-gradient iterate
    (accurate to tol); useful inside iterative coordination loops.
    """
    if not tol > 0.0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if not _chain_feasible(qp):
        return QpSolution(np.zeros(qp.h), np.inf, 0, np.inf, INFEASIBLE)
    d, q = qp.quad_diag, qp.lin
    lo, hi = qp.effective_box()
    plo, phi = qp.prefix_bounds()
    m_pref = 0 if plo is None else qp.h
    if plo is None:
        plo = np.zeros(0)
        phi = np.zeros(0)

    xu = -q / d
    if qp.violation(xu) == 0.0:
        return QpSolution(xu, qp.objective(xu), 0, 0.0, OPTIMAL, 0.0)

    start = np.clip(xu, lo, hi) if x0 is None else np.asarray(x0, dtype=float).copy()
    x, it, res = _pg_iterate(start, d, q, lo, hi, qp.ramp_limit,
                             m_pref, plo, phi, tol, max_iter)
    scale = max(1.0, float(np.abs(x).max()))
    converged = res <= tol * scale

    if polish:
        # a certified KKT point is globally optimal regardless of PG state
        act0 = max(100.0 * tol, 1e-6)
        for act_tol in (act0, act0 * 1e-2, act0 * 1e2):
            x_hat = _certified_polish(qp, x, act_tol)
            if x_hat is not None:
                return QpSolution(x_hat, qp.objective(x_hat), it,
                                  qp.violation(x_hat), OPTIMAL, 0.0)
    viol = qp.violation(x)
    if viol <= 10.0 * tol * scale:
        status = OPTIMAL if converged else MAX_ITER
        return QpSolution(x, qp.objective(x), it, viol, status, res)
    # the iterate never became feasible: either the polytope is empty
    # (Dykstra cycles between disjoint sets) or projection stalled
    if qp.cumsum_coeff != 0.0 and feasibility_check(qp) == INFEASIBLE:
        return QpSolution(np.zeros(qp.h), np.inf, it, np.inf, INFEASIBLE)
    return QpSolution(x, qp.objective(x), it, viol, MAX_ITER, res)
