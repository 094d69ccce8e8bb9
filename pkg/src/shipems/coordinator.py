"""Price coordination of the device fleet.

A coordinator node broadcasts a price profile lambda, every device answers
with the minimizer of its private cost plus lambda'p, and the coordinator
moves the price along the power-balance violation (dual gradient ascent):

    lambda' = lambda + alpha * (sum of device powers - demanded power).

`centralized_solve` solves the same allocation monolithically (augmented
Lagrangian on the balance equality with Gauss-Seidel block sweeps, each
block solved by the same QP kernel) and serves as the verification oracle
for the distributed loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qp as qpmod
from .nodes import (
    WEIGHT_FLOOR,
    NodeResult,
    pcm_qp,
    pcm_solve,
    pgm_qp,
    pgm_solve,
)
from .plant import BusSpec, PcmSpec, PgmSpec

OPTIMAL = qpmod.OPTIMAL
MAX_ITER = qpmod.MAX_ITER
INFEASIBLE = qpmod.INFEASIBLE

# divergence heuristic: residual floor not improving across this window
# while the price keeps growing means demand exceeds fleet capability
DIVERGENCE_WINDOW = 50


@dataclass
class PgmNodeState:
    """Generator spec plus the receding-horizon memory it anchors ramps to."""

    spec: PgmSpec
    prev_power_w: float


@dataclass
class PcmNodeState:
    spec: PcmSpec
    soc: float
    prev_power_w: float


@dataclass
class Fleet:
    """All devices participating in one coordination problem."""

    bus: BusSpec
    pgms: list[PgmNodeState]
    pcms: list[PcmNodeState]
    td_s: float = 1.0

    def __post_init__(self):
        if not self.pgms and not self.pcms:
            raise ValueError("fleet needs at least one device")
        if not self.td_s > 0.0:
            raise ValueError(f"td_s must be > 0, got {self.td_s}")

    def weights(self) -> list[float]:
        w = [max(g.spec.weight_beta, WEIGHT_FLOOR) for g in self.pgms]
        w += [max(b.spec.weight_gamma, WEIGHT_FLOOR) for b in self.pcms]
        return w


@dataclass
class DualState:
    """Price iterate of the ascent loop."""

    lam: np.ndarray
    iteration: int = 0
    balance_residual_history: list[float] = field(default_factory=list)

    def record(self, residual_inf: float):
        self.iteration += 1
        self.balance_residual_history.append(residual_inf)


@dataclass
class CoordinationReport:
    """Outcome of one coordination run (one MPC step)."""

    gen: list[NodeResult]
    batt: list[NodeResult]
    lambda_final: np.ndarray
    converged: bool
    iterations_used: int
    final_residual_w: float
    shortfall_w: float  # worst per-step unmet demand, 0 when converged
    residual_history: list[float]

    def total_power(self) -> np.ndarray:
        h = self.lambda_final.size
        total = np.zeros(h)
        for r in self.gen + self.batt:
            total += r.profile
        return total

    def objective(self) -> float:
        return float(sum(r.local_objective for r in self.gen + self.batt))


def dual_update(lam: np.ndarray, sum_primal: np.ndarray, p_f: np.ndarray,
                alpha: float) -> np.ndarray:
    """One ascent step on the power-balance dual."""
    if not alpha > 0.0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    lam = np.asarray(lam, dtype=float)
    return lam + alpha * (np.asarray(sum_primal, dtype=float)
                          - np.asarray(p_f, dtype=float))


def default_alpha(fleet: Fleet) -> float:
    """Safe ascent step: the dual gradient is Lipschitz with constant at
    most sum(1/w) over unconstrained nodes, and constraints only shrink it."""
    return 0.9 / sum(1.0 / w for w in fleet.weights())


def default_balance_tol_w(p_f: np.ndarray) -> float:
    return 1e-4 * max(float(np.max(np.abs(p_f))), 1.0)


def _solve_all(fleet: Fleet, lam: np.ndarray, polish: bool):
    gen = [pgm_solve(lam, g.spec, g.prev_power_w, polish=polish)
           for g in fleet.pgms]
    batt = [pcm_solve(lam, b.spec, fleet.bus, b.soc, b.prev_power_w,
                      fleet.td_s, polish=polish)
            for b in fleet.pcms]
    for r, state in zip(gen, fleet.pgms):
        if r.qp_status == INFEASIBLE:
            raise RuntimeError(
                f"generator node infeasible from prev_power={state.prev_power_w}"
            )
    for r, state in zip(batt, fleet.pcms):
        if r.qp_status == INFEASIBLE:
            raise RuntimeError(
                f"battery node infeasible from prev_power={state.prev_power_w}, "
                f"soc={state.soc}"
            )
    return gen, batt


def coordinate(fleet: Fleet, p_f: np.ndarray, alpha: float | None = None,
               bal_tol_w: float | None = None, max_iter: int = 500,
               lambda_warm: np.ndarray | None = None) -> CoordinationReport:
    """Run dual ascent until the fleet balances the demand profile.

    Returns the best-residual allocation when the iteration budget runs out
    or when divergence is detected (demand beyond fleet capability); in the
    latter case ``shortfall_w`` reports the worst per-step deficit.
    """
    p_f = np.asarray(p_f, dtype=float)
    h = p_f.size
    if alpha is None:
        alpha = default_alpha(fleet)
    if bal_tol_w is None:
        bal_tol_w = default_balance_tol_w(p_f)
    lam = (np.zeros(h) if lambda_warm is None
           else np.asarray(lambda_warm, dtype=float).copy())
    state = DualState(lam)
    best_lam, best_res = lam.copy(), np.inf
    lam_norms = []
    converged = False
    for _ in range(max_iter):
        gen, batt = _solve_all(fleet, state.lam, polish=False)
        total = np.zeros(h)
        for r in gen + batt:
            total += r.profile
        residual = total - p_f
        res_inf = float(np.max(np.abs(residual)))
        state.record(res_inf)
        lam_norms.append(float(np.max(np.abs(state.lam))))
        if res_inf < best_res:
            best_res, best_lam = res_inf, state.lam.copy()
        if res_inf <= bal_tol_w:
            converged = True
            break
        w = DIVERGENCE_WINDOW
        if state.iteration >= 2 * w:
            hist = state.balance_residual_history
            recent = min(hist[-w:])
            prior = min(hist[-2 * w:-w])
            growing = lam_norms[-1] > lam_norms[-w] * (1.0 + 1e-9)
            if recent >= prior * (1.0 - 1e-6) and growing:
                break
        state.lam = dual_update(state.lam, total, p_f, alpha)
    # final polished solve at the best price seen
    lam_final = state.lam if converged else best_lam
    gen, batt = _solve_all(fleet, lam_final, polish=True)
    total = np.zeros(h)
    for r in gen + batt:
        total += r.profile
    final_res = float(np.max(np.abs(total - p_f)))
    converged = final_res <= bal_tol_w
    shortfall = 0.0 if converged else max(0.0, float(np.max(p_f - total)))
    return CoordinationReport(
        gen=gen,
        batt=batt,
        lambda_final=lam_final,
        converged=converged,
        iterations_used=state.iteration,
        final_residual_w=final_res,
        shortfall_w=shortfall,
        residual_history=state.balance_residual_history,
    )


@dataclass
class CentralizedResult:
    gen_profiles: list[np.ndarray]
    batt_profiles: list[np.ndarray]
    objective: float
    balance_residual_w: float
    status: str

    def total_power(self) -> np.ndarray:
        total = None
        for p in self.gen_profiles + self.batt_profiles:
            total = p.copy() if total is None else total + p
        return total


def _fleet_reach_intervals(fleet: Fleet, h: int):
    """Per-step sum of reachable power intervals across the fleet.

    Necessary condition for balance feasibility: the demand profile must lie
    inside the summed intervals (not sufficient, since step choices couple
    through each device's ramp chain).
    """
    lo_sum, hi_sum = np.zeros(h), np.zeros(h)
    for node in fleet.pgms + fleet.pcms:
        spec = node.spec
        lo_k = max(spec.p_min_w, node.prev_power_w - spec.ramp_limit_w_per_step)
        hi_k = min(spec.p_max_w, node.prev_power_w + spec.ramp_limit_w_per_step)
        for k in range(h):
            if k:
                lo_k = max(spec.p_min_w, lo_k - spec.ramp_limit_w_per_step)
                hi_k = min(spec.p_max_w, hi_k + spec.ramp_limit_w_per_step)
            lo_sum[k] += lo_k
            hi_sum[k] += hi_k
    return lo_sum, hi_sum


def centralized_solve(fleet: Fleet, p_f: np.ndarray,
                      tol: float = 1e-6) -> CentralizedResult:
    """Monolithic allocation with balance as an explicit equality.

    Augmented-Lagrangian outer loop (multiplier step on the balance
    residual, penalty doubled whenever the residual fails to shrink by 4x)
    around Gauss-Seidel block sweeps; every block minimization reuses the
    horizon QP kernel with an added diagonal rho and shifted linear term.
    ``tol`` is relative: the run stops when the balance residual drops
    below tol * max(|p_f|, 1).
    """
    p_f = np.asarray(p_f, dtype=float)
    h = p_f.size
    tol_w = tol * max(float(np.max(np.abs(p_f))), 1.0)

    nodes = []  # (kind, spec-state, weight, target)
    for g in fleet.pgms:
        nodes.append(("g", g, max(g.spec.weight_beta, WEIGHT_FLOOR),
                      g.spec.rated_power_w))
    for b in fleet.pcms:
        nodes.append(("b", b, max(b.spec.weight_gamma, WEIGHT_FLOOR), 0.0))
    n = len(nodes)

    # block problems built once; only quad/lin mutate inside the loops
    problems = []
    for kind, node, _, _ in nodes:
        if kind == "g":
            problems.append(pgm_qp(np.zeros(h), node.spec, node.prev_power_w))
        else:
            problems.append(pcm_qp(np.zeros(h), node.spec, fleet.bus,
                                   node.soc, node.prev_power_w, fleet.td_s))
    # reject nodes whose own constraint chain is empty, then demand levels
    # no summed reachable interval can cover
    for problem in problems:
        if qpmod.feasibility_check(problem) == INFEASIBLE:
            return CentralizedResult([], [], np.inf, np.inf, INFEASIBLE)
    lo_sum, hi_sum = _fleet_reach_intervals(fleet, h)
    slack = 1e-9 * max(float(np.max(np.abs(p_f))), 1.0)
    if np.any(p_f < lo_sum - slack) or np.any(p_f > hi_sum + slack):
        return CentralizedResult([], [], np.inf, np.inf, INFEASIBLE)

    # start every block from its unconstrained tracking point clipped to box
    profiles = [np.clip(np.full(h, target), node.spec.p_min_w,
                        node.spec.p_max_w)
                for kind, node, _, target in nodes]
    mu = np.zeros(h)
    rho = float(np.mean([w for _, _, w, _ in nodes]))
    total = np.sum(profiles, axis=0)
    prev_res = float(np.max(np.abs(total - p_f)))
    best = None
    for _outer in range(200):
        # Gauss-Seidel sweeps at fixed (mu, rho)
        for _sweep in range(60):
            delta = 0.0
            for i, (kind, node, w, target) in enumerate(nodes):
                rest = total - profiles[i]
                problem = problems[i]
                problem.quad_diag.fill(w + rho)
                problem.lin = mu + rho * (rest - p_f) - w * target
                sol = qpmod.solve(problem, tol=1e-10, polish=False,
                                  x0=profiles[i])
                delta = max(delta, float(np.max(np.abs(sol.profile
                                                       - profiles[i]))))
                total = rest + sol.profile
                profiles[i] = sol.profile
            scale = max(1.0, float(np.max(np.abs(total))))
            if delta <= 1e-10 * scale:
                break
        c = total - p_f
        res = float(np.max(np.abs(c)))
        obj = sum(0.5 * w * float((p - t) @ (p - t))
                  for (_, _, w, t), p in zip(nodes, profiles))
        if best is None or res < best[0]:
            best = (res, [p.copy() for p in profiles], obj)
        if res <= tol_w:
            break
        mu = mu + rho * c
        if res > 0.25 * prev_res:
            rho *= 2.0
        prev_res = res
        if rho > 1e18:
            break
    res, profiles, obj = best
    n_g = len(fleet.pgms)
    status = OPTIMAL if res <= tol_w else MAX_ITER
    return CentralizedResult(
        gen_profiles=profiles[:n_g],
        batt_profiles=profiles[n_g:],
        objective=obj,
        balance_residual_w=res,
        status=status,
    )
