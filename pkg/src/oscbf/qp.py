"""Dense convex QP solver with per-row slack relaxation.

Solves

    minimize    0.5 x'Px + q'x  (+ rho't over the slacks)
    subject to  a_i'x >= b_i            (hard rows)
                a_i'x + t_i >= b_i      (slackable rows)
                t >= 0

with a primal-dual interior-point method (Mehrotra predictor-corrector).
The Newton systems are reduced by eliminating the diagonal slack block, so
each iteration factors only an n x n matrix regardless of how many hundreds
of constraint rows are present; sized for kilohertz control loops.

Slack semantics: ``solve`` treats slackable rows as implicitly relaxed (the
returned ``t`` reports the violations it had to buy). ``relax`` produces the
equivalent explicitly augmented problem over (x, t), useful for testing the
two code paths against each other.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.linalg.lapack import dpotrf, dpotrs

if os.environ.get("OSCBF_NO_JIT", "") != "1":
    try:
        from . import _kernels
    except ImportError:  # pragma: no cover - numba not installed
        _kernels = None
else:
    _kernels = None

OPTIMAL = "optimal"
MAX_ITERS = "max_iters"
INFEASIBLE = "infeasible"

MAX_ITERATIONS = 50
TOLERANCE = 1e-9
POLISH_TOLERANCE = 1e-7  # iterate quality at which active-set polish is attempted
REGULARIZATION = 1e-9
DEFAULT_SLACK_PENALTY = 1e6
_FRACTION_TO_BOUNDARY = 0.995


@dataclass(frozen=True)
class LinearConstraintRow:
    """One inequality a'x >= b over the decision variables."""

    a: np.ndarray
    b: float
    slackable: bool = True
    source: str = ""

    def __post_init__(self):
        a = np.ascontiguousarray(np.asarray(self.a, dtype=np.float64))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))
        if not np.all(np.isfinite(a)) or not np.isfinite(self.b):
            raise ValueError("constraint row entries must be finite")


@dataclass(frozen=True)
class QpProblem:
    """Dense convex QP: 0.5 x'Px + q'x subject to G x >= h (row-wise).

    ``slackable`` marks rows the solver may violate at linear price ``rho``;
    the remaining rows are hard. ``sources`` carries row ids for diagnostics.
    """

    P: np.ndarray
    q: np.ndarray
    G: np.ndarray
    h: np.ndarray
    slackable: np.ndarray
    rho: np.ndarray
    sources: tuple = ()
    allow_zero_rows: bool = False
    validate: bool = True

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        q = np.asarray(self.q, dtype=np.float64)
        d = q.shape[0]
        G = np.asarray(self.G, dtype=np.float64).reshape(-1, d)
        h = np.asarray(self.h, dtype=np.float64).reshape(-1)
        m = G.shape[0]
        slackable = np.asarray(self.slackable, dtype=bool).reshape(-1)
        rho = np.broadcast_to(np.asarray(self.rho, dtype=np.float64), (m,)).copy()
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "slackable", slackable)
        object.__setattr__(self, "rho", rho)
        sources = tuple(self.sources)
        object.__setattr__(self, "sources", sources)
        if not self.validate:
            return
        if P.shape != (d, d):
            raise ValueError("P must be square and match q")
        if h.shape[0] != m or slackable.shape[0] != m or (sources and len(sources) != m):
            raise ValueError("row arrays must agree in length")
        if np.max(np.abs(P - P.T), initial=0.0) > 1e-10:
            raise ValueError("P must be symmetric within 1e-10")
        if d and np.linalg.eigvalsh(0.5 * (P + P.T))[0] < -1e-9:
            raise ValueError("P must be positive semidefinite (eigenvalues >= -1e-9)")
        if np.any(rho[slackable] <= 0):
            raise ValueError("slack penalties must be > 0")
        if m and not self.allow_zero_rows and np.any(np.all(G == 0.0, axis=1)):
            raise ValueError("constraint rows must not be all zero")
        if m and not (np.all(np.isfinite(G)) and np.all(np.isfinite(h))):
            raise ValueError("constraint rows must be finite")

    @classmethod
    def from_rows(cls, P, q, rows, rho=DEFAULT_SLACK_PENALTY, **kw) -> "QpProblem":
        rows = list(rows)
        d = len(np.asarray(q))
        G = np.array([r.a for r in rows]).reshape(-1, d) if rows else np.zeros((0, d))
        h = np.array([r.b for r in rows]) if rows else np.zeros(0)
        slackable = np.array([r.slackable for r in rows], dtype=bool)
        sources = tuple(r.source for r in rows)
        return cls(P=P, q=q, G=G, h=h, slackable=slackable, rho=rho, sources=sources, **kw)

    @property
    def n_slack(self) -> int:
        return int(np.count_nonzero(self.slackable))


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    t: np.ndarray
    status: str
    kkt_residual: float
    iterations: int
    solve_time: float
    duals: np.ndarray | None = None  # multipliers for (slackable rows, t >= 0 rows, hard rows)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def relax(problem: QpProblem) -> QpProblem:
    """Explicitly augment a problem with its slack variables.

    Decision becomes (x, t); the objective gains rho't; each slackable row i
    becomes a'x + t_i >= b plus t_i >= 0; hard rows are unchanged. Solving
    the result with no implicit slacks matches ``solve`` on the original.
    """
    if problem.n_slack == 0:
        raise ValueError("problem has no slackable rows to relax")
    d = problem.q.shape[0]
    sl = problem.slackable
    s = int(np.count_nonzero(sl))
    m = problem.G.shape[0]
    P = np.zeros((d + s, d + s))
    P[:d, :d] = problem.P
    q = np.concatenate([problem.q, problem.rho[sl]])
    G = np.zeros((m + s, d + s))
    G[:m, :d] = problem.G
    slack_col = d + np.arange(s)
    G[np.flatnonzero(sl), slack_col] = 1.0
    G[m + np.arange(s), slack_col] = 1.0
    h = np.concatenate([problem.h, np.zeros(s)])
    names = problem.sources if problem.sources else tuple(f"row{i}" for i in range(m))
    sources = names + tuple(f"slack[{names[i]}]" for i in np.flatnonzero(sl))
    return QpProblem(
        P=P,
        q=q,
        G=G,
        h=h,
        slackable=np.zeros(m + s, dtype=bool),
        rho=np.ones(m + s),
        sources=sources,
    )


def _split(problem: QpProblem):
    sl = problem.slackable
    m = sl.shape[0]
    s = int(np.count_nonzero(sl))
    if np.all(sl[:s]):  # block-sorted rows (slackable first): zero-copy views
        return (
            problem.G[:s],
            problem.h[:s],
            problem.rho[:s],
            problem.G[s:],
            problem.h[s:],
        )
    return (
        problem.G[sl],
        problem.h[sl],
        problem.rho[sl],
        problem.G[~sl],
        problem.h[~sl],
    )


def _kkt_residual(P, q, Gs, hs, rho, Gh, hh, x, t, lam1, lam2, lam3) -> float:
    """Scaled KKT residual: dual/complementarity terms are measured relative
    to the objective scale (1 + |q| + max rho) so huge slack penalties do not
    inflate the metric; primal violations are absolute."""
    sq = 1.0 + float(np.max(np.abs(q), initial=0.0))
    sr = 1.0 + (float(np.max(rho, initial=0.0)) if t.shape[0] else 0.0)
    r_dx = P @ x + q
    if Gs.shape[0]:
        r_dx -= Gs.T @ lam1
    if Gh.shape[0]:
        r_dx -= Gh.T @ lam3
    res = float(np.max(np.abs(r_dx), initial=0.0)) / max(sq, sr)
    if t.shape[0]:
        res = max(res, float(np.max(np.abs(rho - lam1 - lam2), initial=0.0)) / sr)
        m1 = Gs @ x + t - hs
        res = max(res, float(np.max(-m1, initial=0.0)), float(np.max(-t, initial=0.0)))
        res = max(res, float(np.max(np.abs(lam1 * m1), initial=0.0)) / sr)
        res = max(res, float(np.max(np.abs(lam2 * t), initial=0.0)) / sr)
    if Gh.shape[0]:
        m3 = Gh @ x - hh
        res = max(res, float(np.max(-m3, initial=0.0)))
        res = max(res, float(np.max(np.abs(lam3 * m3), initial=0.0)) / max(sq, sr))
    return res


def _polish(problem: QpProblem, x, t, lam1, lam2, lam3, classify="duals"):
    """Active-set refinement: equality-solve the KKT system on the active rows.

    Makes the solution exact (machine precision) where the interior-point
    iterate stops at tolerance; in particular an inactive-constraint filter
    returns the unconstrained minimizer exactly. The slack block is
    eliminated analytically, so the linear solve stays at (n + #active) no
    matter how many slack variables exist: a slackable row that is active
    with positive slack has multiplier exactly rho (a known constant moved to
    the right-hand side); one active at t = 0 contributes an equality row.

    ``classify`` picks the active-set guess: dual-vs-slack comparison
    (default) or small-margin thresholding (fallback for stalled iterates).
    """
    Gs, hs, rho, Gh, hh = _split(problem)
    d = problem.q.shape[0]
    s = Gs.shape[0]
    if classify == "duals":
        act1 = lam1 > (Gs @ x + t - hs) if s else np.zeros(0, dtype=bool)
        act2 = lam2 > t if s else np.zeros(0, dtype=bool)
        act3 = lam3 > (Gh @ x - hh) if Gh.shape[0] else np.zeros(0, dtype=bool)
    else:
        tol = 1e-6
        act1 = (Gs @ x + t - hs) < tol if s else np.zeros(0, dtype=bool)
        act2 = t < tol if s else np.zeros(0, dtype=bool)
        act3 = (Gh @ x - hh) < tol if Gh.shape[0] else np.zeros(0, dtype=bool)
    act2 = act2 | ~(act1 | act2)  # every slack pins at least one of its rows

    only1 = act1 & ~act2  # row active with t_i > 0: lam1_i = rho_i exactly
    both = act1 & act2  # row active at t_i = 0: unknown split of rho_i
    idx_b = np.flatnonzero(both)
    idx_3 = np.flatnonzero(act3)
    A_eq = np.vstack([Gs[idx_b], Gh[idx_3]]) if (len(idx_b) + len(idx_3)) else np.zeros((0, d))
    b_eq = np.concatenate([hs[idx_b], hh[idx_3]])
    n_eq = A_eq.shape[0]

    rhs_x = -problem.q
    if np.any(only1):
        rhs_x = rhs_x + Gs[only1].T @ rho[only1]
    KKT = np.zeros((d + n_eq, d + n_eq))
    KKT[:d, :d] = problem.P
    KKT[:d, d:] = -A_eq.T
    KKT[d:, :d] = A_eq
    rhs = np.concatenate([rhs_x, b_eq])
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
    if not np.all(np.isfinite(sol)):
        return None
    x_new = sol[:d]
    nu = sol[d:]
    nu_b = nu[: len(idx_b)]
    nu_3 = nu[len(idx_b) :]

    feas_tol = 1e-9
    viol = 0.0
    lam3_new = np.zeros(Gh.shape[0])
    lam3_new[idx_3] = nu_3
    if len(nu_3) and float(nu_3.min()) < -feas_tol:
        return None
    t_new = np.zeros(s)
    lam1_new = np.zeros(s)
    if s:
        t_new[only1] = hs[only1] - Gs[only1] @ x_new
        lam1_new[only1] = rho[only1]
        lam1_new[idx_b] = nu_b
        # 0 <= lam1 <= rho so the t-stationarity multiplier stays nonnegative
        if len(nu_b) and (
            float(nu_b.min()) < -feas_tol or float((nu_b - rho[idx_b]).max()) > feas_tol
        ):
            return None
        mt = float(t_new.min()) if s else 0.0
        ms = float((Gs @ x_new + t_new - hs).min())
        if mt < -feas_tol or ms < -feas_tol:
            return None
        viol = max(viol, -mt, -ms, 0.0)
    lam2_new = rho - lam1_new if s else np.zeros(0)
    if Gh.shape[0]:
        mhh = float((Gh @ x_new - hh).min())
        if mhh < -feas_tol:
            return None
        viol = max(viol, -mhh)
    # the equality KKT solve zeroes dual residual and active complementarity,
    # so the scaled residual is just the (tiny) primal violation kept above
    return x_new, np.maximum(t_new, 0.0), lam1_new, lam2_new, lam3_new, viol


def solve(problem: QpProblem, warm_start: QpSolution | None = None) -> QpSolution:
    """Solve the QP, implicitly relaxing its slackable rows.

    At ``optimal``, hard rows hold within 1e-8, KKT residuals are below 1e-6,
    and slackable rows hold up to the reported t. A warm start (a previous
    solution for a problem of the same shape) changes only the iteration
    count. Deterministic: identical inputs produce identical outputs.
    """
    start = time.perf_counter()
    P = problem.P
    q = problem.q
    d = q.shape[0]
    Gs, hs, rho, Gh, hh = _split(problem)
    GsT = Gs.T
    GhT = Gh.T
    s = Gs.shape[0]
    mh = Gh.shape[0]
    m_total = 2 * s + mh

    if m_total == 0:
        try:
            x = cho_solve(cho_factor(P, lower=True), -q)
        except np.linalg.LinAlgError:
            x = cho_solve(cho_factor(P + REGULARIZATION * np.eye(d), lower=True), -q)
        res = float(np.max(np.abs(P @ x + q), initial=0.0))
        return QpSolution(
            x=x, t=np.zeros(0), status=OPTIMAL, kkt_residual=res, iterations=0,
            solve_time=time.perf_counter() - start, duals=np.zeros(0),
        )

    b_full = np.concatenate([hs, np.zeros(s), hh])

    # start point: warm from the previous solution, otherwise Mehrotra's
    # heuristic (least-squares duals recentered into the positive orthant);
    # a naive all-ones dual start diverges when rho sits in the objective
    if warm_start is not None and warm_start.x.shape == (d,) and warm_start.t.shape == (s,):
        x = warm_start.x.copy()
        t = np.maximum(warm_start.t, 1e-8)
        if warm_start.duals is not None and warm_start.duals.shape == (m_total,):
            lam = np.clip(warm_start.duals, 1e-8, 1e10)
        else:
            lam = np.ones(m_total)
        margins = np.concatenate([Gs @ x + t - hs, t, Gh @ x - hh])
        # keep the floor tiny: a polished warm point has exactly-zero margins
        # on its active rows, and flooring them high would force recentering
        w = np.maximum(margins, 1e-8)
    else:
        x = np.zeros(d)
        t = np.maximum(hs, 0.0) + 1.0 if s else np.zeros(0)
        lam_raw = np.empty(m_total)
        resid = q.copy()
        if s:
            lam_raw[: 2 * s] = np.concatenate([0.5 * rho, 0.5 * rho])
            resid = resid - GsT @ lam_raw[:s]
        if mh:
            A2 = GhT @ Gh + 1e-8 * np.eye(d)
            lam_raw[2 * s :] = Gh @ np.linalg.solve(A2, resid)
        margins = np.concatenate([Gs @ x + t - hs, t, Gh @ x - hh])
        shift_l = max(-1.5 * float(np.min(lam_raw)), 0.0)
        shift_w = max(-1.5 * float(np.min(margins)), 0.0)
        lam = lam_raw + shift_l + 1e-2
        w = margins + shift_w + 1e-2
        gap = float(lam @ w)
        lam = lam + 0.5 * gap / float(np.sum(w))
        w = w + 0.5 * gap / float(np.sum(lam))

    eye_d = REGULARIZATION * np.eye(d)
    scale_q = 1.0 + float(np.max(np.abs(q), initial=0.0))
    scale_rho = 1.0 + (float(np.max(rho, initial=0.0)) if s else 0.0)
    scale_p = 1.0 + float(np.max(np.abs(problem.h), initial=0.0))

    sl1 = slice(0, s)
    sl2 = slice(s, 2 * s)
    sl3 = slice(2 * s, m_total)

    best = None
    best_res = np.inf
    status = MAX_ITERS
    polish_done = False
    it = 0
    for it in range(1, MAX_ITERATIONS + 1):
        lam1 = lam[sl1]
        lam3 = lam[sl3]
        Gsx = Gs @ x if s else None
        Ghx = Gh @ x if mh else None
        r_dx = P @ x + q
        if s:
            r_dx -= GsT @ lam1
        if mh:
            r_dx -= GhT @ lam3
        if s:
            r_dt = rho - lam1 - lam[sl2]
            Ay = np.concatenate([Gsx + t, t, Ghx]) if mh else np.concatenate([Gsx + t, t])
        else:
            r_dt = np.zeros(0)
            Ay = Ghx
        r_p = Ay - w - b_full
        mu = float(lam @ w) / m_total

        res_d = float(np.abs(r_dx).max()) / scale_q
        if s:
            res_d = max(res_d, float(np.abs(r_dt).max()) / scale_rho)
        res_p = float(np.abs(r_p).max()) / scale_p
        # per-row relative complementarity: big-rho rows converge in w, not in the product
        res_c = float((lam * w / (1.0 + lam)).max())
        res_total = max(res_d, res_p, res_c)
        if res_total < best_res:
            best_res = res_total
            best = (x.copy(), t.copy(), lam.copy())
        if res_total < TOLERANCE:
            status = OPTIMAL
            break
        if res_total < POLISH_TOLERANCE or (res_total < 0.1 and it >= 8 and it % 2 == 0):
            # a validated active-set KKT solve is exact and provably optimal
            # (convexity), so try to skip the slow degenerate tail
            polished = _polish(problem, x, t, lam[sl1], lam[sl2], lam[sl3])
            if polished is not None:
                x, t, lam1_p, lam2_p, lam3_p, kkt_polish = polished
                lam = np.concatenate([lam1_p, lam2_p, lam3_p])
                status = OPTIMAL
                polish_done = True
                break

        # infeasibility certificate from the hard-row duals: y >= 0 with
        # Gh'y = 0 and hh'y > 0 proves the hard rows conflict
        if mh and it > 3:
            l3_sum = float(np.sum(lam3))
            if l3_sum > 1e4 * scale_rho:
                y = lam3 / l3_sum
                if float(np.max(np.abs(GhT @ y))) < 1e-6 and float(hh @ y) > 1e-6:
                    status = INFEASIBLE
                    break

        if float(np.min(w)) < 1e-16:
            break  # complementarity pair collapsed to the numerical floor

        if _kernels is not None:
            try:
                _kernels.qp_step_kernel(
                    P, Gs, hs, Gh, hh, x, t, w, lam,
                    r_dx, r_dt, r_p, mu, REGULARIZATION, _FRACTION_TO_BOUNDARY,
                )
            except np.linalg.LinAlgError:
                break
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(lam))):
                x, t, lam = best[0].copy(), best[1].copy(), best[2].copy()
                break
            continue

        D = lam / w
        D1 = D[sl1]
        D2 = D[sl2]
        D3 = D[sl3]
        S = P + eye_d
        if s:
            Ktt = D1 + D2
            Dt = D1 * D2 / Ktt
            S = S + (Gs * Dt[:, None]).T @ Gs
        if mh:
            S = S + (Gh * D3[:, None]).T @ Gh
        L, info = dpotrf(S, lower=1, overwrite_a=1)
        if info != 0:
            break  # numerical breakdown: report best iterate at MAX_ITERS

        r_p1 = r_p[sl1]
        r_p2 = r_p[sl2]
        r_p3 = r_p[sl3]

        def newton(rc):
            # eliminate (dw, dlam, dt) onto the x block
            e = -rc / w - D * r_p
            e1 = e[sl1]
            e3 = e[sl3]
            r1 = -r_dx
            if s:
                r2 = -r_dt + e1 + e[sl2]
                r1 = r1 + GsT @ (e1 - D1 * (r2 / Ktt))
            if mh:
                r1 = r1 + GhT @ e3
            dx, _ = dpotrs(L, r1, lower=1)
            if s:
                Gsdx = Gs @ dx
                dt = (r2 - D1 * Gsdx) / Ktt
                Adx = np.concatenate([Gsdx + dt, dt, Gh @ dx]) if mh else np.concatenate([Gsdx + dt, dt])
            else:
                dt = np.zeros(0)
                Adx = Gh @ dx
            dlam = e - D * Adx
            dw = Adx + r_p
            return dx, dt, dlam, dw

        def max_step(v, dv):
            # v > 0 throughout, so the most negative ratio bounds the step
            r = float((dv / v).min())
            return 1.0 if r >= 0.0 else min(1.0, -1.0 / r)

        # predictor
        lw = lam * w
        dx_a, dt_a, dlam_a, dw_a = newton(lw)
        a_p = max_step(w, dw_a)
        a_d = max_step(lam, dlam_a)
        mu_aff = float((lam + a_d * dlam_a) @ (w + a_p * dw_a)) / m_total
        sigma = (max(mu_aff, 0.0) / mu) ** 3 if mu > 0 else 0.0

        # corrector
        dx, dt, dlam, dw = newton(lw + dlam_a * dw_a - sigma * mu)
        a_p = _FRACTION_TO_BOUNDARY * max_step(w, dw)
        a_d = _FRACTION_TO_BOUNDARY * max_step(lam, dlam)
        x += a_p * dx
        t += a_p * dt
        w += a_p * dw
        lam += a_d * dlam
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(lam))):
            x, t, lam = best[0].copy(), best[1].copy(), best[2].copy()
            break

    if status != INFEASIBLE and best is not None and status != OPTIMAL:
        x, t, lam = best

    if status != INFEASIBLE and not polish_done:
        polished = _polish(problem, x, t, lam[sl1], lam[sl2], lam[sl3])
        if polished is None:
            polished = _polish(problem, x, t, lam[sl1], lam[sl2], lam[sl3], classify="margins")
        if polished is not None:
            x, t, lam1, lam2, lam3, kkt_polish = polished
            lam = np.concatenate([lam1, lam2, lam3])
            status = OPTIMAL  # a validated KKT point is optimal regardless of iterations
            polish_done = True

    if status == MAX_ITERS and s > 0:
        # rare stall recovery: the explicitly augmented problem conditions
        # differently (no recursion: relax() output has no slackable rows)
        retry = solve(relax(problem))
        if retry.status == OPTIMAL:
            return QpSolution(
                x=retry.x[:d], t=retry.x[d:], status=OPTIMAL,
                kkt_residual=retry.kkt_residual, iterations=it + retry.iterations,
                solve_time=time.perf_counter() - start, duals=None,
            )

    if polish_done:
        kkt = kkt_polish
    else:
        kkt = _kkt_residual(P, q, Gs, hs, rho, Gh, hh, x, t, lam[sl1], lam[sl2], lam[sl3])
    return QpSolution(
        x=x,
        t=t,
        status=status,
        kkt_residual=kkt,
        iterations=it,
        solve_time=time.perf_counter() - start,
        duals=lam,
    )


class QpSolver:
    """A solver instance that warm-starts each solve from the previous one.

    Holds the last solution as scratch state, so one instance belongs to one
    control loop; distinct instances are independent.
    """

    def __init__(self):
        self._last: QpSolution | None = None

    def solve(self, problem: QpProblem) -> QpSolution:
        sol = solve(problem, warm_start=self._last)
        if sol.status != INFEASIBLE:
            self._last = sol
        return sol

    def reset(self):
        self._last = None
