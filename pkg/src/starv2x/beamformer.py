"""Digital beamforming for the V2I links: successive convex approximation.

For fixed spectrum allocation, surface configuration and V2V powers, the
subproblem maximizes the V2I sum rate subject to a total power ball, a
minimum-rate floor, and the V2V outage coupling.  The nonconvex pieces are
handled exactly as the derivation prescribes:

* the SINR lower bound is routed through a slack ``mu`` and an
  auxiliary ``xi`` (interference-plus-noise proxy), with the concave
  ``sqrt(xi*mu)`` replaced by its first-order Taylor expansion around the
  previous iterate;
* the rotation trick makes ``h_i p_i`` effectively real, so the signal
  constraint becomes ``Re(h_i p_i) >= Taylor bound``;
* the outage coupling is either a convex quadratic upper bound
  (``outage_sense="lower"``) or a reverse-convex lower bound handled by
  linearizing ``|h_i p_i|^2`` around the previous iterate
  (``outage_sense="paper_upper"``).

The inner convex program is solved by a log-barrier interior-point method
with damped Newton steps and Armijo backtracking.  By default ``xi`` is
pinned to its exact value ``G_v + sigma^2`` (constant in this subproblem);
``xi_free=True`` keeps it as a formal variable with ``xi >= G_v + sigma^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateExpansionPoint, Infeasible
from .params import SimParams

STATUS_OPTIMAL = "Optimal"
STATUS_MAX_ITERS = "MaxIters"
STATUS_INFEASIBLE = "Infeasible"


# -- public data types -----------------------------------------------------

@dataclass(frozen=True)
class BeamformingProblem:
    h: np.ndarray            # (I, B) effective complex channels
    g_v_const: np.ndarray    # (I,) V2V-into-BS interference per VUE channel, W
    a: np.ndarray            # (I, V) spectrum allocation
    v2v_signal: np.ndarray   # (V,) p_v |h_v|^2 at each pair's receiver, W
    params: SimParams

    def __post_init__(self):
        if self.params.p_i_max_w <= 0 or self.params.noise_power_sigma2_w <= 0:
            raise ValueError("power budget and noise must be positive")


@dataclass
class BeamformingSolution:
    p: np.ndarray                    # (I, B) beamformers
    mu: np.ndarray                   # (I,) SINR slack
    xi: np.ndarray                   # (I,) interference-plus-noise proxy
    iterate_trace: list[float] = field(default_factory=list)
    status: str = STATUS_OPTIMAL

    @property
    def objective(self) -> float:
        return self.iterate_trace[-1] if self.iterate_trace else float("nan")


@dataclass(frozen=True)
class NormBall:
    """The relaxed power constraint {p : ||p||_2 <= sqrt(P_max)}."""

    p_max: float

    @property
    def radius(self) -> float:
        return float(np.sqrt(self.p_max))

    def contains(self, p: np.ndarray, tol: float = 1e-9) -> bool:
        return np.linalg.norm(p) <= self.radius + tol

    def project(self, p: np.ndarray) -> np.ndarray:
        norm = np.linalg.norm(p)
        if norm <= self.radius:
            return np.array(p, copy=True)
        return p * (self.radius / norm)


def relax_power_constraint(p_max: float) -> NormBall:
    if p_max <= 0:
        raise ValueError("power budget must be positive")
    return NormBall(p_max)


def taylor_sqrt_lower_bound(xi_prev: float, mu_prev: float,
                            xi: float, mu: float) -> float:
    """First-order expansion of sqrt(xi*mu) around (xi_prev, mu_prev).

    Concavity makes the expansion an upper bound on sqrt(xi*mu), hence a
    conservative stand-in on the right side of the signal constraint.
    """
    if xi_prev <= 0 or mu_prev <= 0:
        raise DegenerateExpansionPoint(f"expansion point ({xi_prev}, {mu_prev})")
    return (np.sqrt(xi_prev * mu_prev)
            + 0.5 * np.sqrt(xi_prev / mu_prev) * (mu - mu_prev)
            + 0.5 * np.sqrt(mu_prev / xi_prev) * (xi - xi_prev))


def mu_floor(params: SimParams) -> float:
    """2^(R_min/W0) - 1 (bandwidth reading; antenna-count reading via flag)."""
    if params.rmin_exponent_uses_bandwidth:
        expo = params.r_min_bps / params.bandwidth_w0_hz
    else:
        expo = params.r_min_bps / params.n_antennas_b
    return 2.0**expo - 1.0


# -- inner convex program --------------------------------------------------

class _InnerProgram:
    """One SCA-linearized convex instance in real variables x = [Re p, Im p, mu].

    Linear inequality rows: A x + c >= 0.  Quadratic rows: c - x' M x >= 0.
    """

    def __init__(self, prob: BeamformingProblem, p_expand: np.ndarray,
                 mu_expand: np.ndarray, xi: np.ndarray):
        params = prob.params
        i_count, b = prob.h.shape
        self.i_count, self.b = i_count, b
        self.n = 2 * i_count * b + i_count
        self.mu_off = 2 * i_count * b
        sigma2 = params.noise_power_sigma2_w

        # row vectors with u.x = Re(h_i p_i), w.x = Im(h_i p_i)
        self.u = np.zeros((i_count, self.n))
        self.w = np.zeros((i_count, self.n))
        for i in range(i_count):
            re_cols = slice(i * b, (i + 1) * b)
            im_cols = slice(i_count * b + i * b, i_count * b + (i + 1) * b)
            self.u[i, re_cols] = prob.h[i].real
            self.u[i, im_cols] = -prob.h[i].imag
            self.w[i, re_cols] = prob.h[i].imag
            self.w[i, im_cols] = prob.h[i].real

        rows_a, rows_c = [], []
        # (i) rotated signal bound with the Taylor expansion of sqrt(xi*mu)
        for i in range(i_count):
            if mu_expand[i] <= 0 or xi[i] <= 0:
                raise DegenerateExpansionPoint("nonpositive SCA expansion point")
            slope = 0.5 * np.sqrt(xi[i] / mu_expand[i])
            const = -(np.sqrt(xi[i] * mu_expand[i]) - slope * mu_expand[i])
            row = self.u[i].copy()
            row[self.mu_off + i] -= slope
            rows_a.append(row)
            rows_c.append(const)
        # (iv) mu floor
        floor = mu_floor(params)
        for i in range(i_count):
            row = np.zeros(self.n)
            row[self.mu_off + i] = 1.0
            rows_a.append(row)
            rows_c.append(-floor)

        # outage coupling rows, one per allocated pair
        self.quads: list[tuple[float, np.ndarray]] = []
        gamma_ef = _gamma_ef(params)
        x_exp = self._pack(p_expand, mu_expand)
        for v in range(prob.a.shape[1]):
            idx = np.nonzero(prob.a[:, v])[0]
            if idx.size == 0:
                continue
            bound = prob.v2v_signal[v] / gamma_ef - sigma2
            if params.outage_sense == "paper_upper":
                # reverse-convex |h p|^2 >= bound: linearize around the iterate
                if bound <= 0:
                    continue
                row = np.zeros(self.n)
                const = -bound
                for i in idx:
                    ru, rw = self.u[i] @ x_exp, self.w[i] @ x_exp
                    row += 2.0 * (ru * self.u[i] + rw * self.w[i])
                    const -= ru * ru + rw * rw
                rows_a.append(row)
                rows_c.append(const)
            else:
                # convex quadratic upper bound on the received V2I power
                if bound < 0:
                    raise Infeasible(
                        f"pair {v}: outage floor exceeds achievable SINR at zero power")
                m = np.zeros((self.n, self.n))
                for i in idx:
                    m += np.outer(self.u[i], self.u[i]) + np.outer(self.w[i], self.w[i])
                self.quads.append((bound, m))

        # (iii) norm ball ||p||^2 <= P
        m_ball = np.zeros((self.n, self.n))
        m_ball[: self.mu_off, : self.mu_off] = np.eye(self.mu_off)
        self.quads.append((params.p_i_max_w, m_ball))

        self.a_lin = np.array(rows_a)
        self.c_lin = np.array(rows_c)

    # -- packing -----------------------------------------------------------
    def _pack(self, p: np.ndarray, mu: np.ndarray) -> np.ndarray:
        x = np.empty(self.n)
        x[: self.i_count * self.b] = p.real.reshape(-1)
        x[self.i_count * self.b: self.mu_off] = p.imag.reshape(-1)
        x[self.mu_off:] = mu
        return x

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ib = self.i_count * self.b
        p = (x[:ib] + 1j * x[ib: self.mu_off]).reshape(self.i_count, self.b)
        return p, x[self.mu_off:].copy()

    # -- constraint evaluation ---------------------------------------------
    def residuals(self, x: np.ndarray) -> np.ndarray:
        lin = self.a_lin @ x + self.c_lin
        quad = np.array([c - x @ m @ x for c, m in self.quads])
        return np.concatenate([lin, quad])

    def objective(self, x: np.ndarray) -> float:
        """-(sum rate in nat-per-Hz units); the quantity Newton minimizes."""
        mu = x[self.mu_off:]
        return -float(np.sum(np.log1p(mu)))

    def barrier(self, x: np.ndarray, t: float) -> float:
        res = self.residuals(x)
        if np.any(res <= 0):
            return np.inf
        return t * self.objective(x) - float(np.sum(np.log(res)))

    def barrier_grad_hess(self, x: np.ndarray, t: float):
        n = self.n
        grad = np.zeros(n)
        hess = np.zeros((n, n))
        mu = x[self.mu_off:]
        grad[self.mu_off:] = -t / (1.0 + mu)
        hess[self.mu_off:, self.mu_off:] = np.diag(t / (1.0 + mu) ** 2)

        lin = self.a_lin @ x + self.c_lin
        grad -= self.a_lin.T @ (1.0 / lin)
        hess += (self.a_lin / (lin**2)[:, None]).T @ self.a_lin
        for c, m in self.quads:
            mx = m @ x
            g = c - x @ mx
            dg = -2.0 * mx
            grad -= dg / g
            hess += np.outer(dg, dg) / g**2 + 2.0 * m / g
        return grad, hess

    # -- solvers -----------------------------------------------------------
    def newton_barrier(self, x0: np.ndarray, tol_gap: float = 1e-9,
                       t0: float = 1.0, t_mult: float = 10.0,
                       max_newton: int = 60) -> np.ndarray:
        m_total = len(self.c_lin) + len(self.quads)
        x = x0.copy()
        t = t0
        while True:
            for _ in range(max_newton):
                grad, hess = self.barrier_grad_hess(x, t)
                try:
                    step = np.linalg.solve(hess + 1e-12 * np.eye(self.n), -grad)
                except np.linalg.LinAlgError:
                    step = -grad
                decrement = -grad @ step
                if decrement < 2e-14 * max(1.0, t):
                    break
                # backtracking: stay strictly feasible, Armijo on the barrier
                base = self.barrier(x, t)
                alpha = 1.0
                for _ in range(60):
                    cand = x + alpha * step
                    val = self.barrier(cand, t)
                    if np.isfinite(val) and val <= base - 1e-4 * alpha * decrement:
                        x = cand
                        break
                    alpha *= 0.5
                else:
                    break
            if m_total / t < tol_gap:
                return x
            t *= t_mult

    def interior_start(self, x_guess: np.ndarray, margin: float = 0.0):
        """Return a strictly feasible start, running phase-1 if needed."""
        if np.min(self.residuals(x_guess)) > margin:
            return x_guess
        return self._phase1(x_guess)

    def _phase1(self, x_guess: np.ndarray) -> np.ndarray:
        """Slack minimization min s s.t. g_k(x) + s >= 0 via the same barrier."""
        n = self.n
        x = x_guess.copy()
        s = -float(np.min(self.residuals(x))) + 1.0
        t = 1.0
        for _stage in range(14):
            for _ in range(80):
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    res = self.residuals(x) + s
                    lin = res[: len(self.c_lin)]
                    grad = np.zeros(n + 1)
                    hess = np.zeros((n + 1, n + 1))
                    grad[-1] = t
                    grad[:n] -= self.a_lin.T @ (1.0 / lin)
                    grad[-1] -= float(np.sum(1.0 / lin))
                    a_aug = np.hstack([self.a_lin, np.ones((len(self.c_lin), 1))])
                    hess += (a_aug / (lin**2)[:, None]).T @ a_aug
                    for k, (c, m) in enumerate(self.quads):
                        g = res[len(self.c_lin) + k]
                        dg = np.concatenate([-2.0 * (m @ x), [1.0]])
                        grad -= dg / g
                        hess += np.outer(dg, dg) / g**2
                        hess[:n, :n] += 2.0 * m / g
                    grad = np.nan_to_num(grad, nan=0.0, posinf=0.0, neginf=0.0)
                    hess = np.nan_to_num(hess, nan=0.0, posinf=0.0, neginf=0.0)
                try:
                    step = np.linalg.solve(hess + 1e-10 * np.eye(n + 1), -grad)
                except np.linalg.LinAlgError:
                    step = -grad
                decrement = -grad @ step
                if decrement < 1e-12 * max(1.0, t):
                    break
                alpha = 1.0
                for _ in range(60):
                    xc = x + alpha * step[:n]
                    sc = s + alpha * step[-1]
                    if np.all(self.residuals(xc) + sc > 0):
                        x, s = xc, sc
                        break
                    alpha *= 0.5
                else:
                    break
                if s < 0.0:
                    return x
            if s < 0.0:
                return x
            t *= 10.0
        raise Infeasible(f"phase-1 minimum slack {s:.3e} is nonnegative")


def _gamma_ef(params: SimParams) -> float:
    from .metrics import effective_outage_threshold

    return effective_outage_threshold(params)


# -- SCA outer loop --------------------------------------------------------

def feasibility_restore(prob: BeamformingProblem) -> BeamformingSolution:
    """Phase-aligned equal-power split, pushed to strict feasibility.

    Raises :class:`Infeasible` when the phase-1 program certifies an empty
    feasible set for the first linearized instance.
    """
    params = prob.params
    i_count, b = prob.h.shape
    norms = np.linalg.norm(prob.h, axis=1)
    if np.any(norms == 0):
        raise Infeasible("a VUE has an identically zero channel")
    p0 = (np.sqrt(params.p_i_max_w / i_count) * np.conj(prob.h)
          / norms[:, None])
    xi = prob.g_v_const + params.noise_power_sigma2_w
    signal = np.real(np.sum(prob.h * p0, axis=1))
    mu0 = np.maximum(0.81 * signal**2 / xi, 1e-12)

    program = _InnerProgram(prob, p0, np.maximum(mu0, mu_floor(params) + 1e-9), xi)
    x0 = program._pack(p0 * 0.999, mu0)
    x0 = program.interior_start(x0)
    p, mu = program.unpack(x0)
    return BeamformingSolution(p=p, mu=mu, xi=xi, iterate_trace=[], status=STATUS_OPTIMAL)


def sum_rate_from_mu(mu: np.ndarray, params: SimParams) -> float:
    return float(params.bandwidth_w0_hz * np.sum(np.log2(1.0 + mu)))


def sca_solve(prob: BeamformingProblem, init: BeamformingSolution | None = None,
              max_sca_iters: int = 50, tol_rel: float = 1e-6,
              tol_gap: float = 1e-9) -> BeamformingSolution:
    """Alternate linearize-and-solve until the objective gain stalls.

    Each inner instance is convex and its feasible set contains the previous
    iterate, so the objective trace is non-decreasing up to solver tolerance.
    """
    params = prob.params
    sol = init if init is not None else feasibility_restore(prob)
    xi = sol.xi
    p_prev, mu_prev = sol.p, np.maximum(sol.mu, 1e-12)
    trace: list[float] = []
    status = STATUS_MAX_ITERS
    for _ in range(max_sca_iters):
        program = _InnerProgram(prob, p_prev, mu_prev, xi)
        x_start = program._pack(p_prev * (1.0 - 1e-7), mu_prev * (1.0 - 1e-7))
        x_start = program.interior_start(x_start)
        x_opt = program.newton_barrier(x_start, tol_gap=tol_gap)
        p_prev, mu_new = program.unpack(x_opt)
        mu_prev = np.maximum(mu_new, 1e-12)
        obj = sum_rate_from_mu(mu_prev, params)
        trace.append(obj)
        if len(trace) >= 2:
            prev = trace[-2]
            if obj - prev <= tol_rel * max(abs(prev), 1.0):
                status = STATUS_OPTIMAL
                break
    return BeamformingSolution(p=p_prev, mu=mu_prev, xi=xi,
                               iterate_trace=trace, status=status)


def solve_for_allocation(h: np.ndarray, g_v_const: np.ndarray, a: np.ndarray,
                         v2v_signal: np.ndarray, params: SimParams,
                         **kwargs) -> BeamformingSolution:
    """Convenience wrapper building the problem record and running SCA."""
    prob = BeamformingProblem(h=np.asarray(h, dtype=complex),
                              g_v_const=np.asarray(g_v_const, dtype=float),
                              a=np.asarray(a, dtype=int),
                              v2v_signal=np.asarray(v2v_signal, dtype=float),
                              params=params)
    return sca_solve(prob, **kwargs)


# -- exhaustive micro-oracle ----------------------------------------------

def grid_oracle(prob: BeamformingProblem, n_mag: int = 400,
                n_phase: int = 64) -> tuple[np.ndarray, float]:
    """Exhaustive grid search over a single-antenna, single-VUE disc.

    Returns (best p, best sum rate) over the magnitude x phase grid of
    feasible points; raises ValueError for larger instances.
    """
    params = prob.params
    i_count, b = prob.h.shape
    if (i_count, b) != (1, 1):
        raise ValueError("grid oracle supports exactly one VUE with one antenna")
    sigma2 = params.noise_power_sigma2_w
    gamma_ef = _gamma_ef(params)
    floor = mu_floor(params)
    h = prob.h[0, 0]
    radius = np.sqrt(params.p_i_max_w)
    best_rate, best_p = -np.inf, None
    for mag in np.linspace(0.0, radius, n_mag):
        for phase in np.linspace(0.0, 2 * np.pi, n_phase, endpoint=False):
            p = mag * np.exp(1j * phase)
            sig = np.abs(h * p) ** 2
            gamma = sig / (prob.g_v_const[0] + sigma2)
            if gamma < floor:
                continue
            ok = True
            for v in range(prob.a.shape[1]):
                if prob.a[0, v] == 0:
                    continue
                gamma_v = prob.v2v_signal[v] / (sig + sigma2)
                if params.outage_sense == "paper_upper":
                    ok = gamma_v <= gamma_ef
                else:
                    ok = gamma_v >= gamma_ef
                if not ok:
                    break
            if not ok:
                continue
            rate = params.bandwidth_w0_hz * np.log2(1.0 + gamma)
            if rate > best_rate:
                best_rate, best_p = rate, p
    if best_p is None:
        raise Infeasible("no grid point satisfies the constraints")
    return np.array([[best_p]]), float(best_rate)
