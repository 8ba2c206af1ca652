"""Ping-to-ping displacement estimation from subspace-intersection images.

For a pair of pings ``(p, q)`` the hypothesis ``sigma = (x, y, theta)`` is the
differential motion error (surge, sway, yaw) of ``q`` with respect to ``p``,
on top of their planned relative placement.  Both pings are reconstructed
with their own truncated pseudoinverse and then driven towards the
intersection of the two observation subspaces by alternating projections;
the modulus error ``zeta`` and the complex error ``eta`` compare the two
results.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (DegenerateIntersection, IndexOutOfRange, InconsistentStride, MaxEvaluations,
                     ShapeMismatch, ValidationError)
from .geometry import IDENTITY, Pose, SystemConfig, compose, inverse, relative_pose
from .imaging import DEFAULT_INNER, DEFAULT_OUTER, PingOperator, PingRecord, alternate
from .scene import make_grid


@dataclass(frozen=True)
class Truncation:
    inner: int = DEFAULT_INNER
    outer: int = DEFAULT_OUTER


@dataclass(frozen=True)
class EstimationOptions:
    """Knobs of the pair estimator.

    Lengths are in meters and angles in radians.  ``None`` entries are
    derived from the system configuration (see :meth:`resolved`).

    The estimation grid (``grid_extent``, ``spacing``) is centered at
    midrange between the two nominal phase centers unless ``grid_center``
    (in the frame of the first ping) is given.  ``fd_*`` are the
    finite-difference steps in ``(x, y, theta)``, ``tol_*`` the step-size
    tolerances, ``max_evals`` the budget of each stage.  When the modulus
    stage ends above ``plateau``, yaw offsets ``yaw_lobe, 2 * yaw_lobe, ...``
    up to ``max_yaw`` are sampled and the ``restarts`` best are tried.
    The modulus stage result is then compared with surge offsets of
    ``k * surge_period`` for ``k = 1 .. surge_hops`` (default period: half
    the receiver spacing, where superimposed phase centers make ``zeta``
    ripple) and the descent resumes from any deeper one.
    ``quasi_newton`` switches BFGS refinement of the descent metric on or
    off for the ``(zeta, eta)`` stages.
    ``eta_max_step`` bounds one complex-stage step per axis
    ``(surge, sway, yaw)`` so that no scatterer within the main lobe
    changes range by more than ``step_eta``: the default is
    ``(step_eta * D / lambda, step_eta, step_eta / (grid length / 2))``.
    """

    grid_extent: tuple[float, float] = (1.6, 0.6)
    grid_center: tuple[float, float] | None = None
    spacing: float | None = None
    trunc: Truncation = Truncation()
    fd_zeta: tuple[float, float, float] = (1e-3, 1e-3, 1e-3)
    fd_eta: tuple[float, float, float] | None = None
    tol_zeta: float | None = None
    tol_eta: float | None = None
    step_zeta: float = 0.02
    step_eta: float | None = None
    max_step: float = 0.1
    max_evals: int = 500
    theta_scale: float | None = None
    plateau: float = 0.25
    yaw_lobe: float = 0.01
    max_yaw: float = 0.1
    restarts: int = 6
    surge_period: float | None = None
    surge_hops: int = 2
    ftol_zeta: float = 0.002
    armijo: float = 1e-4
    scaled: bool = True
    quasi_newton: tuple[bool, bool] = (True, True)
    eta_max_step: tuple[float, float, float] | None = None
    workers: int = 1

    def resolved(self, cfg: SystemConfig) -> EstimationOptions:
        lam = cfg.wavelength
        step_eta = self.step_eta or lam / 8.0
        return replace(
            self,
            eta_max_step=self.eta_max_step or (step_eta * cfg.D / lam, step_eta,
                                               step_eta / (self.grid_extent[0] / 2.0)),
            fd_eta=self.fd_eta or (lam / 50.0, lam / 50.0, 1e-4),
            tol_zeta=self.tol_zeta or lam / 20.0,
            tol_eta=self.tol_eta or lam / 200.0,
            step_eta=step_eta,
            theta_scale=self.theta_scale or cfg.midrange,
            surge_period=self.surge_period or cfg.L / 2.0,
        )


@dataclass
class DisplacementEstimate:
    sigma: Pose
    zeta_value: float
    eta_value: float
    evaluations: int
    stage_trace: list = field(default_factory=list)
    zeta_sigma: Pose | None = None


@dataclass
class TrajectoryEstimate:
    poses: list
    differentials: list
    rotation_correction: float = 0.0
    estimates: list = field(default_factory=list)


def pair_placements(nominal: Pose, sigma: Pose) -> tuple[Pose, Pose]:
    """Poses of ``p`` and ``q`` in the nominal frame of ``p`` under ``sigma``.

    ``nominal`` is the planned pose of ``q`` relative to ``p``.  The error is
    split evenly: ``p`` moves by ``-sigma / 2`` and ``q`` by ``+sigma / 2``
    (componentwise), which makes the estimate antisymmetric in the order of
    the two pings.
    """
    half = Pose(sigma.x / 2.0, sigma.y / 2.0, sigma.theta / 2.0)
    return -half, nominal + half


def relative_from_sigma(nominal: Pose, sigma: Pose) -> Pose:
    """Pose of ``q`` in the frame of ``p`` implied by ``sigma``."""
    pose_p, pose_q = pair_placements(nominal, sigma)
    return compose(inverse(pose_p), pose_q)


def sigma_from_relative(nominal: Pose, relative: Pose) -> Pose:
    """Inverse of :func:`relative_from_sigma` (closed form)."""
    theta = relative.theta - nominal.theta
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    # undo the rotation of p by -theta/2
    x = c * relative.x + s * relative.y - nominal.x
    y = -s * relative.x + c * relative.y - nominal.y
    return Pose(x, y, theta)


def pose_sqrt(a: Pose) -> Pose:
    """The rigid motion ``h`` with ``compose(h, h) == a`` (half the rotation).

    It commutes with inversion: ``pose_sqrt(inverse(a)) == inverse(pose_sqrt(a))``.
    """
    half = a.theta / 2.0
    c, s = math.cos(half), math.sin(half)
    # solve (I + R(half)) t = a.t
    m = np.array([[1.0 + c, -s], [s, 1.0 + c]])
    t = np.linalg.solve(m, [a.x, a.y])
    return Pose(float(t[0]), float(t[1]), half)


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


class PairProblem:
    """Cached evaluation of the intersection images of one ping pair.

    The pair is solved in the frame halfway (in the rigid-motion sense)
    between the nominal phase centers of ``p`` and ``q``.  Under ``sigma``
    the pings sit at ``inverse(h)`` and ``h`` with ``h = pose_sqrt(relative)``,
    so exchanging the pings and negating ``sigma`` reproduces the same
    configuration and the same error values.
    """

    def __init__(self, ping_p: PingRecord, ping_q: PingRecord, cfg: SystemConfig | None = None,
                 opts: EstimationOptions | None = None):
        cfg = cfg or ping_p.op.cfg
        self.cfg = cfg
        self.opts = (opts or EstimationOptions()).resolved(cfg)
        if ping_p.op.time != ping_q.op.time:
            raise ShapeMismatch("both pings must share one time grid")
        self.nominal = relative_pose(ping_p.geometry.pca, ping_q.geometry.pca)
        self.frame = pose_sqrt(self.nominal)
        center = (0.0, cfg.midrange)
        if self.opts.grid_center is not None:
            center = tuple(relative_pose(self.frame, Pose(*self.opts.grid_center, 0.0)).position)
        self.grid = make_grid(cfg, self.opts.grid_extent, center, self.opts.spacing)
        self.op_p_base = PingOperator(ping_p.geometry.localized(), self.grid, ping_p.op.time, cfg)
        self.op_q_base = PingOperator(ping_q.geometry.localized(), self.grid, ping_q.op.time, cfg)
        self.data_p = ping_p.data
        self.data_q = ping_q.data
        self.evaluations = 0
        self._cache: dict = {}
        c = np.array(self.grid.center)
        self._offset = self._apparent_shift(self.frame, c)

    def placements(self, sigma: Pose) -> tuple[Pose, Pose]:
        """Poses of both pings in the pair frame under ``sigma``."""
        h = pose_sqrt(self.relative(sigma))
        return inverse(h), h

    def relative(self, sigma: Pose) -> Pose:
        return relative_from_sigma(self.nominal, sigma)

    def psi(self, sigma: Pose) -> tuple[np.ndarray, np.ndarray]:
        """Intersection images started from ping ``p`` and from ping ``q``."""
        key = (sigma.x, sigma.y, sigma.theta)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        t = self.opts.trunc
        pose_p, pose_q = self.placements(sigma)
        op_p = self.op_p_base.displaced(pose_p)
        op_q = self.op_q_base.displaced(pose_q)
        rho_p = op_p.pinv(self.data_p, t.inner)
        rho_q = op_q.pinv(self.data_q, t.inner)
        qp = lambda x: op_p.project(x, t.inner)  # noqa: E731
        qq = lambda x: op_q.project(x, t.inner)  # noqa: E731
        psi_p = alternate(rho_p, qp, qq, t.outer)
        psi_q = alternate(rho_q, qq, qp, t.outer)
        self.evaluations += 1
        if len(self._cache) > 256:
            self._cache.clear()
        self._cache[key] = (psi_p, psi_q)
        return psi_p, psi_q

    def _norm(self, psi_p, psi_q) -> float:
        n = max(np.linalg.norm(psi_p), np.linalg.norm(psi_q))
        if not n > 0.0:
            raise DegenerateIntersection("intersection images vanish; the pings share no subspace")
        return n

    def zeta(self, sigma: Pose) -> float:
        psi_p, psi_q = self.psi(sigma)
        return float(np.linalg.norm(np.abs(psi_p) - np.abs(psi_q)) / self._norm(psi_p, psi_q))

    def eta(self, sigma: Pose) -> float:
        psi_p, psi_q = self.psi(sigma)
        return float(np.linalg.norm(psi_p - psi_q) / self._norm(psi_p, psi_q))

    # Optimizer coordinates: how far the two pings see the grid center
    # apart (half of it, relative to nominal), plus yaw as arc length at
    # midrange.  Rotating a ping about a point near the scene barely moves
    # the image, so (x, theta) is badly coupled while (shift, theta) is not.
    # The map is odd under exchanging the pings.
    @staticmethod
    def _apparent_shift(h: Pose, c) -> np.ndarray:
        return (h.apply(c) - inverse(h).apply(c)) / 2.0

    def to_vec(self, sigma: Pose) -> np.ndarray:
        c = np.array(self.grid.center)
        shift = self._apparent_shift(pose_sqrt(self.relative(sigma)), c) - self._offset
        return np.array([shift[0], shift[1], sigma.theta * self.opts.theta_scale])

    def to_pose(self, u) -> Pose:
        theta = u[2] / self.opts.theta_scale
        c = np.array(self.grid.center)
        half = (self.nominal.theta + theta) / 2.0
        # (h(c) - h^-1(c)) / 2 is linear in the translation of h
        rhs = 2.0 * (np.asarray(u[:2], dtype=float) + self._offset) - (_rot(half) - _rot(-half)) @ c
        t = np.linalg.solve(np.eye(2) + _rot(-half), rhs)
        h = Pose(float(t[0]), float(t[1]), half)
        return sigma_from_relative(self.nominal, compose(h, h))


def zeta(ping_p: PingRecord, ping_q: PingRecord, sigma: Pose, trunc: Truncation = Truncation(),
         opts: EstimationOptions | None = None) -> float:
    """Normalized modulus error between the two intersection images."""
    opts = replace(opts or EstimationOptions(), trunc=trunc)
    return PairProblem(ping_p, ping_q, opts=opts).zeta(sigma)


def eta(ping_p: PingRecord, ping_q: PingRecord, sigma: Pose, trunc: Truncation = Truncation(),
        opts: EstimationOptions | None = None) -> float:
    """Normalized complex error between the two intersection images."""
    opts = replace(opts or EstimationOptions(), trunc=trunc)
    return PairProblem(ping_p, ping_q, opts=opts).eta(sigma)


def _fd_derivatives(vals, fu, h):
    """Gradient and diagonal curvature from central-difference probes.

    A probe that is not finite falls back to the one-sided difference on
    the other side (and zero curvature).
    """
    n = h.size
    g, curv = np.zeros(n), np.zeros(n)
    for i in range(n):
        fp, fm = vals[2 * i], vals[2 * i + 1]
        if np.isfinite(fp) and np.isfinite(fm):
            g[i] = (fp - fm) / (2 * h[i])
            curv[i] = (fp - 2.0 * fu + fm) / h[i] ** 2
        elif np.isfinite(fp):
            g[i] = (fp - fu) / h[i]
        elif np.isfinite(fm):
            g[i] = (fu - fm) / h[i]
    return g, curv


def steepest_descent(f, u0, fd_steps, tol: float, step0: float, max_step: float = np.inf,
                     max_evals: int = 500, armijo: float = 1e-4, workers: int = 1, on_accept=None,
                     ftol: float = 0.0, patience: int = 3, scaled: bool = True,
                     quasi_newton: bool = False):
    """Minimize ``f`` by (diagonally scaled) steepest descent with central differences.

    Each iteration estimates the gradient ``g`` from ``2 * len(u0)``
    probes and backtracks along a descent direction until the Armijo
    condition holds, halving the trial step each time.

    With ``scaled`` the step is ``-g_i / (c_i + |g| / max_step)``, where
    ``c_i`` is the (non-negative part of the) curvature read off the same
    probes: a plain gradient step of length ``max_step`` where the
    objective is flat or concave, close to a diagonal Newton step where it
    is strongly convex.  The first trial takes the full step.  A
    per-coordinate ``max_step`` bounds steps to the ellipsoid with those
    semi-axes.
    Without it the direction is the normalized gradient and the trial
    length adapts from ``step0`` (doubled after success, capped at
    ``max_step``).  ``quasi_newton`` (scaled mode only) starts from the
    same diagonal metric and refines it with BFGS updates built from the
    successive gradients, which lets the descent follow curved valleys;
    the step is still capped at ``max_step``.

    Stops once the trial step falls below ``tol``, once an accepted step is
    shorter than ``tol``, or once ``patience`` accepted steps together
    lowered ``f`` by less than the fraction ``ftol``.  Returns
    ``(u, f(u), evaluations)``.

    Raises
    ------
    DegenerateIntersection
        If ``f`` is not finite at ``u0``.
    MaxEvaluations
        When the budget runs out; the best point so far is attached as
        ``exc.best = (u, f(u))``.
    """
    u = np.asarray(u0, dtype=float).copy()
    h = np.asarray(fd_steps, dtype=float)
    n = u.size
    caps = np.broadcast_to(np.asarray(max_step, dtype=float), u.shape)

    def reach(d):
        # longest step along the unit vector d inside the cap ellipsoid
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.linalg.norm(np.where(np.isinf(caps), 0.0, d / caps))
        return np.inf if r == 0.0 else 1.0 / r
    evals = 0
    fu = np.inf

    def exhausted():
        exc = MaxEvaluations(f"evaluation budget of {max_evals} exhausted")
        exc.best = (u, fu)
        return exc

    def call(v):
        nonlocal evals
        if evals >= max_evals:
            raise exhausted()
        evals += 1
        return f(v)

    fu = call(u)
    if not np.isfinite(fu):
        raise DegenerateIntersection("objective is undefined at the starting point")
    if on_accept is not None:
        on_accept(u, fu)
    step = step0
    history = [fu]
    H = s_prev = g_prev = None
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while True:
            probes = [u + s * h[i] * e for i, e in enumerate(np.eye(n)) for s in (1.0, -1.0)]
            if pool is None:
                vals = [call(v) for v in probes]
            else:
                if evals + len(probes) > max_evals:
                    raise exhausted()
                vals = list(pool.map(f, probes))
                evals += len(probes)
            g, curv = _fd_derivatives(vals, fu, h)
            gn = np.linalg.norm(g)
            if gn == 0.0:
                break
            if scaled:
                diag = np.diag(1.0 / (np.maximum(curv, 0.0) + gn / caps))
                metrics = [diag]
                if quasi_newton and H is not None:
                    y = g - g_prev
                    sy = float(s_prev @ y)
                    if sy > 1e-12 * np.linalg.norm(s_prev) * np.linalg.norm(y):
                        rho = 1.0 / sy
                        V = np.eye(n) - rho * np.outer(s_prev, y)
                        metrics.insert(0, V @ H @ V.T + rho * np.outer(s_prev, s_prev))
            else:
                metrics = [None]
            accepted = False
            # a failed quasi-Newton direction falls back to the diagonal one
            for M in metrics:
                if M is None:
                    d = -g / gn
                    trial = min(step, reach(d))
                else:
                    d = -M @ g
                    length = np.linalg.norm(d)
                    if not float(g @ d) < 0.0:
                        continue
                    d /= length
                    trial = min(length, reach(d))
                slope = float(g @ d)
                while trial >= tol:
                    cand = u + trial * d
                    fc = call(cand)
                    if fc <= fu + armijo * trial * slope:
                        s_prev, g_prev, H = cand - u, g, M
                        u, fu = cand, fc
                        accepted = True
                        history.append(fu)
                        if on_accept is not None:
                            on_accept(u, fu)
                        break
                    trial /= 2.0
                if accepted:
                    break
            if not accepted or (scaled and trial < tol):
                break
            if not scaled:
                step = 2.0 * trial
            if ftol > 0 and len(history) > patience and \
                    history[-1 - patience] - fu < ftol * history[-1 - patience]:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return u, fu, evals


def _descend(problem: PairProblem, which: str, start: Pose, trace: list, budget: int,
             tolerant: bool = False):
    """One steepest-descent run; returns ``(pose, value, evaluations)``.

    With ``tolerant`` an exhausted budget ends the run at its best point
    instead of raising.
    """
    o = problem.opts
    fun = problem.zeta if which == "zeta" else problem.eta
    scale = np.array([1.0, 1.0, o.theta_scale])
    if which == "zeta":
        h, tol, step0, ftol = np.array(o.fd_zeta) * scale, o.tol_zeta, o.step_zeta, o.ftol_zeta
        max_step, qn = o.max_step, o.quasi_newton[0]
    else:
        # never step across an oscillation of eta along any axis
        h, tol, step0, ftol = np.array(o.fd_eta) * scale, o.tol_eta, o.step_eta, 0.0
        max_step, qn = np.array(o.eta_max_step) * scale, o.quasi_newton[1]

    def record(u, val):
        trace.append((which, problem.to_pose(u), float(val)))

    def objective(v):
        try:
            return fun(problem.to_pose(v))
        except DegenerateIntersection:
            return np.inf

    try:
        u, val, evals = steepest_descent(objective, problem.to_vec(start), h, tol, step0, max_step,
                                         budget, o.armijo, o.workers, on_accept=record, ftol=ftol,
                                         scaled=o.scaled, quasi_newton=qn)
    except MaxEvaluations as exc:
        if not tolerant or not np.isfinite(exc.best[1]):
            raise
        u, val = exc.best
        evals = budget
    return problem.to_pose(u), val, evals


def _yaw_offsets(opts: EstimationOptions):
    k = 1
    while k * opts.yaw_lobe <= opts.max_yaw + 1e-12:
        yield k * opts.yaw_lobe
        yield -k * opts.yaw_lobe
        k += 1


def _surge_hops(problem: PairProblem, sigma: Pose, zval: float, trace: list, budget: int):
    """Move to deeper ``zeta`` basins one or more surge periods away."""
    o = problem.opts
    while budget > 0:
        cands = []
        for k in range(1, o.surge_hops + 1):
            for sign in (1.0, -1.0):
                if budget <= 0:
                    break
                cand = Pose(sigma.x + sign * k * o.surge_period, sigma.y, sigma.theta)
                try:
                    val = problem.zeta(cand)
                except DegenerateIntersection:
                    val = np.inf
                budget -= 1
                trace.append(("hop", cand, float(val)))
                cands.append((val, k, cand))
        if not cands:
            break
        val, _, cand = min(cands, key=lambda item: item[:2])
        if not val < zval:
            break
        c_sigma, c_val, used = _descend(problem, "zeta", cand, trace, budget, tolerant=True)
        budget -= used
        if not c_val < zval:
            break
        sigma, zval = c_sigma, c_val
    return sigma, zval, budget


def estimate_displacement(ping_p: PingRecord, ping_q: PingRecord, opts: EstimationOptions | None = None,
                          cfg: SystemConfig | None = None, start: Pose = IDENTITY) -> DisplacementEstimate:
    """Two-stage estimate of the motion error of ``q`` relative to ``p``.

    The coarse stage descends the modulus error ``zeta`` from ``start``
    (zero by default).  If it stalls on a plateau above ``opts.plateau``,
    ``zeta`` is sampled at yaw offsets of ``opts.yaw_lobe`` up to
    ``opts.max_yaw`` and the descent is restarted from the
    ``opts.restarts`` most promising offsets.  Every coarse descent is
    followed by a check of the surge neighbours one and two
    ``opts.surge_period`` away.  The fine stage then refines
    the best coarse result on the complex error ``eta``.

    Raises
    ------
    DegenerateIntersection
        If the intersection images vanish at the starting point.
    MaxEvaluations
        If the fine stage does not converge within ``opts.max_evals``.
    """
    problem = PairProblem(ping_p, ping_q, cfg, opts)
    o = problem.opts
    trace: list = [("init", start, float("nan"))]
    budget = o.max_evals

    def coarse(begin):
        nonlocal budget
        found, val, used = _descend(problem, "zeta", begin, trace, budget, tolerant=True)
        budget -= used
        if budget > 0 and o.surge_hops > 0:
            found, val, budget = _surge_hops(problem, found, val, trace, budget)
        return found, val

    sigma, zval = coarse(start)
    if zval > o.plateau and budget > 0:
        scored = []
        for dyaw in _yaw_offsets(o):
            if budget <= 0:
                break
            cand = Pose(start.x, start.y, start.theta + dyaw)
            try:
                val = problem.zeta(cand)
            except DegenerateIntersection:
                val = np.inf
            budget -= 1
            trace.append(("scan", cand, float(val)))
            if np.isfinite(val):
                scored.append((val, dyaw, cand))
        scored.sort(key=lambda item: item[0])
        for _, _, cand in scored[:o.restarts]:
            if budget <= 0:
                break
            c_sigma, c_val = coarse(cand)
            if c_val < zval:
                sigma, zval = c_sigma, c_val
            if zval <= o.plateau:
                break
    zeta_sigma = sigma
    sigma, eval_, _ = _descend(problem, "eta", sigma, trace, o.max_evals)
    return DisplacementEstimate(sigma=sigma, zeta_value=problem.zeta(sigma), eta_value=eval_,
                                evaluations=problem.evaluations, stage_trace=trace, zeta_sigma=zeta_sigma)


def integrate(differentials, origin: Pose = IDENTITY) -> list:
    """Cumulative poses from ping-to-ping relative placements."""
    poses = [origin]
    for d in differentials:
        poses.append(compose(poses[-1], d))
    return poses


def estimate_trajectory(pings, opts: EstimationOptions | None = None, cfg: SystemConfig | None = None,
                        progress=None) -> TrajectoryEstimate:
    """Chain pair estimates over consecutive pings, anchored at the first ping."""
    pings = list(pings)
    if len(pings) < 2:
        raise ValidationError("need at least two pings")
    opts = opts or EstimationOptions()
    estimates, diffs = [], []
    for k in range(len(pings) - 1):
        try:
            est = estimate_displacement(pings[k], pings[k + 1], opts, cfg)
        except (DegenerateIntersection, MaxEvaluations) as exc:
            raise type(exc)(f"pair {k}-{k + 1}: {exc}") from exc
        estimates.append(est)
        nominal = relative_pose(pings[k].geometry.pca, pings[k + 1].geometry.pca)
        diffs.append(relative_from_sigma(nominal, est.sigma))
        if progress is not None:
            progress(k, est)
    return TrajectoryEstimate(poses=integrate(diffs), differentials=diffs, estimates=estimates)


def rearrange_pings(pings, K: int, phase: int, N: int | None = None) -> list:
    """Every ``(N - K)``-th ping starting at ``phase``."""
    pings = list(pings)
    if N is None:
        N = pings[0].op.N if pings else 1
    if not 0 <= K < N:
        raise IndexOutOfRange(f"K={K} outside [0, {N})")
    stride = N - K
    if not 0 <= phase < stride:
        raise IndexOutOfRange(f"phase={phase} outside [0, {stride})")
    return pings[phase::stride]


def extract_siso(pings, rx_index: int) -> list:
    """Single-receiver pings keeping receiver ``rx_index`` and the original transmitter."""
    out = []
    for p in pings:
        if not 0 <= rx_index < p.op.N:
            raise IndexOutOfRange(f"receiver {rx_index} outside [0, {p.op.N})")
        op = PingOperator(p.geometry.select(rx_index), p.op.grid, p.op.time, p.op.cfg)
        out.append(PingRecord(op, (p.tracks[rx_index],), dict(p.meta)))
    return out


def combine_phase_estimates(per_phase, stride: int) -> TrajectoryEstimate:
    """Interlace sub-sampled trajectories into one fully sampled trajectory.

    Phase ``j`` holds the poses of pings ``j, j + stride, ...`` relative to
    its own first ping.  Phase 0 fixes the frame; every other phase is
    placed by the rigid motion that best aligns it, in the least-squares
    sense, with the linear interpolation of the phase-0 track at its ping
    indices.  The drift line of the merged positions gives
    ``rotation_correction``.
    """
    per_phase = list(per_phase)
    if not per_phase:
        raise ValidationError("no phases to combine")
    if len(per_phase) != stride:
        raise InconsistentStride(f"{len(per_phase)} phases for stride {stride}")
    if stride == 1:
        t = per_phase[0]
        return TrajectoryEstimate(list(t.poses), list(t.differentials), _drift_angle(t.poses), list(t.estimates))
    lengths = [len(t.poses) for t in per_phase]
    if any(lengths[j] > lengths[0] or lengths[j] < lengths[0] - 1 for j in range(stride)):
        raise InconsistentStride(f"phase lengths {lengths} inconsistent with stride {stride}")

    ref = per_phase[0].poses
    ref_idx = np.arange(len(ref)) * stride
    ref_xy = np.array([[p.x, p.y] for p in ref])
    ref_th = np.array([p.theta for p in ref])
    total = max(j + stride * (len(t.poses) - 1) for j, t in enumerate(per_phase)) + 1
    merged: list = [None] * total
    for k, p in enumerate(ref):
        merged[k * stride] = p
    for j in range(1, stride):
        poses = per_phase[j].poses
        idx = j + stride * np.arange(len(poses))
        ok = idx <= ref_idx[-1]
        if ok.sum() < 1:
            raise InconsistentStride(f"phase {j} has no overlap with phase 0")
        tgt_xy = np.column_stack([np.interp(idx[ok], ref_idx, ref_xy[:, 0]), np.interp(idx[ok], ref_idx, ref_xy[:, 1])])
        tgt_th = np.interp(idx[ok], ref_idx, ref_th)
        src_xy = np.array([[p.x, p.y] for p in poses])[ok]
        src_th = np.array([p.theta for p in poses])[ok]
        align = _rigid_fit(src_xy, src_th, tgt_xy, tgt_th)
        for i, p in zip(idx, poses):
            merged[i] = compose(align, p)
    if any(m is None for m in merged):
        raise InconsistentStride("phases do not tile the ping sequence")
    diffs = [compose(inverse(a), b) for a, b in zip(merged[:-1], merged[1:])]
    ests = [e for t in per_phase for e in t.estimates]
    return TrajectoryEstimate(merged, diffs, _drift_angle(merged), ests)


def _rigid_fit(src_xy, src_th, tgt_xy, tgt_th) -> Pose:
    """Least-squares rigid motion mapping the source poses onto the target."""
    if len(src_xy) == 1:
        th = float(tgt_th[0] - src_th[0])
    else:
        sc, tc = src_xy.mean(0), tgt_xy.mean(0)
        a, b = src_xy - sc, tgt_xy - tc
        th = math.atan2(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]), np.sum(a * b))
    c, s = math.cos(th), math.sin(th)
    rot = src_xy @ np.array([[c, s], [-s, c]])
    t = (tgt_xy - rot).mean(0)
    return Pose(t[0], t[1], th)


def _drift_angle(poses) -> float:
    """Angle of the least-squares line through the positions."""
    xy = np.array([[p.x, p.y] for p in poses])
    if len(xy) < 2:
        return 0.0
    c = xy - xy.mean(0)
    _, _, vt = np.linalg.svd(c, full_matrices=False)
    d = vt[0]
    if d[0] < 0:
        d = -d
    return float(math.atan2(d[1], d[0]))


def rotate_trajectory(traj: TrajectoryEstimate, angle: float) -> TrajectoryEstimate:
    """Rotate all positions by ``angle`` about the first ping and add it to the yaw."""
    rot = Pose(0.0, 0.0, angle)
    poses = [compose(rot, p) for p in traj.poses]
    return TrajectoryEstimate(poses, list(traj.differentials), traj.rotation_correction, list(traj.estimates))
