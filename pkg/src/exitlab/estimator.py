"""Tail-probability estimators built on the path engine.

Estimates are reproducible to the byte: paths are partitioned into batches of
fixed contiguous path-id ranges, worker processes (fork) claim whole batches,
and results are reduced in batch order.  Worker count therefore changes wall
time only, never the estimate.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass

import numpy as np

from .dynamics import (
    BoxDomain,
    ConjugateFieldModel,
    NoiseModel,
    flow_exit_times_batch,
)
from .errors import DegenerateFit, NoExit
from .exponents import ThresholdSpec
from .sde import PathConfig, default_full_exit_cap, make_generator, simulate_batch

DEFAULT_BATCH_SIZE = 16384

# Path-id namespaces.  Direct and adjusted runs use ids [0, n); splitting
# level k uses ids (k << 44) | slot; resampling draws from a salted key so
# survivor selection never shares a stream with any path.
_LEVEL_SHIFT = 44
_RESAMPLE_SALT = 0x5DEECE66D

_Z95 = 1.959963984540054


@dataclass
class TailEstimate:
    """Estimated survival probability with uncertainty and path accounting."""

    p_hat: float
    stderr: float
    n_paths: int
    n_survived: int
    method: str
    path_steps: int = 0
    wilson_interval: tuple[float, float] | None = None
    zero_upper_bound: float | None = None
    extinct_level: int | None = None
    n_capped: int = 0
    n_clamped: int = 0


def _wilson(k: int, n: int) -> tuple[float, float]:
    p = k / n
    z2 = _Z95 * _Z95
    denom = 1.0 + z2 / n
    center = (p + z2 / (2.0 * n)) / denom
    half = _Z95 * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def _binomial_estimate(k: int, n: int, method: str) -> TailEstimate:
    if n < 1:
        raise ValueError("n_paths must be >= 1")
    p = k / n
    est = TailEstimate(
        p_hat=p, stderr=math.sqrt(p * (1.0 - p) / n),
        n_paths=n, n_survived=k, method=method)
    if k < 30:
        est.wilson_interval = _wilson(k, n)
    if k == 0:
        # one-sided 95% upper bound; the point estimate stays 0 but flagged
        est.zero_upper_bound = 1.0 - 0.05 ** (1.0 / n)
    return est


# ---------------------------------------------------------------------------
# batch fan-out

_ACTIVE_JOB = None


def _run_job_batch(b: int):
    return b, _ACTIVE_JOB.run_batch(b)


def _map_batches(job, n_batches: int, workers: int) -> list:
    """Run job.run_batch for every batch index, in-order results.

    Batches are keyed by global index, so fanning out over any number of
    fork workers reduces to the same ordered list a serial loop produces.
    """
    if workers <= 1 or n_batches <= 1:
        return [job.run_batch(b) for b in range(n_batches)]
    global _ACTIVE_JOB
    _ACTIVE_JOB = job
    try:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=min(workers, n_batches)) as pool:
            gathered = dict(pool.imap_unordered(_run_job_batch, range(n_batches)))
    finally:
        _ACTIVE_JOB = None
    return [gathered[b] for b in range(n_batches)]


def _batch_bounds(n: int, batch_size: int, b: int) -> tuple[int, int]:
    start = b * batch_size
    return start, min(start + batch_size, n)


class _DirectJob:
    """Survival counting for one (x0, epsilon) at a fixed threshold."""

    def __init__(self, model, noise, domain, x0, epsilon, stop_time, dt,
                 seed, n_paths, batch_size, id_base=0):
        self.model = model
        self.noise = noise
        self.domain = domain
        self.x0 = np.asarray(x0, dtype=float)
        self.epsilon = epsilon
        self.stop_time = stop_time
        self.dt = dt
        self.seed = seed
        self.n_paths = n_paths
        self.batch_size = batch_size
        self.id_base = id_base

    def run_batch(self, b: int):
        start, stop = _batch_bounds(self.n_paths, self.batch_size, b)
        gens = [make_generator(self.seed, self.id_base + pid)
                for pid in range(start, stop)]
        X0 = np.broadcast_to(self.x0, (stop - start, self.x0.size))
        res = simulate_batch(self.model, self.noise, self.domain, X0,
                             self.epsilon, self.stop_time, self.dt, gens)
        return (int(res["exited"].sum()), int(res["steps_used"].sum()),
                int(res["clamped"].sum()))


def direct_tail_estimate(model: ConjugateFieldModel, noise: NoiseModel,
                         domain, x, epsilon: float,
                         threshold_spec: ThresholdSpec, n_paths: int,
                         config: PathConfig, seed: int, workers: int = 1,
                         batch_size: int = DEFAULT_BATCH_SIZE) -> TailEstimate:
    """Plain Monte Carlo estimate of P(no exit before the threshold time).

    Paths start at eps * x and run on the dt grid to the threshold.  With
    threshold time 0 the estimate is exactly 1 (nothing can exit at t = 0
    from a strict interior start).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t0 = threshold_spec.time(epsilon)
    job = _DirectJob(model, noise, domain, epsilon * x, epsilon, t0,
                     config.dt, seed, n_paths, batch_size)
    n_batches = -(-n_paths // batch_size)
    parts = _map_batches(job, n_batches, workers)
    n_exited = sum(p[0] for p in parts)
    steps = sum(p[1] for p in parts)
    clamps = sum(p[2] for p in parts)
    est = _binomial_estimate(n_paths - n_exited, n_paths, "direct")
    est.path_steps = steps
    est.n_clamped = clamps
    return est


# ---------------------------------------------------------------------------
# fixed-effort splitting


@dataclass(frozen=True)
class SplittingPlan:
    """Time levels and per-level budget for fixed-effort splitting.

    level_times must increase strictly to the threshold time; the budget is
    rerun at every level, resampling survivor states with replacement.
    """

    level_times: tuple[float, ...]
    budget: int

    def __post_init__(self):
        times = tuple(float(t) for t in self.level_times)
        if len(times) == 0:
            raise ValueError("at least one level is required")
        if times[0] <= 0.0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("level times must be positive and strictly increasing")
        object.__setattr__(self, "level_times", times)
        if self.budget < 100:
            raise ValueError("budget must be at least 100")

    @classmethod
    def uniform(cls, threshold: float, budget: int,
                level_step: float = 1.0) -> "SplittingPlan":
        """Levels of roughly level_step length covering (0, threshold]."""
        if threshold <= 0.0:
            raise ValueError("threshold must be positive")
        if level_step <= 0.0:
            raise ValueError("level_step must be positive")
        m = max(1, int(math.ceil(threshold / level_step - 1e-12)))
        times = tuple(threshold * (j + 1) / m for j in range(m))
        return cls(level_times=times, budget=budget)


class _SplitLevelJob:
    """One splitting level: advance the resampled states by the level span."""

    def __init__(self, model, noise, domain, states, epsilon, duration, dt,
                 seed, level, batch_size):
        self.model = model
        self.noise = noise
        self.domain = domain
        self.states = states
        self.epsilon = epsilon
        self.duration = duration
        self.dt = dt
        self.seed = seed
        self.level = level
        self.batch_size = batch_size

    def run_batch(self, b: int):
        start, stop = _batch_bounds(self.states.shape[0], self.batch_size, b)
        base = self.level << _LEVEL_SHIFT
        gens = [make_generator(self.seed, base | slot)
                for slot in range(start, stop)]
        res = simulate_batch(self.model, self.noise, self.domain,
                             self.states[start:stop], self.epsilon,
                             self.duration, self.dt, gens, want_final=True)
        alive = ~res["exited"]
        return (res["final_state"][alive], int(res["steps_used"].sum()),
                int(res["clamped"].sum()))


def splitting_tail_estimate(model: ConjugateFieldModel, noise: NoiseModel,
                            domain, x, epsilon: float,
                            threshold_spec: ThresholdSpec, plan: SplittingPlan,
                            config: PathConfig, seed: int, workers: int = 1,
                            batch_size: int = DEFAULT_BATCH_SIZE) -> TailEstimate:
    """Fixed-effort multilevel splitting of the survival probability.

    At each level the full budget restarts from survivor states resampled
    with replacement (Markov restarts), the level survival fractions f_k are
    recorded, and p_hat = prod f_k with the product-form delta-method error
    p_hat * sqrt(sum (1 - f_k) / (f_k * budget)).  Survivor states are
    carried in linearizing coordinates.  A level with no survivors ends the
    cascade: p_hat = 0, flagged with the extinct level.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t0 = threshold_spec.time(epsilon)
    times = plan.level_times
    if abs(times[-1] - t0) > 1e-9 * max(1.0, abs(t0)):
        raise ValueError("last level time must equal the threshold time")
    budget = plan.budget
    d = model.spectrum.d
    states = np.broadcast_to(epsilon * x, (budget, d)).copy()
    factors: list[float] = []
    steps = 0
    clamps = 0
    prev_t = 0.0
    n_surv = budget
    for level, t_level in enumerate(times, start=1):
        duration = t_level - prev_t
        job = _SplitLevelJob(model, noise, domain, states, epsilon, duration,
                             config.dt, seed, level, batch_size)
        n_batches = -(-budget // batch_size)
        parts = _map_batches(job, n_batches, workers)
        surv_states = np.vstack([p[0] for p in parts]) if parts else np.empty((0, d))
        steps += sum(p[1] for p in parts)
        clamps += sum(p[2] for p in parts)
        n_surv = surv_states.shape[0]
        factors.append(n_surv / budget)
        if n_surv == 0:
            est = TailEstimate(
                p_hat=0.0, stderr=0.0, n_paths=budget * len(times),
                n_survived=0, method="splitting", path_steps=steps,
                extinct_level=level, n_clamped=clamps)
            est.zero_upper_bound = 1.0 - 0.05 ** (1.0 / budget)
            return est
        if level < len(times):
            surv_y = model.push_batch(surv_states)
            rgen = np.random.Generator(np.random.Philox(
                key=np.array([np.uint64((seed ^ _RESAMPLE_SALT) & 0xFFFFFFFFFFFFFFFF),
                              np.uint64(level)], dtype=np.uint64)))
            idx = rgen.integers(0, n_surv, size=budget)
            states = model.pull_batch(surv_y[idx])
        prev_t = t_level
    p_hat = float(np.prod(factors))
    rel_var = sum((1.0 - f) / (f * budget) for f in factors)
    est = TailEstimate(
        p_hat=p_hat, stderr=p_hat * math.sqrt(rel_var),
        n_paths=budget * len(times), n_survived=n_surv, method="splitting",
        path_steps=steps, n_clamped=clamps)
    if n_surv < 30:
        est.wilson_interval = _wilson(n_surv, budget)
    return est


# ---------------------------------------------------------------------------
# travel-time adjusted estimate through an enclosing domain


@dataclass
class AdjustedTailResult:
    """Adjusted estimate plus the raw enclosing-domain estimate."""

    adjusted: TailEstimate
    enclosing: TailEstimate


class _AdjustedJob:
    """Full exits from the box, deterministic travel times, continuation."""

    def __init__(self, model, noise, box, big_domain, x0, epsilon, t_cap,
                 threshold, dt, seed, n_paths, batch_size):
        self.model = model
        self.noise = noise
        self.box = box
        self.big_domain = big_domain
        self.x0 = np.asarray(x0, dtype=float)
        self.epsilon = epsilon
        self.t_cap = t_cap
        self.threshold = threshold
        self.dt = dt
        self.seed = seed
        self.n_paths = n_paths
        self.batch_size = batch_size

    def run_batch(self, b: int):
        start, stop = _batch_bounds(self.n_paths, self.batch_size, b)
        gens = [make_generator(self.seed, pid) for pid in range(start, stop)]
        X0 = np.broadcast_to(self.x0, (stop - start, self.x0.size))
        res1 = simulate_batch(self.model, self.noise, self.box, X0,
                              self.epsilon, self.t_cap, self.dt, gens)
        steps = int(res1["steps_used"].sum())
        clamps = int(res1["clamped"].sum())
        capped = int((~res1["exited"]).sum())
        ex = np.flatnonzero(res1["exited"])
        n_adj = n_big = capped  # capped paths certainly outlast the threshold
        if ex.size:
            states = res1["exit_state"][ex]
            tau1 = res1["tau"][ex]
            travel = flow_exit_times_batch(self.model, self.big_domain,
                                           states, dt=self.dt)
            if np.any(np.isnan(travel)):
                raise NoExit("a box exit state failed to leave the enclosing domain")
            res2 = simulate_batch(self.model, self.noise, self.big_domain,
                                  states, self.epsilon, self.t_cap, self.dt,
                                  [gens[i] for i in ex])
            steps += int(res2["steps_used"].sum())
            clamps += int(res2["clamped"].sum())
            capped2 = ~res2["exited"]
            capped += int(capped2.sum())
            tau_big = tau1 + res2["tau"]
            # capped continuations certainly outlast the threshold as well
            n_adj += int(np.sum(capped2 | (tau_big - travel > self.threshold)))
            n_big += int(np.sum(capped2 | (tau_big > self.threshold)))
        return n_adj, n_big, steps, clamps, capped


def adjusted_tail_estimate(model: ConjugateFieldModel, noise: NoiseModel,
                           box: BoxDomain, big_domain, x, epsilon: float,
                           threshold_spec: ThresholdSpec, n_paths: int,
                           config: PathConfig, seed: int, workers: int = 1,
                           batch_size: int = DEFAULT_BATCH_SIZE
                           ) -> AdjustedTailResult:
    """Estimate box survival from exits observed through an enclosing domain.

    Each path runs to its box exit, the deterministic travel time from the
    exit state to the enclosing boundary is computed by flow integration, the
    same path (same stream) then continues to its enclosing-domain exit, and
    survival is judged on tau_enclosing - travel > threshold.  The raw
    enclosing-domain survival count is reported alongside for bracket checks.
    Paths that outlast the cap are flagged and counted as survivors (the cap
    is forced to be at least the threshold).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t0 = threshold_spec.time(epsilon)
    t_cap = config.t_cap if config.t_cap > 0.0 else default_full_exit_cap(
        model, epsilon, config.dt)
    t_cap = max(t_cap, 1.5 * t0)
    job = _AdjustedJob(model, noise, box, big_domain, epsilon * x, epsilon,
                       t_cap, t0, config.dt, seed, n_paths, batch_size)
    n_batches = -(-n_paths // batch_size)
    parts = _map_batches(job, n_batches, workers)
    n_adj = sum(p[0] for p in parts)
    n_big = sum(p[1] for p in parts)
    steps = sum(p[2] for p in parts)
    clamps = sum(p[3] for p in parts)
    capped = sum(p[4] for p in parts)
    adjusted = _binomial_estimate(n_adj, n_paths, "adjusted")
    adjusted.path_steps = steps
    adjusted.n_clamped = clamps
    adjusted.n_capped = capped
    enclosing = _binomial_estimate(n_big, n_paths, "enclosing")
    enclosing.path_steps = steps
    enclosing.n_clamped = clamps
    enclosing.n_capped = capped
    return AdjustedTailResult(adjusted=adjusted, enclosing=enclosing)


# ---------------------------------------------------------------------------
# rescaling and regression


def rescaled_prefactor(estimate: TailEstimate, epsilon: float,
                       beta: float) -> tuple[float, float]:
    """(p_hat, stderr) scaled by eps ** -beta; compares against the prefactor."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    scale = epsilon ** (-beta)
    return estimate.p_hat * scale, estimate.stderr * scale


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares line through (log eps, log p_hat)."""

    slope: float
    intercept: float
    slope_stderr: float
    points: tuple[tuple[float, float], ...]
    residuals: tuple[float, ...]


def slope_regression(points) -> SlopeFit:
    """OLS slope of log p_hat against log eps.

    Each point is (epsilon, TailEstimate) or (epsilon, probability).
    Non-positive estimates are dropped; fewer than 3 usable points, or a
    degenerate eps range, raises DegenerateFit.  An exact power law gives
    zero residuals and zero slope error up to rounding.
    """
    pairs = [(float(e), float(getattr(p, "p_hat", p))) for e, p in points]
    usable = [(e, p) for e, p in pairs if 0.0 < e < 1.0 and p > 0.0]
    if len(usable) < 3:
        raise DegenerateFit(f"need >= 3 positive estimates, have {len(usable)}")
    lx = np.array([math.log(e) for e, _ in usable])
    ly = np.array([math.log(p) for _, p in usable])
    xbar = lx.mean()
    sxx = float(np.sum((lx - xbar) ** 2))
    if sxx <= 0.0:
        raise DegenerateFit("epsilon values are all equal")
    slope = float(np.sum((lx - xbar) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * xbar)
    resid = ly - (intercept + slope * lx)
    n = len(usable)
    if n > 2:
        s2 = float(np.sum(resid**2)) / (n - 2)
        slope_stderr = math.sqrt(s2 / sxx)
    else:
        slope_stderr = math.inf
    return SlopeFit(slope=slope, intercept=intercept, slope_stderr=slope_stderr,
                    points=tuple(zip(lx.tolist(), ly.tolist())),
                    residuals=tuple(resid.tolist()))


# ---------------------------------------------------------------------------
# density diagnostics


@dataclass
class DensityDiagnostic:
    """Histogram-vs-reference comparison on a fixed grid."""

    grid: object
    empirical: np.ndarray
    reference: np.ndarray
    sup_diff: float
    l1_diff: float
    mass: float


def _normal_pdf(z: np.ndarray, var: float) -> np.ndarray:
    return np.exp(-0.5 * z * z / var) / math.sqrt(2.0 * math.pi * var)


def density_diagnostic(samples: np.ndarray, C_ref: np.ndarray,
                       grid_points: int = 161,
                       halfwidth_sigmas: float = 6.0) -> DensityDiagnostic:
    """Compare a sample cloud against a centered Gaussian reference.

    d = 1 and d = 2 compare joint histograms on a grid spanning
    halfwidth_sigmas marginal standard deviations; higher dimensions compare
    the coordinate marginals and report the worst coordinate.  sup_diff and
    l1_diff are the sup and integrated absolute differences; mass records the
    sample fraction landing on the grid (should be 1 up to tail spill).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.ndim != 2 or samples.shape[0] < 10_000:
        raise ValueError("samples must be (n, d) with n >= 10000")
    n, d = samples.shape
    C_ref = np.atleast_2d(np.asarray(C_ref, dtype=float))
    if C_ref.shape != (d, d):
        raise ValueError("reference covariance does not match sample dimension")
    if grid_points < 8:
        raise ValueError("grid_points must be >= 8")
    sd = np.sqrt(np.diag(C_ref))
    if d == 1:
        r = halfwidth_sigmas * sd[0]
        edges = np.linspace(-r, r, grid_points + 1)
        emp, _ = np.histogram(samples[:, 0], bins=edges, density=False)
        dx = edges[1] - edges[0]
        mass = float(emp.sum()) / n
        emp = emp / (n * dx)
        centers = 0.5 * (edges[:-1] + edges[1:])
        ref = _normal_pdf(centers, float(C_ref[0, 0]))
        diff = np.abs(emp - ref)
        return DensityDiagnostic(grid=centers, empirical=emp, reference=ref,
                                 sup_diff=float(diff.max()),
                                 l1_diff=float(np.sum(diff) * dx), mass=mass)
    if d == 2:
        rx = halfwidth_sigmas * sd[0]
        ry = halfwidth_sigmas * sd[1]
        ex = np.linspace(-rx, rx, grid_points + 1)
        ey = np.linspace(-ry, ry, grid_points + 1)
        emp, _, _ = np.histogram2d(samples[:, 0], samples[:, 1], bins=(ex, ey))
        area = (ex[1] - ex[0]) * (ey[1] - ey[0])
        mass = float(emp.sum()) / n
        emp = emp / (n * area)
        cx = 0.5 * (ex[:-1] + ex[1:])
        cy = 0.5 * (ey[:-1] + ey[1:])
        P = np.linalg.inv(C_ref)
        det = float(np.linalg.det(C_ref))
        gx, gy = np.meshgrid(cx, cy, indexing="ij")
        quad = (P[0, 0] * gx * gx + 2.0 * P[0, 1] * gx * gy + P[1, 1] * gy * gy)
        ref = np.exp(-0.5 * quad) / (2.0 * math.pi * math.sqrt(det))
        diff = np.abs(emp - ref)
        return DensityDiagnostic(grid=(cx, cy), empirical=emp, reference=ref,
                                 sup_diff=float(diff.max()),
                                 l1_diff=float(np.sum(diff) * area), mass=mass)
    # d >= 3: marginals, worst coordinate governs
    sup = l1 = 0.0
    mass = 1.0
    grids = []
    emps = []
    refs = []
    for j in range(d):
        r = halfwidth_sigmas * sd[j]
        edges = np.linspace(-r, r, grid_points + 1)
        emp, _ = np.histogram(samples[:, j], bins=edges, density=False)
        dx = edges[1] - edges[0]
        mass = min(mass, float(emp.sum()) / n)
        emp = emp / (n * dx)
        centers = 0.5 * (edges[:-1] + edges[1:])
        ref = _normal_pdf(centers, float(C_ref[j, j]))
        diff = np.abs(emp - ref)
        sup = max(sup, float(diff.max()))
        l1 = max(l1, float(np.sum(diff) * dx))
        grids.append(centers)
        emps.append(emp)
        refs.append(ref)
    return DensityDiagnostic(grid=grids, empirical=np.array(emps),
                             reference=np.array(refs), sup_diff=sup,
                             l1_diff=l1, mass=mass)
