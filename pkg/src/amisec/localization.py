"""RSS localization of a meter from neighbours at known positions.

Received power follows the log-distance model

    psi_l = c - 10 * gamma * log10(d_l) + w_l,   w_l ~ N(0, sigma_l^2)

and the position (x, y) together with the unknown reference power c (called
z in the estimate) is the minimizer of the Gaussian negative log-likelihood,
found with a global-best particle swarm.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .core import RngStream, Stream

D_MIN = 0.1
DEFAULT_BOUNDS = ((-50.0, 150.0), (-50.0, 150.0), (-60.0, 60.0))


class GeometryError(ValueError):
    pass


class UnderdeterminedError(ValueError):
    pass


@dataclass(frozen=True)
class RssConfig:
    gamma: float = 2.93
    sigma: float = 12.0
    c_true: float = -10.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class Anchor:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class RssMeasurement:
    anchor: int
    psi: float


@dataclass(frozen=True)
class ThetaEstimate:
    x: float
    y: float
    z: float
    value: float = math.nan
    iterations: int = 0

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 40
    max_iters: int = 300
    inertia: float = 0.72
    c1: float = 1.49
    c2: float = 1.49
    bounds: tuple[tuple[float, float], ...] = field(default=DEFAULT_BOUNDS)
    tolerance: float = 1e-12
    patience: int = 60
    vmax_fraction: float = 0.2

    def __post_init__(self):
        if self.swarm_size < 5:
            raise ValueError("swarm_size must be >= 5")
        if not 0 < self.inertia < 1:
            raise ValueError("inertia must lie in (0, 1)")
        for lo, hi in self.bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"bad bounds ({lo}, {hi})")


def path_loss(d, cfg: RssConfig, c: float | None = None):
    c = cfg.c_true if c is None else c
    return c - 10.0 * cfg.gamma * np.log10(d)


def simulate_rss(true_pos: Sequence[float], cfg: RssConfig, anchors: Sequence[Anchor],
                 rng: RngStream | np.random.Generator, samples: int = 1) -> list[RssMeasurement]:
    """Draw one received-power reading per anchor.

    With ``samples > 1`` each reading is the mean of that many independent
    draws (one per received block of a transmission).
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    ax = np.array([a.x for a in anchors], dtype=float)
    ay = np.array([a.y for a in anchors], dtype=float)
    d = np.hypot(true_pos[0] - ax, true_pos[1] - ay)
    if np.any(d <= D_MIN):
        bad = [a.id for a, dd in zip(anchors, d) if dd <= D_MIN]
        raise GeometryError(f"emitter within {D_MIN} m of anchors {bad}")
    noise = gen.normal(0.0, 1.0, size=(samples, len(anchors))).mean(axis=0) * cfg.sigma
    psi = path_loss(d, cfg) + noise
    return [RssMeasurement(a.id, float(p)) for a, p in zip(anchors, psi)]


def _problem_arrays(meas, anchors, cfg: RssConfig, sigmas=None):
    by_id = {a.id: a for a in anchors}
    try:
        used = [by_id[m.anchor] for m in meas]
    except KeyError as exc:
        raise ValueError(f"measurement from unknown anchor {exc.args[0]}") from None
    ax = np.array([a.x for a in used], dtype=float)
    ay = np.array([a.y for a in used], dtype=float)
    psi = np.array([m.psi for m in meas], dtype=float)
    if sigmas is None:
        sig = np.full(len(meas), cfg.sigma, dtype=float)
    else:
        sig = np.asarray(sigmas, dtype=float)
    # zero noise: fall back to unit weights, the minimizer is unchanged
    sig = np.where(sig > 0, sig, 1.0)
    return ax, ay, psi, 1.0 / (2.0 * sig * sig)


def neg_log_likelihood(theta, meas: Sequence[RssMeasurement], anchors: Sequence[Anchor],
                       cfg: RssConfig, sigmas=None) -> float:
    """sum_l (psi_l - z + 10 gamma log10 d_l)^2 / (2 sigma_l^2), d_l clamped at D_MIN."""
    if isinstance(theta, ThetaEstimate):
        theta = (theta.x, theta.y, theta.z)
    ax, ay, psi, wts = _problem_arrays(meas, anchors, cfg, sigmas)
    P = np.asarray(theta, dtype=float).reshape(1, 3)
    return float(kernels.nll_batch(P, ax, ay, psi, cfg.gamma, wts, D_MIN)[0])


def _swarm_start(gen: np.random.Generator, lo, hi, cfg: PsoConfig):
    m, d = cfg.swarm_size, lo.size
    vmax = cfg.vmax_fraction * (hi - lo)
    x = gen.uniform(lo, hi, size=(m, d))
    v = gen.uniform(-vmax, vmax, size=(m, d))
    r1 = gen.random((cfg.max_iters, m, d))
    r2 = gen.random((cfg.max_iters, m, d))
    return x, v, r1, r2, vmax


def pso_minimize(objective: Callable, bounds, cfg: PsoConfig,
                 rng: RngStream | np.random.Generator, batch: bool = False):
    """Minimize ``objective`` over the box ``bounds`` with global-best PSO.

    ``objective`` takes one point, or a (swarm, dim) array when ``batch`` is
    true. Returns ``(best_point, best_value)``.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
        raise ValueError("bounds must be finite with lo < hi")
    if batch:
        f = objective
    else:
        def f(X):
            return np.array([objective(row) for row in X], dtype=float)
    x, v, r1, r2, vmax = _swarm_start(gen, lo, hi, cfg)
    best, val, _ = kernels.pso_run_numpy(f, x, v, r1, r2, lo, hi, vmax, cfg.inertia,
                                         cfg.c1, cfg.c2, cfg.tolerance, cfg.patience)
    return best, float(val)


def _check_geometry(anchors: Sequence[Anchor]) -> None:
    if len(anchors) < 3:
        raise UnderdeterminedError(f"need >= 3 anchors, got {len(anchors)}")
    pts = np.array([(a.x, a.y) for a in anchors], dtype=float)
    pts -= pts.mean(axis=0)
    if np.linalg.matrix_rank(pts, tol=1e-9 * max(1.0, np.abs(pts).max())) < 2:
        raise UnderdeterminedError("anchors are collinear")


def aoi_bounds(anchors: Sequence[Anchor], outer=DEFAULT_BOUNDS, margin: float = 0.0):
    """Bounding box of the anchors (plus ``margin``), clipped to ``outer``; z from ``outer``."""
    xs = [a.x for a in anchors]
    ys = [a.y for a in anchors]
    bx = (max(outer[0][0], min(xs) - margin), min(outer[0][1], max(xs) + margin))
    by = (max(outer[1][0], min(ys) - margin), min(outer[1][1], max(ys) + margin))
    if not (bx[0] < bx[1] and by[0] < by[1]):
        raise UnderdeterminedError("anchor area does not intersect the search box")
    return (bx, by, tuple(outer[2]))


def localize(meas: Sequence[RssMeasurement], anchors: Sequence[Anchor], cfg: RssConfig,
             pso: PsoConfig | None = None, rng: RngStream | np.random.Generator | None = None,
             sigmas=None, bounds=None) -> ThetaEstimate:
    """Maximum-likelihood (x, y, z) via PSO on the negative log-likelihood.

    Without explicit ``bounds`` the (x, y) search covers the anchors' bounding
    box: outside the anchor hull the likelihood flattens into a plateau that
    would otherwise capture the swarm.
    """
    pso = pso or PsoConfig()
    used = [a for a in anchors if a.id in {m.anchor for m in meas}]
    _check_geometry(used)
    if rng is None:
        raise ValueError("localize needs an rng")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    ax, ay, psi, wts = _problem_arrays(meas, anchors, cfg, sigmas)
    if bounds is None:
        bounds = aoi_bounds(used, pso.bounds)
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    x, v, r1, r2, vmax = _swarm_start(gen, lo, hi, pso)
    best, val, it = kernels.pso_nll(x, v, r1, r2, lo, hi, vmax, pso.inertia, pso.c1, pso.c2,
                                    pso.tolerance, pso.patience, ax, ay, psi, cfg.gamma,
                                    wts, D_MIN)
    return ThetaEstimate(float(best[0]), float(best[1]), float(best[2]), float(val), int(it))


def grid_search(meas: Sequence[RssMeasurement], anchors: Sequence[Anchor], cfg: RssConfig,
                bounds=DEFAULT_BOUNDS, step: float = 1.0, sigmas=None) -> ThetaEstimate:
    """Exhaustive (x, y) grid with the optimal z solved in closed form per cell."""
    ax, ay, psi, wts = _problem_arrays(meas, anchors, cfg, sigmas)
    xs = np.arange(bounds[0][0], bounds[0][1] + step / 2, step)
    ys = np.arange(bounds[1][0], bounds[1][1] + step / 2, step)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    gx, gy = gx.ravel(), gy.ravel()
    d = np.maximum(np.hypot(gx[:, None] - ax, gy[:, None] - ay), D_MIN)
    t = psi + 10.0 * cfg.gamma * np.log10(d)
    z = np.clip((t * wts).sum(axis=1) / wts.sum(), bounds[2][0], bounds[2][1])
    vals = (wts * (t - z[:, None]) ** 2).sum(axis=1)
    k = int(np.argmin(vals))
    return ThetaEstimate(float(gx[k]), float(gy[k]), float(z[k]), float(vals[k]))


def manhattan_anchors(n: int, block: float = 30.0, center=(50.0, 50.0),
                      first_id: int = 100) -> list[Anchor]:
    """The ``n`` street intersections nearest the centre of a city block.

    Within each ring of equidistant intersections the next anchor is the one
    farthest from those already chosen, so partial rings stay spread out.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cx, cy = center
    k = int(math.ceil(math.sqrt(n))) + 1
    offs = [(i + 0.5) * block for i in range(-k, k)]
    pts = [(cx + ox, cy + oy) for ox in offs for oy in offs]
    pts.sort(key=lambda p: (round(math.hypot(p[0] - cx, p[1] - cy), 9),
                            math.atan2(p[1] - cy, p[0] - cx)))
    chosen: list[tuple[float, float]] = []
    while len(chosen) < n:
        ring_r = round(math.hypot(pts[0][0] - cx, pts[0][1] - cy), 9)
        ring = [p for p in pts if round(math.hypot(p[0] - cx, p[1] - cy), 9) == ring_r]
        pts = [p for p in pts if p not in ring]
        while ring and len(chosen) < n:
            if chosen:
                nxt = max(ring, key=lambda p: min(math.hypot(p[0] - q[0], p[1] - q[1])
                                                  for q in chosen))
            else:
                nxt = ring[0]
            ring.remove(nxt)
            chosen.append(nxt)
    return [Anchor(first_id + i, x, y) for i, (x, y) in enumerate(chosen)]


def polygon_anchors(n: int, radius: float = 15.0 * math.sqrt(2.0), center=(50.0, 50.0),
                    phase: float = math.pi / 4, first_id: int = 100) -> list[Anchor]:
    """Anchors on the vertices of a regular n-gon around the area of interest.

    The default radius and phase put n = 4 on the corners of a 30 m city block.
    """
    cx, cy = center
    return [Anchor(first_id + i, cx + radius * math.cos(phase + 2 * math.pi * i / n),
                   cy + radius * math.sin(phase + 2 * math.pi * i / n)) for i in range(n)]


def hexagon_anchors(center=(50.0, 50.0), radius: float = 20.0, first_id: int = 100) -> list[Anchor]:
    return polygon_anchors(6, radius, center, 0.0, first_id)


MSE_COLUMNS = ("n_anchors", "sigma2_db", "trials", "mean_mse_m2", "stderr")


def mse_curve(n_list: Sequence[int], sigma2_list: Sequence[float], trials: int, seed: int,
              cfg: RssConfig | None = None, pso: PsoConfig | None = None,
              block: float = 30.0, layout: str = "polygon") -> list[tuple[int, float, int, float, float]]:
    """Monte-Carlo mean squared position error of the ML estimate.

    ``layout="polygon"`` rings the area of interest with n equidistant anchors
    (the block corners for n = 4, a hexagon for n = 6); ``"manhattan"`` takes
    the n street intersections nearest the emitter's block instead. The emitter
    sits near the centre of the area with a uniform offset of up to a quarter
    radius, and the (x, y) search is limited to the area's bounding square.

    Trial ``t`` reuses the same emitter offset, noise draws and swarm seed at
    every (n, sigma^2) point, so neighbouring points differ by the geometry
    and noise level rather than by sampling luck.
    """
    if trials < 2:
        raise ValueError("need at least 2 trials")
    if trials < 50:
        warnings.warn(f"mse_curve with only {trials} trials", RuntimeWarning, stacklevel=2)
    cfg = cfg or RssConfig()
    pso = pso or PsoConfig()
    center = (50.0, 50.0)
    radius = block / math.sqrt(2.0)
    if layout == "polygon":
        layouts = {n: polygon_anchors(n, radius, center) for n in n_list}
    elif layout == "manhattan":
        layouts = {n: manhattan_anchors(n, block, center) for n in n_list}
    else:
        raise ValueError(f"unknown layout {layout!r}")
    aoi = ((center[0] - radius, center[0] + radius),
           (center[1] - radius, center[1] + radius), pso.bounds[2])
    max_n = max(n_list)
    emit, noise_s, pso_s = (RngStream(seed, s) for s in (Stream.DATA, Stream.NOISE, Stream.PSO))
    jitter = radius / 4
    emitters, noises = [], []
    for t in range(trials):
        emitters.append(emit.child(t).generator().uniform(-jitter, jitter, size=2) + center)
        noises.append(noise_s.child(t).generator().standard_normal(max_n))
    rows = []
    for n in n_list:
        anchors = layouts[n]
        ax = np.array([a.x for a in anchors])
        ay = np.array([a.y for a in anchors])
        for s2 in sigma2_list:
            sigma = math.sqrt(s2)
            rss = RssConfig(cfg.gamma, sigma, cfg.c_true)
            errs = np.empty(trials)
            for t in range(trials):
                ex, ey = emitters[t]
                psi = path_loss(np.hypot(ex - ax, ey - ay), cfg) + sigma * noises[t][:n]
                meas = [RssMeasurement(a.id, float(p)) for a, p in zip(anchors, psi)]
                est = localize(meas, anchors, rss, pso, pso_s.child(t), bounds=aoi)
                errs[t] = (est.x - ex) ** 2 + (est.y - ey) ** 2
            rows.append((n, float(s2), trials, float(errs.mean()),
                         float(errs.std(ddof=1) / math.sqrt(trials))))
    return rows


def mse_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MSE_COLUMNS)
    for n, s2, trials, mse, se in rows:
        w.writerow([n, format(s2, ".17g"), trials, format(mse, ".17g"), format(se, ".17g")])
    return buf.getvalue()
