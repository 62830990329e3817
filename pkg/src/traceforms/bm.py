"""Walk-on-spheres Monte Carlo for Brownian motion relative to a sphere.

Interior hitting positions are drawn exactly (closed-form polar inverse CDF
in dimension three); exterior walks run in the annulus between the sphere
and a far absorbing shell, with the classical annulus formulas providing
exact references and the finite-shell correction recovering the infinite
domain.  Launching from both sides of an eps-offset shell and counting
return points estimates the boundary excursion kernel; the escape fraction
of the outward launches estimates its killing density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain_mc import EstimatorReport
from .errors import InsufficientEvents, MaxStepsExceeded
from .rng import RngStream, as_streams
from .sphere import SphereSpec, unit_sphere_area

_TOL = 1e-8


@dataclass(frozen=True)
class HitSample:
    """A sampled hitting position on the sphere (or an escape)."""

    point: np.ndarray
    escaped: bool
    steps: int


@dataclass(frozen=True)
class ShellConfig:
    """Geometry of the exterior walk and the eps-shell launches.

    ``eps`` offsets launch points to radius r +- eps; ``kill_radius`` is the
    far absorbing shell; walks stop within ``tol * r`` of a boundary.
    """

    eps: float = 0.05
    kill_radius: float = 100.0
    max_steps: int = 20_000
    tol: float = _TOL

    def validate(self, sphere: SphereSpec):
        if not (0.0 < self.eps < sphere.r):
            raise ValueError("need 0 < eps < r")
        if self.kill_radius <= 2.0 * sphere.r:
            raise ValueError("kill radius must exceed 2r")


def _uniform_directions(k: int, n: int, g: np.random.Generator) -> np.ndarray:
    v = g.standard_normal((k, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _rotate_from_pole(dirs: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Map unit vectors given relative to e3 so that e3 lands on ``axis``."""
    axis = axis / np.linalg.norm(axis)
    e3 = np.array([0.0, 0.0, 1.0])
    v = np.cross(e3, axis)
    s = np.linalg.norm(v)
    c = float(e3 @ axis)
    if s < 1e-14:
        return dirs if c > 0 else -dirs
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    R = np.eye(3) + vx + vx @ vx * ((1 - c) / s**2)
    return dirs @ R.T


def sample_hits_inside(sphere: SphereSpec, x, n_samples: int,
                       rng: RngStream | np.random.Generator) -> np.ndarray:
    """Exact draws from the interior hitting distribution, vectorized.

    Dimension three only: the polar angle around the x-axis has an explicit
    inverse CDF, the azimuth is uniform.
    """
    if sphere.n != 3:
        raise ValueError("exact interior sampling is implemented for n = 3")
    g = rng.generator() if isinstance(rng, RngStream) else rng
    x = np.asarray(x, dtype=float)
    rel = x - sphere.center
    d = float(np.linalg.norm(rel))
    r = sphere.r
    if d >= r * (1.0 - _TOL):
        raise ValueError("x must lie strictly inside the sphere")
    if d < 1e-14 * r:
        dirs = _uniform_directions(n_samples, 3, g)
        return sphere.center[None, :] + r * dirs
    u = g.random(n_samples)
    s = u * (2.0 * d / (r * r - d * d)) + 1.0 / (d + r)
    t = np.clip((d * d + r * r - s**-2) / (2.0 * d * r), -1.0, 1.0)
    phi = 2.0 * np.pi * g.random(n_samples)
    st = np.sqrt(1.0 - t * t)
    local = np.stack([st * np.cos(phi), st * np.sin(phi), t], axis=1)
    dirs = _rotate_from_pole(local, rel)
    return sphere.center[None, :] + r * dirs


def sample_hit_from_inside(sphere: SphereSpec, x, rng) -> HitSample:
    """One exact draw from the interior Poisson kernel at x."""
    pt = sample_hits_inside(sphere, x, 1, rng)[0]
    return HitSample(point=pt, escaped=False, steps=0)


def walk_annulus(sphere: SphereSpec, start: np.ndarray, cfg: ShellConfig,
                 rng: RngStream | np.random.Generator):
    """Walk-on-spheres in {r < |y| < R} until a boundary is reached.

    Each step jumps uniformly onto the largest sphere around the current
    point that stays inside the annulus.  Returns (points, escaped, steps,
    n_stuck); stuck walks (exceeding max_steps) are flagged escaped=False
    with their last position projected to the inner sphere.
    """
    cfg.validate(sphere)
    g = rng.generator() if isinstance(rng, RngStream) else rng
    pts = np.atleast_2d(np.asarray(start, dtype=float)) - sphere.center[None, :]
    k = len(pts)
    r, R = sphere.r, cfg.kill_radius
    tol = cfg.tol * r
    escaped = np.zeros(k, dtype=bool)
    steps = np.zeros(k, dtype=int)
    active = np.arange(k)
    n_steps = 0
    while len(active) and n_steps < cfg.max_steps:
        rho = np.linalg.norm(pts[active], axis=1)
        inner_gap = rho - r
        outer_gap = R - rho
        done_in = inner_gap <= tol
        done_out = outer_gap <= tol
        done = done_in | done_out
        escaped[active[done_out]] = True
        still = ~done
        idx = active[still]
        if len(idx):
            rad = np.minimum(inner_gap[still], outer_gap[still])
            pts[idx] += rad[:, None] * _uniform_directions(len(idx), sphere.n, g)
            steps[idx] += 1
        active = idx
        n_steps += 1
    n_stuck = len(active)
    # project all inner hits (and stuck walks) onto the sphere exactly
    inner = ~escaped
    norms = np.linalg.norm(pts[inner], axis=1, keepdims=True)
    pts[inner] = pts[inner] / norms * r
    return pts + sphere.center[None, :], escaped, steps, n_stuck


def sample_hit_from_outside(sphere: SphereSpec, x, cfg: ShellConfig, rng) -> HitSample:
    """One annulus walk from exterior x; escaped means the far shell won."""
    pts, escaped, steps, n_stuck = walk_annulus(sphere, np.asarray(x, dtype=float)[None, :],
                                                cfg, rng)
    if n_stuck:
        raise MaxStepsExceeded(f"walk did not terminate in {cfg.max_steps} steps")
    return HitSample(point=pts[0], escaped=bool(escaped[0]), steps=int(steps[0]))


def annulus_inner_hit_probability(sphere: SphereSpec, x, kill_radius: float) -> float:
    """Probability the annulus walk from x meets the sphere before the shell."""
    n = sphere.n
    rho = sphere.radius_of(x)
    a = rho ** (2 - n) - kill_radius ** (2 - n)
    b = sphere.r ** (2 - n) - kill_radius ** (2 - n)
    return a / b


@dataclass(frozen=True)
class EscapeEstimate:
    """Escape-probability estimate in the annulus and its limit correction.

    ``escaped`` compares the raw escape fraction with the finite-shell
    formula; ``corrected`` multiplies by 1 - (r/R)^(n-2), removing the
    finite shell and targeting the true escape probability.
    """

    escaped: EstimatorReport
    corrected: EstimatorReport
    n_stuck: int

    @property
    def stuck_fraction(self) -> float:
        total = self.escaped.n_events
        return self.n_stuck / total if total else 0.0


def escape_probability_mc(sphere: SphereSpec, x, cfg: ShellConfig, n_walks: int,
                          rng) -> EscapeEstimate:
    """Monte Carlo escape probability from exterior x with exact references."""
    cfg.validate(sphere)
    streams = as_streams(rng)
    x = np.asarray(x, dtype=float)
    esc_count = 0
    stuck = 0
    counts = _split(n_walks, len(streams))
    for stream, k in zip(streams, counts):
        if k == 0:
            continue
        starts = np.repeat(x[None, :], k, axis=0)
        _, escaped, _, n_stuck = walk_annulus(sphere, starts, cfg, stream)
        esc_count += int(escaped.sum())
        stuck += n_stuck
    p_hat = esc_count / n_walks
    se = np.sqrt(max(p_hat * (1 - p_hat), 1e-12) / n_walks)
    exact_r = 1.0 - annulus_inner_hit_probability(sphere, x, cfg.kill_radius)
    shell_factor = 1.0 - (sphere.r / cfg.kill_radius) ** (sphere.n - 2)
    from .sphere import escape_probability as q_limit
    return EscapeEstimate(
        escaped=EstimatorReport.against(p_hat, se, n_walks, exact=exact_r),
        corrected=EstimatorReport.against(p_hat * shell_factor, se * shell_factor,
                                          n_walks, exact=q_limit(sphere, x)),
        n_stuck=stuck,
    )


def _split(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


@dataclass(frozen=True)
class PairSample:
    """Excursion endpoint draw from an eps-shell launch at a surface point."""

    side: str
    point: np.ndarray | None
    steps: int

    @property
    def escaped(self) -> bool:
        return self.point is None


def excursion_pair_sampler(sphere: SphereSpec, xi, cfg: ShellConfig, rng) -> PairSample:
    """Launch from xi offset by eps along a random side's normal and return
    the re-hit point, or the escape marker for outward walks that reach the
    far shell."""
    cfg.validate(sphere)
    g = rng.generator() if isinstance(rng, RngStream) else rng
    xi = np.asarray(xi, dtype=float)
    normal = (xi - sphere.center) / sphere.radius_of(xi)
    if g.random() < 0.5:
        start = sphere.center + (sphere.r - cfg.eps) * normal
        pt = sample_hits_inside(sphere, start, 1, g)[0]
        return PairSample(side="inward", point=pt, steps=0)
    start = sphere.center + (sphere.r + cfg.eps) * normal
    hit = sample_hit_from_outside(sphere, start, cfg, g)
    return PairSample(side="outward", point=None if hit.escaped else hit.point,
                      steps=hit.steps)


def kernel_bin_average(sphere: SphereSpec, lo_deg: float, hi_deg: float) -> float:
    """Average of the excursion kernel over a polar-angle bin seen from a
    fixed surface point (closed form; chord |xi-eta|^2 = 2 r^2 (1-cos a))."""
    r = sphere.r
    t_hi = np.cos(np.radians(lo_deg))
    t_lo = np.cos(np.radians(hi_deg))
    const = 2.0 / unit_sphere_area(sphere.n)
    # integral over the bin of (2 r^2 (1-t))^{-3/2} * 2 pi r^2 dt
    antider = lambda t: 2.0 * (1.0 - t) ** (-0.5)
    integral = (2.0 * r * r) ** (-1.5) * (antider(t_hi) - antider(t_lo)) * 2.0 * np.pi * r * r
    area = 2.0 * np.pi * r * r * (t_hi - t_lo)
    return const * integral / area


@dataclass(frozen=True)
class BinEstimate:
    """Extrapolated kernel density over one polar bin."""

    lo_deg: float
    hi_deg: float
    density: float
    std_error: float
    reference: float
    n_events: int
    estimated: bool

    def rows(self, eps_schedule, per_eps):
        out = []
        for eps, (count, dens) in zip(eps_schedule, per_eps):
            out.append((self.lo_deg, self.hi_deg, eps, count, dens, self.reference))
        return out


@dataclass(frozen=True)
class ShellKernelReport:
    """Binned eps-shell estimates of the excursion kernel and its killing
    density, with the exact sphere values as references."""

    bins: tuple
    eps_schedule: tuple
    per_eps_counts: dict
    v_hat: EstimatorReport
    n_launches: int
    n_stuck: int

    def csv_rows(self):
        rows = [("bin_lo_deg", "bin_hi_deg", "eps", "count", "density", "reference")]
        for b in self.bins:
            for eps in self.eps_schedule:
                count, dens = self.per_eps_counts[(b.lo_deg, b.hi_deg, eps)]
                rows.append((b.lo_deg, b.hi_deg, eps, count, dens, b.reference))
        return rows


def _linear_intercept(xs, ys, ses):
    """Weighted least-squares intercept of y = a + b x and its error."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    w = 1.0 / np.maximum(np.asarray(ses, dtype=float), 1e-300) ** 2
    X = np.stack([np.ones_like(xs), xs], axis=1)
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    beta = cov @ (X.T @ (w * ys))
    return float(beta[0]), float(np.sqrt(cov[0, 0]))


def estimate_feller_sphere_mc(sphere: SphereSpec, bins_deg, eps_schedule,
                              n_per_eps: int, rng, cfg: ShellConfig = None,
                              min_bin_deg: float = 10.0,
                              min_events: int = 100) -> ShellKernelReport:
    """Eps-shell estimate of the excursion kernel in polar bins.

    For each eps, n_per_eps trials each launch one walk from just inside and
    one from just outside the north pole of the sphere; return points are
    binned by polar angle and the per-bin density count/(n 2eps area) is
    extrapolated linearly in eps.  Escapes of the outward walks estimate the
    killing density as fraction/(2 eps), corrected for the finite shell.
    Bins below ``min_bin_deg`` are reported unestimated (the kernel pairs
    with functions vanishing on the diagonal, so no reference exists there).
    """
    if sphere.n != 3:
        raise ValueError("the eps-shell estimator is implemented for n = 3")
    if len(eps_schedule) < 3:
        raise ValueError("need at least three decreasing eps values")
    eps_schedule = tuple(sorted((float(e) for e in eps_schedule), reverse=True))
    if cfg is None:
        cfg = ShellConfig(kill_radius=100.0 * sphere.r)
    streams = as_streams(rng)
    pole = sphere.center + np.array([0.0, 0.0, sphere.r])
    normal = np.array([0.0, 0.0, 1.0])
    r = sphere.r
    edges = [(float(lo), float(hi)) for lo, hi in bins_deg]
    areas = {e: 2.0 * np.pi * r * r * (np.cos(np.radians(e[0])) - np.cos(np.radians(e[1])))
             for e in edges}
    shell_factor = 1.0 - (r / cfg.kill_radius) ** (sphere.n - 2)
    uniform_share = {e: areas[e] / sphere.area for e in edges}

    per_eps_counts = {}
    dens = {e: [] for e in edges}
    dens_se = {e: [] for e in edges}
    v_vals, v_ses = [], []
    total_stuck = 0
    n_launches = 0
    for eps in eps_schedule:
        cfg_eps = ShellConfig(eps=eps, kill_radius=cfg.kill_radius,
                              max_steps=cfg.max_steps, tol=cfg.tol)
        cfg_eps.validate(sphere)
        counts = {e: 0 for e in edges}
        escapes = 0
        for stream, k in zip(streams, _split(n_per_eps, len(streams))):
            if k == 0:
                continue
            g = stream.generator()
            inner_pts = sample_hits_inside(sphere, pole - eps * normal, k, g)
            starts = np.repeat((pole + eps * normal)[None, :], k, axis=0)
            outer_pts, escaped, _, n_stuck = walk_annulus(sphere, starts, cfg_eps, g)
            total_stuck += n_stuck
            escapes += int(escaped.sum())
            for pts, mask in ((inner_pts, np.ones(k, dtype=bool)),
                              (outer_pts, ~escaped)):
                sel = pts[mask] - sphere.center
                ct = np.clip(sel[:, 2] / r, -1.0, 1.0)
                ang = np.degrees(np.arccos(ct))
                for e in edges:
                    counts[e] += int(np.count_nonzero((ang >= e[0]) & (ang < e[1])))
        n_launches += 2 * n_per_eps
        n_esc_expected_return = escapes * (r / cfg.kill_radius) ** (sphere.n - 2)
        for e in edges:
            # walks absorbed at the far shell would eventually return nearly
            # uniformly; fold that mass back in before normalizing
            c = counts[e] + n_esc_expected_return * uniform_share[e]
            d = c / (n_per_eps * 2.0 * eps * areas[e])
            se = max(np.sqrt(counts[e]), 1.0) / (n_per_eps * 2.0 * eps * areas[e])
            per_eps_counts[(e[0], e[1], eps)] = (counts[e], d)
            dens[e].append(d)
            dens_se[e].append(se)
        q_hat = (escapes / n_per_eps) * shell_factor
        v_vals.append(q_hat / (2.0 * eps))
        v_ses.append(np.sqrt(max(q_hat * (1 - q_hat), 1e-12) / n_per_eps) / (2.0 * eps))

    bins = []
    for e in edges:
        total_count = sum(per_eps_counts[(e[0], e[1], eps)][0] for eps in eps_schedule)
        if e[0] < min_bin_deg or total_count < min_events:
            # the kernel is not integrable across the diagonal, so bins
            # touching it carry no finite reference and stay unestimated
            ref = kernel_bin_average(sphere, *e) if e[0] >= min_bin_deg else np.nan
            bins.append(BinEstimate(e[0], e[1], np.nan, np.nan, ref,
                                    total_count, estimated=False))
            continue
        val, se = _linear_intercept(eps_schedule, dens[e], dens_se[e])
        bins.append(BinEstimate(e[0], e[1], val, se,
                                kernel_bin_average(sphere, *e), total_count,
                                estimated=True))
    v0, v0_se = _linear_intercept(eps_schedule, v_vals, v_ses)
    v_ref = (sphere.n - 2) / (2.0 * sphere.r)
    v_hat = EstimatorReport.against(v0, v0_se, n_launches // 2, exact=v_ref)
    return ShellKernelReport(bins=tuple(bins), eps_schedule=eps_schedule,
                             per_eps_counts=per_eps_counts, v_hat=v_hat,
                             n_launches=n_launches, n_stuck=total_stuck)
