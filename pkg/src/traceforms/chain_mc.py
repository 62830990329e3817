"""Event-driven simulation of symmetric chains and excursion statistics.

Paths are exact in law: exponential holding at the total exit-plus-kill rate,
then a categorical draw over targets and the cemetery.  Excursions away from
a trace set F are decomposed into (pre-state, post-state) endpoint pairs,
whose long-run rates estimate the Feller matrix; paths that leave F and die
without returning estimate the supplementary vector.  Every estimator is
driven by counter-based random streams and merges across streams in a fixed
order, so reports are byte-identical for a given configuration.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import expm

from .chain import SubsetSpec, SymmetricChain
from .errors import InsufficientEvents
from .rng import RngStream, as_streams

DEATH = -1


@dataclass(frozen=True)
class PathRecord:
    """One sampled trajectory up to min(horizon, lifetime).

    ``states[0]`` is the start; ``jump_times[k]`` is when ``states[k+1]``
    was entered.  ``death_time`` is set when the path was killed before the
    horizon; it is strictly after the last jump.
    """

    start_state: int
    jump_times: np.ndarray
    states: np.ndarray
    death_time: float | None
    horizon: float

    def __post_init__(self):
        if len(self.states) != len(self.jump_times) + 1:
            raise ValueError("need exactly one more state than jump time")
        if len(self.jump_times) and np.any(np.diff(self.jump_times) <= 0):
            raise ValueError("jump times must be strictly increasing")
        if np.any(self.states[1:] == self.states[:-1]):
            raise ValueError("consecutive states must differ")
        if self.death_time is not None and len(self.jump_times):
            if self.death_time <= self.jump_times[-1]:
                raise ValueError("death must come after the last jump")

    def enter_times(self) -> np.ndarray:
        """Entry time of each visited state (the start enters at 0)."""
        return np.concatenate([[0.0], self.jump_times])

    def end_time(self) -> float:
        return self.death_time if self.death_time is not None else self.horizon


@dataclass(frozen=True)
class ExcursionRecord:
    """One maximal interval the path spends off F after first reaching F.

    ``post_state`` is None when the excursion ends in the cemetery, in which
    case ``right`` is infinity (the path never meets F again).
    """

    left: float
    right: float
    pre_state: int
    post_state: int | None

    def __post_init__(self):
        if not self.left < self.right:
            raise ValueError("excursion interval must have positive length")


@dataclass(frozen=True)
class EstimatorReport:
    """Point estimate with its standard error and event count.

    ``z_score`` is (estimate - exact) / std_error when a reference value is
    attached.
    """

    estimate: float
    std_error: float
    n_events: int
    exact: float | None = None
    z_score: float | None = None

    @classmethod
    def against(cls, estimate, std_error, n_events, exact=None):
        z = None
        if exact is not None:
            z = (estimate - exact) / std_error if std_error > 0 else np.inf * np.sign(estimate - exact or 1)
        return cls(estimate=float(estimate), std_error=float(std_error),
                   n_events=int(n_events), exact=None if exact is None else float(exact),
                   z_score=None if z is None else float(z))

    def to_dict(self) -> dict:
        return asdict(self)


class ChainSampler:
    """Vectorized one-step transition sampler for a chain."""

    def __init__(self, chain: SymmetricChain):
        self.chain = chain
        self.n = chain.n
        self.exit_rate = -np.diag(chain.Q)
        if np.any(self.exit_rate <= 0):
            raise ValueError("every state needs a positive exit or kill rate")
        off = chain.Q.copy()
        np.fill_diagonal(off, 0.0)
        probs = off / self.exit_rate[:, None]
        p_death = chain.kill_rate / self.exit_rate
        self.cum = np.cumsum(np.hstack([probs, p_death[:, None]]), axis=1)
        self.cum[:, -1] = 1.0

    def step(self, states: np.ndarray, g: np.random.Generator):
        """(holding times, successor states) with DEATH for killed paths."""
        k = len(states)
        dt = g.exponential(1.0, k) / self.exit_rate[states]
        u = g.random(k)
        nxt = (u[:, None] > self.cum[states]).sum(axis=1)
        return dt, np.where(nxt == self.n, DEATH, nxt)


def _start_states(chain: SymmetricChain, start, k: int, g: np.random.Generator) -> np.ndarray:
    if isinstance(start, str):
        if start != "stationary":
            raise ValueError(f"unknown start spec {start!r}")
        if not chain.conservative:
            raise ValueError("stationary start requires a conservative chain")
        w = chain.m / chain.total_mass
        return g.choice(chain.n, size=k, p=w)
    if np.isscalar(start):
        return np.full(k, int(start))
    w = np.asarray(start, dtype=float)
    return g.choice(chain.n, size=k, p=w / w.sum())


def simulate_paths(chain: SymmetricChain, start, horizon: float, rng: RngStream) -> PathRecord:
    """One exact-in-law path from ``start`` up to min(horizon, lifetime).

    ``start`` is a state index, a weight vector, or ``"stationary"`` (the
    normalized symmetrizing measure; conservative chains only).
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    paths = simulate_batch(chain, start, horizon, rng, n_paths=1)
    return paths[0]


def simulate_batch(chain: SymmetricChain, start, horizon: float, rng: RngStream,
                   n_paths: int) -> list[PathRecord]:
    """Simulate ``n_paths`` independent paths, vectorized across paths."""
    g = rng.generator() if isinstance(rng, RngStream) else rng
    sampler = ChainSampler(chain)
    states = _start_states(chain, start, n_paths, g)
    start_states = states.copy()
    t = np.zeros(n_paths)
    death = np.full(n_paths, np.nan)
    active = np.arange(n_paths)
    rec_path: list[np.ndarray] = []
    rec_time: list[np.ndarray] = []
    rec_next: list[np.ndarray] = []
    while len(active):
        dt, nxt = sampler.step(states[active], g)
        t_new = t[active] + dt
        live = t_new <= horizon
        died = live & (nxt == DEATH)
        moved = live & (nxt != DEATH)
        death[active[died]] = t_new[died]
        rec_path.append(active[moved])
        rec_time.append(t_new[moved])
        rec_next.append(nxt[moved])
        t[active[moved]] = t_new[moved]
        states[active[moved]] = nxt[moved]
        active = active[moved]
    idx = np.concatenate(rec_path) if rec_path else np.empty(0, dtype=int)
    tt = np.concatenate(rec_time) if rec_time else np.empty(0)
    ss = np.concatenate(rec_next) if rec_next else np.empty(0, dtype=int)
    order = np.lexsort((tt, idx))
    idx, tt, ss = idx[order], tt[order], ss[order]
    bounds = np.searchsorted(idx, np.arange(n_paths + 1))
    out = []
    for p in range(n_paths):
        a, b = bounds[p], bounds[p + 1]
        out.append(PathRecord(
            start_state=int(start_states[p]),
            jump_times=tt[a:b].copy(),
            states=np.concatenate([[start_states[p]], ss[a:b]]).astype(int),
            death_time=None if np.isnan(death[p]) else float(death[p]),
            horizon=horizon,
        ))
    return out


def excursion_decompose(path: PathRecord, F) -> list[ExcursionRecord]:
    """Maximal off-F intervals of the path after its first visit to F.

    Excursions cut off by the horizon are discarded; an excursion ended by
    killing carries post_state None and right-endpoint infinity.
    """
    F_set = F.F if isinstance(F, SubsetSpec) else tuple(F)
    in_f = np.isin(path.states, np.asarray(F_set))
    if not in_f.any():
        return []
    first = int(np.argmax(in_f))
    enter = path.enter_times()
    out = []
    i = first
    k = len(path.states)
    while i < k:
        if in_f[i]:
            i += 1
            continue
        j = i
        while j < k and not in_f[j]:
            j += 1
        if j < k:
            out.append(ExcursionRecord(
                left=float(enter[i]), right=float(enter[j]),
                pre_state=int(path.states[i - 1]), post_state=int(path.states[j]),
            ))
        elif path.death_time is not None:
            out.append(ExcursionRecord(
                left=float(enter[i]), right=np.inf,
                pre_state=int(path.states[i - 1]), post_state=None,
            ))
        # else: truncated by the horizon, discarded
        i = j
    return out


def _psi_matrix(psi, F_set) -> np.ndarray:
    k = len(F_set)
    if callable(psi):
        out = np.zeros((k, k))
        for a, x in enumerate(F_set):
            for b, y in enumerate(F_set):
                out[a, b] = psi(x, y)
    else:
        out = np.asarray(psi, dtype=float)
        if out.shape != (k, k):
            raise ValueError(f"psi must be {k}x{k}")
    if np.any(np.abs(np.diag(out)) > 0):
        raise ValueError("psi must vanish on the diagonal")
    return out


def _split_paths(n_paths: int, streams: list[RngStream]) -> list[int]:
    base, extra = divmod(n_paths, len(streams))
    return [base + (1 if i < extra else 0) for i in range(len(streams))]


def estimate_feller_mc(chain: SymmetricChain, F, psi, horizon: float, n_paths: int,
                       rng, batches: int = 32, t_pair=None,
                       min_events: int = 100) -> EstimatorReport:
    """Estimate the Feller mass of psi from excursion endpoint pairs.

    Conservative chains: long-run pair rate under stationary starts, scaled
    by the total mass.  Killed chains: finite-window counts started from the
    normalized mass, Richardson-extrapolated in the window length ``t_pair``
    (defaults to (horizon, horizon/2)).  ``psi`` is a matrix indexed by
    position in F (or a callable of state labels) vanishing on the diagonal.
    ``exact`` is not attached here; compare against the exact Feller data
    in the caller.
    """
    sub = F if isinstance(F, SubsetSpec) else SubsetSpec.of(chain, F)
    F_set = sub.F
    psi_m = _psi_matrix(psi, F_set)
    if not np.any(psi_m):
        return EstimatorReport.against(0.0, 0.0, 0)
    pos = {x: i for i, x in enumerate(F_set)}
    streams = as_streams(rng)
    counts = _split_paths(n_paths, streams)

    if chain.conservative:
        per_path = []
        n_events = 0
        for stream, k in zip(streams, counts):
            if k == 0:
                continue
            for path in simulate_batch(chain, "stationary", horizon, stream, k):
                w = 0.0
                for exc in excursion_decompose(path, sub):
                    if exc.post_state is None:
                        continue
                    val = psi_m[pos[exc.pre_state], pos[exc.post_state]]
                    if val != 0.0:
                        n_events += 1
                        w += val
                per_path.append(w / horizon)
        if n_events < min_events:
            raise InsufficientEvents(
                f"only {n_events} weighted excursion events (< {min_events})",
                n_events=n_events)
        rates = np.asarray(per_path)
        nb = min(batches, len(rates))
        groups = np.array_split(rates, nb)
        means = np.array([grp.mean() for grp in groups])
        est = chain.total_mass * rates.mean()
        se = chain.total_mass * means.std(ddof=1) / np.sqrt(nb)
        return EstimatorReport.against(est, se, n_events)

    # killed chain: finite-window counts from the mass measure,
    # extrapolated linearly in the window length
    if t_pair is None:
        t_pair = (horizon, horizon / 2.0)
    t1, t2 = sorted(t_pair, reverse=True)
    vals, ses, n_events = [], [], 0
    for t in (t1, t2):
        per_path = []
        for stream, k in zip(streams, counts):
            if k == 0:
                continue
            for path in simulate_batch(chain, chain.m, t1 * 4.0, stream, k):
                w = 0.0
                for exc in excursion_decompose(path, sub):
                    if exc.post_state is None or exc.left > t:
                        continue
                    val = psi_m[pos[exc.pre_state], pos[exc.post_state]]
                    if val != 0.0:
                        n_events += 1
                        w += val
                per_path.append(w / t)
        arr = np.asarray(per_path)
        vals.append(chain.total_mass * arr.mean())
        ses.append(chain.total_mass * arr.std(ddof=1) / np.sqrt(len(arr)))
    if n_events < min_events:
        raise InsufficientEvents(
            f"only {n_events} weighted excursion events (< {min_events})",
            n_events=n_events)
    # value(t) ~ v0 + c t; eliminate the linear term
    est = vals[1] + (vals[1] - vals[0]) * t2 / (t1 - t2)
    se = np.sqrt((ses[1] * (1 + t2 / (t1 - t2))) ** 2 + (ses[0] * t2 / (t1 - t2)) ** 2)
    return EstimatorReport.against(est, se, n_events)


def estimate_supplementary_mc(chain: SymmetricChain, F, f, t_grid, n_paths: int,
                              rng, horizon: float = None,
                              min_events: int = 100) -> EstimatorReport:
    """Estimate the supplementary mass of f from final exits.

    For each window t the statistic is the mass-started mean of
    f(last F state) over paths whose final departure from F happened by t
    and that died without returning; the windows are then extrapolated
    linearly to t = 0.  ``f`` is a vector indexed by position in F.
    Conservative chains produce (correctly) an estimate near zero, counted
    as zero events.
    """
    sub = F if isinstance(F, SubsetSpec) else SubsetSpec.of(chain, F)
    F_set = np.asarray(sub.F)
    f = np.asarray(f, dtype=float)
    if f.shape != (len(F_set),):
        raise ValueError(f"f must have length {len(F_set)}")
    t_grid = sorted(float(t) for t in t_grid)
    if horizon is None:
        # long enough that surviving past it without returning is negligible
        rate_scale = float(np.min(-np.diag(chain.Q)))
        horizon = max(200.0 / rate_scale, 50.0 * max(t_grid))
    streams = as_streams(rng)
    counts = _split_paths(n_paths, streams)
    sampler = ChainSampler(chain)
    in_f = np.zeros(chain.n + 1, dtype=bool)
    in_f[F_set] = True
    fpos = np.full(chain.n, -1)
    fpos[F_set] = np.arange(len(F_set))

    sums = np.zeros(len(t_grid))
    sums2 = np.zeros(len(t_grid))
    n_events = 0
    total_paths = 0
    for stream, k in zip(streams, counts):
        if k == 0:
            continue
        g = stream.generator()
        states = _start_states(chain, chain.m, k, g)
        t = np.zeros(k)
        pend_t = np.full(k, np.nan)
        pend_s = np.full(k, -1)
        vals = np.zeros((len(t_grid), k))
        active = np.arange(k)
        while len(active):
            dt, nxt = sampler.step(states[active], g)
            t_new = t[active] + dt
            cur = states[active]
            died = nxt == DEATH
            # killed while a final exit is pending: that exit was the last one
            ev = died & ~np.isnan(pend_t[active])
            if ev.any():
                rows = active[ev]
                gam = pend_t[rows]
                val = f[fpos[pend_s[rows]]]
                for j, (gv, vv) in enumerate(zip(gam, val)):
                    sel = gv <= np.asarray(t_grid)
                    vals[sel, rows[j]] += vv
                n_events += int(np.count_nonzero(val))
            # re-entering F clears any pending exit
            entered = ~died & in_f[np.where(nxt == DEATH, chain.n, nxt)]
            rows = active[entered]
            pend_t[rows] = np.nan
            pend_s[rows] = -1
            # leaving F sets the pending exit
            leaving = ~died & in_f[cur] & ~in_f[np.where(nxt == DEATH, chain.n, nxt)]
            rows = active[leaving]
            pend_t[rows] = t_new[leaving]
            pend_s[rows] = cur[leaving]

            t[active] = t_new
            keep = ~died & (t_new <= horizon)
            states[active[keep]] = nxt[keep]
            active = active[keep]
        for j in range(len(t_grid)):
            sums[j] += vals[j].sum()
            sums2[j] += (vals[j] ** 2).sum()
        total_paths += k

    mass = chain.total_mass
    t_arr = np.asarray(t_grid)
    means = sums / total_paths
    variances = np.maximum(sums2 / total_paths - means**2, 0.0)
    estimates = mass * means / t_arr
    ses = mass * np.sqrt(variances / total_paths) / t_arr
    if chain.conservative or n_events == 0:
        if not chain.conservative and n_events < min_events:
            raise InsufficientEvents(f"only {n_events} final-exit events", n_events=n_events)
        return EstimatorReport.against(float(estimates[0]), float(ses[0]) if ses[0] > 0 else 0.0,
                                       n_events)
    if n_events < min_events:
        raise InsufficientEvents(f"only {n_events} final-exit events", n_events=n_events)
    if len(t_grid) == 1:
        return EstimatorReport.against(estimates[0], ses[0], n_events)
    # weighted linear fit in t, extrapolated to t = 0
    w = 1.0 / np.maximum(ses, 1e-300) ** 2
    X = np.stack([np.ones_like(t_arr), t_arr], axis=1)
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    beta = cov @ (X.T @ (w * estimates))
    return EstimatorReport.against(beta[0], np.sqrt(cov[0, 0]), n_events)


def levy_jump_check(chain: SymmetricChain, x: int, f, t: float, n_paths: int,
                    rng) -> EstimatorReport:
    """Expected jump sums against the exact rate integral.

    ``f`` is an (n, n+1) matrix whose last column weights killing jumps.
    The exact side integrates the transition semigroup against the jump
    kernel; the MC side counts weighted transitions up to min(t, lifetime).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    f = np.asarray(f, dtype=float)
    if f.shape != (chain.n, chain.n + 1):
        raise ValueError(f"f must be (n, n+1) = ({chain.n}, {chain.n + 1})")
    if np.any(np.abs(np.diag(f[:, :-1])) > 0):
        raise ValueError("f must vanish on the diagonal")

    off = chain.Q.copy()
    np.fill_diagonal(off, 0.0)
    rho = np.sum(off * f[:, :-1], axis=1) + chain.kill_rate * f[:, -1]
    block = np.zeros((chain.n + 1, chain.n + 1))
    block[:-1, :-1] = chain.Q * t
    block[:-1, -1] = rho * t
    exact = float(expm(block)[x, -1])

    streams = as_streams(rng)
    counts = _split_paths(n_paths, streams)
    sampler = ChainSampler(chain)
    total = 0.0
    total2 = 0.0
    n_events = 0
    for stream, k in zip(streams, counts):
        if k == 0:
            continue
        g = stream.generator()
        states = np.full(k, int(x))
        tt = np.zeros(k)
        acc = np.zeros(k)
        active = np.arange(k)
        while len(active):
            dt, nxt = sampler.step(states[active], g)
            t_new = tt[active] + dt
            live = t_new <= t
            cur = states[active]
            died = live & (nxt == DEATH)
            moved = live & (nxt != DEATH)
            w = np.zeros(len(active))
            w[died] = f[cur[died], -1]
            w[moved] = f[cur[moved], nxt[moved]]
            w[~live] = 0.0
            acc[active] += w
            n_events += int(np.count_nonzero(w))
            tt[active] = t_new
            states[active[moved]] = nxt[moved]
            active = active[moved]
        total += acc.sum()
        total2 += (acc**2).sum()
    mean = total / n_paths
    var = max(total2 / n_paths - mean**2, 0.0)
    se = np.sqrt(var / n_paths)
    return EstimatorReport.against(mean, se, n_events, exact=exact)


def killing_limit_curve(chain: SymmetricChain, mu, t_grid, n_paths: int, rng):
    """Small-time killing curve of an additive functional with density mu/m.

    Returns a list of (t, value, std_error): value estimates the rate at
    which the functional accumulates mass on paths killed by time t.  On a
    conservative chain it is identically zero; in general it vanishes as t
    does.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (chain.n,) or np.any(mu < 0):
        raise ValueError("mu must be a nonnegative state vector")
    density = mu / chain.m
    streams = as_streams(rng)
    counts = _split_paths(n_paths, streams)
    sampler = ChainSampler(chain)
    out = []
    for t in t_grid:
        total = 0.0
        total2 = 0.0
        n_used = 0
        for stream, k in zip(streams, counts):
            if k == 0:
                continue
            g = stream.generator()
            states = _start_states(chain, chain.m, k, g)
            tt = np.zeros(k)
            acc = np.zeros(k)
            contrib = np.zeros(k)
            active = np.arange(k)
            while len(active):
                dt, nxt = sampler.step(states[active], g)
                t_new = tt[active] + dt
                cur = states[active]
                died = (nxt == DEATH) & (t_new <= t)
                # holding time accrues the functional until the jump,
                # clipped at the window end
                hold = np.minimum(t_new, t) - tt[active]
                acc[active] += hold * density[cur]
                contrib[active[died]] = acc[active[died]]
                tt[active] = t_new
                keep = (t_new < t) & (nxt != DEATH)
                states[active[keep]] = nxt[keep]
                active = active[keep]
            total += contrib.sum()
            total2 += (contrib**2).sum()
            n_used += k
        mean = total / n_used
        var = max(total2 / n_used - mean**2, 0.0)
        out.append((float(t),
                    float(chain.total_mass * mean / t),
                    float(chain.total_mass * np.sqrt(var / n_used) / t)))
    return out


def trace_path(path: PathRecord, F, mu=None, mF=None) -> PathRecord:
    """Time-change a path onto F: run the additive clock sum(holding in F
    times mu/mF) and read off the induced F-valued path.

    The returned record lives on the transformed clock; it dies exactly when
    the original path dies (or leaves F forever), and is truncated when the
    original path is truncated by its horizon.
    """
    sub_F = F.F if isinstance(F, SubsetSpec) else tuple(F)
    k = len(sub_F)
    weight = {}
    for i, s in enumerate(sub_F):
        num = 1.0 if mu is None else float(np.asarray(mu)[i])
        den = 1.0 if mF is None else float(np.asarray(mF)[i])
        weight[s] = num / den
    f_set = set(sub_F)

    enter = path.enter_times()
    end = path.end_time()
    clock = 0.0
    y_states = []
    y_times = []
    for i, s in enumerate(path.states):
        t0 = enter[i]
        t1 = enter[i + 1] if i + 1 < len(path.states) else end
        s = int(s)
        if s in f_set:
            if not y_states:
                y_states.append(s)
            elif s != y_states[-1]:
                y_states.append(s)
                y_times.append(clock)
            clock += (t1 - t0) * weight[s]
    if not y_states:
        return PathRecord(start_state=-1, jump_times=np.empty(0),
                          states=np.array([-1]), death_time=None, horizon=0.0)
    died = path.death_time is not None
    return PathRecord(
        start_state=int(y_states[0]),
        jump_times=np.asarray(y_times),
        states=np.asarray(y_states, dtype=int),
        death_time=clock if died else None,
        horizon=clock,
    )


def empirical_generator(paths: list[PathRecord], states: tuple) -> tuple:
    """Occupation times, jump counts and death counts of F-valued paths.

    Returns (occupancy vector, count matrix, death count vector) indexed by
    position in ``states``; rate estimates are counts / occupancy.
    """
    pos = {s: i for i, s in enumerate(states)}
    k = len(states)
    occ = np.zeros(k)
    jumps = np.zeros((k, k))
    deaths = np.zeros(k)
    for path in paths:
        if path.start_state == -1:
            continue
        enter = path.enter_times()
        end = path.end_time()
        for i, s in enumerate(path.states):
            t0 = enter[i]
            t1 = enter[i + 1] if i + 1 < len(path.states) else end
            occ[pos[int(s)]] += t1 - t0
            if i + 1 < len(path.states):
                jumps[pos[int(s)], pos[int(path.states[i + 1])]] += 1
        if path.death_time is not None:
            deaths[pos[int(path.states[-1])]] += 1
    return occ, jumps, deaths
