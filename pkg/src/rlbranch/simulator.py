"""Monte Carlo realization of the particle system.

Each trajectory owns one Philox stream derived from (master seed, index),
so a trajectory is reproduced bit for bit no matter which worker runs it.
Trees are grown one generation at a time with vectorized draws; only the
birth and death times of each particle are kept, which is all a snapshot
needs.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec, TestFunction

__all__ = [
    "Snapshot", "TrajectoryResult", "trajectory_rng", "trajectory_seed",
    "sample_birth_process", "birth_events", "simulate_trajectory", "simulate_forest",
    "observables", "sample_Y", "run_ensemble",
]

DEFAULT_MAX_POP = 1_000_000


def trajectory_rng(master: int, index: int, purpose: int = 0) -> np.random.Generator:
    """Stream for trajectory ``index``; ``purpose`` separates unrelated ensembles."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(int(purpose), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def trajectory_seed(master: int, index: int, purpose: int = 0) -> int:
    """A 64-bit digest of the stream key, recorded alongside each trajectory."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(int(purpose), int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# reproduction of a single particle


def sample_birth_process(spec: ModelSpec, lifespan: float, rng: np.random.Generator):
    """Birth events of one particle as a list of (age s_j, offspring count n_j).

    Candidate ages come from an Exponential(sup alpha) clock and are accepted
    with probability alpha(lifespan - s) / sup alpha.  Draws per candidate:
    age, acceptance, then (if accepted) the count.
    """
    if not lifespan > 0:
        raise ValueError("lifespan must be positive")
    bound = spec.alpha.sup
    events = []
    if bound <= 0:
        return events
    s = 0.0
    while True:
        s += rng.exponential(1.0 / bound)
        if s >= lifespan:
            return events
        x = lifespan - s
        accept = rng.random() * bound < float(spec.alpha(x))
        if accept:
            n = int(spec.offspring.sample(rng, np.array([x]))[0])
            events.append((s, n))


def birth_events(spec: ModelSpec, rng: np.random.Generator, life: np.ndarray, window: np.ndarray):
    """Vectorized birth events for many particles at once.

    Events are generated on ages [0, window) of each particle (window <= life).
    Returns (parent index, age, offspring count) arrays.
    """
    bound = spec.alpha.sup
    if bound <= 0 or life.size == 0:
        e = np.empty(0, dtype=np.int64)
        return e, np.empty(0), e
    k = rng.poisson(bound * window)
    parent = np.repeat(np.arange(life.size), k)
    ages = rng.random(parent.size) * window[parent]
    x = life[parent] - ages
    if not spec.alpha.is_constant:
        keep = rng.random(parent.size) * bound < spec.alpha.raw(x)
        parent, ages, x = parent[keep], ages[keep], x[keep]
    counts = spec.offspring.sample(rng, x).astype(np.int64)
    return parent, ages, counts


# ---------------------------------------------------------------------------
# trees


@dataclass
class Snapshot:
    t: float
    remaining: np.ndarray
    generations: np.ndarray

    @property
    def alive(self) -> int:
        return int(self.remaining.size)

    @property
    def generation_histogram(self) -> np.ndarray:
        if self.generations.size == 0:
            return np.zeros(0, dtype=np.int64)
        return np.bincount(self.generations)


@dataclass
class _Forest:
    birth: np.ndarray
    death: np.ndarray
    gen: np.ndarray
    root: np.ndarray
    gen_counts: list
    events: int
    truncated: bool

    def alive_mask(self, t: float) -> np.ndarray:
        return (self.birth <= t) & (self.death > t)

    def snapshot(self, t: float) -> Snapshot:
        m = self.alive_mask(t)
        return Snapshot(float(t), self.death[m] - t, self.gen[m])


def _grow(spec: ModelSpec, rng: np.random.Generator, root_life: np.ndarray, horizon: float,
          obs_times, max_pop: int, full_generations: int = 2) -> _Forest:
    """Grow a forest of trees rooted at time 0 with the given lifespans.

    Generations below ``full_generations`` are grown over the whole life of
    every parent so the first generation counts are exact; deeper generations
    stop at ``horizon``.  Growth stops (truncation) once the live count at
    any observation time exceeds ``max_pop``.
    """
    obs = np.asarray(obs_times, dtype=float)
    births, deaths, gens, roots = [], [], [], []
    alive = np.zeros(obs.size, dtype=np.int64)
    cur_b = np.zeros(root_life.size)
    cur_l = np.asarray(root_life, dtype=float)
    cur_r = np.arange(root_life.size)
    g = 0
    gen_counts = [int(root_life.size)]
    events = 0
    truncated = False
    while cur_b.size:
        d = cur_b + cur_l
        keep = cur_b <= horizon
        births.append(cur_b[keep])
        deaths.append(d[keep])
        gens.append(np.full(int(keep.sum()), g, dtype=np.int32))
        roots.append(cur_r[keep])
        for j, t in enumerate(obs):
            alive[j] += np.count_nonzero((cur_b <= t) & (d > t))
        if alive.size and alive.max() > max_pop:
            truncated = True
            break
        if g < full_generations:
            window = cur_l
        else:
            window = np.clip(horizon - cur_b, 0.0, cur_l)
        parent, ages, counts = birth_events(spec, rng, cur_l, window)
        events += int(parent.size)
        if g + 1 <= full_generations:
            gen_counts.append(int(counts.sum()))
        child_b = np.repeat(cur_b[parent] + ages, counts)
        child_r = np.repeat(cur_r[parent], counts)
        if g + 1 >= full_generations:
            sel = child_b <= horizon
            child_b, child_r = child_b[sel], child_r[sel]
        cur_l = spec.lifetime.sample(rng, child_b.size)
        cur_b, cur_r = child_b, child_r
        g += 1
    while len(gen_counts) < full_generations + 1:
        gen_counts.append(0)
    cat = lambda xs, dt: np.concatenate(xs) if xs else np.empty(0, dtype=dt)  # noqa: E731
    return _Forest(cat(births, float), cat(deaths, float), cat(gens, np.int32),
                   cat(roots, np.int64), gen_counts, events, truncated)


@dataclass
class TrajectoryResult:
    seed: int
    index: int
    snapshots: list
    extinct: bool
    truncated: bool
    total_events: int
    gen_counts: tuple
    root_lifespan: float
    _forest: _Forest | None = field(default=None, repr=False)

    def snapshot(self, t: float) -> Snapshot:
        for s in self.snapshots:
            if abs(s.t - t) < 1e-12:
                return s
        raise KeyError(f"no snapshot at t = {t}")

    def census(self, t: float) -> tuple[int, int, int]:
        """(initial particles + births in (0, t], deaths in (0, t], alive at t)."""
        fo = self._forest
        if fo is None:
            raise ValueError("trajectory was simulated without keeping the tree")
        born = int(np.count_nonzero(fo.birth <= t))
        died = int(np.count_nonzero(fo.death <= t))
        return born, died, int(np.count_nonzero(fo.alive_mask(t)))


def simulate_trajectory(spec: ModelSpec, sol, seed: int, obs_times, max_pop: int | None = None,
                        index: int = 0, keep_tree: bool = False, purpose: int = 0,
                        rng: np.random.Generator | None = None) -> TrajectoryResult:
    """One population path started from a single newborn particle.

    ``sol`` is unused here and accepted for a uniform call signature.
    """
    obs = np.asarray(obs_times, dtype=float)
    if obs.size == 0 or np.any(np.diff(obs) <= 0) or obs[0] < 0:
        raise ValueError("obs_times must be a nonempty increasing sequence of nonnegative times")
    max_pop = DEFAULT_MAX_POP if max_pop is None else int(max_pop)
    if max_pop < 1:
        raise ValueError("max_pop must be >= 1")
    rng = trajectory_rng(seed, index, purpose) if rng is None else rng
    root = spec.lifetime.sample(rng, 1)
    fo = _grow(spec, rng, root, float(obs[-1]), obs, max_pop)
    snaps = [fo.snapshot(t) for t in obs]
    extinct = (not fo.truncated) and snaps[-1].alive == 0
    return TrajectoryResult(
        seed=trajectory_seed(seed, index, purpose), index=int(index), snapshots=snaps,
        extinct=extinct, truncated=fo.truncated, total_events=fo.events,
        gen_counts=tuple(fo.gen_counts[:3]), root_lifespan=float(root[0]),
        _forest=fo if keep_tree else None)


def simulate_forest(spec: ModelSpec, rng: np.random.Generator, lifespans, duration: float,
                    f: TestFunction | None = None, max_pop: int | None = None):
    """Independent subtrees from particles with the given remaining lifetimes.

    Returns (per-root sum of f over the alive descendants at ``duration``,
    per-root alive count, truncated flag).
    """
    f = spec.f if f is None else f
    lifespans = np.asarray(lifespans, dtype=float)
    max_pop = DEFAULT_MAX_POP if max_pop is None else int(max_pop)
    fo = _grow(spec, rng, lifespans, duration, [duration], max_pop, full_generations=0)
    m = fo.alive_mask(duration)
    rem = fo.death[m] - duration
    sums = np.bincount(fo.root[m], weights=f(rem), minlength=lifespans.size)
    pops = np.bincount(fo.root[m], minlength=lifespans.size)
    return sums, pops, fo.truncated


def observables(snapshot: Snapshot, f: TestFunction, alpha_tilde: float) -> dict:
    pop = snapshot.alive
    sum_f = float(np.sum(f(snapshot.remaining))) if pop else 0.0
    return {
        "pop": pop,
        "sum_f": sum_f,
        "W_f": math.exp(-alpha_tilde * snapshot.t) * sum_f,
        "A_f": sum_f / pop if pop else None,
    }


def sample_Y(spec: ModelSpec, sol, rng: np.random.Generator, size: int | None = None):
    """Y = sum_j n_j exp(-a s_j) over the ancestor's birth events.

    With ``size=None`` one value is drawn through :func:`sample_birth_process`;
    otherwise ``size`` values are drawn in one vectorized batch.
    """
    a = sol.alpha_tilde
    if size is None:
        life = float(spec.lifetime.sample(rng, 1)[0])
        return float(sum(n * math.exp(-a * s) for s, n in sample_birth_process(spec, life, rng)))
    life = spec.lifetime.sample(rng, int(size))
    parent, ages, counts = birth_events(spec, rng, life, life)
    return np.bincount(parent, weights=counts * np.exp(-a * ages), minlength=int(size))


# ---------------------------------------------------------------------------
# ensembles


def _chunk(args):
    spec, sol, master, purpose, indices, obs_times, max_pop, reducer = args
    out = []
    for i in indices:
        rng = trajectory_rng(master, i, purpose)
        res = simulate_trajectory(spec, sol, master, obs_times, max_pop, index=i,
                                  purpose=purpose, rng=rng)
        out.append(reducer(res, rng) if reducer is not None else res)
    return out


def resolve_threads(threads: int | None) -> int:
    if threads is None or threads == 1:
        return 1
    if threads <= 0:
        return os.cpu_count() or 1
    return int(threads)


def run_ensemble(spec: ModelSpec, sol, n: int, master: int, obs_times, *, max_pop=None,
                 reducer=None, threads: int | None = 1, purpose: int = 0, start: int = 0) -> list:
    """Simulate trajectories start..start+n-1 and return ``reducer(result, rng)`` for each, in index order.

    The reducer receives the trajectory's own stream after the trajectory is
    complete, so any follow-up sampling stays reproducible.  It must be
    picklable when ``threads > 1``.
    """
    workers = resolve_threads(threads)
    if workers == 1:
        return _chunk((spec, sol, master, purpose, range(start, start + n), obs_times, max_pop,
                       reducer))
    size = max(1, math.ceil(n / (4 * workers)))
    stop = start + n
    jobs = [(spec, sol, master, purpose, range(lo, min(stop, lo + size)), obs_times, max_pop,
             reducer) for lo in range(start, stop, size)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_chunk, jobs))
    return [r for part in parts for r in part]
