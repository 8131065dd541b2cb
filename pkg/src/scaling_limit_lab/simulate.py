"""Finite-n online algorithms: regularized regression, regularized PCA (Oja),
and the 1-D toy SGD.

Time is rescaled as t = k/n.  All randomness comes from a numpy Generator
consumed in fixed-size blocks (sensing vectors, then noise), so a run is a
deterministic function of (configuration, seed) regardless of which backend
does the arithmetic or where observables are recorded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import _kernels
from ._csv import read_rows, write_rows
from .measure import EmpiricalState
from .regularizers import Regularizer, make_regularizer

DIVERGENCE_LIMIT = 1e6
RECORD_CSV_HEADER = ("t", "observable", "value", "seed")
SNAPSHOT_CSV_HEADER = ("t", "i", "x", "xi")
_BLOCK_BYTES = 1 << 23


class DivergenceError(RuntimeError):
    def __init__(self, msg, k=None, index=None, trial=None):
        super().__init__(msg)
        self.k, self.index, self.trial = k, index, trial


class DegenerateNormalizationError(RuntimeError):
    pass


def trial_seed(master: int, i: int) -> np.random.SeedSequence:
    """Independent stream for trial ``i`` of a master seed (counter-based split)."""
    return np.random.SeedSequence(int(master), spawn_key=(int(i),))


# ---------------------------------------------------------------- models


@dataclass(frozen=True)
class RegressionModel:
    tau: float
    sigma: float = 1.0
    phi: Regularizer | Callable = field(default_factory=Regularizer)
    sensing_dist: str = "gaussian"
    noise_dist: str = "gaussian"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.sensing_dist not in ("gaussian", "rademacher"):
            raise ValueError(f"unknown sensing_dist {self.sensing_dist!r}")
        if self.noise_dist != "gaussian":
            raise ValueError(f"unknown noise_dist {self.noise_dist!r}")
        if not callable(self.phi):
            object.__setattr__(self, "phi", make_regularizer(self.phi))


@dataclass(frozen=True)
class PcaModel:
    """Spiked-covariance stream y = sqrt(omega/n) c xi + a and the Oja-type update.

    The update applies eta(x) = x - beta*phi(x)/n before renormalizing, so a
    simulation with strength ``beta`` corresponds to the limiting PDE built by
    ``make_pca_spec`` with strength ``beta / tau``.
    """

    tau: float
    omega: float
    beta: float = 0.0
    phi: Regularizer | Callable = field(default_factory=Regularizer)
    spike_dist: str = "rademacher"
    noise_dist: str = "gaussian"

    def __post_init__(self):
        if not self.tau > 0 or not self.omega > 0:
            raise ValueError("tau and omega must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        for d in (self.spike_dist, self.noise_dist):
            if d not in ("gaussian", "rademacher"):
                raise ValueError(f"unknown distribution {d!r}")
        if not callable(self.phi):
            object.__setattr__(self, "phi", make_regularizer(self.phi))


# ---------------------------------------------------------------- draws


def _draw(rng: np.random.Generator, dist: str, shape):
    if dist == "gaussian":
        return rng.standard_normal(shape)
    rows, n = shape if isinstance(shape, tuple) else (None, shape)
    if rows is None:
        bits = np.unpackbits(np.frombuffer(rng.bytes((n + 7) // 8), np.uint8), count=n)
        return bits.astype(np.float64) * 2.0 - 1.0
    nb = (n + 7) // 8
    raw = np.frombuffer(rng.bytes(rows * nb), np.uint8).reshape(rows, nb)
    bits = np.unpackbits(raw, axis=1, count=n).view(np.int8)
    return bits * np.int8(2) - np.int8(1)


def _block_rows(n: int, itemsize: int) -> int:
    return max(1, _BLOCK_BYTES // (n * itemsize))


def _sum(values, exact: bool) -> float:
    return math.fsum(values.tolist()) if exact else float(np.sum(values))


# ---------------------------------------------------------------- single steps


def _regression_update(x, xi, a, w, model: RegressionModel, exact: bool):
    n = x.size
    rn = 1.0 / math.sqrt(n)
    residual = w - _sum(a * (x - xi), exact) * rn
    xt = x + model.tau * residual * rn * a
    return xt - model.phi(xt) / n


def regression_step(state: EmpiricalState, model: RegressionModel, rng=None, *, a=None, w=None,
                    exact: bool = False) -> EmpiricalState:
    """One step x <- eta[x + tau (y - a.x/sqrt n) a/sqrt n] with y = a.xi/sqrt n + w.

    ``a`` and ``w`` may be forced; otherwise they are drawn from ``rng``.
    """
    n = state.n
    if a is None:
        a = _draw(rng, model.sensing_dist, n)
    if w is None:
        w = model.sigma * rng.standard_normal()
    a = np.asarray(a, dtype=float)
    with np.errstate(all="ignore"):
        x = _regression_update(state.x, state.xi, a, float(w), model, exact)
    _check_finite(x, state.k)
    return EmpiricalState(x, state.xi, state.k + 1)


def _pca_update(x, xi, a, c, model: PcaModel, exact: bool):
    n = x.size
    y = math.sqrt(model.omega / n) * c * xi + a
    xt = x + (model.tau / n) * y * _sum(y * x, exact)
    v = xt - model.beta * model.phi(xt) / n
    norm2 = _sum(v * v, exact)
    if norm2 == 0.0:
        raise DegenerateNormalizationError("eta(x~) has zero norm; cannot project onto the sphere")
    return math.sqrt(n) * v / math.sqrt(norm2)


def pca_step(state: EmpiricalState, model: PcaModel, rng=None, *, a=None, c=None,
             exact: bool = False) -> EmpiricalState:
    """One step of x~ = x + (tau/n) y y^T x, x' = sqrt(n) eta(x~)/||eta(x~)||."""
    n = state.n
    norm = math.sqrt(_sum(state.x * state.x, True))
    if abs(norm - math.sqrt(n)) > 1e-9 * math.sqrt(n):
        raise ValueError(f"pca_step needs ||x|| = sqrt(n); got {norm} for n={n}")
    if c is None:
        c = float(_draw(rng, model.spike_dist, 1)[0])
    if a is None:
        a = _draw(rng, model.noise_dist, n)
    with np.errstate(all="ignore"):
        x = _pca_update(state.x, state.xi, np.asarray(a, dtype=float), float(c), model, exact)
    _check_finite(x, state.k)
    return EmpiricalState(x, state.xi, state.k + 1)


def _check_finite(x, k):
    bad = np.flatnonzero(~(np.abs(x) <= DIVERGENCE_LIMIT))
    if bad.size:
        i = int(bad[0])
        raise DivergenceError(f"update diverged at step k={k}, coordinate {i} (x={x[i]})", k=k, index=i)


# ---------------------------------------------------------------- trajectories


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    observables: dict[str, np.ndarray]
    snapshots: list[tuple[float, EmpiricalState]] = field(default_factory=list)
    seed: int | str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("record times must be strictly increasing")

    def to_rows(self):
        for name, vals in self.observables.items():
            for t, v in zip(self.times, vals):
                yield float(t), name, float(v), self.seed

    def write_csv(self, path):
        write_rows(path, RECORD_CSV_HEADER, self.to_rows())

    def write_snapshots_csv(self, path):
        rows = []
        for t, st in self.snapshots:
            rows.extend((float(t), i, float(x), float(xi)) for i, (x, xi) in enumerate(zip(st.x, st.xi)))
        write_rows(path, SNAPSHOT_CSV_HEADER, rows)


def write_records_csv(path, records: Sequence[TrajectoryRecord]):
    write_rows(path, RECORD_CSV_HEADER, (row for r in records for row in r.to_rows()))


def read_records_csv(path) -> list[TrajectoryRecord]:
    """Parse a ``t,observable,value,seed`` CSV back into one record per seed."""
    rows = read_rows(path, RECORD_CSV_HEADER)
    by_seed: dict[str, dict[str, list]] = {}
    for t, name, value, seed in rows:
        by_seed.setdefault(seed, {}).setdefault(name, []).append((float(t), float(value)))
    out = []
    for seed, obs in by_seed.items():
        times = None
        cols = {}
        for name, pairs in obs.items():
            pairs.sort()
            ts = np.array([p[0] for p in pairs])
            if times is None:
                times = ts
            elif not np.array_equal(times, ts):
                raise ValueError(f"{path}: observable {name} of seed {seed} has mismatched times")
            cols[name] = np.array([p[1] for p in pairs])
        out.append(TrajectoryRecord(times, cols, seed=seed))
    return out


def make_vector(spec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Build an n-vector from an array, a callable (rng, n) or a spec mapping.

    Mapping kinds: {"kind": "gaussian", "mean", "var"}, {"kind": "sparse",
    "rho", "value"} (first floor(rho n) entries equal ``value``),
    {"kind": "constant", "value"}, {"kind": "rademacher"}.  A bare string is
    shorthand for {"kind": string}.
    """
    if callable(spec):
        return np.asarray(spec(rng, n), dtype=float)
    if isinstance(spec, str):
        spec = {"kind": spec}
    if isinstance(spec, Mapping):
        kind = spec.get("kind")
        if kind == "gaussian":
            return spec.get("mean", 0.0) + math.sqrt(spec.get("var", 1.0)) * rng.standard_normal(n)
        if kind == "sparse":
            v = np.zeros(n)
            v[: int(math.floor(spec["rho"] * n))] = spec.get("value", 1.0)
            return v
        if kind == "constant":
            return np.full(n, float(spec.get("value", 0.0)))
        if kind == "rademacher":
            return _draw(rng, "rademacher", n)
        raise ValueError(f"unknown vector kind {kind!r}")
    v = np.asarray(spec, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"vector has shape {v.shape}, expected ({n},)")
    return v.copy()


def _step_index(n: int, t: float) -> int:
    return int(math.floor(n * t + 1e-9))


def _schedule(n, nsteps, record_times, snapshot_times):
    rec = sorted({_step_index(n, t) for t in record_times})
    snap = sorted({_step_index(n, t) for t in snapshot_times})
    if rec and (rec[0] < 0 or rec[-1] > nsteps):
        raise ValueError("record times must lie in [0, T]")
    if snap and (snap[0] < 0 or snap[-1] > nsteps):
        raise ValueError("snapshot times must lie in [0, T]")
    return rec, snap


def _choose_backend(backend, phi):
    if backend == "auto":
        return "compiled" if isinstance(phi, Regularizer) else "numpy"
    if backend == "compiled" and not isinstance(phi, Regularizer):
        raise ValueError("the compiled backend needs a builtin Regularizer for phi")
    if backend not in ("compiled", "numpy", "exact"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend


def _drive(n, nsteps, rec, snap, block_rows, draw_block, advance, observe, x, xi, seed):
    """Shared loop: draw blocks, advance between event steps, record observables."""
    events = sorted(set(rec) | set(snap))
    times, values, snapshots = [], {}, []

    def emit(k):
        if k in rec:
            times.append(k / n)
            for name, v in observe(x).items():
                values.setdefault(name, []).append(v)
        if k in snap:
            snapshots.append((k / n, EmpiricalState(x.copy(), xi, k)))

    if events and events[0] == 0:
        emit(0)
    k = 0
    ev = iter(e for e in events if e > 0)
    nxt = next(ev, None)
    while k < nsteps:
        block = draw_block(min(block_rows, nsteps - k))
        rows = block[-1]
        r = 0
        while r < rows:
            stop = rows if nxt is None else min(rows, r + nxt - k)
            advance(block, r, stop, k)
            k += stop - r
            r = stop
            if nxt is not None and k == nxt:
                emit(k)
                nxt = next(ev, None)
    return TrajectoryRecord(times, {kk: np.array(v) for kk, v in values.items()}, snapshots, seed)


def _seed_label(seed):
    if isinstance(seed, np.random.SeedSequence):
        return ":".join(str(s) for s in (seed.entropy, *seed.spawn_key))
    return seed


def run_regression(n: int, T: float, model: RegressionModel, x0_spec, xi_spec, seed,
                   record_times: Sequence[float], snapshot_times: Sequence[float] = (),
                   backend: str = "auto", draw_permutation=None) -> TrajectoryRecord:
    """Iterate ``regression_step`` for floor(nT) steps and record mse = <mu_k, (x - xi)^2>.

    Backends: "compiled" (numba, builtin regularizers only), "numpy" (reference
    per-step updates), "exact" (numpy with correctly rounded sums, so permuting
    coordinates together with ``draw_permutation`` reproduces observables
    bitwise).  All backends consume identical draws.
    """
    if n < 1 or not T > 0:
        raise ValueError("need n >= 1 and T > 0")
    backend = _choose_backend(backend, model.phi)
    rng = np.random.default_rng(seed)
    xi = make_vector(xi_spec, n, rng)
    x = make_vector(x0_spec, n, rng)
    nsteps = _step_index(n, T)
    rec, snap = _schedule(n, nsteps, record_times, snapshot_times)
    exact = backend == "exact"
    sens = model.sensing_dist
    perm = None if draw_permutation is None else np.asarray(draw_permutation)

    def draw_block(rows):
        a = _draw(rng, sens, (rows, n))
        if backend != "compiled" and a.dtype != np.float64:
            a = a.astype(np.float64)
        if perm is not None:
            a = a[:, perm]
        w = model.sigma * rng.standard_normal(rows)
        return a, w, rows

    block_rows = _block_rows(n, 1 if sens == "rademacher" and backend == "compiled" else 8)

    if backend == "compiled":
        code, strength, p1, p2 = model.phi.kernel_params()
        kernel = _kernels.regression_kernel(code)

        def advance(block, r0, r1, k0):
            a, w, _ = block
            bad = kernel(x, xi, a, w, r0, r1, model.tau, strength, p1, p2, DIVERGENCE_LIMIT)
            if bad >= 0:
                _raise_divergence(x, k0 + bad - r0)
    else:
        def advance(block, r0, r1, k0):
            a, w, _ = block
            with np.errstate(all="ignore"):
                for r in range(r0, r1):
                    x[:] = _regression_update(x, xi, a[r], w[r], model, exact)
                    if not np.all(np.abs(x) <= DIVERGENCE_LIMIT):
                        _raise_divergence(x, k0 + r - r0)

    def observe(xv):
        d = xv - xi
        return {"mse": _sum(d * d, exact) / n}

    return _drive(n, nsteps, rec, snap, block_rows, draw_block, advance, observe, x, xi, _seed_label(seed))


def _raise_divergence(x, k):
    bad = np.flatnonzero(~(np.abs(x) <= DIVERGENCE_LIMIT))
    i = int(bad[0]) if bad.size else -1
    raise DivergenceError(f"update diverged at step k={k}, coordinate {i}", k=k, index=i)


def _normalize(v):
    return math.sqrt(v.size) * v / math.sqrt(math.fsum((v * v).tolist()))


def run_pca(n: int, T: float, model: PcaModel, x0_spec, xi_spec, seed,
            record_times: Sequence[float], snapshot_times: Sequence[float] = (),
            backend: str = "auto", draw_permutation=None) -> TrajectoryRecord:
    """Iterate ``pca_step``; records overlap_q = <mu, x xi> and reg_r = <mu, x phi(x)>.

    Both xi and x0 are projected onto the sphere of radius sqrt(n) first.
    """
    if n < 1 or not T > 0:
        raise ValueError("need n >= 1 and T > 0")
    backend = _choose_backend(backend, model.phi)
    rng = np.random.default_rng(seed)
    xi = _normalize(make_vector(xi_spec, n, rng))
    x = _normalize(make_vector(x0_spec, n, rng))
    nsteps = _step_index(n, T)
    rec, snap = _schedule(n, nsteps, record_times, snapshot_times)
    exact = backend == "exact"
    perm = None if draw_permutation is None else np.asarray(draw_permutation)
    noise = model.noise_dist

    def draw_block(rows):
        a = _draw(rng, noise, (rows, n))
        if backend != "compiled" and a.dtype != np.float64:
            a = a.astype(np.float64)
        if perm is not None:
            a = a[:, perm]
        c = np.asarray(_draw(rng, model.spike_dist, rows), dtype=float)
        return a, c, rows

    block_rows = _block_rows(n, 1 if noise == "rademacher" and backend == "compiled" else 8)

    if backend == "compiled":
        code, strength, p1, p2 = model.phi.kernel_params()
        kernel = _kernels.pca_kernel(code)

        def advance(block, r0, r1, k0):
            a, c, _ = block
            st = kernel(x, xi, a, c, r0, r1, model.tau, model.omega, model.beta,
                        strength, p1, p2, DIVERGENCE_LIMIT)
            if st == -2:
                raise DegenerateNormalizationError("eta(x~) has zero norm")
            if st >= 0:
                _raise_divergence(x, k0 + st - r0)
    else:
        def advance(block, r0, r1, k0):
            a, c, _ = block
            with np.errstate(all="ignore"):
                for r in range(r0, r1):
                    x[:] = _pca_update(x, xi, a[r], c[r], model, exact)
                    if not np.all(np.abs(x) <= DIVERGENCE_LIMIT):
                        _raise_divergence(x, k0 + r - r0)

    def observe(xv):
        return {
            "overlap_q": _sum(xv * xi, exact) / n,
            "reg_r": _sum(xv * model.phi(xv), exact) / n,
        }

    return _drive(n, nsteps, rec, snap, block_rows, draw_block, advance, observe, x, xi, _seed_label(seed))


# ---------------------------------------------------------------- toy 1-D SGD


@dataclass
class ToySgdResult:
    times: np.ndarray
    edges: np.ndarray
    histograms: np.ndarray  # (len(times), len(edges) - 1) densities
    samples: np.ndarray  # (len(times), trials)


def toy_sgd_1d_run(f_prime: Callable, tau: float, sigma: float, n: int, T: float,
                   x0_sampler: Callable, trials: int, seed, times: Sequence[float],
                   edges: Sequence[float]) -> ToySgdResult:
    """Independent chains x_k = x_{k-1} - (tau/n)[f'(x_{k-1}) + sqrt(n) v_k], v_k ~ N(0, sigma^2).

    ``x0_sampler(rng, size)`` draws initial points.  Histograms are densities
    normalized by the number of trials.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    x = np.asarray(x0_sampler(rng, trials), dtype=float).copy()
    edges = np.asarray(edges, dtype=float)
    steps = sorted(_step_index(n, t) for t in times)
    out_t, hists, samples = [], [], []
    k = 0
    noise_scale = tau * sigma / math.sqrt(n)
    for target in steps:
        while k < target:
            x -= (tau / n) * f_prime(x) + noise_scale * rng.standard_normal(trials)
            k += 1
            bad = np.flatnonzero(~(np.abs(x) <= DIVERGENCE_LIMIT))
            if bad.size:
                raise DivergenceError(f"trial {int(bad[0])} diverged at step {k}", k=k, trial=int(bad[0]))
        counts, _ = np.histogram(x, bins=edges)
        out_t.append(k / n)
        hists.append(counts / (trials * np.diff(edges)))
        samples.append(x.copy())
    return ToySgdResult(np.array(out_t), edges, np.array(hists), np.array(samples))


# ---------------------------------------------------------------- moment probe


@dataclass
class MomentProbe:
    mean_g: np.ndarray
    se_g: np.ndarray
    mean_g2: np.ndarray
    se_g2: np.ndarray
    pairs: np.ndarray
    mean_gg: np.ndarray
    se_gg: np.ndarray


def gki_moment_probe(state: EmpiricalState, model: RegressionModel, samples: int, seed,
                     pairs=None, batch: int = 10_000) -> MomentProbe:
    """Monte Carlo conditional moments of g^i = tau (w - a.(x - xi)/sqrt n) a^i / sqrt n.

    Moments are taken at the frozen state over fresh (a, w); ``pairs`` lists
    the (i, j) index pairs whose cross moment is estimated (default: a chain of
    up to 20 neighbouring pairs).
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    n = state.n
    if pairs is None:
        pairs = [(i, i + 1) for i in range(min(n - 1, 20))]
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    d = state.x - state.xi
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    s4 = np.zeros(n)
    p1 = np.zeros(len(pairs))
    p2 = np.zeros(len(pairs))
    done = 0
    rn = 1.0 / math.sqrt(n)
    while done < samples:
        b = min(batch, samples - done)
        a = np.asarray(_draw(rng, model.sensing_dist, (b, n)), dtype=float)
        w = model.sigma * rng.standard_normal(b)
        g = (model.tau * (w - (a @ d) * rn) * rn)[:, None] * a
        g2 = g * g
        s1 += g.sum(0)
        s2 += g2.sum(0)
        s4 += (g2 * g2).sum(0)
        gg = g[:, pairs[:, 0]] * g[:, pairs[:, 1]]
        p1 += gg.sum(0)
        p2 += (gg * gg).sum(0)
        done += b
    N = float(samples)

    def mean_se(s, ss):
        m = s / N
        var = np.maximum(ss / N - m * m, 0.0) * N / (N - 1)
        return m, np.sqrt(var / N)

    mg, seg = mean_se(s1, s2)
    mg2, seg2 = mean_se(s2, s4)
    mgg, segg = mean_se(p1, p2)
    return MomentProbe(mg, seg, mg2, seg2, pairs, mgg, segg)


def gki_moment_formulas(state: EmpiricalState, model: RegressionModel, pairs):
    """Exact conditional moments of g^i at a frozen state.

    Returns (E g^i, E (g^i)^2, E g^i g^j for ``pairs``).
    """
    n = state.n
    tau, sig2 = model.tau, model.sigma**2
    d = state.x - state.xi
    e = float(np.mean(d * d))
    a4 = 3.0 if model.sensing_dist == "gaussian" else 1.0
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    m1 = -tau * d / n
    m2 = tau**2 * (sig2 + e) / n + tau**2 * (a4 - 1.0) * d * d / n**2
    mij = 2.0 * tau**2 * d[pairs[:, 0]] * d[pairs[:, 1]] / n**2
    return m1, m2, mij
