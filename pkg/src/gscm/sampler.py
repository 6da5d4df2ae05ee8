"""No-U-Turn sampler with windowed adaptation, plus multi-chain orchestration.

The transition is the multinomial NUTS variant: trajectories grow by
doubling in a random direction, a state is drawn from each new subtree in
proportion to its weight ``exp(-H)``, and subtrees are merged with biased
progressive sampling at the top level. Building stops at a U-turn, checked
with the sharp-momentum criterion across the whole tree and across each pair
of merged subtrees, at a divergence (energy error above 1000), or at
``max_tree_depth``.

Warmup follows the usual three phases: a fast initial buffer, a sequence of
doubling slow windows that re-estimate a diagonal inverse metric from the
sample variance, and a fast terminal buffer. The step size is tuned
throughout by dual averaging and is re-initialised after every metric update.

The target is any callable ``theta -> (log_density, gradient)``. It must be
picklable if chains run in worker processes.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InitializationFailure

__all__ = [
    "SamplerConfig",
    "PosteriorDraws",
    "ChainResult",
    "run_nuts",
    "run_chain",
    "default_n_jobs",
    "NUM_THREADS_ENV",
]

NUM_THREADS_ENV = "GSCM_NUM_THREADS"
MAX_DELTA_H = 1000.0


def default_n_jobs() -> int:
    """Worker count from ``GSCM_NUM_THREADS`` (default 1)."""
    raw = os.environ.get(NUM_THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{NUM_THREADS_ENV} must be an integer, got {raw!r}") from None


@dataclass
class SamplerConfig:
    n_chains: int = 4
    n_warmup: int = 4000
    n_sampling: int = 6000
    thin: int = 3
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_radius: float = 0.5
    max_init_tries: int = 100
    n_jobs: int | None = None

    def __post_init__(self):
        if self.n_chains < 1 or self.n_sampling < 1 or self.n_warmup < 0 or self.thin < 1:
            raise ConfigError("n_chains, n_sampling and thin must be >= 1 and n_warmup >= 0")
        if not 0 < self.target_accept < 1:
            raise ConfigError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ConfigError("max_tree_depth must be >= 1")

    @property
    def n_retained(self) -> int:
        """Retained draws per chain."""
        return self.n_sampling // self.thin


@dataclass
class ChainResult:
    samples: np.ndarray          # retained unconstrained draws, (n_retained, dim)
    log_density: np.ndarray
    divergent: np.ndarray        # per retained draw
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    accept_stat: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    n_divergent: int             # over all post-warmup iterations
    n_divergent_warmup: int
    init: np.ndarray


@dataclass
class PosteriorDraws:
    """Retained draws from all chains, stacked chain by chain.

    ``params`` maps parameter names to ``(n_draws, ...)`` arrays; ``chain``
    labels the chain of every row. ``log_lik`` is the pointwise
    log-likelihood (``n_draws x n_obs``) when the target provides one.
    """

    params: dict[str, np.ndarray]
    chain: np.ndarray
    unconstrained: np.ndarray
    log_lik: np.ndarray | None = None
    stats: dict[str, np.ndarray] = field(default_factory=dict)
    step_size: np.ndarray | None = None
    inv_metric: np.ndarray | None = None
    n_divergent: np.ndarray | None = None
    seeds: list[int] | None = None

    @property
    def n_chains(self) -> int:
        return int(self.chain.max()) + 1

    @property
    def n_draws(self) -> int:
        return int(self.chain.shape[0])

    def by_chain(self, name: str) -> np.ndarray:
        """Draws of one parameter reshaped to ``(chains, draws, ...)``."""
        x = self.params[name] if name in self.params else getattr(self, name)
        return x.reshape(self.n_chains, -1, *x.shape[1:])


# ---------------------------------------------------------------------------
# transition kernel


@dataclass
class _Point:
    q: np.ndarray
    p: np.ndarray
    grad: np.ndarray
    lp: float


@dataclass
class _Tree:
    minus: _Point           # earliest state in integration time
    plus: _Point            # latest state
    rho: np.ndarray         # summed momenta
    log_w: float
    sample: _Point
    n_leapfrog: int
    sum_accept: float
    divergent: bool = False
    valid: bool = True


class _Kernel:
    def __init__(self, target, inv_metric, step_size, max_depth, rng):
        self.target = target
        self.inv_metric = inv_metric
        self.step_size = step_size
        self.max_depth = max_depth
        self.rng = rng

    def _kinetic(self, p):
        return 0.5 * float(p @ (self.inv_metric * p))

    def _leapfrog(self, pt: _Point, eps: float) -> _Point:
        p = pt.p + 0.5 * eps * pt.grad
        q = pt.q + eps * self.inv_metric * p
        lp, g = self.target(q)
        p = p + 0.5 * eps * g
        return _Point(q, p, g, lp)

    def _criterion(self, p_sharp_minus, p_sharp_plus, rho) -> bool:
        return float(p_sharp_plus @ rho) > 0 and float(p_sharp_minus @ rho) > 0

    def _no_uturn(self, left: _Tree, right: _Tree, rho) -> bool:
        """U-turn checks for two adjacent subtrees given in time order."""
        im = self.inv_metric
        ok = self._criterion(im * left.minus.p, im * right.plus.p, rho)
        ok = ok and self._criterion(im * left.minus.p, im * right.minus.p, left.rho + right.minus.p)
        ok = ok and self._criterion(im * left.plus.p, im * right.plus.p, right.rho + left.plus.p)
        return ok

    def _build(self, start: _Point, direction: int, depth: int, H0: float) -> _Tree:
        if depth == 0:
            new = self._leapfrog(start, direction * self.step_size)
            H = -new.lp + self._kinetic(new.p)
            if not np.isfinite(H):
                H = np.inf
            delta = H - H0
            divergent = bool(delta > MAX_DELTA_H)
            accept = math.exp(min(0.0, -delta)) if np.isfinite(delta) else 0.0
            return _Tree(new, new, new.p.copy(), -delta, new, 1, accept, divergent, not divergent)
        first = self._build(start, direction, depth - 1, H0)
        if not first.valid:
            return first
        edge = first.plus if direction > 0 else first.minus
        second = self._build(edge, direction, depth - 1, H0)
        n = first.n_leapfrog + second.n_leapfrog
        acc = first.sum_accept + second.sum_accept
        if not second.valid:
            second.n_leapfrog, second.sum_accept = n, acc
            return second
        log_w = np.logaddexp(first.log_w, second.log_w)
        sample = second.sample if math.log(self.rng.uniform()) < second.log_w - log_w else first.sample
        left, right = (first, second) if direction > 0 else (second, first)
        rho = left.rho + right.rho
        valid = self._no_uturn(left, right, rho)
        return _Tree(left.minus, right.plus, rho, log_w, sample, n, acc, False, valid)

    def transition(self, q, lp, grad):
        p = self.rng.standard_normal(q.shape[0]) / np.sqrt(self.inv_metric)
        start = _Point(q, p, grad, lp)
        H0 = -lp + self._kinetic(p)
        tree = _Tree(start, start, p.copy(), 0.0, start, 0, 0.0)
        depth = 0
        divergent = False
        while depth < self.max_depth:
            direction = 1 if self.rng.uniform() > 0.5 else -1
            edge = tree.plus if direction > 0 else tree.minus
            sub = self._build(edge, direction, depth, H0)
            tree.n_leapfrog += sub.n_leapfrog
            tree.sum_accept += sub.sum_accept
            depth += 1
            if not sub.valid:
                divergent = sub.divergent
                break
            if math.log(self.rng.uniform()) < sub.log_w - tree.log_w:
                tree.sample = sub.sample
            tree.log_w = np.logaddexp(tree.log_w, sub.log_w)
            left, right = (tree, sub) if direction > 0 else (sub, tree)
            rho = left.rho + right.rho
            keep_going = self._no_uturn(left, right, rho)
            tree = _Tree(left.minus, right.plus, rho, tree.log_w, tree.sample, tree.n_leapfrog,
                         tree.sum_accept)
            if not keep_going:
                break
        s = tree.sample
        accept = tree.sum_accept / max(tree.n_leapfrog, 1)
        return s.q, s.lp, s.grad, depth, tree.n_leapfrog, accept, divergent


# ---------------------------------------------------------------------------
# adaptation


class _DualAveraging:
    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.counter = 0

    def update(self, accept_stat) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = x_eta * x + (1.0 - x_eta) * self.x_bar
        return math.exp(x)

    @property
    def final_step_size(self) -> float:
        return math.exp(self.x_bar)


def _warmup_windows(n_warmup: int, init_buffer=75, term_buffer=50, base_window=25) -> tuple[int, list[int]]:
    """Start of the first slow window and the (exclusive) end of every window."""
    if n_warmup < 20:
        return n_warmup, []
    if init_buffer + base_window + term_buffer > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - (init_buffer + term_buffer)
    ends = []
    window = base_window
    start = init_buffer
    last = n_warmup - term_buffer
    while start < last:
        end = start + window
        if end + 2 * window > last:
            end = last
        ends.append(end)
        start = end
        window *= 2
    return init_buffer, ends


def _find_step_size(target, q, lp, grad, inv_metric, rng, step_size=1.0) -> float:
    """Double or halve the step size until one-step acceptance crosses 0.8."""
    def log_accept(eps):
        p = rng.standard_normal(q.shape[0]) / np.sqrt(inv_metric)
        H0 = -lp + 0.5 * float(p @ (inv_metric * p))
        p1 = p + 0.5 * eps * grad
        q1 = q + eps * inv_metric * p1
        lp1, g1 = target(q1)
        p1 = p1 + 0.5 * eps * g1
        H1 = -lp1 + 0.5 * float(p1 @ (inv_metric * p1))
        return H0 - H1 if np.isfinite(H1) else -np.inf

    direction = 1 if log_accept(step_size) > math.log(0.8) else -1
    for _ in range(100):
        step_size = step_size * (2.0 ** direction)
        la = log_accept(step_size)
        if direction == 1 and not la > math.log(0.8):
            break
        if direction == -1 and la > math.log(0.8):
            break
    return float(min(max(step_size, 1e-10), 1e7))


# ---------------------------------------------------------------------------
# chains


def _initial_point(target, init, dim, rng, radius, max_tries):
    if init is not None and not callable(init):
        q = np.asarray(init, dtype=float).copy()
        lp, g = target(q)
        if not np.isfinite(lp):
            raise InitializationFailure("supplied initial point has non-finite density")
        return q, lp, g
    for _ in range(max_tries):
        q = init(rng) if callable(init) else rng.uniform(-radius, radius, size=dim)
        q = np.asarray(q, dtype=float)
        lp, g = target(q)
        if np.isfinite(lp) and np.all(np.isfinite(g)):
            return q, lp, g
    raise InitializationFailure(f"no finite initial point after {max_tries} attempts")


def run_chain(target, dim: int, config: SamplerConfig, seed, init=None) -> ChainResult:
    """Warm up and sample one chain; fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    q, lp, grad = _initial_point(target, init, dim, rng, config.init_radius, config.max_init_tries)
    q0 = q.copy()
    inv_metric = np.ones(dim)
    step = _find_step_size(target, q, lp, grad, inv_metric, rng)
    kernel = _Kernel(target, inv_metric, step, config.max_tree_depth, rng)
    da = _DualAveraging(step, config.target_accept)
    window_start, windows = _warmup_windows(config.n_warmup)
    acc_n, acc_mean, acc_m2 = 0, np.zeros(dim), np.zeros(dim)
    n_div_warm = 0
    for it in range(config.n_warmup):
        q, lp, grad, _, _, accept, div = kernel.transition(q, lp, grad)
        n_div_warm += div
        kernel.step_size = da.update(accept)
        if windows and window_start <= it < windows[-1]:
            acc_n += 1
            d = q - acc_mean
            acc_mean += d / acc_n
            acc_m2 += d * (q - acc_mean)
        if windows and it + 1 == windows[0]:
            windows.pop(0)
            var = acc_m2 / max(acc_n - 1, 1)
            var = (acc_n / (acc_n + 5.0)) * var + 1e-3 * (5.0 / (acc_n + 5.0))
            kernel.inv_metric = var
            acc_n, acc_mean, acc_m2 = 0, np.zeros(dim), np.zeros(dim)
            step = _find_step_size(target, q, lp, grad, kernel.inv_metric, rng, kernel.step_size)
            kernel.step_size = step
            da.restart(step)
    if config.n_warmup > 0:
        kernel.step_size = da.final_step_size

    n_keep = config.n_retained
    samples = np.empty((n_keep, dim))
    log_density = np.empty(n_keep)
    divergent = np.zeros(n_keep, dtype=bool)
    depth = np.zeros(n_keep, dtype=int)
    n_leap = np.zeros(n_keep, dtype=int)
    accept_stat = np.zeros(n_keep)
    n_div = 0
    j = 0
    for it in range(config.n_sampling):
        q, lp, grad, d, nl, accept, div = kernel.transition(q, lp, grad)
        n_div += div
        if (it + 1) % config.thin == 0 and j < n_keep:
            samples[j], log_density[j] = q, lp
            divergent[j], depth[j], n_leap[j], accept_stat[j] = div, d, nl, accept
            j += 1
    return ChainResult(samples, log_density, divergent, depth, n_leap, accept_stat, kernel.step_size,
                       kernel.inv_metric.copy(), n_div, n_div_warm, q0)


def _chain_job(args):
    target, dim, config, seed, init = args
    return run_chain(target, dim, config, seed, init)


def run_nuts(target, init, config: SamplerConfig, dim: int | None = None, extract=None) -> PosteriorDraws:
    """Run ``config.n_chains`` independent chains and pool their draws.

    Parameters
    ----------
    target : callable
        ``theta -> (log_density, gradient)``.
    init : None, array, list of arrays, or callable
        ``None`` jitters uniformly in ``[-init_radius, init_radius]``; an
        array is used for every chain; a list gives one start per chain; a
        callable receives the chain's generator and returns a start.
    dim : int, optional
        Dimension; required when ``init`` is None or callable and the target
        has no ``dim`` attribute.
    extract : callable, optional
        ``theta -> dict`` of named constrained quantities per draw. The key
        ``"log_lik"`` (if present) is stored as the pointwise log-likelihood.
    """
    if dim is None:
        dim = getattr(target, "dim", None)
        if dim is None and init is not None and not callable(init):
            dim = np.asarray(init[0] if isinstance(init, list) else init).shape[-1]
    if dim is None:
        raise ConfigError("cannot infer the target dimension; pass dim=")
    children = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    inits = init if isinstance(init, list) else [init] * config.n_chains
    if len(inits) != config.n_chains:
        raise ConfigError(f"got {len(inits)} initial points for {config.n_chains} chains")
    jobs = [(target, dim, config, children[c], inits[c]) for c in range(config.n_chains)]
    n_jobs = config.n_jobs or default_n_jobs()
    if n_jobs > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, config.n_chains)) as ex:
            results = list(ex.map(_chain_job, jobs))
    else:
        results = [_chain_job(j) for j in jobs]
    return _collect(results, extract, [int(c.generate_state(1)[0]) for c in children])


def _collect(results: list[ChainResult], extract, seeds) -> PosteriorDraws:
    theta = np.concatenate([r.samples for r in results])
    chain = np.concatenate([np.full(r.samples.shape[0], c) for c, r in enumerate(results)])
    if not np.all(np.isfinite(theta)):
        raise FloatingPointError("non-finite values in retained draws")
    params: dict[str, np.ndarray] = {}
    log_lik = None
    if extract is not None and theta.shape[0]:
        rows = [extract(t) for t in theta]
        for key in rows[0]:
            stacked = np.stack([np.asarray(r[key], dtype=float) for r in rows])
            if key == "log_lik":
                log_lik = stacked.reshape(stacked.shape[0], -1)
            else:
                params[key] = stacked
    else:
        params["theta"] = theta
    stats = {
        "divergent": np.concatenate([r.divergent for r in results]),
        "tree_depth": np.concatenate([r.tree_depth for r in results]),
        "n_leapfrog": np.concatenate([r.n_leapfrog for r in results]),
        "accept_stat": np.concatenate([r.accept_stat for r in results]),
        "log_density": np.concatenate([r.log_density for r in results]),
    }
    return PosteriorDraws(
        params=params,
        chain=chain,
        unconstrained=theta,
        log_lik=log_lik,
        stats=stats,
        step_size=np.array([r.step_size for r in results]),
        inv_metric=np.stack([r.inv_metric for r in results]),
        n_divergent=np.array([r.n_divergent for r in results]),
        seeds=seeds,
    )
