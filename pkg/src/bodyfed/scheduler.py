"""Round-wise client selection: utility terms, the log-det/covariance objective,
greedy selection with its brute-force oracle, and the covariance trackers."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datasets import ClientPartition
from .learning import ModelParams, cross_entropy
from .rng import substream

TERM_NAMES = ("v", "d_nov", "h", "c", "e", "p")


class SchedulerInvariantError(RuntimeError):
    pass


@dataclass
class SchedulerConfig:
    alpha_v: float = 1.0
    alpha_d: float = 0.5
    alpha_h: float = 1.0
    lambda_c: float = 0.5
    lambda_e: float = 0.5
    lambda_p: float = 0.1
    rho1: float = 0.5
    rho2: float = 0.5
    k: int = 2
    t_max_s: float = 1.0
    eps_max: float = 0.9
    shrinkage: float = 0.05
    sketch_dim: int = 16
    tracker_beta: float = 0.2
    clip_norm: float = 1.0
    probe_size: int = 32

    def __post_init__(self):
        for name in ("alpha_v", "alpha_d", "alpha_h", "lambda_c", "lambda_e", "lambda_p",
                     "rho1", "rho2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if not 0 < self.shrinkage <= 1:
            raise ValueError("shrinkage must lie in (0, 1]")
        if not 0 < self.tracker_beta <= 1:
            raise ValueError("tracker_beta must lie in (0, 1]")


@dataclass
class UtilityTerms:
    v: np.ndarray
    d_nov: np.ndarray
    h: np.ndarray
    c: np.ndarray
    e: np.ndarray
    p: np.ndarray
    divisors: dict = field(default_factory=dict)

    def net(self, cfg: SchedulerConfig) -> np.ndarray:
        return (cfg.alpha_v * self.v + cfg.alpha_d * self.d_nov + cfg.alpha_h * self.h
                - cfg.lambda_c * self.c - cfg.lambda_e * self.e - cfg.lambda_p * self.p)

    @classmethod
    def normalized(cls, **raw) -> "UtilityTerms":
        """Max-normalize each raw term to [0, 1]; the divisor is 1 when the max is 0."""
        vals, divs = {}, {}
        for name in TERM_NAMES:
            x = np.asarray(raw[name], dtype=float)
            if np.any(x < 0) or not np.all(np.isfinite(x)):
                raise ValueError(f"utility term {name} must be finite and nonnegative")
            m = float(x.max()) if x.size else 0.0
            divs[name] = m if m > 0 else 1.0
            vals[name] = x / divs[name]
        return cls(**vals, divisors=divs)


@dataclass
class ClientState:
    """Scheduler-side view of one client."""

    partition: ClientPartition
    probe_idx: np.ndarray
    rounds_since_selected: int = 0
    hist_at_last_success: np.ndarray | None = None
    last_update_norm: float | None = None

    @classmethod
    def create(cls, partition: ClientPartition, probe_size: int, seed: int) -> "ClientState":
        rng = substream(seed, "scheduler.probe", partition.client_id)
        m = min(probe_size, partition.n)
        return cls(partition, np.sort(rng.choice(partition.n, size=m, replace=False)))


def total_variation(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(a) - np.asarray(b)).sum())


def estimate_utilities(clients: Sequence[ClientState], snapshots, params: ModelParams,
                       payload_bits: int, expected_energy, budgets,
                       clip_norm: float = 1.0) -> UtilityTerms:
    """Raw per-client terms, then per-round max-normalization.

    v: global-model cross-entropy on the client's probe windows. d_nov: total
    variation between the current label histogram and the one at the last
    successful participation (1 if none). h: rounds since last selection.
    c: expected airtime payload * rho / rate. e: expected round energy as a
    fraction of the remaining budget (1 when the budget is exhausted).
    p: clipped norm of the last delivered update (0 if none).
    """
    n = len(clients)
    raw = {name: np.zeros(n) for name in TERM_NAMES}
    for i, (cl, snap) in enumerate(zip(clients, snapshots)):
        part = cl.partition
        raw["v"][i] = cross_entropy(params, part.X_train[cl.probe_idx], part.y_train[cl.probe_idx])
        hist = part.label_histogram()
        raw["d_nov"][i] = 1.0 if cl.hist_at_last_success is None \
            else total_variation(hist, cl.hist_at_last_success)
        raw["h"][i] = cl.rounds_since_selected
        raw["c"][i] = payload_bits * snap.rho / snap.rate_bits_per_s
        raw["e"][i] = expected_energy[i] / budgets[i] if budgets[i] > 0 else 1.0
        raw["p"][i] = 0.0 if cl.last_update_norm is None else min(cl.last_update_norm, clip_norm)
    return UtilityTerms.normalized(**raw)


@dataclass
class CovarianceTrackers:
    """Update-similarity and link-failure matrices, both N x N.

    Update similarity is the cosine Gram matrix of per-client EMA directions
    of sketched, unit-normalized updates (so it is PSD by construction, unit
    diagonal). Failure covariance is an EMA of centered outer products of the
    per-round failure indicators. Both are shrunk toward I when read.
    """

    directions: np.ndarray  # (N, sketch_dim)
    sigma_c_raw: np.ndarray
    fail_mean: np.ndarray | None
    sketch: np.ndarray  # (d, sketch_dim)
    beta: float
    gamma: float

    @classmethod
    def create(cls, n_clients: int, dim: int, sketch_dim: int, beta: float, gamma: float,
               seed: int) -> "CovarianceTrackers":
        rng = substream(seed, "scheduler.sketch")
        sketch = rng.standard_normal((dim, sketch_dim)) / np.sqrt(sketch_dim)
        return cls(np.zeros((n_clients, sketch_dim)), np.zeros((n_clients, n_clients)), None,
                   sketch, beta, gamma)

    @property
    def n_clients(self) -> int:
        return self.directions.shape[0]

    def sigma_delta_raw(self) -> np.ndarray:
        norms = np.linalg.norm(self.directions, axis=1)
        live = norms > 0
        unit = np.zeros_like(self.directions)
        unit[live] = self.directions[live] / norms[live, None]
        g = unit @ unit.T
        np.fill_diagonal(g, 1.0)
        return 0.5 * (g + g.T)

    def _shrink(self, m: np.ndarray) -> np.ndarray:
        return (1.0 - self.gamma) * m + self.gamma * np.eye(len(m))

    def sigma_delta(self) -> np.ndarray:
        return self._shrink(self.sigma_delta_raw())

    def sigma_c(self) -> np.ndarray:
        return self._shrink(self.sigma_c_raw)


def update_trackers(trackers: CovarianceTrackers, delivered_updates: dict[int, np.ndarray],
                    failure_indicators) -> CovarianceTrackers:
    """Fold this round's delivered updates and failure indicators into the trackers."""
    b = trackers.beta
    directions = trackers.directions.copy()
    for i, delta in delivered_updates.items():
        y = np.asarray(delta, dtype=float) @ trackers.sketch
        norm = np.linalg.norm(y)
        if norm == 0.0:
            continue
        directions[i] = (1.0 - b) * directions[i] + b * (y / norm)
    x = np.asarray(failure_indicators, dtype=float)
    if trackers.fail_mean is None:
        sigma_c, mean = trackers.sigma_c_raw.copy(), x.copy()
    else:
        centered = x - trackers.fail_mean
        sigma_c = (1.0 - b) * trackers.sigma_c_raw + b * np.outer(centered, centered)
        sigma_c = 0.5 * (sigma_c + sigma_c.T)
        mean = (1.0 - b) * trackers.fail_mean + b * x
    return CovarianceTrackers(directions, sigma_c, mean, trackers.sketch, trackers.beta,
                              trackers.gamma)


@dataclass
class SelectionProblem:
    """Everything the round objective needs, with matrices already shrunk."""

    net: np.ndarray
    sigma_delta: np.ndarray
    sigma_c: np.ndarray
    rho1: float
    rho2: float
    k: int

    @classmethod
    def build(cls, terms: UtilityTerms, cfg: SchedulerConfig,
              trackers: CovarianceTrackers) -> "SelectionProblem":
        return cls(terms.net(cfg), trackers.sigma_delta(), trackers.sigma_c(),
                   cfg.rho1, cfg.rho2, cfg.k)

    @property
    def n(self) -> int:
        return self.net.size

    def logdet(self, S) -> float:
        idx = list(S)
        if not idx:
            return 0.0
        eig = np.linalg.eigvalsh(self.sigma_delta[np.ix_(idx, idx)])
        if eig[0] < -1e-8:
            raise SchedulerInvariantError(
                f"update-similarity submatrix for {sorted(idx)} is not PSD (min eig {eig[0]:.3e})")
        return float(np.sum(np.log1p(np.maximum(eig, 0.0))))

    def penalty(self, S) -> float:
        idx = list(S)
        if not idx:
            return 0.0
        return float(self.sigma_c[np.ix_(idx, idx)].sum())

    def objective(self, S) -> float:
        idx = list(S)
        if not idx:
            return 0.0
        value = float(self.net[idx].sum())
        if self.rho1:
            value += self.rho1 * self.logdet(idx)
        if self.rho2:
            value -= self.rho2 * self.penalty(idx)
        return value


def selection_objective(S, terms: UtilityTerms, cfg: SchedulerConfig,
                        trackers: CovarianceTrackers) -> float:
    return SelectionProblem.build(terms, cfg, trackers).objective(S)


@dataclass
class GreedyStep:
    chosen: int
    gain: float
    # candidate -> (marginal objective gain, marginal log-det gain)
    candidates: dict[int, tuple[float, float]]


@dataclass
class GreedyResult:
    selected: list[int]
    objective: float
    steps: list[GreedyStep]

    @property
    def gains(self) -> list[float]:
        return [s.gain for s in self.steps]


def greedy_select(problem: SelectionProblem, feasible) -> GreedyResult:
    """Add the feasible client with the largest marginal gain until K clients,
    no feasible client, or no positive gain remains. Ties go to the lowest id."""
    feasible = np.asarray(feasible, dtype=bool)
    S: list[int] = []
    current = 0.0
    current_ld = 0.0
    steps = []
    while len(S) < problem.k:
        cands = [i for i in range(problem.n) if feasible[i] and i not in S]
        if not cands:
            break
        evals = {}
        best, best_gain = None, -np.inf
        for i in cands:
            value = problem.objective(S + [i])
            ld = problem.logdet(S + [i]) - current_ld if problem.rho1 else 0.0
            gain = value - current
            evals[i] = (gain, ld)
            if gain > best_gain:
                best, best_gain = i, gain
        if best_gain <= 0:
            break
        S.append(best)
        current = problem.objective(S)
        current_ld = problem.logdet(S) if problem.rho1 else 0.0
        steps.append(GreedyStep(best, best_gain, evals))
    return GreedyResult(S, current, steps)


def brute_force_select(problem: SelectionProblem, feasible) -> tuple[tuple[int, ...], float]:
    """Exhaustive optimum over feasible subsets of size <= K (ties: lexicographically smallest)."""
    if problem.n > 16:
        raise ValueError(f"brute force is limited to 16 clients, got {problem.n}")
    pool = [i for i in range(problem.n) if feasible[i]]
    best, best_val = (), 0.0
    for size in range(1, min(problem.k, len(pool)) + 1):
        for S in itertools.combinations(pool, size):
            val = problem.objective(S)
            if val > best_val or (val == best_val and S < best):
                best, best_val = S, val
    return best, best_val


def logdet_gains_diminish(result: GreedyResult, tol: float = 1e-9) -> bool:
    """Each candidate's log-det marginal gain never grows as the greedy set grows."""
    last: dict[int, float] = {}
    for step in result.steps:
        for i, (_, ld) in step.candidates.items():
            if i in last and ld > last[i] + tol:
                return False
            last[i] = ld
    return True


def chosen_gains_nonincreasing(result: GreedyResult, tol: float = 1e-9) -> bool:
    g = result.gains
    return all(b <= a + tol for a, b in zip(g, g[1:]))
