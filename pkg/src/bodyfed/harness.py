"""Round loop, scheduling baselines, metrics and multi-seed experiments."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import BUILD_ID
from .aggregation import (PropensityTracker, apply_aggregate, bias_corrected_weights,
                          fedavg_weights, update_propensity)
from .channel import ChannelModel, default_channel_model, realize_link, step_posture, transmit_update
from .config import ConfigError, ScenarioConfig
from .datasets import ClientPartition, generate_synthetic, load_csv_clients, pooled
from .energy import (BreakEvenSpec, breakeven_rows, EnergyLedger, FeasibilityCaps, check_feasibility,
                     crossing_horizon, crossing_summary, estimate_cost, fl_energy,
                     stream_energy, write_breakeven_csv)
from .learning import (ModelParams, compress, decompress, evaluate, gradient, local_train,
                       planned_payload_bits, top_k_count, train_energy)
from .rng import substream
from .scheduler import (ClientState, CovarianceTrackers, GreedyResult, SelectionProblem,
                        UtilityTerms, estimate_utilities, greedy_select, update_trackers)

NOT_REACHED = "not reached"


# ----------------------------------------------------------------- policies

@dataclass
class PolicyContext:
    feasible: np.ndarray
    per: np.ndarray
    budgets: np.ndarray
    terms: UtilityTerms
    problem: SelectionProblem
    k: int
    alpha_v: float
    alpha_d: float
    rng: np.random.Generator
    cursor: list  # one-element box, persists across rounds


def _top_k_by(ctx: PolicyContext, key) -> list[int]:
    ids = [i for i in np.flatnonzero(ctx.feasible)]
    ids.sort(key=lambda i: (key(i), i))
    return [int(i) for i in ids[:ctx.k]]


def policy_random_k(ctx):
    ids = np.flatnonzero(ctx.feasible)
    m = min(ctx.k, ids.size)
    return [int(i) for i in ctx.rng.choice(ids, size=m, replace=False)] if m else []


def policy_round_robin(ctx):
    n = ctx.feasible.size
    out = []
    start = ctx.cursor[0]
    for step in range(n):
        i = (start + step) % n
        if len(out) == ctx.k:
            break
        if ctx.feasible[i]:
            out.append(i)
            ctx.cursor[0] = (i + 1) % n
    return out


def policy_channel_only(ctx):
    return _top_k_by(ctx, lambda i: ctx.per[i])


def policy_energy_only(ctx):
    return _top_k_by(ctx, lambda i: -ctx.budgets[i])


def policy_data_only(ctx):
    score = ctx.alpha_v * ctx.terms.v + ctx.alpha_d * ctx.terms.d_nov
    return _top_k_by(ctx, lambda i: -score[i])


def policy_bodyfed(ctx):
    return greedy_select(ctx.problem, ctx.feasible)


def policy_full(ctx):
    return [int(i) for i in np.flatnonzero(ctx.feasible)]


def policy_none(ctx):
    return []


POLICIES: dict[str, Callable] = {
    "random_k": policy_random_k,
    "round_robin": policy_round_robin,
    "channel_only": policy_channel_only,
    "energy_only": policy_energy_only,
    "data_only": policy_data_only,
    "bodyfed": policy_bodyfed,
    "full": policy_full,
    "none": policy_none,
}


def run_policy(name: str, ctx: PolicyContext):
    """Selected ids (in selection order) and the greedy trace when there is one."""
    try:
        fn = POLICIES[name]
    except KeyError:
        raise ConfigError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    out = fn(ctx)
    if isinstance(out, GreedyResult):
        return list(out.selected), out
    return list(out), None


# ------------------------------------------------------------------ metrics

@dataclass
class RoundPlan:
    """What the scheduler saw and decided in one federated round."""

    round: int
    snapshots: list
    costs: list
    budgets_before: np.ndarray
    memory_caps: np.ndarray
    feasible: np.ndarray
    selected: list[int]
    weights: dict[int, float]
    trace: GreedyResult | None


@dataclass
class MetricsRecord:
    round: int
    policy: str
    selected: list[int]
    delivered: list[int]
    macro_f1: float
    worst_location_f1: float
    success_rate: float
    round_energy_j: np.ndarray  # per client
    cum_energy_j: float
    disparity: float
    pi: np.ndarray
    h: np.ndarray
    worst_client_f1: float | None = None

    def csv_row(self) -> list[str]:
        return ([str(self.round), self.policy, ";".join(map(str, self.selected)),
                 ";".join(map(str, self.delivered)), repr(self.macro_f1),
                 repr(self.worst_location_f1), repr(self.success_rate),
                 repr(float(self.round_energy_j.sum())), repr(self.cum_energy_j),
                 repr(self.disparity)]
                + [repr(float(x)) for x in self.pi] + [str(int(x)) for x in self.h])


def metrics_header(n_clients: int) -> list[str]:
    return (["round", "policy", "selected", "delivered", "macro_f1", "worst_location_f1",
             "success_rate", "round_energy_j", "cum_energy_j", "disparity"]
            + [f"pi_{i}" for i in range(n_clients)] + [f"h_{i}" for i in range(n_clients)])


DECISION_HEADER = ["round", "posture", "feasible", "reasons", "per", "selected_order", "gains"]


def selection_disparity(counts: np.ndarray) -> float:
    """max - min share of selection counts (0 before anyone is selected)."""
    total = counts.sum()
    if total == 0:
        return 0.0
    share = counts / total
    return float(share.max() - share.min())


# --------------------------------------------------------------- simulation

def build_clients(cfg: ScenarioConfig, seed: int) -> list[ClientPartition]:
    d = cfg.data
    if d.source == "synthetic":
        return generate_synthetic(d.synthetic, seed)
    if d.source == "csv":
        if not d.csv_path or not Path(d.csv_path).exists():
            raise ConfigError(f"data.csv_path does not exist: {d.csv_path!r}")
        return load_csv_clients(d.csv_path, d.window_s, d.overlap_fraction, d.sampling_rate_hz,
                                d.test_subjects, d.num_classes)
    raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {d.source!r}")


def build_channel(cfg: ScenarioConfig, locations) -> ChannelModel:
    c = cfg.channel
    if c.model_path:
        if not Path(c.model_path).exists():
            raise ConfigError(f"channel.model_path does not exist: {c.model_path!r}")
        return ChannelModel.load(c.model_path)
    return default_channel_model(locations, c.location_loss_db, c.sigma_db, stay=c.posture_stay,
                                 budget=c.budget)


def _per_client(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(f"{name} needs a scalar or {n} values")
    return arr.copy()


class Simulation:
    """One scenario under one seed. ``run_round`` advances it by one round."""

    def __init__(self, cfg: ScenarioConfig, seed: int | None = None):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else int(seed)
        if cfg.mode == "federated" and cfg.policy not in POLICIES:
            raise ConfigError(f"unknown policy {cfg.policy!r}; choose from {sorted(POLICIES)}")
        self.clients = build_clients(cfg, self.seed)
        self.n = len(self.clients)
        d_x = {c.d_x for c in self.clients}
        if len(d_x) != 1:
            raise ConfigError("all clients need the same feature dimension")
        self.num_classes = self.clients[0].num_classes
        self.params = ModelParams.zeros(d_x.pop(), self.num_classes)
        self.channel = build_channel(cfg, [c.location for c in self.clients])
        for c in self.clients:
            for label in self.channel.postures.labels:
                self.channel.loss_model.get(c.location, label)
        self.posture = self.channel.postures.states[0]
        s = cfg.scheduler
        self.states = [ClientState.create(c, s.probe_size, self.seed) for c in self.clients]
        self.ledger = EnergyLedger(_per_client(cfg.energy.budget_j, self.n, "energy.budget_j"),
                                   _per_client(cfg.energy.memory_cap_bits, self.n,
                                               "energy.memory_cap_bits"))
        self.propensity = PropensityTracker.initial(self.n, s.k, cfg.aggregation.beta,
                                                    cfg.aggregation.floor)
        self.trackers = CovarianceTrackers.create(self.n, self.params.d, s.sketch_dim,
                                                  s.tracker_beta, s.shrinkage, self.seed)
        self.caps = FeasibilityCaps(s.eps_max, s.t_max_s, cfg.energy.t_train_fixed_s)
        lc = cfg.learning
        self.payload_bits = planned_payload_bits(lc.scheme, self.params.d, lc.q, lc.k_fraction)
        self.cursor = [0]
        self.selection_counts = np.zeros(self.n)
        self.round = 0
        self.records: list[MetricsRecord] = []
        self.last_plan: RoundPlan | None = None
        self.decisions: list[list[str]] = []
        # measured link statistics for the break-even comparison
        self.packets_total = 0
        self.packets_sent = 0
        self.updates_sent = 0
        self.train_energy_sum = 0.0
        self.local_models = [self.params.with_weights(self.params.w.copy()) for _ in self.clients]
        self.X_held, self.y_held = pooled(self.clients, "heldout")

    # -- helpers
    def _aggregation_method(self) -> str:
        m = self.cfg.aggregation.method
        if m == "auto":
            return "bias_corrected" if self.cfg.policy == "bodyfed" else "fedavg"
        if m not in ("fedavg", "bias_corrected"):
            raise ConfigError(f"unknown aggregation method {m!r}")
        return m

    def _compress(self, raw):
        lc = self.cfg.learning
        if lc.scheme == "top_k":
            return compress(raw, "top_k", k=top_k_count(raw.dim, lc.k_fraction))
        return compress(raw, lc.scheme, q=lc.q)

    def _evaluate(self, params: ModelParams) -> tuple[float, float]:
        global_f1 = evaluate(params, self.X_held, self.y_held).macro_f1
        worst = min(evaluate(params, c.X_heldout, c.y_heldout).macro_f1 for c in self.clients
                    if len(c.y_heldout))
        return global_f1, worst

    def _e_train(self, client: ClientPartition) -> float:
        lc = self.cfg.learning
        return train_energy(lc.kappa_train_j, client.n, lc.epochs, self.params.d)

    # -- one round
    def run_round(self) -> MetricsRecord:
        try:
            if self.cfg.mode == "centralized":
                rec = self._round_centralized()
            elif self.cfg.mode == "local_only":
                rec = self._round_local_only()
            else:
                rec = self._round_federated()
        except ConfigError:
            raise
        except Exception as exc:
            raise RuntimeError(f"round {self.round}: {exc}") from exc
        self.records.append(rec)
        return rec

    def _round_federated(self) -> MetricsRecord:
        cfg, s, lc = self.cfg, self.cfg.scheduler, self.cfg.learning
        self.round += 1
        t = self.round
        budget = self.channel.budget

        self.posture = step_posture(self.posture, self.channel.postures,
                                    substream(self.seed, "posture", t))
        snaps = [realize_link(i, c.location, self.channel.loss_model, self.posture, budget,
                              substream(self.seed, "link", t, i), lossless=cfg.channel.lossless)
                 for i, c in enumerate(self.clients)]
        costs = [estimate_cost(snaps[i], self.payload_bits, self.params.d,
                               self._e_train(c), budget, self.caps)
                 for i, c in enumerate(self.clients)]
        terms = estimate_utilities(self.states, snaps, self.params, self.payload_bits,
                                   [c.expected for c in costs], self.ledger.budget_j, s.clip_norm)
        checks = [check_feasibility(snaps[i], costs[i], self.ledger.budget_j[i],
                                    self.ledger.memory_cap_bits[i], self.caps)
                  for i in range(self.n)]
        feasible = np.array([ok for ok, _ in checks])

        ctx = PolicyContext(
            feasible=feasible, per=np.array([sn.per for sn in snaps]),
            budgets=self.ledger.budget_j.copy(), terms=terms,
            problem=SelectionProblem.build(terms, s, self.trackers), k=s.k,
            alpha_v=s.alpha_v, alpha_d=s.alpha_d,
            rng=substream(self.seed, "policy", t), cursor=self.cursor)
        selected, trace = run_policy(cfg.policy, ctx)
        over_k = len(selected) > s.k and cfg.policy != "full"
        if over_k or not all(feasible[i] for i in selected):
            raise RuntimeError(f"policy {cfg.policy} broke the K / feasibility contract")

        spends, delivered, deltas, reliab = {}, [], {}, {}
        failure = np.array([sn.link_failed_flag for sn in snaps], dtype=float)
        for i in selected:
            c = self.clients[i]
            raw, report = local_train(self.params, c.X_train, c.y_train, lc.epochs,
                                      lc.learning_rate, lc.batch_size, lc.kappa_train_j,
                                      substream(self.seed, "train", t, i), i, t)
            update = self._compress(raw)
            res = transmit_update(snaps[i], update.payload_bits, budget,
                                  substream(self.seed, "tx", t, i))
            update.delivered, update.reliability = res.delivered, res.reliability_r
            spends[i] = (report.train_energy_j, res.tx_energy_j, costs[i].e_rx)
            self.packets_total += res.packets_total
            self.packets_sent += res.packets_sent
            self.updates_sent += 1
            self.train_energy_sum += report.train_energy_j
            failure[i] = 0.0 if res.delivered else 1.0
            if res.delivered:
                delivered.append(i)
                deltas[i] = decompress(update)
                reliab[i] = res.reliability_r

        a = []
        if delivered:
            n_i = [self.clients[i].n for i in delivered]
            if self._aggregation_method() == "bias_corrected":
                a = bias_corrected_weights(n_i, [reliab[i] for i in delivered],
                                           self.propensity.pi[delivered], self.propensity.floor)
            else:
                a = fedavg_weights(n_i)
            self.params = self.params.with_weights(
                apply_aggregate(self.params.w, [deltas[i] for i in delivered], a))
        self.last_plan = RoundPlan(t, snaps, costs, ctx.budgets, self.ledger.memory_cap_bits.copy(),
                                   feasible, list(selected),
                                   {i: float(w) for i, w in zip(delivered, a)}, trace)

        row = self.ledger.record_round(spends)
        for i, st in enumerate(self.states):
            st.rounds_since_selected = 0 if i in selected else st.rounds_since_selected + 1
        for i in delivered:
            self.states[i].hist_at_last_success = self.clients[i].label_histogram()
            self.states[i].last_update_norm = float(np.linalg.norm(deltas[i]))
        self.selection_counts[selected] += 1
        self.propensity = update_propensity(self.propensity, selected)
        self.trackers = update_trackers(self.trackers, deltas, failure)

        macro, worst = self._evaluate(self.params)
        self.decisions.append([
            str(t), self.posture.label, ";".join(str(int(f)) for f in feasible),
            ";".join(r for _, r in checks), ";".join(repr(sn.per) for sn in snaps),
            ";".join(map(str, selected)),
            ";".join(repr(st.gain) for st in trace.steps) if trace else ""])
        return MetricsRecord(
            round=t, policy=cfg.policy, selected=list(selected), delivered=delivered,
            macro_f1=macro, worst_location_f1=worst,
            success_rate=len(delivered) / len(selected) if selected else 1.0,
            round_energy_j=row, cum_energy_j=float(self.ledger.cumulative.sum()),
            disparity=selection_disparity(self.selection_counts),
            pi=self.propensity.pi.copy(),
            h=np.array([st.rounds_since_selected for st in self.states]))

    def _sgd_epochs(self, params: ModelParams, X, y, rng) -> ModelParams:
        lc = self.cfg.learning
        w = params.w.copy()
        p = params.with_weights(w)
        for _ in range(lc.epochs):
            order = rng.permutation(len(y))
            for a in range(0, len(y), lc.batch_size):
                b = order[a:a + lc.batch_size]
                p.w -= lc.learning_rate * gradient(p, X[b], y[b])
        return p

    def _round_centralized(self) -> MetricsRecord:
        self.round += 1
        X, y = pooled(self.clients, "train")
        self.params = self._sgd_epochs(self.params, X, y, substream(self.seed, "central", self.round))
        macro, worst = self._evaluate(self.params)
        return self._plain_record(macro, worst, np.zeros(self.n))

    def _round_local_only(self) -> MetricsRecord:
        self.round += 1
        spends = {}
        for i, c in enumerate(self.clients):
            self.local_models[i] = self._sgd_epochs(self.local_models[i], c.X_train, c.y_train,
                                                    substream(self.seed, "local", self.round, i))
            spends[i] = (self._e_train(c), 0.0, 0.0)
        row = self.ledger.record_round(spends)
        client_f1 = [evaluate(m, self.X_held, self.y_held).macro_f1 for m in self.local_models]
        own_f1 = [evaluate(m, c.X_heldout, c.y_heldout).macro_f1
                  for m, c in zip(self.local_models, self.clients)]
        rec = self._plain_record(float(np.mean(client_f1)), float(min(own_f1)), row)
        rec.worst_client_f1 = float(min(client_f1))
        return rec

    def _plain_record(self, macro, worst, row) -> MetricsRecord:
        return MetricsRecord(
            round=self.round, policy=self.cfg.mode, selected=[], delivered=[],
            macro_f1=macro, worst_location_f1=worst, success_rate=1.0, round_energy_j=row,
            cum_energy_j=float(self.ledger.cumulative.sum()), disparity=0.0,
            pi=self.propensity.pi.copy(), h=np.zeros(self.n, dtype=int))

    def run(self) -> list[MetricsRecord]:
        for _ in range(self.cfg.rounds):
            self.run_round()
        return self.records

    # -- summaries
    def summary(self) -> dict:
        recs = self.records
        hit = next((r for r in recs if r.macro_f1 >= self.cfg.target_f1), None)
        last = recs[-1] if recs else None
        out = {
            "seed": self.seed,
            "policy": self.cfg.policy if self.cfg.mode == "federated" else self.cfg.mode,
            "mode": self.cfg.mode,
            "rounds": len(recs),
            "final_macro_f1": last.macro_f1 if last else None,
            "final_worst_location_f1": last.worst_location_f1 if last else None,
            "mean_success_rate": float(np.mean([r.success_rate for r in recs])) if recs else None,
            "cum_energy_j": last.cum_energy_j if last else 0.0,
            "final_disparity": last.disparity if last else 0.0,
            "rounds_to_target": hit.round if hit else NOT_REACHED,
            "energy_to_target_j": hit.cum_energy_j if hit else NOT_REACHED,
            "measured": {
                "updates_sent": self.updates_sent,
                "packets_total": self.packets_total,
                "packets_sent": self.packets_sent,
                "mean_transmissions_per_packet":
                    self.packets_sent / self.packets_total if self.packets_total else 1.0,
                "mean_train_energy_j":
                    self.train_energy_sum / self.updates_sent if self.updates_sent else 0.0,
                "payload_bits": self.payload_bits,
                "model_dim": self.params.d,
            },
        }
        if self.cfg.mode == "local_only" and last is not None:
            out["final_worst_client_f1"] = last.worst_client_f1
        return out

    def write_metrics(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(metrics_header(self.n))
            for r in self.records:
                w.writerow(r.csv_row())

    def write_decisions(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DECISION_HEADER)
            w.writerows(self.decisions)


# -------------------------------------------------------------- experiments

SUMMARY_METRICS = ("final_macro_f1", "final_worst_location_f1", "mean_success_rate",
                   "cum_energy_j", "final_disparity", "rounds_to_target", "energy_to_target_j",
                   "final_worst_client_f1")


def _numeric(v) -> float:
    return math.inf if v == NOT_REACHED else float(v)


def _json_number(x: float):
    return x if math.isfinite(x) else NOT_REACHED


def median_iqr(values) -> tuple[float, float]:
    """Median and interquartile range (linear interpolation; inf propagates)."""
    v = np.sort(np.asarray(values, dtype=float))
    def q(p):
        pos = p * (len(v) - 1)
        lo, hi = int(math.floor(pos)), int(math.ceil(pos))
        if lo == hi or v[lo] == v[hi]:
            return float(v[lo])
        return float(v[lo] + (pos - lo) * (v[hi] - v[lo]))
    return q(0.5), (q(0.75) - q(0.25)) if math.isfinite(q(0.75)) else math.inf


def aggregate_summaries(per_seed: list[dict]) -> tuple[dict, dict]:
    med, iqr = {}, {}
    for key in SUMMARY_METRICS:
        vals = [_numeric(s[key]) for s in per_seed if s.get(key) is not None]
        if not vals:
            continue
        m, r = median_iqr(vals)
        med[key], iqr[key] = _json_number(m), _json_number(r)
    return med, iqr


def run_single(cfg: ScenarioConfig, seed: int, out_dir=None) -> tuple[Simulation, dict]:
    sim = Simulation(cfg, seed)
    sim.run()
    summ = sim.summary()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        sim.write_metrics(out / f"metrics_seed{seed}.csv")
        if cfg.mode == "federated":
            sim.write_decisions(out / f"decisions_seed{seed}.csv")
    return sim, summ


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_experiment(cfg: ScenarioConfig, seeds, out_dir=None) -> dict:
    """Run every seed; write per-seed CSVs plus ``summary.json`` and ``config.json``."""
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("at least one seed is required")
    per_seed = [run_single(cfg, s, out_dir)[1] for s in seeds]
    med, iqr = aggregate_summaries(per_seed)
    summary = {
        "build": BUILD_ID,
        "name": cfg.name,
        "policy": per_seed[0]["policy"],
        "mode": cfg.mode,
        "seeds": seeds,
        "target_f1": cfg.target_f1,
        "per_seed": per_seed,
        "median": med,
        "iqr": iqr,
        "config": cfg.to_dict(),
    }
    if out_dir is not None:
        out = Path(out_dir)
        write_json(out / "summary.json", summary)
        (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    return summary


# --------------------------------------------------------------- break-even

def analytic_breakeven_spec(cfg: ScenarioConfig) -> BreakEvenSpec:
    """Closed-form inputs from config alone: K updates per round at the planned payload."""
    st, lc = cfg.streaming, cfg.learning
    syn = cfg.data.synthetic
    n_loc = len(syn.locations)
    dim = (syn.d_x + 1) * syn.num_classes
    s_vals, q_eff = _s_and_q(lc.scheme, dim, lc.q, lc.k_fraction)
    e_train = train_energy(lc.kappa_train_j, syn.windows_per_client, lc.epochs, dim)
    return BreakEvenSpec(
        horizon_s=st.horizon_s, sampling_rate_hz=st.sampling_rate_hz,
        d_x=st.channels_per_location * n_loc, bits_per_sample=st.bits_per_sample,
        eta_bit_j=cfg.channel.budget.eta_bit_tx_j, rounds=cfg.rounds * cfg.scheduler.k,
        s=s_vals, q=q_eff, rho=st.analytic_rho, e_train_per_round_j=e_train)


def _s_and_q(scheme: str, dim: int, q: int, k_fraction: float):
    """Values sent and effective bits per value, so that s * q equals the payload."""
    bits = planned_payload_bits(scheme, dim, q, k_fraction)
    s_vals = top_k_count(dim, k_fraction) if scheme == "top_k" else dim
    return s_vals, bits / s_vals


def measured_breakeven_spec(cfg: ScenarioConfig, summary: dict) -> BreakEvenSpec:
    """Break-even inputs from a finished run (medians over seeds of the measured link stats).

    R counts update transmissions (client-rounds); rho is the observed mean
    number of transmissions per packet.
    """
    st, lc = cfg.streaming, cfg.learning
    runs = summary["per_seed"]
    meas = [r["measured"] for r in runs]
    dim = meas[0]["model_dim"]
    s_vals, q_eff = _s_and_q(lc.scheme, dim, lc.q, lc.k_fraction)
    n_loc = len(summary["config"]["data"]["synthetic"]["locations"]) \
        if cfg.data.source == "synthetic" else None
    if n_loc is None:
        raise ConfigError("measured break-even needs synthetic data or streaming.channels_per_location"
                          " times the location count")
    return BreakEvenSpec(
        horizon_s=st.horizon_s, sampling_rate_hz=st.sampling_rate_hz,
        d_x=st.channels_per_location * n_loc, bits_per_sample=st.bits_per_sample,
        eta_bit_j=cfg.channel.budget.eta_bit_tx_j,
        rounds=int(np.median([m["updates_sent"] for m in meas])),
        s=s_vals, q=q_eff,
        rho=float(np.median([m["mean_transmissions_per_packet"] for m in meas])),
        e_train_per_round_j=float(np.median([m["mean_train_energy_j"] for m in meas])))


def compare_against_streaming(cfg: ScenarioConfig, summary: dict | None = None, out_csv=None):
    """Break-even report rows plus the one-line crossing summary."""
    spec = analytic_breakeven_spec(cfg) if summary is None else measured_breakeven_spec(cfg, summary)
    horizons = list(cfg.streaming.horizons_s)
    if out_csv is not None:
        rows = write_breakeven_csv(out_csv, spec, horizons)
    else:
        rows = breakeven_rows(spec, horizons)
    return {"spec": spec, "rows": rows, "e_stream_j": stream_energy(spec), "e_fl_j": fl_energy(spec),
            "crossing_horizon_s": crossing_horizon(spec), "summary_line": crossing_summary(spec)}
