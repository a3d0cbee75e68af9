"""Episode replay, virtual-exploration training and the experiment drivers built on it."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from rlcat.channel import (
    EnvState, MnoProfile, RateModel, ScenarioConfig, counterfactual_rate, generate_trace, transmit,
)
from rlcat.predictor import (
    ConnectivityMap, FeatureVector, NoisyOracle, TreePredictor, build_connectivity_map, cell_index,
    lookup_future_features, predict_position,
)
from rlcat.qlearn import (
    Action, QTable, RlParams, make_key, q_update, reward_idle, reward_idle_pcat, reward_tx,
)
from rlcat.schemes import (
    CAT, GEN_RATE, ML_CAT, PERIODIC, RL_CAT, RL_PCAT, RL_SCHEMES, SCHEMES, BufferState,
    ProbSchemeParams, aoi, buffer_clear, buffer_step, cat_params, decide_periodic,
    decide_probabilistic, decide_rl, ml_cat_params,
)
from rlcat.trace import Trace, TransmissionRecord

# stream labels for derive_seed
_ENV, _PRED, _DECIDE, _CF, _MOB, _QINIT, _ORDER, _TRAIN, _EVAL = range(9)


class ConfigError(ValueError):
    pass


def derive_seed(seed: int, *path: int) -> int:
    """Independent 63-bit seed for the stream identified by ``path`` under ``seed``."""
    state = np.random.SeedSequence([seed, *path]).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def stream(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *path]))


@dataclass(frozen=True)
class SimSettings:
    """Everything an episode needs besides the trace, Q-table and random streams."""

    profile: MnoProfile
    rl: RlParams
    periodic_interval: float = 10.0
    cat: ProbSchemeParams = field(default_factory=cat_params)
    ml_cat: ProbSchemeParams | None = None
    gen_rate: float = GEN_RATE
    rate_model: RateModel = field(default_factory=RateModel)
    env_noise_std: float | None = None
    map_cell_width: float = 25.0
    dt_bin_width: int = 1
    pos_noise_std: float = 0.0
    epsilon_greedy: bool = False
    deferred_counterfactual: bool = False
    # on TX ticks also update the IDLE entry with its (counterfactual) reward
    idle_update_on_tx: bool = True
    # on IDLE ticks also update the TX entry with a counterfactual transmission now
    tx_update_on_idle: bool = False
    # regression tree file replacing the noisy oracle
    tree_path: str | None = None

    def __post_init__(self):
        if self.ml_cat is None:
            object.__setattr__(self, "ml_cat", ml_cat_params(self.profile))
        if not self.periodic_interval > 0:
            raise ConfigError("periodic_interval must be positive")
        if not self.map_cell_width > 0:
            raise ConfigError("map_cell_width must be positive")

    @classmethod
    def for_profile(cls, profile: MnoProfile, **kw) -> SimSettings:
        rl = kw.pop("rl", RlParams())
        rl = replace(rl, s_star=profile.s_star, s_max=profile.s_max)
        return cls(profile=profile, rl=rl, **kw)

    def check(self, trace: Trace, env: EnvState) -> None:
        p = self.profile
        if env.profile != p:
            raise ConfigError(f"environment profile {env.profile.key} != settings profile {p.key}")
        if (self.rl.s_star, self.rl.s_max) != (p.s_star, p.s_max):
            raise ConfigError(f"RL targets ({self.rl.s_star}, {self.rl.s_max}) do not match profile {p.key}")
        if (trace.mno, trace.direction) != (p.name, p.direction):
            raise ConfigError(f"trace {trace.mno}/{trace.direction} does not match profile {p.key}")


@dataclass
class EpisodeResult:
    scheme: str
    transmissions: list[TransmissionRecord]
    dt_max: float
    generated: float = 0.0
    remainder: float = 0.0

    @property
    def mean_rate(self) -> float:
        if not self.transmissions:
            return math.nan
        return math.fsum(r.measured_rate for r in self.transmissions) / len(self.transmissions)

    @property
    def mean_aoi(self) -> float:
        if not self.transmissions:
            return math.nan
        return math.fsum(r.aoi for r in self.transmissions) / len(self.transmissions)

    @property
    def deadline_violations(self) -> int:
        return sum(r.aoi > self.dt_max for r in self.transmissions)

    @property
    def transmitted(self) -> float:
        return math.fsum(r.payload for r in self.transmissions)

    @classmethod
    def merge(cls, results: Sequence[EpisodeResult]) -> EpisodeResult:
        if not results:
            raise ValueError("nothing to merge")
        txs = [r for res in results for r in res.transmissions]
        return cls(results[0].scheme, txs, results[0].dt_max,
                   math.fsum(r.generated for r in results), math.fsum(r.remainder for r in results))

    def summary(self) -> dict:
        return {"scheme": self.scheme, "transmissions": len(self.transmissions),
                "mean_rate": self.mean_rate, "mean_aoi": self.mean_aoi,
                "deadline_violations": self.deadline_violations}


@dataclass
class EpisodeStreams:
    env: np.random.Generator
    predictor_seed: int
    decision: np.random.Generator
    counterfactual: np.random.Generator
    mobility: np.random.Generator

    @classmethod
    def derive(cls, seed: int, *path: int) -> EpisodeStreams:
        return cls(stream(seed, *path, _ENV), derive_seed(seed, *path, _PRED), stream(seed, *path, _DECIDE),
                   stream(seed, *path, _CF), stream(seed, *path, _MOB))


def run_episode(scheme: str, trace: Trace, env: EnvState, predictor, settings: SimSettings, *,
                q: QTable | None = None, train: bool = False, cmap: ConnectivityMap | None = None,
                decision_rng: np.random.Generator | None = None,
                cf_rng: np.random.Generator | None = None,
                mobility_rng: np.random.Generator | None = None,
                counterfactuals: bool = True, epsilon: float = 0.0) -> EpisodeResult:
    """Replay ``trace`` tick by tick under ``scheme``.

    Each tick appends one second of sensor data, then (unless a transfer is
    still in flight) the scheme decides. A transmission empties the buffer and
    blocks decisions until it completes. With ``train`` the Q-table is updated
    after every RL decision; RL-pCAT idle rewards query the environment at
    ``t + tau`` using ``cf_rng`` only, so the episode's own streams are untouched.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    settings.check(trace, env)
    rl = settings.rl
    is_rl = scheme in RL_SCHEMES
    if is_rl and q is None:
        raise ConfigError(f"{scheme} needs a Q-table")
    if scheme == RL_PCAT and cmap is None:
        raise ConfigError("rl-pcat needs a connectivity map")
    if scheme in (CAT, ML_CAT) or epsilon > 0:
        if decision_rng is None:
            raise ConfigError(f"{scheme} needs a decision random stream")
    if train and scheme == RL_PCAT and counterfactuals and cf_rng is None:
        raise ConfigError("rl-pcat training needs a counterfactual random stream")

    profile, model = settings.profile, settings.rate_model
    gen_rate, tick = settings.gen_rate, trace.tick
    rate_range, dt_max, tau = profile.rate_range, rl.dt_max, rl.tau
    uses_features = not isinstance(predictor, NoisyOracle)
    s_max = profile.s_max

    def true_rate(sinr: float, payload: float) -> float:
        return min(max(s_max * model.channel_term(sinr) * model.ramp(payload), 0.1), s_max)

    def predict(feat_src, payload: float) -> float:
        f = None
        if uses_features:
            f = feat_src if isinstance(feat_src, FeatureVector) else FeatureVector.from_sample(feat_src, payload)
        return predictor.predict(f, true_rate(feat_src.sinr, payload))

    buf = BufferState(0.0, trace.t0, trace.t0 - tick)
    busy_until = -math.inf
    records: list[TransmissionRecord] = []
    pending: list[tuple] = []
    generated = 0.0

    def idle_update(key, dt, now, payload):
        if scheme == RL_CAT or dt >= dt_max or not counterfactuals:
            r = reward_idle(dt, rl)
        else:
            s_cf = counterfactual_rate(env, now + tau, payload + tau * gen_rate, cf_rng)
            r = reward_idle_pcat(s_cf, dt, rl)
        q.set(key, Action.IDLE, q_update(q.get(key, Action.IDLE), r, rl.alpha))

    for s in trace.samples:
        now = s.t
        buf = buffer_step(buf, now, gen_rate, tick)
        generated += gen_rate * tick
        while pending and pending[0][0] <= now + 1e-9:
            _, key, dt_p, payload_p, now_p = pending.pop(0)
            idle_update(key, dt_p, now_p, payload_p)
        if now < busy_until - 1e-9:
            continue
        dt = now - buf.last_tx_t
        payload = buf.size
        key = None

        if scheme == PERIODIC:
            a = decide_periodic(dt, settings.periodic_interval)
        elif scheme == CAT:
            a = decide_probabilistic(s.sinr, dt, settings.cat, decision_rng)
        elif scheme == ML_CAT:
            a = decide_probabilistic(predict(s, payload), dt, settings.ml_cat, decision_rng)
        else:
            s_now = predict(s, payload)
            s_future = None
            if scheme == RL_PCAT:
                payload_f = payload + tau * gen_rate
                pos_f = predict_position(trace, now, tau, settings.pos_noise_std, mobility_rng)
                if cmap.get(pos_f) is None:
                    s_future = predict(s, payload_f)
                else:
                    fallback = FeatureVector.from_sample(s, payload_f)
                    s_future = predict(lookup_future_features(cmap, pos_f, fallback), payload_f)
            key = make_key(s_now, dt, s_future, rate_range=rate_range, dt_max=dt_max,
                           dt_bin_width=settings.dt_bin_width)
            if epsilon > 0 and decision_rng.random() < epsilon:
                a = Action.TX if decision_rng.random() < 0.5 else Action.IDLE
            else:
                a = decide_rl(key, q)

        if a == Action.TX:
            rec = transmit(env, now, payload, aoi(buf, now))
            records.append(rec)
            if train and is_rl:
                r = reward_tx(rec.measured_rate, dt, rl)
                q.set(key, Action.TX, q_update(q.get(key, Action.TX), r, rl.alpha))
                if settings.idle_update_on_tx:
                    idle_update(key, dt, now, payload)
            buf = buffer_clear(buf, now)
            busy_until = now + rec.duration
        elif train and is_rl:
            if settings.tx_update_on_idle and counterfactuals:
                s_cf = counterfactual_rate(env, now, payload, cf_rng)
                q.set(key, Action.TX, q_update(q.get(key, Action.TX), reward_tx(s_cf, dt, rl), rl.alpha))
            if scheme == RL_PCAT and settings.deferred_counterfactual and dt < dt_max:
                pending.append((now + tau, key, dt, payload, now))
            else:
                idle_update(key, dt, now, payload)

    for _, key, dt_p, payload_p, now_p in pending:
        idle_update(key, dt_p, now_p, payload_p)
    return EpisodeResult(scheme, records, dt_max, generated, buf.size)


@lru_cache(maxsize=8)
def _load_tree(path: str) -> TreePredictor:
    return TreePredictor.load(path)


def _episode(scheme, trace, settings, streams: EpisodeStreams, *, q=None, train=False, cmap=None,
             counterfactuals=True, epsilon=0.0) -> EpisodeResult:
    env = EnvState(trace, settings.profile, streams.env, settings.env_noise_std, settings.rate_model)
    if settings.tree_path is not None:
        predictor = _load_tree(settings.tree_path)
    else:
        predictor = NoisyOracle(settings.profile, streams.predictor_seed)
    return run_episode(scheme, trace, env, predictor, settings, q=q, train=train, cmap=cmap,
                       decision_rng=streams.decision, cf_rng=streams.counterfactual,
                       mobility_rng=streams.mobility, counterfactuals=counterfactuals, epsilon=epsilon)


# ------------------------------------------------------------------ training

@dataclass
class ConvergenceCurve:
    rates: list[float]
    aois: list[float] = field(default_factory=list)
    violations: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rates)

    def window_mean(self, start: int, stop: int | None = None) -> float:
        vals = [v for v in self.rates[start:stop] if not math.isnan(v)]
        return math.fsum(vals) / len(vals) if vals else math.nan


def epoch_order(n_traces: int, epochs: int, seed: int) -> list[int]:
    """Trace index replayed in each epoch: one seeded shuffle, cycled."""
    perm = stream(seed, _ORDER).permutation(n_traces)
    return [int(perm[e % n_traces]) for e in range(epochs)]


def train(scheme: str, traces: Sequence[Trace], epochs: int, seed: int, settings: SimSettings, *,
          q: QTable | None = None, cmap: ConnectivityMap | None = None) -> tuple[QTable, ConvergenceCurve]:
    """Virtual exploration: replay one trace per epoch and update the Q-table after every action."""
    if scheme not in RL_SCHEMES:
        raise ConfigError(f"cannot train non-RL scheme {scheme!r}")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if not traces:
        raise ValueError("no training traces")
    if q is None:
        q = QTable(derive_seed(seed, _QINIT))
    if scheme == RL_PCAT and cmap is None:
        cmap = build_connectivity_map(traces, settings.map_cell_width)
    curve = ConvergenceCurve([])
    for e, idx in enumerate(epoch_order(len(traces), epochs, seed)):
        eps = 0.0
        if settings.epsilon_greedy:
            eps = 0.1 * (1 - e / (epochs - 1)) if epochs > 1 else 0.0
        res = _episode(scheme, traces[idx], settings, EpisodeStreams.derive(seed, _TRAIN, e),
                       q=q, train=True, cmap=cmap, epsilon=eps)
        curve.rates.append(res.mean_rate)
        curve.aois.append(res.mean_aoi)
        curve.violations.append(res.deadline_violations)
    return q, curve


def baseline_curve(scheme: str, traces: Sequence[Trace], epochs: int, seed: int,
                   settings: SimSettings) -> ConvergenceCurve:
    """Per-epoch metrics of a non-learning scheme on the same epoch schedule and streams as :func:`train`."""
    curve = ConvergenceCurve([])
    for e, idx in enumerate(epoch_order(len(traces), epochs, seed)):
        res = _episode(scheme, traces[idx], settings, EpisodeStreams.derive(seed, _TRAIN, e))
        curve.rates.append(res.mean_rate)
        curve.aois.append(res.mean_aoi)
        curve.violations.append(res.deadline_violations)
    return curve


def evaluate(scheme: str, traces: Sequence[Trace], seed: int, settings: SimSettings, *,
             q: QTable | None = None, cmap: ConnectivityMap | None = None,
             counterfactuals: bool = True) -> EpisodeResult:
    """Run ``scheme`` with a frozen policy over every trace; all schemes share streams per trace."""
    results = []
    for j, trace in enumerate(traces):
        qj = q.copy() if q is not None else None
        results.append(_episode(scheme, trace, settings, EpisodeStreams.derive(seed, _EVAL, j),
                                q=qj, cmap=cmap, counterfactuals=counterfactuals))
    return EpisodeResult.merge(results)


# ------------------------------------------------------------------- metrics

def efficiency_s(mean_rate: float, s_star: float) -> float:
    if not s_star > 0:
        raise ValueError("s_star must be positive")
    return mean_rate / s_star


def efficiency_aoi(mean_aoi: float, dt_max: float) -> float:
    if not dt_max > 0:
        raise ValueError("dt_max must be positive")
    return 1 - mean_aoi / dt_max


# --------------------------------------------------------------- experiments

@dataclass(frozen=True)
class TraceSet:
    """Recipe for the training and held-out evaluation traces of one run seed."""

    scenario: ScenarioConfig
    n_train: int = 40
    n_eval: int = 10

    def build(self, profile: MnoProfile, seed: int) -> tuple[list[Trace], list[Trace]]:
        def make(kind, i):
            return generate_trace(self.scenario.with_seed(derive_seed(seed, kind, i)), profile)
        return ([make(_TRAIN, i) for i in range(self.n_train)],
                [make(_EVAL, i) for i in range(self.n_eval)])


@dataclass
class RunOutput:
    seed: int
    results: dict[str, EpisodeResult]
    curves: dict[str, ConvergenceCurve]
    tables: dict[str, QTable]


def run_comparison(schemes: Sequence[str], settings: SimSettings, traces: TraceSet, epochs: int,
                   seed: int) -> RunOutput:
    """Train every RL scheme, then evaluate all schemes on the same held-out traces and streams."""
    train_traces, eval_traces = traces.build(settings.profile, seed)
    cmap = None
    if RL_PCAT in schemes:
        cmap = build_connectivity_map(train_traces, settings.map_cell_width)
    results, curves, tables = {}, {}, {}
    for scheme in schemes:
        q = None
        if scheme in RL_SCHEMES:
            q, curves[scheme] = train(scheme, train_traces, epochs, seed, settings, cmap=cmap)
            tables[scheme] = q
        results[scheme] = evaluate(scheme, eval_traces, seed, settings, q=q, cmap=cmap)
    return RunOutput(seed, results, curves, tables)


def comparison_row(settings: SimSettings, res: EpisodeResult) -> dict:
    p = settings.profile
    return {"mno": p.name, "direction": p.direction, **res.summary(),
            "E_S": efficiency_s(res.mean_rate, p.s_star),
            "E_AoI": efficiency_aoi(res.mean_aoi, settings.rl.dt_max)}


def compare_schemes(schemes: Sequence[str], settings_list: Sequence[SimSettings], traces: TraceSet,
                    epochs: int, seed: int) -> list[dict]:
    """One row per (profile, scheme), every scheme evaluated under common random numbers."""
    rows = []
    for settings in settings_list:
        out = run_comparison(schemes, settings, traces, epochs, seed)
        rows.extend(comparison_row(settings, out.results[s]) for s in schemes)
    return rows


def _sweep_job(args):
    scheme, w, seed, settings, traces, epochs = args
    s = replace(settings, rl=replace(settings.rl, w=w))
    out = run_comparison([scheme], s, traces, epochs, seed)
    res = out.results[scheme]
    return {"w": w, "seed": seed, "mean_rate": res.mean_rate, "mean_aoi": res.mean_aoi,
            "deadline_violations": res.deadline_violations, "transmissions": len(res.transmissions),
            "E_S": efficiency_s(res.mean_rate, s.profile.s_star),
            "E_AoI": efficiency_aoi(res.mean_aoi, s.rl.dt_max)}


def _mean_std(vals: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(vals, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


def sweep_w(w_values: Sequence[float], settings: SimSettings, traces: TraceSet, epochs: int,
            seeds: Sequence[int], *, scheme: str = RL_CAT, workers: int | None = None) -> list[dict]:
    """Train and evaluate a fresh agent per (w, seed); aggregate efficiencies per w."""
    for w in w_values:
        if not 0 <= w <= 1:
            raise ConfigError(f"w={w} outside [0, 1]")
    jobs = [(scheme, w, seed, settings, traces, epochs) for w in w_values for seed in seeds]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            runs = list(ex.map(_sweep_job, jobs))
    else:
        runs = [_sweep_job(j) for j in jobs]
    table = []
    for w in w_values:
        per = [r for r in runs if r["w"] == w]
        es_mean, es_std = _mean_std([r["E_S"] for r in per])
        ea_mean, ea_std = _mean_std([r["E_AoI"] for r in per])
        table.append({"w": w, "E_S_mean": es_mean, "E_S_std": es_std,
                      "E_AoI_mean": ea_mean, "E_AoI_std": ea_std,
                      "deadline_violations": [r["deadline_violations"] for r in per], "runs": per})
    return table


# ---------------------------------------------------------------- blackspots

@dataclass
class BlackspotReport:
    cell_width: float
    mean_rate: float
    flagged: list[tuple[tuple[int, int], int, int]]

    def cells(self) -> set[tuple[int, int]]:
        return {idx for idx, _, _ in self.flagged}

    def to_dict(self) -> dict:
        return {"cell_width": self.cell_width, "mean_rate": self.mean_rate,
                "flagged": [{"cell": list(idx), "low_rate": low, "total": total}
                            for idx, low, total in self.flagged]}


def detect_blackspots(records: Sequence[TransmissionRecord], cell_width: float, min_count: int = 5) -> BlackspotReport:
    """Flag grid cells holding at least ``min_count`` transmissions below half the mean rate."""
    if not records:
        raise ValueError("no transmission records")
    if not cell_width > 0:
        raise ValueError("cell_width must be positive")
    mean = math.fsum(r.measured_rate for r in records) / len(records)
    low: dict[tuple[int, int], int] = {}
    total: dict[tuple[int, int], int] = {}
    for r in records:
        idx = cell_index(r.pos, cell_width)
        total[idx] = total.get(idx, 0) + 1
        if r.measured_rate < mean / 2:
            low[idx] = low.get(idx, 0) + 1
    flagged = sorted((idx, n, total[idx]) for idx, n in low.items() if n >= min_count)
    return BlackspotReport(cell_width, mean, flagged)
