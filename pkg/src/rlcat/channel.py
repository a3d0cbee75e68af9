"""Synthetic LTE channel environment.

Generates context traces along a waypoint route (log-distance path loss to the
nearest eNB plus Gauss-Markov shadowing indexed by route arc length) and turns
a transmission attempt into a measured end-to-end data rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from rlcat.trace import ContextSample, GeoPosition, Trace, TransmissionRecord

RATE_FLOOR = 0.1


@dataclass(frozen=True)
class MnoProfile:
    name: str
    direction: str
    s_star: float
    s_max: float
    pred_mae: float
    pred_rmse: float
    rate_range: float

    def __post_init__(self):
        if not 0 < self.s_star < self.s_max:
            raise ValueError(f"{self.key}: need 0 < s_star < s_max")
        if self.pred_mae > self.pred_rmse:
            raise ValueError(f"{self.key}: pred_mae must not exceed pred_rmse")
        if not self.rate_range > 0:
            raise ValueError(f"{self.key}: rate_range must be positive")

    @property
    def key(self) -> str:
        return f"{self.name}/{self.direction}"


# (s_star, s_max) per operator and direction; prediction error stats of the RF models.
PROFILES: dict[tuple[str, str], MnoProfile] = {
    (p.name, p.direction): p for p in (
        MnoProfile("A", "uplink", 30, 40, 2.984, 4.061, 39.782),
        MnoProfile("A", "downlink", 20, 30, 3.302, 4.743, 42.94),
        MnoProfile("B", "uplink", 20, 30, 2.603, 3.619, 38.208),
        MnoProfile("B", "downlink", 30, 40, 7.01, 10.177, 159.982),
        MnoProfile("C", "uplink", 50, 60, 2.537, 3.424, 35.676),
        MnoProfile("C", "downlink", 15, 25, 3.136, 4.276, 33.842),
    )
}


def get_profile(name: str, direction: str = "uplink") -> MnoProfile:
    try:
        return PROFILES[(name, direction)]
    except KeyError:
        raise KeyError(f"unknown MNO profile {name}/{direction}") from None


@dataclass(frozen=True)
class RateModel:
    """Ground-truth rate model: ``s_max * sigmoid(sinr) * payload / (payload + half_payload)``."""

    sinr_mid: float = 5.0          # dB at which the channel term is 0.5
    sinr_scale: float = 4.0        # dB
    half_payload: float = 500_000  # bytes at which the payload ramp is 0.5

    def channel_term(self, sinr: float) -> float:
        z = (sinr - self.sinr_mid) / self.sinr_scale
        if z < -700:
            return 0.0
        return 1.0 / (1.0 + math.exp(-z))

    def ramp(self, payload: float) -> float:
        return payload / (payload + self.half_payload)


@dataclass(frozen=True)
class LowSinrRegion:
    """Disc in which SINR and RSRP are reduced by ``penalty`` dB."""

    x: float
    y: float
    radius: float
    penalty: float


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    duration: int
    enb_positions: tuple[GeoPosition, ...]
    waypoints: tuple[GeoPosition, ...]
    speed_mean: float
    speed_jitter: float
    shadowing_std: float
    shadowing_corr_dist: float
    seed: int = 0
    # seeds the spatial shadowing field, shared by every trace of one scenario
    map_seed: int = 0
    closed_route: bool = True
    random_start: bool = True
    fast_fading_std: float = 2.0
    carrier_freq: float = 1800.0
    enb_height: float = 30.0
    ref_power: float = -40.0       # RSRP at 1 m, dBm
    path_loss_exp: float = 3.0
    noise_floor: float = -125.0    # dBm, noise plus interference per resource element
    low_sinr_regions: tuple[LowSinrRegion, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "enb_positions", tuple(self.enb_positions))
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        object.__setattr__(self, "low_sinr_regions", tuple(self.low_sinr_regions))
        if self.duration < 1:
            raise ValueError("duration must be >= 1")
        if not self.enb_positions:
            raise ValueError("at least one eNB position is required")
        if not self.shadowing_corr_dist > 0:
            raise ValueError("shadowing_corr_dist must be positive")
        if len(self.waypoints) < 2:
            raise ValueError("route needs at least two waypoints")
        if self.speed_mean < 0 or self.speed_jitter < 0 or self.shadowing_std < 0:
            raise ValueError("speed and shadowing parameters must be non-negative")

    def with_seed(self, seed: int) -> ScenarioConfig:
        return replace(self, seed=seed)


def default_scenario(name: str = "suburban", **overrides) -> ScenarioConfig:
    P = GeoPosition
    if name == "suburban":
        cfg = ScenarioConfig(
            scenario="suburban", duration=600,
            enb_positions=(P(250, -250), P(1050, 450), P(150, 1050)),
            waypoints=(P(0, 0), P(1200, 0), P(1200, 800), P(0, 800), P(0, 0)),
            speed_mean=12.0, speed_jitter=3.0,
            shadowing_std=6.0, shadowing_corr_dist=100.0)
    elif name == "highway":
        cfg = ScenarioConfig(
            scenario="highway", duration=600,
            enb_positions=tuple(P(1500 + 3000 * k, 350 if k % 2 else -350) for k in range(7)),
            waypoints=(P(0, 0), P(6000, 200), P(12000, -200), P(20000, 0)),
            speed_mean=30.0, speed_jitter=3.0,
            shadowing_std=6.0, shadowing_corr_dist=150.0, closed_route=False)
    else:
        raise ValueError(f"unknown scenario {name!r}")
    return replace(cfg, **overrides)


class Route:
    """Polyline parameterized by arc length; closed routes wrap, open ones ping-pong."""

    def __init__(self, waypoints, closed: bool):
        pts = np.array([(p.x, p.y) for p in waypoints], dtype=float)
        if closed and not np.allclose(pts[0], pts[-1]):
            pts = np.vstack([pts, pts[:1]])
        self.pts = pts
        self.closed = closed
        seg = np.hypot(*np.diff(pts, axis=0).T)
        self.cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.cum[-1])
        if self.length <= 0:
            raise ValueError("route has zero length")

    def fold(self, s: np.ndarray) -> np.ndarray:
        """Map unbounded travelled distance onto route arc length in [0, length]."""
        if self.closed:
            return np.mod(s, self.length)
        m = np.mod(s, 2 * self.length)
        return np.where(m > self.length, 2 * self.length - m, m)

    def xy(self, arc: np.ndarray) -> np.ndarray:
        return np.column_stack([np.interp(arc, self.cum, self.pts[:, 0]),
                                np.interp(arc, self.cum, self.pts[:, 1])])


def shadowing_field(cfg: ScenarioConfig, length: float, resolution: float = 1.0) -> np.ndarray:
    """First-order Gauss-Markov shadowing (dB) sampled every ``resolution`` m of arc length."""
    n = int(math.ceil(length / resolution)) + 2
    rng = np.random.default_rng(np.random.SeedSequence([cfg.map_seed, 0x5AD0]))
    z = rng.standard_normal(n)
    rho = math.exp(-resolution / cfg.shadowing_corr_dist)
    innov = math.sqrt(1 - rho * rho) * cfg.shadowing_std
    field_, _ = lfilter([innov], [1.0, -rho], z[1:], zi=[rho * cfg.shadowing_std * z[0]])
    return np.concatenate([[cfg.shadowing_std * z[0]], field_])


def generate_trace(cfg: ScenarioConfig, profile: MnoProfile, tick: float = 1.0) -> Trace:
    """Synthesize one context trace of ``cfg.duration`` samples.

    The route, eNBs and shadowing field depend only on ``cfg.map_seed``; the
    start point, speed process and fast fading depend on ``cfg.seed``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7EACE]))
    n = cfg.duration
    route = Route(cfg.waypoints, cfg.closed_route)

    # speed: AR(1) in a latent variable squashed into mean +/- jitter
    u = lfilter([math.sqrt(1 - 0.9 ** 2)], [1.0, -0.9], rng.standard_normal(n), zi=[0.9 * rng.standard_normal()])[0]
    speed = np.maximum(cfg.speed_mean + cfg.speed_jitter * np.tanh(u), 0.0)
    start = rng.uniform(0, route.length) if cfg.random_start else 0.0
    travelled = start + np.concatenate([[0.0], np.cumsum(speed[:-1] * tick)])
    arc = route.fold(travelled)
    xy = route.xy(arc)

    enb = np.array([(p.x, p.y) for p in cfg.enb_positions], dtype=float)
    d2 = np.hypot(xy[:, None, 0] - enb[None, :, 0], xy[:, None, 1] - enb[None, :, 1])
    cell = np.argmin(d2, axis=1)
    dist = np.sqrt(d2[np.arange(n), cell] ** 2 + cfg.enb_height ** 2)

    shadow_grid = shadowing_field(cfg, route.length)
    shadow = np.interp(arc, np.arange(len(shadow_grid)), shadow_grid)
    penalty = np.zeros(n)
    for reg in cfg.low_sinr_regions:
        inside = np.hypot(xy[:, 0] - reg.x, xy[:, 1] - reg.y) <= reg.radius
        penalty[inside] += reg.penalty

    def bounded(std, size):
        return np.clip(rng.normal(0.0, std, size), -3 * std, 3 * std) if std > 0 else np.zeros(size)

    rsrp_raw = cfg.ref_power - 10 * cfg.path_loss_exp * np.log10(dist) + shadow - penalty
    sinr = np.clip(rsrp_raw - cfg.noise_floor + bounded(cfg.fast_fading_std, n), -10.0, 30.0)
    rsrp = np.clip(rsrp_raw, -140.0, -44.0)
    rsrq = np.clip(-19.5 + 0.45 * (sinr + 10) + bounded(0.5, n), -19.5, -3.0)
    cqi = np.clip(np.rint((sinr + 6) * 15 / 36), 0, 15).astype(int)
    ta = np.floor(dist / 78.12).astype(int)

    samples = tuple(
        ContextSample(t=k * tick, pos=GeoPosition(float(xy[k, 0]), float(xy[k, 1])),
                      velocity=float(speed[k]), rsrp=float(rsrp[k]), rsrq=float(rsrq[k]),
                      sinr=float(sinr[k]), cqi=int(cqi[k]), ta=int(ta[k]),
                      carrier_freq=float(cfg.carrier_freq), cell_id=int(cell[k]))
        for k in range(n))
    return Trace(samples, scenario=cfg.scenario, mno=profile.name, direction=profile.direction, tick=tick)


def true_data_rate(sample, payload: float, profile: MnoProfile, model: RateModel = RateModel()) -> float:
    """Noise-free achievable rate in Mbit/s for ``payload`` bytes under ``sample``'s channel."""
    if not payload > 0:
        raise ValueError(f"payload must be > 0, got {payload}")
    rate = profile.s_max * model.channel_term(sample.sinr) * model.ramp(payload)
    return min(max(rate, RATE_FLOOR), profile.s_max)


@dataclass
class EnvState:
    """Per-episode environment; owns its random stream exclusively."""

    trace: Trace
    profile: MnoProfile
    rng: np.random.Generator
    noise_std: float | None = None
    rate_model: RateModel = field(default_factory=RateModel)

    def __post_init__(self):
        if self.noise_std is None:
            self.noise_std = self.profile.pred_rmse / 2
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def sample_rate(env: EnvState, sample: ContextSample, payload: float, rng: np.random.Generator) -> float:
    rate = true_data_rate(sample, payload, env.profile, env.rate_model)
    if env.noise_std > 0:
        rate += rng.normal(0.0, env.noise_std)
    return max(RATE_FLOOR, rate)


def transmit(env: EnvState, t: float, payload: float, aoi: float = 0.0) -> TransmissionRecord:
    """Transmit ``payload`` bytes at trace time ``t`` and return the measured outcome."""
    if not payload > 0:
        raise ValueError(f"payload must be > 0, got {payload}")
    sample = env.trace.samples[env.trace.index_of(t)]
    rate = sample_rate(env, sample, payload, env.rng)
    return TransmissionRecord(t_start=t, payload=payload, measured_rate=rate, aoi=aoi, pos=sample.pos)


def counterfactual_rate(env: EnvState, t: float, payload: float, rng: np.random.Generator) -> float:
    """Measured rate a transmission at ``t`` would have achieved; draws only from ``rng``.

    Times past the trace end use the last sample.
    """
    k = min(env.trace.index_of(min(t, env.trace.t_end)), len(env.trace) - 1)
    return sample_rate(env, env.trace.samples[k], payload, rng)
