"""Transmission decision policies over a shared sensor buffer model."""
from __future__ import annotations

from dataclasses import dataclass

from rlcat.channel import MnoProfile
from rlcat.qlearn import Action, QKey, QTable

PERIODIC = "periodic"
CAT = "cat"
ML_CAT = "ml-cat"
RL_CAT = "rl-cat"
RL_PCAT = "rl-pcat"
SCHEMES = (PERIODIC, CAT, ML_CAT, RL_CAT, RL_PCAT)
RL_SCHEMES = (RL_CAT, RL_PCAT)

GEN_RATE = 50_000  # bytes of sensor data per second


class EmptyBufferError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class BufferState:
    size: float = 0.0
    oldest_packet_t: float = 0.0
    last_tx_t: float = 0.0

    def __post_init__(self):
        if self.size < 0:
            raise ValueError("buffer size must be non-negative")


def buffer_step(b: BufferState, now: float, gen_rate: float = GEN_RATE, tick: float = 1.0) -> BufferState:
    """Append one tick of sensor data generated at ``now``."""
    oldest = b.oldest_packet_t if b.size > 0 else now
    return BufferState(b.size + gen_rate * tick, oldest, b.last_tx_t)


def buffer_clear(b: BufferState, now: float) -> BufferState:
    return BufferState(0.0, now, now)


def aoi(b: BufferState, now: float) -> float:
    """Age of the oldest buffered packet."""
    if b.size <= 0:
        raise EmptyBufferError("AoI is undefined for an empty buffer")
    return now - b.oldest_packet_t


@dataclass(frozen=True)
class ProbSchemeParams:
    phi_min: float
    phi_max: float
    dt_min: float = 10.0
    dt_max: float = 120.0
    alpha_exp: float = 2.0

    def __post_init__(self):
        if not self.phi_max > self.phi_min:
            raise ValueError("phi_max must exceed phi_min")
        if not 0 <= self.dt_min < self.dt_max:
            raise ValueError("need 0 <= dt_min < dt_max")
        if not self.alpha_exp > 0:
            raise ValueError("alpha_exp must be positive")


def cat_params(**overrides) -> ProbSchemeParams:
    """SINR-driven defaults (dB)."""
    return ProbSchemeParams(**{"phi_min": 0.0, "phi_max": 30.0, **overrides})


def ml_cat_params(profile: MnoProfile, **overrides) -> ProbSchemeParams:
    """Predicted-rate-driven defaults (Mbit/s)."""
    return ProbSchemeParams(**{"phi_min": 0.0, "phi_max": profile.s_max, **overrides})


def p_tx(phi: float, dt: float, p: ProbSchemeParams) -> float:
    if dt < p.dt_min:
        return 0.0
    if dt > p.dt_max:
        return 1.0
    x = (phi - p.phi_min) / (p.phi_max - p.phi_min)
    return min(max(x, 0.0), 1.0) ** p.alpha_exp


def decide_periodic(dt: float, interval: float) -> Action:
    if not interval > 0:
        raise ValueError("interval must be positive")
    return Action.TX if dt >= interval else Action.IDLE


def decide_probabilistic(phi: float, dt: float, p: ProbSchemeParams, rng) -> Action:
    """Bernoulli draw with probability :func:`p_tx`; ``rng`` needs a ``random()`` method."""
    return Action.TX if rng.random() < p_tx(phi, dt, p) else Action.IDLE


def decide_rl(key: QKey, q: QTable) -> Action:
    """Greedy action; ties keep buffering."""
    return Action.TX if q.get(key, Action.TX) > q.get(key, Action.IDLE) else Action.IDLE
