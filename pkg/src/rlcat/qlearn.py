"""Tabular Q-learning: state discretization, lazily initialized Q-table, rewards, update rule."""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from enum import IntEnum
from pathlib import Path
from statistics import NormalDist
from typing import NamedTuple

_STD_NORMAL = NormalDist()


class Action(IntEnum):
    IDLE = 0
    TX = 1


ACTIONS = (Action.IDLE, Action.TX)


class QKey(NamedTuple):
    s_now: int
    s_future: int | None
    dt_bin: int


@dataclass(frozen=True)
class RlParams:
    alpha: float = 0.1
    w: float = 0.8
    s_star: float = 30.0
    s_max: float = 40.0
    dt_max: float = 120.0
    omega: float = -10.0
    tau: float = 10.0
    # discount of the full update rule; the one-step form used in training fixes it at 0
    lam: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0 <= self.w <= 1:
            raise ValueError(f"w must be in [0, 1], got {self.w}")
        if not self.omega < 0:
            raise ValueError(f"omega must be negative, got {self.omega}")
        if not 0 < self.s_star < self.s_max:
            raise ValueError("need 0 < s_star < s_max")
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def make_key(s_pred: float, dt: float, s_pred_future: float | None = None, *,
             rate_range: float = math.inf, dt_max: float = 120.0, dt_bin_width: int = 1) -> QKey:
    """Discretize predicted rate(s) to the closest integer (half-up) and ``dt`` to
    ``dt_bin_width``-second floor bins (labelled by their lower edge in seconds)."""
    s_now = _round_half_up(min(max(s_pred, 0.0), rate_range))
    s_future = None
    if s_pred_future is not None:
        s_future = _round_half_up(min(max(s_pred_future, 0.0), rate_range))
    dt_c = min(max(dt, 0.0), dt_max)
    return QKey(s_now, s_future, math.floor(dt_c / dt_bin_width) * dt_bin_width)


def reward_tx(S: float, dt: float, p: RlParams) -> float:
    return p.w * (S - p.s_star) / p.s_max + dt * (1 - p.w) / p.dt_max


def reward_idle(dt: float, p: RlParams) -> float:
    return p.omega if dt >= p.dt_max else 0.0


def reward_idle_pcat(s_future: float, dt: float, p: RlParams) -> float:
    if dt >= p.dt_max:
        return p.omega
    return reward_tx(s_future, dt + p.tau, p) / p.tau


def q_update(q_old: float, r: float, alpha: float) -> float:
    return (1 - alpha) * q_old + alpha * r


def q_update_discounted(q_old: float, r: float, alpha: float, lam: float, q_next_max: float) -> float:
    """General one-step Q-learning target; equals :func:`q_update` for ``lam == 0``."""
    if lam == 0:
        return q_update(q_old, r, alpha)
    return (1 - alpha) * q_old + alpha * (r + lam * q_next_max)


class QTable:
    """Sparse Q-table whose unseen entries are drawn from N(0, 1).

    Each entry's initial value is a deterministic function of ``(seed, key,
    action)``, so a table reloaded from disk initializes unseen entries exactly
    as the original would have.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.entries: dict[tuple[QKey, Action], float] = {}
        # free-form header fields carried through save/load (scheme, profile)
        self.meta: dict[str, str] = {}

    def initial_value(self, key: QKey, a: Action) -> float:
        s_future = -1 if key.s_future is None else key.s_future
        packed = struct.pack("<qqqqq", self.seed, key.s_now, s_future, key.dt_bin, int(a))
        n = int.from_bytes(hashlib.blake2b(packed, digest_size=8).digest(), "little")
        return _STD_NORMAL.inv_cdf((n + 0.5) / 2.0 ** 64)

    def get(self, key: QKey, a: Action) -> float:
        k = (key, a)
        v = self.entries.get(k)
        if v is None:
            v = self.entries[k] = self.initial_value(key, a)
        return v

    def set(self, key: QKey, a: Action, value: float) -> None:
        self.entries[(key, a)] = value

    def __len__(self) -> int:
        return len(self.entries)

    def copy(self) -> QTable:
        q = QTable(self.seed)
        q.entries = dict(self.entries)
        q.meta = dict(self.meta)
        return q

    def save(self, path: str | Path, params: RlParams) -> None:
        Path(path).write_text(dump_qtable(self, params))


def get_q(table: QTable, key: QKey, a: Action) -> float:
    return table.get(key, a)


_HEADER = "# rlcat-qtable v1"


def dump_qtable(table: QTable, params: RlParams) -> str:
    lines = [_HEADER, f"# seed {table.seed}", f"# params {params.digest()}"]
    lines += [f"# {k} {v}" for k, v in sorted(table.meta.items())]
    rows = sorted(table.entries.items(),
                  key=lambda kv: (kv[0][0].s_now, -1 if kv[0][0].s_future is None else kv[0][0].s_future,
                                  kv[0][0].dt_bin, int(kv[0][1])))
    for (key, a), value in rows:
        cols = [str(key.s_now)]
        if key.s_future is not None:
            cols.append(str(key.s_future))
        cols += [str(key.dt_bin), a.name, repr(value)]
        lines.append(" ".join(cols))
    return "\n".join(lines) + "\n"


class QTableFormatError(ValueError):
    pass


def load_qtable(path: str | Path, params: RlParams | None = None) -> QTable:
    return parse_qtable(Path(path).read_text(), params)


def parse_qtable(text: str, params: RlParams | None = None) -> QTable:
    """Parse the text format; rejects tables trained under different ``params``."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != _HEADER:
        raise QTableFormatError("missing Q-table header")
    seed = digest = None
    meta = {}
    table_rows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            tok = line[1:].split()
            if len(tok) == 2 and tok[0] == "seed":
                seed = int(tok[1])
            elif len(tok) == 2 and tok[0] == "params":
                digest = tok[1]
            elif len(tok) >= 2:
                meta[tok[0]] = " ".join(tok[1:])
            continue
        tok = line.split()
        try:
            if len(tok) == 4:
                key = QKey(int(tok[0]), None, int(tok[1]))
            elif len(tok) == 5:
                key = QKey(int(tok[0]), int(tok[1]), int(tok[2]))
            else:
                raise ValueError
            table_rows.append((key, Action[tok[-2]], float(tok[-1])))
        except (ValueError, KeyError):
            raise QTableFormatError(f"line {lineno}: malformed entry {line!r}") from None
    if seed is None or digest is None:
        raise QTableFormatError("header must carry seed and params hash")
    if params is not None and digest != params.digest():
        raise QTableFormatError(f"params hash mismatch: table {digest}, expected {params.digest()}")
    table = QTable(seed)
    table.meta = meta
    for key, a, value in table_rows:
        table.set(key, a, value)
    return table
