"""Data-rate prediction: predictor back ends, connectivity map and position lookahead."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from rlcat.channel import MnoProfile
from rlcat.trace import ContextSample, GeoPosition, Trace

FEATURE_ORDER = ("rsrp", "rsrq", "sinr", "cqi", "ta", "freq", "velocity", "cell_id", "payload")
# fields averaged per map cell; cell_id is voted, payload is supplied at lookup time
_MEAN_FIELDS = ("rsrp", "rsrq", "sinr", "cqi", "ta", "freq", "velocity")


@dataclass(frozen=True, slots=True)
class FeatureVector:
    rsrp: float
    rsrq: float
    sinr: float
    cqi: float
    ta: float
    freq: float
    velocity: float
    cell_id: int
    payload: float

    def __post_init__(self):
        if not self.payload > 0:
            raise ValueError(f"payload must be > 0, got {self.payload}")
        if not 0 <= self.cqi <= 15:
            raise ValueError(f"cqi={self.cqi} outside [0, 15]")

    @classmethod
    def from_sample(cls, s: ContextSample, payload: float) -> FeatureVector:
        return cls(s.rsrp, s.rsrq, s.sinr, s.cqi, s.ta, s.carrier_freq, s.velocity, s.cell_id, payload)

    def as_array(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in FEATURE_ORDER)

    def with_payload(self, payload: float) -> FeatureVector:
        return FeatureVector(self.rsrp, self.rsrq, self.sinr, self.cqi, self.ta, self.freq,
                             self.velocity, self.cell_id, payload)


# ---------------------------------------------------------------- predictors

class TreeFileError(ValueError):
    pass


@dataclass(frozen=True)
class PredictorSpec:
    kind: str
    profile: MnoProfile
    seed: int = 0
    tree_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("noisy_oracle", "tree_file"):
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if (self.kind == "tree_file") != (self.tree_path is not None):
            raise ValueError("tree_path must be given iff kind == 'tree_file'")


class NoisyOracle:
    """Ground truth plus Gaussian error with the profile's RMSE, clamped to the model's value range."""

    _BLOCK = 4096

    def __init__(self, profile: MnoProfile, seed: int = 0, rmse: float | None = None):
        self.profile = profile
        self.rmse = profile.pred_rmse if rmse is None else rmse
        self.upper = profile.rate_range
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0AC1E]))
        self._buf: list[float] = []
        self._pos = 0

    def _noise(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self.rng.standard_normal(self._BLOCK).tolist()
            self._pos = 0
        z = self._buf[self._pos]
        self._pos += 1
        return z

    def predict(self, f: FeatureVector | None, true_rate: float) -> float:
        if self.rmse == 0:
            est = true_rate
        else:
            est = true_rate + self.rmse * self._noise()
        return min(max(est, 0.0), self.upper)


class TreePredictor:
    """Single binary regression tree loaded from the line-oriented tree format.

    Internal node: ``N <id> <feature_index> <threshold> <left_id> <right_id>``;
    samples with ``feature < threshold`` go left. Leaf: ``L <id> <value_mbps>``.
    """

    def __init__(self, nodes: dict[int, tuple]):
        self.nodes = nodes

    @classmethod
    def load(cls, path: str | Path) -> TreePredictor:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise TreeFileError(f"cannot read tree file {path}: {e}") from None
        return cls.parse(text)

    @classmethod
    def parse(cls, text: str) -> TreePredictor:
        nodes: dict[int, tuple] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                if tok[0] == "N" and len(tok) == 6:
                    node = ("N", int(tok[2]), float(tok[3]), int(tok[4]), int(tok[5]))
                elif tok[0] == "L" and len(tok) == 3:
                    node = ("L", float(tok[2]))
                else:
                    raise ValueError
                node_id = int(tok[1])
            except ValueError:
                raise TreeFileError(f"line {lineno}: malformed node {line!r}") from None
            if node_id in nodes:
                raise TreeFileError(f"line {lineno}: duplicate node id {node_id}")
            if node[0] == "N" and not 0 <= node[1] < len(FEATURE_ORDER):
                raise TreeFileError(f"line {lineno}: feature index {node[1]} out of range")
            nodes[node_id] = node
        if 0 not in nodes:
            raise TreeFileError("tree has no root node 0")
        cls._check_reachable(nodes)
        return cls(nodes)

    @staticmethod
    def _check_reachable(nodes):
        seen, stack = set(), [0]
        while stack:
            nid = stack.pop()
            if nid in seen:
                raise TreeFileError(f"node {nid} reached twice (cycle or shared child)")
            if nid not in nodes:
                raise TreeFileError(f"missing node {nid}")
            seen.add(nid)
            if nodes[nid][0] == "N":
                stack.extend(nodes[nid][3:5])

    def predict(self, f: FeatureVector, true_rate: float | None = None) -> float:
        x = f.as_array()
        node = self.nodes[0]
        while node[0] == "N":
            _, feat, thr, left, right = node
            node = self.nodes[left if x[feat] < thr else right]
        return node[1]


def make_predictor(spec: PredictorSpec):
    if spec.kind == "tree_file":
        return TreePredictor.load(spec.tree_path)
    return NoisyOracle(spec.profile, spec.seed)


def predict_rate(f: FeatureVector, predictor, true_rate: float) -> float:
    return predictor.predict(f, true_rate)


# ---------------------------------------------------------- connectivity map

@dataclass(frozen=True)
class CellAggregate:
    means: dict[str, float]
    cell_id: int
    count: int


@dataclass(frozen=True)
class ConnectivityMap:
    cell_width: float
    cells: dict[tuple[int, int], CellAggregate]

    def index(self, pos: GeoPosition) -> tuple[int, int]:
        return cell_index(pos, self.cell_width)

    def get(self, pos: GeoPosition) -> CellAggregate | None:
        return self.cells.get(self.index(pos))


def cell_index(pos: GeoPosition, c: float) -> tuple[int, int]:
    return math.floor(pos.x / c), math.floor(pos.y / c)


def build_connectivity_map(traces: Iterable[Trace], c: float) -> ConnectivityMap:
    """Bin every sample by ``floor(pos / c)`` and average its features per cell.

    Means use ``math.fsum`` so the result does not depend on sample order; the
    serving cell id is a majority vote with ties going to the lowest id.
    """
    if not c > 0:
        raise ValueError("cell width must be positive")
    traces = list(traces)
    if not traces:
        raise ValueError("at least one trace is required")
    bins: dict[tuple[int, int], list[ContextSample]] = {}
    for trace in traces:
        for s in trace.samples:
            bins.setdefault(cell_index(s.pos, c), []).append(s)
    cells = {}
    for idx, samples in bins.items():
        n = len(samples)
        means = {name: math.fsum(_field(s, name) for s in samples) / n for name in _MEAN_FIELDS}
        votes = Counter(s.cell_id for s in samples)
        top = max(votes.values())
        cells[idx] = CellAggregate(means, min(k for k, v in votes.items() if v == top), n)
    return ConnectivityMap(c, cells)


def _field(s: ContextSample, name: str) -> float:
    return s.carrier_freq if name == "freq" else getattr(s, name)


def lookup_future_features(cmap: ConnectivityMap, pos: GeoPosition, fallback: FeatureVector) -> FeatureVector:
    """Aggregated features of the map cell containing ``pos``; ``fallback`` if that cell is empty.

    The payload always comes from ``fallback``.
    """
    agg = cmap.get(pos)
    if agg is None:
        return fallback
    m = agg.means
    return FeatureVector(m["rsrp"], m["rsrq"], m["sinr"], m["cqi"], m["ta"], m["freq"],
                         m["velocity"], agg.cell_id, fallback.payload)


def predict_position(trace: Trace, t: float, tau: float,
                     noise_std: float = 0.0, rng: np.random.Generator | None = None) -> GeoPosition:
    """Position at ``t + tau``: read from the trace when inside it, else extrapolated linearly.

    ``noise_std`` adds isotropic Gaussian error (meters) drawn from ``rng``.
    """
    k = trace.index_of(t)
    target = t + tau
    if target <= trace.t_end + 1e-9:
        pos = trace.samples[k + int(round(tau / trace.tick))].pos
    else:
        if len(trace) < 2:
            raise ValueError("extrapolation needs at least two samples")
        last, prev = trace.samples[-1], trace.samples[-2]
        overshoot = (target - last.t) / (last.t - prev.t)
        pos = GeoPosition(last.pos.x + overshoot * (last.pos.x - prev.pos.x),
                          last.pos.y + overshoot * (last.pos.y - prev.pos.y))
    if noise_std > 0:
        if rng is None:
            raise ValueError("position noise needs a random generator")
        dx, dy = rng.normal(0.0, noise_std, 2)
        pos = GeoPosition(pos.x + dx, pos.y + dy)
    return pos

