"""Hypercube substrates whose weights are painted by an evolved network.

Geometry is four dimensional, ``(x, y, s, k)``. The input hyperlayer sits at
``k = -1`` and holds the chart plane (``s = -1``), the account internals
(``s = 0``) and, for Jordan-recurrent substrates, the previous output
(``s = 1``). The hidden plane is at ``k = 0`` and the single output neurode
at ``k = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .chartizer import ChartRaster, axis_coords, flatten
from .neuralnet import Genotype, Network

PREPROCESSORS = ("cartesian", "cartesian_distance", "polar", "spherical", "centripetal",
                 "coord_diff_distance", "gaussian_distance")
POSTPROCESSORS = ("identity",)
DEFAULT_WEIGHT_LIMIT = 3.0


def preprocessor_arity(kind: str, dim: int) -> int:
    if kind in ("cartesian", "polar", "spherical"):
        return 2 * dim
    if kind in ("cartesian_distance", "gaussian_distance"):
        return 1
    if kind == "centripetal":
        return 2
    if kind == "coord_diff_distance":
        return dim
    raise ValueError(f"unknown coordinate preprocessor {kind!r}")


def _polarize(c: np.ndarray) -> np.ndarray:
    r = np.hypot(c[:, 0], c[:, 1])
    theta = np.arctan2(c[:, 1], c[:, 0])
    return np.column_stack([r, theta, c[:, 2:]])


def _spherize(c: np.ndarray) -> np.ndarray:
    r = np.sqrt(np.sum(c[:, :3] ** 2, axis=1))
    theta = np.arctan2(c[:, 1], c[:, 0])
    safe = np.where(r > 0, r, 1.0)
    phi = np.where(r > 0, np.arccos(np.clip(c[:, 2] / safe, -1.0, 1.0)), 0.0)
    return np.column_stack([r, theta, phi, c[:, 3:]])


def preprocess_batch(kind: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise preprocessor output for coordinate pairs ``a[i]``, ``b[i]``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise ValueError(f"coordinate dimensionality mismatch: {a.shape[1]} vs {b.shape[1]}")
    dim = a.shape[1]
    if kind == "cartesian":
        return np.hstack([a, b])
    if kind == "cartesian_distance":
        return np.linalg.norm(a - b, axis=1)[:, None]
    if kind == "polar":
        if dim < 2:
            raise ValueError("polar preprocessing needs at least 2 axes")
        return np.hstack([_polarize(a), _polarize(b)])
    if kind == "spherical":
        if dim < 3:
            raise ValueError("spherical preprocessing needs at least 3 axes")
        return np.hstack([_spherize(a), _spherize(b)])
    if kind == "centripetal":
        return np.column_stack([np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)])
    if kind == "coord_diff_distance":
        return np.abs(a - b)
    if kind == "gaussian_distance":
        return np.exp(-np.sum((a - b) ** 2, axis=1))[:, None]
    raise ValueError(f"unknown coordinate preprocessor {kind!r}")


def preprocess(kind: str, a: Sequence[float], b: Sequence[float]) -> list[float]:
    if len(a) != len(b):
        raise ValueError(f"coordinate dimensionality mismatch: {len(a)} vs {len(b)}")
    return preprocess_batch(kind, np.asarray(a, float)[None, :], np.asarray(b, float)[None, :])[0].tolist()


@dataclass(frozen=True)
class Plane:
    name: str
    width: int
    height: int
    k: float
    s: float = 0.0

    @property
    def size(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class SubstrateSpec:
    """Layout of a Jordan-recurrent chart substrate.

    ``normalize_inputs`` divides every neurode's pre-activation by the square
    root of its fan-in. ``jordan=False`` drops the feedback plane.
    """

    chart_width: int
    chart_height: int
    hidden_shape: tuple[int, int] = (5, 5)
    dimensionality: int = 4
    jordan: bool = True
    normalize_inputs: bool = False
    weight_limit: float = DEFAULT_WEIGHT_LIMIT
    preprocessor_pool: tuple[str, ...] = PREPROCESSORS
    postprocessor_pool: tuple[str, ...] = POSTPROCESSORS

    def __post_init__(self):
        if self.dimensionality != 4:
            raise ValueError(f"only 4-D substrates are supported, got {self.dimensionality}")
        if self.chart_width < 1 or self.chart_height < 1:
            raise ValueError("chart plane must be at least 1x1")
        if len(self.hidden_shape) != 2 or min(self.hidden_shape) < 1:
            raise ValueError(f"invalid hidden plane shape {self.hidden_shape}")
        if self.weight_limit <= 0:
            raise ValueError("weight_limit must be positive")
        for kind in self.preprocessor_pool:
            if kind not in PREPROCESSORS:
                raise ValueError(f"unknown coordinate preprocessor {kind!r}")
        for kind in self.postprocessor_pool:
            if kind not in POSTPROCESSORS:
                raise ValueError(f"unknown coordinate postprocessor {kind!r}")

    def hyperlayers(self) -> list[tuple[float, list[Plane]]]:
        inputs = [Plane("chart", self.chart_width, self.chart_height, -1.0, -1.0),
                  Plane("internals", 3, 1, -1.0, 0.0)]
        if self.jordan:
            inputs.append(Plane("feedback", 1, 1, -1.0, 1.0))
        hw, hh = self.hidden_shape
        return [(-1.0, inputs), (0.0, [Plane("hidden", hw, hh, 0.0)]),
                (1.0, [Plane("output", 1, 1, 1.0)])]

    @property
    def input_size(self) -> int:
        return sum(p.size for p in self.hyperlayers()[0][1])

    @property
    def hidden_size(self) -> int:
        return self.hidden_shape[0] * self.hidden_shape[1]

    def connection_count(self) -> int:
        return self.input_size * self.hidden_size + self.hidden_size

    def to_dict(self) -> dict:
        return {
            "chart_width": self.chart_width, "chart_height": self.chart_height,
            "hidden_shape": list(self.hidden_shape), "dimensionality": self.dimensionality,
            "jordan": self.jordan, "normalize_inputs": self.normalize_inputs,
            "weight_limit": self.weight_limit,
            "preprocessor_pool": list(self.preprocessor_pool),
            "postprocessor_pool": list(self.postprocessor_pool),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubstrateSpec":
        d = dict(d)
        d["hidden_shape"] = tuple(d["hidden_shape"])
        d["preprocessor_pool"] = tuple(d.get("preprocessor_pool", PREPROCESSORS))
        d["postprocessor_pool"] = tuple(d.get("postprocessor_pool", POSTPROCESSORS))
        return cls(**d)


def _plane_coords(plane: Plane) -> np.ndarray:
    xs, ys = axis_coords(plane.width), axis_coords(plane.height)
    gx, gy = np.meshgrid(xs, ys)  # row-major: x fastest, matching chartizer.flatten
    n = plane.size
    return np.column_stack([gx.reshape(-1), gy.reshape(-1), np.full(n, plane.s), np.full(n, plane.k)])


@dataclass(eq=False)
class Substrate:
    spec: SubstrateSpec
    input_coords: np.ndarray
    hidden_coords: np.ndarray
    output_coords: np.ndarray
    hidden_weights: np.ndarray | None = None  # (hidden, inputs)
    output_weights: np.ndarray | None = None  # (hidden,)
    feedback: float = 0.0

    @property
    def painted(self) -> bool:
        return self.hidden_weights is not None

    def connection_count(self) -> int:
        return len(self.input_coords) * len(self.hidden_coords) + len(self.hidden_coords) * len(self.output_coords)

    def connections(self) -> tuple[np.ndarray, np.ndarray]:
        """Pre and post coordinates of every connection, hidden layer first, pre-major."""
        n_in, n_hid = len(self.input_coords), len(self.hidden_coords)
        pre1 = np.repeat(self.input_coords, n_hid, axis=0)
        post1 = np.tile(self.hidden_coords, (n_in, 1))
        pre2 = self.hidden_coords
        post2 = np.repeat(self.output_coords, n_hid, axis=0)
        return np.vstack([pre1, pre2]), np.vstack([post1, post2])

    def with_weights(self, hidden_weights, output_weights) -> "Substrate":
        hw = np.asarray(hidden_weights, dtype=float)
        ow = np.asarray(output_weights, dtype=float).reshape(-1)
        if hw.shape != (len(self.hidden_coords), len(self.input_coords)):
            raise ValueError(f"hidden weights must have shape {(len(self.hidden_coords), len(self.input_coords))}")
        if ow.shape != (len(self.hidden_coords),):
            raise ValueError(f"output weights must have shape {(len(self.hidden_coords),)}")
        return replace(self, hidden_weights=hw, output_weights=ow, feedback=0.0)

    def reset(self) -> None:
        self.feedback = 0.0

    def _scales(self) -> tuple[float, float]:
        if not self.spec.normalize_inputs:
            return 1.0, 1.0
        return 1.0 / math.sqrt(len(self.input_coords)), 1.0 / math.sqrt(len(self.hidden_coords))

    def forward(self, chart: ChartRaster | np.ndarray, internals: Sequence[float]) -> float:
        if not self.painted:
            raise RuntimeError("substrate weights have not been painted")
        spec = self.spec
        if isinstance(chart, ChartRaster):
            if (chart.width, chart.height) != (spec.chart_width, spec.chart_height):
                raise ValueError(f"chart is {chart.width}x{chart.height}, substrate expects "
                                 f"{spec.chart_width}x{spec.chart_height}")
            values = flatten(chart)[0]
        else:
            values = np.asarray(chart, dtype=float).reshape(-1)
            if values.size != spec.chart_width * spec.chart_height:
                raise ValueError(f"chart has {values.size} cells, expected {spec.chart_width * spec.chart_height}")
        if len(internals) != 3:
            raise ValueError(f"internals must be a 3-vector, got {len(internals)} values")
        parts = [values, np.asarray(internals, dtype=float)]
        if spec.jordan:
            parts.append([self.feedback])
        x = np.concatenate(parts)
        s1, s2 = self._scales()
        hidden = np.tanh(s1 * (self.hidden_weights @ x))
        out = math.tanh(s2 * float(self.output_weights @ hidden))
        self.feedback = out
        return out

    # fast path for replaying a whole series: chart contributions are batched up front,
    # fan-in normalisation is folded into the weight copies

    def chart_contributions(self, charts: np.ndarray) -> np.ndarray:
        n_chart = self.spec.chart_width * self.spec.chart_height
        s1, s2 = self._scales()
        w = self.hidden_weights
        rest = w[:, n_chart:] * s1
        if not self.spec.jordan:
            rest = np.hstack([rest, np.zeros((len(w), 1))])
        self._rest = np.ascontiguousarray(rest)
        self._out = self.output_weights * s2
        return charts @ (w[:, :n_chart] * s1).T

    def forward_precomputed(self, chart_part: np.ndarray, internals: Sequence[float]) -> float:
        """One step given this step's row of :meth:`chart_contributions`."""
        pos, entry, pct = internals
        hidden = np.tanh(chart_part + self._rest @ np.array((pos, entry, pct, self.feedback)))
        out = math.tanh(self._out @ hidden)
        self.feedback = out
        return out


def build_substrate(spec: SubstrateSpec) -> Substrate:
    layers = spec.hyperlayers()
    inputs = np.vstack([_plane_coords(p) for p in layers[0][1]])
    hidden = np.vstack([_plane_coords(p) for p in layers[1][1]])
    output = np.vstack([_plane_coords(p) for p in layers[2][1]])
    return Substrate(spec, inputs, hidden, output)


def painting_inputs(g: Genotype, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    """Concatenated preprocessor features in the genotype's sensor order."""
    feats = []
    for sensor in g.sensors:
        if sensor.kind != "coordinates":
            raise ValueError(f"painting network sensor {sensor.id} is not a coordinate preprocessor")
        f = preprocess_batch(sensor.params["preprocessor"], pre, post)
        if f.shape[1] != sensor.vl:
            raise ValueError(f"sensor {sensor.id}: preprocessor yields {f.shape[1]} values, gene says {sensor.vl}")
        feats.append(f)
    return np.hstack(feats)


def postprocess(kind: str, weights: np.ndarray) -> np.ndarray:
    # extension point; plasticity-style postprocessors are not modelled
    if kind == "identity":
        return weights
    raise ValueError(f"unknown coordinate postprocessor {kind!r}")


def paint_weights(g: Genotype, s: Substrate, network: Network | None = None) -> Substrate:
    """Query the genotype's network once per connection, ``(pre, post)`` coordinates in that order."""
    if g.encoding != "substrate":
        raise ValueError("only substrate-encoded genotypes can paint weights")
    net = network if network is not None else Network(g)
    if len(net.output_index) != 1:
        raise ValueError(f"painting network must have exactly one output, has {len(net.output_index)}")
    pre, post = s.connections()
    y = net.batch(painting_inputs(g, pre, post))[:, 0]
    w = s.spec.weight_limit * np.tanh(y)
    for kind in g.postprocessors:
        w = postprocess(kind, w)
    n_in, n_hid = len(s.input_coords), len(s.hidden_coords)
    hidden = w[:n_in * n_hid].reshape(n_in, n_hid).T
    output = w[n_in * n_hid:]
    return s.with_weights(hidden, output)
