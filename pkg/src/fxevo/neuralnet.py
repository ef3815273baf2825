"""Direct-encoded neural genotypes and their recurrent phenotypes."""

from __future__ import annotations

import copy
import json
import math
import random
from operator import mul
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "gaussian", "sin", "absolute", "sgn", "linear", "log", "sqrt")
SEED_WEIGHT_RANGE = 0.5
# neuron outputs are clipped here so runaway linear recurrences stay finite
SATURATION = 1e9
FORMAT_NAME = "fxevo-genotype"
FORMAT_VERSION = 1


class GenotypeError(ValueError):
    """A genotype violates a structural invariant."""


def _sgn(x: float) -> float:
    return float((x > 0) - (x < 0))


_SCALAR_AF = {
    "tanh": math.tanh,
    "gaussian": lambda x: math.exp(-x * x) if abs(x) < 1e150 else 0.0,
    "sin": math.sin,
    "absolute": abs,
    "sgn": _sgn,
    "linear": lambda x: x,
    "log": lambda x: math.copysign(math.log1p(abs(x)), x) if x else 0.0,
    "sqrt": lambda x: math.copysign(math.sqrt(abs(x)), x) if x else 0.0,
}

_VECTOR_AF = {
    "tanh": np.tanh,
    "gaussian": lambda x: np.exp(-np.square(x)),
    "sin": np.sin,
    "absolute": np.abs,
    "sgn": np.sign,
    "linear": lambda x: x,
    "log": lambda x: np.sign(x) * np.log1p(np.abs(x)),
    "sqrt": lambda x: np.sign(x) * np.sqrt(np.abs(x)),
}


def apply_af(af: str, x: float) -> float:
    """Evaluate activation ``af``; ``log`` and ``sqrt`` are odd extensions to all reals."""
    try:
        return _SCALAR_AF[af](x)
    except KeyError:
        raise ValueError(f"unknown activation function {af!r}") from None


def apply_af_vec(af: str, x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", under="ignore"):
        return _VECTOR_AF[af](x)


def signal_from_output(y: float) -> int:
    if y < -0.5:
        return -1
    if y > 0.5:
        return 1
    return 0


# --- genes -------------------------------------------------------------------

@dataclass
class SensorGene:
    """An input vector source.

    Kinds: ``sliding_window`` (params ``n``), ``internals`` (3-vector),
    ``chart_plane`` (params ``width``, ``height``) and ``coordinates``
    (params ``preprocessor``, ``dim``) for weight-painting networks.
    """

    id: str
    kind: str
    vl: int
    params: dict = field(default_factory=dict)

    def signature(self) -> tuple:
        return (self.kind, tuple(sorted(self.params.items())))


@dataclass
class ActuatorGene:
    id: str
    kind: str
    vl: int = 1
    fanin: list[str] = field(default_factory=list)

    def signature(self) -> tuple:
        return (self.kind, self.vl)


@dataclass
class InLink:
    """Weighted connection into a neuron; sensor sources carry one weight per element."""

    source: str
    weights: list[float]
    recurrent: bool = False


@dataclass
class NeuronGene:
    id: str
    af: str
    in_links: list[InLink]
    bias: float = 0.0

    def weight_count(self) -> int:
        return 1 + sum(len(link.weights) for link in self.in_links)

    def sources(self) -> set[str]:
        return {link.source for link in self.in_links}


def sliding_window_sensor(n: int, id: str = "") -> SensorGene:
    return SensorGene(id, "sliding_window", n, {"n": n})


def internals_sensor(id: str = "") -> SensorGene:
    return SensorGene(id, "internals", 3, {})


def chart_plane_sensor(width: int, height: int, id: str = "") -> SensorGene:
    return SensorGene(id, "chart_plane", width * height, {"width": width, "height": height})


def trade_actuator(id: str = "") -> ActuatorGene:
    return ActuatorGene(id, "trade", 1)


@dataclass
class Genotype:
    encoding: str
    neurons: list[NeuronGene]
    sensors: list[SensorGene]
    actuators: list[ActuatorGene]
    substrate_spec: Any = None
    postprocessors: list[str] = field(default_factory=list)
    sensor_pool: list[SensorGene] = field(default_factory=list)
    actuator_pool: list[ActuatorGene] = field(default_factory=list)
    generation: int = 0
    last_mutated_ids: set[str] = field(default_factory=set)
    next_id: int = 0

    def new_id(self, prefix: str) -> str:
        self.next_id += 1
        return f"{prefix}{self.next_id}"

    def clone(self) -> "Genotype":
        return copy.deepcopy(self)

    @property
    def size(self) -> int:
        return len(self.neurons)

    @property
    def preprocessors(self) -> list[str]:
        return [s.params["preprocessor"] for s in self.sensors if s.kind == "coordinates"]

    def neuron(self, nid: str) -> NeuronGene:
        for n in self.neurons:
            if n.id == nid:
                return n
        raise KeyError(nid)

    def sensor(self, sid: str) -> SensorGene:
        for s in self.sensors:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def link_count(self) -> int:
        return sum(len(n.in_links) for n in self.neurons)

    def weight_count(self) -> int:
        return sum(n.weight_count() for n in self.neurons)

    def out_links(self, nid: str) -> list[str]:
        targets = [n.id for n in self.neurons if nid in n.sources()]
        targets += [a.id for a in self.actuators if nid in a.fanin]
        return targets

    def feedforward_reaches(self, start: str, goal: str) -> bool:
        """True if a path of non-recurrent neuron links leads from ``start`` to ``goal``."""
        succ: dict[str, list[str]] = {}
        for n in self.neurons:
            for link in n.in_links:
                if not link.recurrent:
                    succ.setdefault(link.source, []).append(n.id)
        seen, stack = set(), [start]
        while stack:
            cur = stack.pop()
            if cur == goal:
                return True
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(succ.get(cur, ()))
        return False

    def validate(self) -> None:
        validate(self)

    def to_dict(self) -> dict:
        spec = self.substrate_spec
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "encoding": self.encoding,
            "generation": self.generation,
            "next_id": self.next_id,
            "last_mutated_ids": sorted(self.last_mutated_ids),
            "postprocessors": list(self.postprocessors),
            "substrate_spec": spec.to_dict() if spec is not None else None,
            "sensors": [_sensor_dict(s) for s in self.sensors],
            "actuators": [_actuator_dict(a) for a in self.actuators],
            "sensor_pool": [_sensor_dict(s) for s in self.sensor_pool],
            "actuator_pool": [_actuator_dict(a) for a in self.actuator_pool],
            "neurons": [
                {
                    "id": n.id,
                    "af": n.af,
                    "bias": n.bias,
                    "in_links": [
                        {"source": l.source, "weights": list(l.weights), "recurrent": l.recurrent}
                        for l in n.in_links
                    ],
                }
                for n in self.neurons
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Genotype":
        if d.get("format") != FORMAT_NAME:
            raise GenotypeError(f"not a genotype document (format={d.get('format')!r})")
        if d.get("version", 0) > FORMAT_VERSION:
            raise GenotypeError(f"unsupported genotype format version {d['version']}")
        spec = d.get("substrate_spec")
        if spec is not None:
            from .substrate import SubstrateSpec
            spec = SubstrateSpec.from_dict(spec)
        return cls(
            encoding=d["encoding"],
            neurons=[
                NeuronGene(n["id"], n["af"],
                           [InLink(l["source"], [float(w) for w in l["weights"]], bool(l["recurrent"]))
                            for l in n["in_links"]],
                           float(n["bias"]))
                for n in d["neurons"]
            ],
            sensors=[_sensor_from(s) for s in d["sensors"]],
            actuators=[_actuator_from(a) for a in d["actuators"]],
            substrate_spec=spec,
            postprocessors=list(d.get("postprocessors", [])),
            sensor_pool=[_sensor_from(s) for s in d.get("sensor_pool", [])],
            actuator_pool=[_actuator_from(a) for a in d.get("actuator_pool", [])],
            generation=int(d.get("generation", 0)),
            last_mutated_ids=set(d.get("last_mutated_ids", [])),
            next_id=int(d.get("next_id", 0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Genotype":
        return cls.from_dict(json.loads(text))


def _sensor_dict(s: SensorGene) -> dict:
    return {"id": s.id, "kind": s.kind, "vl": s.vl, "params": dict(s.params)}


def _sensor_from(d: Mapping) -> SensorGene:
    return SensorGene(d["id"], d["kind"], int(d["vl"]), dict(d.get("params", {})))


def _actuator_dict(a: ActuatorGene) -> dict:
    return {"id": a.id, "kind": a.kind, "vl": a.vl, "fanin": list(a.fanin)}


def _actuator_from(d: Mapping) -> ActuatorGene:
    return ActuatorGene(d["id"], d["kind"], int(d["vl"]), list(d.get("fanin", [])))


def validate(g: Genotype) -> None:
    """Raise :class:`GenotypeError` unless ``g`` satisfies every structural invariant."""
    if g.encoding not in ("direct", "substrate"):
        raise GenotypeError(f"unknown encoding {g.encoding!r}")
    if g.encoding == "direct" and g.substrate_spec is not None:
        raise GenotypeError("direct genotypes carry no substrate spec")
    if g.encoding == "substrate" and g.substrate_spec is None:
        raise GenotypeError("substrate genotypes need a substrate spec")
    if not g.sensors or not g.actuators:
        raise GenotypeError("a genotype needs at least one sensor and one actuator")
    ids = [x.id for x in g.neurons] + [s.id for s in g.sensors] + [a.id for a in g.actuators]
    if len(set(ids)) != len(ids):
        raise GenotypeError("duplicate element ids")
    sensors = {s.id: s for s in g.sensors}
    neurons = {n.id: n for n in g.neurons}
    for n in g.neurons:
        if n.af not in ACTIVATIONS:
            raise GenotypeError(f"neuron {n.id}: unknown activation {n.af!r}")
        if not n.in_links:
            raise GenotypeError(f"neuron {n.id} has no input links")
        seen = set()
        for link in n.in_links:
            if link.source in seen:
                raise GenotypeError(f"neuron {n.id}: duplicate link from {link.source}")
            seen.add(link.source)
            if link.source in sensors:
                expected = sensors[link.source].vl
                if link.recurrent:
                    raise GenotypeError(f"neuron {n.id}: sensor link cannot be recurrent")
            elif link.source in neurons:
                expected = 1
            else:
                raise GenotypeError(f"neuron {n.id}: unknown link source {link.source}")
            if len(link.weights) != expected:
                raise GenotypeError(f"neuron {n.id}: link from {link.source} has "
                                    f"{len(link.weights)} weights, expected {expected}")
    for a in g.actuators:
        if len(a.fanin) != a.vl:
            raise GenotypeError(f"actuator {a.id}: fanin size {len(a.fanin)} != {a.vl}")
        for src in a.fanin:
            if src not in neurons:
                raise GenotypeError(f"actuator {a.id}: unknown fanin neuron {src}")
    _feedforward_order(g)  # raises on feedforward cycles
    # connectivity over all links, recurrent included
    succ: dict[str, set[str]] = {}
    pred: dict[str, set[str]] = {}
    for n in g.neurons:
        for link in n.in_links:
            succ.setdefault(link.source, set()).add(n.id)
            pred.setdefault(n.id, set()).add(link.source)
    for a in g.actuators:
        for src in a.fanin:
            succ.setdefault(src, set()).add(a.id)
    from_sensors = _closure(sensors, succ)
    to_actuators = _closure({a.id for a in g.actuators},
                            {k: v for k, v in _invert(succ).items()})
    for nid in neurons:
        if nid not in from_sensors:
            raise GenotypeError(f"neuron {nid} is not reachable from any sensor")
        if nid not in to_actuators:
            raise GenotypeError(f"neuron {nid} does not reach any actuator")


def _invert(graph: Mapping[str, Iterable[str]]) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {}
    for k, vs in graph.items():
        for v in vs:
            out.setdefault(v, set()).add(k)
    return out


def _closure(starts: Iterable[str], graph: Mapping[str, Iterable[str]]) -> set[str]:
    seen: set[str] = set()
    stack = list(starts)
    while stack:
        cur = stack.pop()
        if cur in seen:
            continue
        seen.add(cur)
        stack.extend(graph.get(cur, ()))
    return seen


def _feedforward_order(g: Genotype) -> list[NeuronGene]:
    """Kahn topological order over non-recurrent neuron-to-neuron links, ties by genotype order."""
    neurons = {n.id: n for n in g.neurons}
    indeg = {n.id: 0 for n in g.neurons}
    succ: dict[str, list[str]] = {n.id: [] for n in g.neurons}
    for n in g.neurons:
        for link in n.in_links:
            if not link.recurrent and link.source in neurons:
                indeg[n.id] += 1
                succ[link.source].append(n.id)
    position = {n.id: i for i, n in enumerate(g.neurons)}
    ready = sorted((nid for nid, d in indeg.items() if d == 0), key=position.get)
    order = []
    while ready:
        nid = ready.pop(0)
        order.append(neurons[nid])
        for nxt in succ[nid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
                ready.sort(key=position.get)
    if len(order) != len(g.neurons):
        raise GenotypeError("feedforward links form a cycle")
    return order


def seed_genotype(sensors: Sequence[SensorGene], actuators: Sequence[ActuatorGene],
                  rng: random.Random, *, encoding: str = "direct", af: str | None = None,
                  substrate_spec: Any = None, sensor_pool: Sequence[SensorGene] = (),
                  actuator_pool: Sequence[ActuatorGene] = (),
                  activations: Sequence[str] = ACTIVATIONS) -> Genotype:
    """A single neuron wired from every sensor to the (single) actuator."""
    if not sensors:
        raise ValueError("seed genotype needs at least one sensor")
    if len(actuators) != 1:
        raise ValueError("seed genotype needs exactly one actuator")
    g = Genotype(encoding=encoding, neurons=[], sensors=[], actuators=[],
                 substrate_spec=substrate_spec)
    for s in sensors:
        g.sensors.append(SensorGene(g.new_id("s"), s.kind, s.vl, dict(s.params)))
    g.sensor_pool = [SensorGene("", s.kind, s.vl, dict(s.params)) for s in sensor_pool]
    g.actuator_pool = [ActuatorGene("", a.kind, a.vl) for a in actuator_pool]
    nid = g.new_id("n")
    r = SEED_WEIGHT_RANGE
    links = [InLink(s.id, [rng.uniform(-r, r) for _ in range(s.vl)]) for s in g.sensors]
    g.neurons.append(NeuronGene(nid, af or rng.choice(list(activations)), links, rng.uniform(-r, r)))
    a = actuators[0]
    g.actuators.append(ActuatorGene(g.new_id("a"), a.kind, 1, [nid]))
    g.last_mutated_ids = {nid}
    validate(g)
    return g


# --- phenotype ---------------------------------------------------------------

class Network:
    """Compiled phenotype with a recurrent state vector of previous-step outputs.

    Each :meth:`step` is one synchronous pass: feedforward links read this
    step's outputs in topological order, recurrent links read the previous
    step's outputs, and the state is committed after all neurons fire.
    """

    def __init__(self, genotype: Genotype):
        validate(genotype)
        self.sensor_ids = [s.id for s in genotype.sensors]
        self.sensor_sizes = {s.id: s.vl for s in genotype.sensors}
        offsets, pos = {}, 0
        for s in genotype.sensors:
            offsets[s.id] = pos
            pos += s.vl
        self.input_size = pos
        order = _feedforward_order(genotype)
        self.order = [n.id for n in order]
        index = {nid: i for i, nid in enumerate(self.order)}
        self._plan = []
        for n in order:
            in_idx, in_w, ff_idx, ff_w, rec_idx, rec_w = [], [], [], [], [], []
            for link in n.in_links:
                if link.source in offsets:
                    base = offsets[link.source]
                    in_idx.extend(range(base, base + len(link.weights)))
                    in_w.extend(link.weights)
                elif link.recurrent:
                    rec_idx.append(index[link.source])
                    rec_w.append(link.weights[0])
                else:
                    ff_idx.append(index[link.source])
                    ff_w.append(link.weights[0])
            self._plan.append((_SCALAR_AF[n.af], n.af, n.bias, in_idx, in_w, ff_idx, ff_w,
                               rec_idx, rec_w))
        self.output_index = [index[src] for a in genotype.actuators for src in a.fanin]
        self.state = [0.0] * len(self.order)

    def reset(self) -> None:
        self.state = [0.0] * len(self.order)

    def step(self, x: Sequence[float]) -> list[float]:
        """Advance one step on the flat concatenated sensor vector ``x``."""
        prev = self.state
        cur = [0.0] * len(prev)
        get_x, get_cur, get_prev = x.__getitem__, cur.__getitem__, prev.__getitem__
        for k, (fn, _, bias, in_idx, in_w, ff_idx, ff_w, rec_idx, rec_w) in enumerate(self._plan):
            acc = bias + sum(map(mul, in_w, map(get_x, in_idx)))
            if ff_idx:
                acc += sum(map(mul, ff_w, map(get_cur, ff_idx)))
            if rec_idx:
                acc += sum(map(mul, rec_w, map(get_prev, rec_idx)))
            y = fn(acc)
            if not -SATURATION <= y <= SATURATION:
                y = SATURATION if y > 0 else (-SATURATION if y < 0 else 0.0)
            cur[k] = y
        self.state = cur
        return [cur[i] for i in self.output_index]

    def batch(self, X: np.ndarray) -> np.ndarray:
        """Evaluate many independent inputs from a zero recurrent state.

        Returns shape ``(n_samples, n_outputs)``; the stored state is untouched.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.input_size:
            raise ValueError(f"expected inputs of shape (n, {self.input_size}), got {X.shape}")
        outs = []
        for _, af, bias, in_idx, in_w, ff_idx, ff_w, _, _ in self._plan:
            acc = np.full(X.shape[0], bias)
            if in_idx:
                acc = acc + X[:, in_idx] @ np.asarray(in_w)
            for i, w in zip(ff_idx, ff_w):
                acc = acc + w * outs[i]
            y = np.clip(np.nan_to_num(apply_af_vec(af, acc), nan=0.0), -SATURATION, SATURATION)
            outs.append(y)
        return np.column_stack([outs[i] for i in self.output_index])

    def flat_inputs(self, sensor_values: Mapping[str, Sequence[float]]) -> list[float]:
        x: list[float] = []
        for sid in self.sensor_ids:
            try:
                v = sensor_values[sid]
            except KeyError:
                raise ValueError(f"missing input for sensor {sid}") from None
            if len(v) != self.sensor_sizes[sid]:
                raise ValueError(f"sensor {sid}: expected {self.sensor_sizes[sid]} values, got {len(v)}")
            x.extend(float(e) for e in v)
        return x

    def evaluate(self, sensor_values: Mapping[str, Sequence[float]]) -> list[float]:
        return self.step(self.flat_inputs(sensor_values))


def to_phenotype(g: Genotype) -> Network:
    return Network(g)
