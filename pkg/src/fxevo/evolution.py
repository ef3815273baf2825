"""Memetic neuroevolution: weight tuning by hill climbing, size-aware selection and additive mutation."""

from __future__ import annotations

import json
import logging
import math
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .neuralnet import (ACTIVATIONS, SEED_WEIGHT_RANGE, ActuatorGene, Genotype, InLink,
                        NeuronGene, SensorGene, validate)
from .substrate import preprocessor_arity

log = logging.getLogger(__name__)

Evaluator = Callable[[Genotype], float]
Seeder = Callable[[random.Random], Genotype]

# tune() checks the budget before every evaluation, so a run never overshoots it
MAX_OVERSHOOT = 0

DIRECT_OPS = ("add_neuron", "splice", "add_outlink", "add_inlink", "add_sensor", "add_actuator")
SUBSTRATE_OPS = DIRECT_OPS + ("add_coord_preprocessor", "add_coord_postprocessor")


@dataclass
class EvolutionConfig:
    """Evolution hyperparameters.

    ``tuning_patience`` is the number of consecutive non-improving
    perturbations before a random restart; ``restarts`` caps the restarts
    per tuning phase. ``probe_final`` also probes the last champion when the
    run does not end on a probe boundary.
    """

    population_size: int = 10
    max_evaluations: int = 25000
    tuning_patience: int = 10
    restarts: int = 2
    perturbation_range: float = 1.0
    size_penalty: float = 0.5
    seed: int = 0
    probe_interval: int = 500
    probe_final: bool = True
    goal_fitness: Optional[float] = None
    time_limit: Optional[float] = None
    mutation_retries: int = 10

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.max_evaluations <= 0:
            raise ValueError("max_evaluations must be positive")
        if self.tuning_patience < 1:
            raise ValueError("tuning_patience must be >= 1")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")
        if self.perturbation_range <= 0:
            raise ValueError("perturbation_range must be positive")
        if self.probe_interval <= 0:
            raise ValueError("probe_interval must be positive")


@dataclass(eq=False)
class Individual:
    genotype: Genotype
    fitness: Optional[float] = None
    id: int = 0
    eval_count: int = 0

    @property
    def size(self) -> int:
        return len(self.genotype.neurons)


@dataclass
class GenerationRecord:
    generation: int
    evaluations: int
    best_fitness: float
    best_test_fitness: Optional[float] = None


class Budget:
    """Evaluation counter shared by every tuning phase of a run."""

    def __init__(self, limit: Optional[int] = None, used: int = 0):
        self.limit = limit
        self.used = used

    @property
    def exhausted(self) -> bool:
        return self.limit is not None and self.used >= self.limit

    def take(self) -> bool:
        if self.exhausted:
            return False
        self.used += 1
        return True


def derive_rng(seed: int, *parts) -> random.Random:
    return random.Random(":".join(str(p) for p in (seed,) + parts))


# --- local search --------------------------------------------------------------

def _affected(g: Genotype) -> list[NeuronGene]:
    ids = g.last_mutated_ids
    chosen = [n for n in g.neurons if n.id in ids]
    return chosen or list(g.neurons)


def _perturb(g: Genotype, rng: random.Random, spread: float) -> Genotype:
    child = g.clone()
    neurons = _affected(child)
    total = sum(n.weight_count() for n in neurons)
    p = 1.0 / math.sqrt(total)
    touched = False
    for n in neurons:
        for link in n.in_links:
            w = link.weights
            for i in range(len(w)):
                if rng.random() < p:
                    w[i] += rng.uniform(-spread, spread)
                    touched = True
        if rng.random() < p:
            n.bias += rng.uniform(-spread, spread)
            touched = True
    if not touched:
        # an untouched candidate would only waste an evaluation
        k = rng.randrange(total)
        for n in neurons:
            if k < n.weight_count() - 1:
                for link in n.in_links:
                    if k < len(link.weights):
                        link.weights[k] += rng.uniform(-spread, spread)
                        break
                    k -= len(link.weights)
                break
            if k == n.weight_count() - 1:
                n.bias += rng.uniform(-spread, spread)
                break
            k -= n.weight_count()
    return child


def _restart(g: Genotype, rng: random.Random) -> Genotype:
    child = g.clone()
    r = SEED_WEIGHT_RANGE
    for n in _affected(child):
        for link in n.in_links:
            link.weights = [rng.uniform(-r, r) for _ in link.weights]
        n.bias = rng.uniform(-r, r)
    return child


def tune(ind: Individual, evaluator: Evaluator, cfg: EvolutionConfig,
         rng: Optional[random.Random] = None, budget: Optional[Budget] = None) -> Individual:
    """Stochastic hill climbing with random restarts over the last-mutated neurons.

    Only strict improvements are accepted, so the result is never worse than
    the input. Stops after ``tuning_patience`` consecutive failures once all
    restarts are spent, or when the budget runs out.
    """
    rng = rng or derive_rng(cfg.seed, "tune", ind.id)
    budget = budget or Budget()
    used = 0

    def score(g: Genotype) -> Optional[float]:
        nonlocal used
        if not budget.take():
            return None
        used += 1
        return float(evaluator(g))

    base = ind.genotype
    start_f = ind.fitness
    if start_f is None:
        start_f = score(base)
        if start_f is None:
            return ind
    best_g, best_f = base, start_f
    cur_g, cur_f = base, start_f
    fails = restarts = 0
    while True:
        if fails >= cfg.tuning_patience:
            if restarts >= cfg.restarts:
                break
            restarts += 1
            fails = 0
            cand = _restart(best_g, rng)
            f = score(cand)
            if f is None:
                break
            cur_g, cur_f = cand, f
            if f > best_f:
                best_g, best_f = cand, f
            continue
        cand = _perturb(cur_g, rng, cfg.perturbation_range)
        f = score(cand)
        if f is None:
            break
        if f > cur_f:
            cur_g, cur_f = cand, f
            fails = 0
            if f > best_f:
                best_g, best_f = cand, f
        else:
            fails += 1
    return Individual(best_g, best_f, ind.id, ind.eval_count + used)


# --- selection -----------------------------------------------------------------

def effective_score(ind: Individual, size_penalty: float) -> float:
    if ind.fitness is None:
        raise ValueError(f"individual {ind.id} has no fitness")
    return ind.fitness / (ind.size ** size_penalty)


def rank(pop: list[Individual], size_penalty: float = 0.5) -> list[Individual]:
    return sorted(pop, key=lambda x: (-effective_score(x, size_penalty), x.size, x.id))


def select(ranked: list[Individual]) -> list[Individual]:
    return ranked[:math.ceil(len(ranked) / 2)]


def allot_offspring(survivors: list[Individual], target_population: int,
                    size_penalty: float = 0.5) -> list[tuple[Individual, int]]:
    """Offspring counts proportional to effective score, largest-remainder rounding."""
    if not survivors:
        raise ValueError("no survivors to breed from")
    scores = [effective_score(s, size_penalty) for s in survivors]
    total = sum(scores)
    if total <= 0 or any(s <= 0 for s in scores):
        raise ValueError("offspring allotment needs positive scores")
    slots = max(0, target_population - len(survivors))
    quotas = [s / total * slots for s in scores]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(survivors)), key=lambda i: (-(quotas[i] - counts[i]), -scores[i], i))
    for i in order[:slots - sum(counts)]:
        counts[i] += 1
    return list(zip(survivors, counts))


# --- mutation ------------------------------------------------------------------

def _w(rng: random.Random) -> float:
    return rng.uniform(-SEED_WEIGHT_RANGE, SEED_WEIGHT_RANGE)


def _new_neuron(g: Genotype, rng: random.Random, links: list[InLink]) -> NeuronGene:
    return NeuronGene(g.new_id("n"), rng.choice(ACTIVATIONS), links, _w(rng))


def _link_from(g: Genotype, source: str, target: NeuronGene, rng: random.Random) -> InLink:
    sensors = {s.id: s for s in g.sensors}
    if source in sensors:
        return InLink(source, [_w(rng) for _ in range(sensors[source].vl)])
    recurrent = source == target.id or g.feedforward_reaches(target.id, source)
    return InLink(source, [_w(rng)], recurrent)


def _op_add_neuron(g: Genotype, rng: random.Random) -> bool:
    source = rng.choice([s.id for s in g.sensors] + [n.id for n in g.neurons])
    target = rng.choice(g.neurons)
    sensors = {s.id: s for s in g.sensors}
    vl = sensors[source].vl if source in sensors else 1
    new = _new_neuron(g, rng, [InLink(source, [_w(rng) for _ in range(vl)])])
    # new -> target closes a cycle exactly when target already feeds source
    recurrent = source == target.id or g.feedforward_reaches(target.id, source)
    target.in_links.append(InLink(new.id, [_w(rng)], recurrent))
    g.neurons.append(new)
    g.last_mutated_ids |= {new.id, target.id}
    return True


def _op_splice(g: Genotype, rng: random.Random) -> bool:
    neuron_ids = {n.id for n in g.neurons}
    sites = [(n, link) for n in g.neurons for link in n.in_links
             if link.source in neuron_ids and link.source != n.id]
    sites += [(a, i) for a in g.actuators for i in range(len(a.fanin))]
    if not sites:
        return False
    holder, where = rng.choice(sites)
    if isinstance(holder, ActuatorGene):
        upstream = holder.fanin[where]
        new = _new_neuron(g, rng, [InLink(upstream, [_w(rng)])])
        holder.fanin[where] = new.id
        touched = {new.id}
    else:
        upstream = where.source
        new = _new_neuron(g, rng, [InLink(upstream, [_w(rng)])])
        idx = holder.in_links.index(where)
        holder.in_links[idx] = InLink(new.id, [_w(rng)], where.recurrent)
        touched = {new.id, holder.id}
    g.neurons.append(new)
    g.last_mutated_ids |= touched
    return True


def _op_add_outlink(g: Genotype, rng: random.Random) -> bool:
    source = rng.choice(g.neurons)
    targets = [n for n in g.neurons if source.id not in n.sources()]
    if not targets:
        return False
    target = rng.choice(targets)
    target.in_links.append(_link_from(g, source.id, target, rng))
    g.last_mutated_ids.add(target.id)
    return True


def _op_add_inlink(g: Genotype, rng: random.Random) -> bool:
    target = rng.choice(g.neurons)
    have = target.sources()
    sources = [x for x in [s.id for s in g.sensors] + [n.id for n in g.neurons] if x not in have]
    if not sources:
        return False
    target.in_links.append(_link_from(g, rng.choice(sources), target, rng))
    g.last_mutated_ids.add(target.id)
    return True


def _attach_sensor(g: Genotype, sensor: SensorGene, rng: random.Random) -> None:
    g.sensors.append(sensor)
    target = rng.choice(g.neurons)
    target.in_links.append(InLink(sensor.id, [_w(rng) for _ in range(sensor.vl)]))
    g.last_mutated_ids.add(target.id)


def _op_add_sensor(g: Genotype, rng: random.Random) -> bool:
    used = {s.signature() for s in g.sensors}
    unused = [s for s in g.sensor_pool if s.signature() not in used]
    if not unused:
        return False
    tpl = rng.choice(unused)
    _attach_sensor(g, SensorGene(g.new_id("s"), tpl.kind, tpl.vl, dict(tpl.params)), rng)
    return True


def _op_add_actuator(g: Genotype, rng: random.Random) -> bool:
    used = {a.signature() for a in g.actuators}
    unused = [a for a in g.actuator_pool if a.signature() not in used]
    if not unused:
        return False
    tpl = rng.choice(unused)
    fanin = [rng.choice(g.neurons).id for _ in range(tpl.vl)]
    g.actuators.append(ActuatorGene(g.new_id("a"), tpl.kind, tpl.vl, fanin))
    g.last_mutated_ids |= set(fanin)
    return True


def _op_add_coord_preprocessor(g: Genotype, rng: random.Random) -> bool:
    spec = g.substrate_spec
    used = set(g.preprocessors)
    unused = [k for k in spec.preprocessor_pool if k not in used]
    if not unused:
        return False
    kind = rng.choice(unused)
    dim = spec.dimensionality
    sensor = SensorGene(g.new_id("s"), "coordinates", preprocessor_arity(kind, dim),
                        {"preprocessor": kind, "dim": dim})
    _attach_sensor(g, sensor, rng)
    return True


def _op_add_coord_postprocessor(g: Genotype, rng: random.Random) -> bool:
    unused = [k for k in g.substrate_spec.postprocessor_pool if k not in g.postprocessors]
    if not unused:
        return False
    g.postprocessors.append(rng.choice(unused))
    g.last_mutated_ids |= {src for a in g.actuators for src in a.fanin}
    return True


OPERATORS: dict[str, Callable[[Genotype, random.Random], bool]] = {
    "add_neuron": _op_add_neuron,
    "splice": _op_splice,
    "add_outlink": _op_add_outlink,
    "add_inlink": _op_add_inlink,
    "add_sensor": _op_add_sensor,
    "add_actuator": _op_add_actuator,
    "add_coord_preprocessor": _op_add_coord_preprocessor,
    "add_coord_postprocessor": _op_add_coord_postprocessor,
}


def operator_kinds(g: Genotype) -> tuple[str, ...]:
    return SUBSTRATE_OPS if g.encoding == "substrate" else DIRECT_OPS


def apply_operator(g: Genotype, kind: str, rng: random.Random) -> bool:
    if kind not in operator_kinds(g):
        raise ValueError(f"operator {kind!r} does not apply to {g.encoding} genotypes")
    return OPERATORS[kind](g, rng)


def mutation_count(size: int, rng: random.Random) -> int:
    return rng.randint(1, max(1, math.isqrt(size)))


def mutate(parent: Genotype, rng: random.Random, retries: int = 10) -> Genotype:
    """Clone ``parent`` and apply between 1 and sqrt(size) random additive operators."""
    child = parent.clone()
    child.last_mutated_ids = set()
    child.generation = parent.generation + 1
    kinds = operator_kinds(child)
    for _ in range(mutation_count(parent.size, rng)):
        for _ in range(retries):
            if OPERATORS[rng.choice(kinds)](child, rng):
                break
    if not child.last_mutated_ids:
        child.last_mutated_ids = {n.id for n in child.neurons}
    validate(child)
    return child


# --- generational loop ------------------------------------------------------------

CHECKPOINT_FORMAT = "fxevo-checkpoint"


def _champion(pop: list[Individual]) -> Individual:
    return min(pop, key=lambda x: (-x.fitness, x.size, x.id))


def evolve(cfg: EvolutionConfig, seeder: Seeder, evaluator: Evaluator,
           probe: Optional[Callable[[Individual, int], Optional[float]]] = None, *,
           checkpoint_dir: str | Path | None = None,
           resume_from: str | Path | None = None) -> tuple[Individual, list[GenerationRecord]]:
    """Run the generational memetic loop until the evaluation budget is spent.

    The highest-fitness individual always survives selection, which keeps
    the best training fitness monotone. ``probe(best, evaluations)`` fires
    once per ``probe_interval`` multiple crossed, checked after each
    generation's tuning; its return value is stored in the history.
    """
    started = time.monotonic()
    budget = Budget(cfg.max_evaluations)
    history: list[GenerationRecord] = []
    next_probe = cfg.probe_interval
    last_probe_at = 0
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        gen = state["generation"]
        budget.used = state["evaluations"]
        next_probe = state["next_probe"]
        last_probe_at = state["last_probe_at"]
        next_ind = state["next_id"]
        history = state["history"]
        population = state["population"]
        resumed = True
    else:
        gen = 0
        population = [Individual(seeder(derive_rng(cfg.seed, "seed", i)), None, i)
                      for i in range(cfg.population_size)]
        next_ind = cfg.population_size
        resumed = False

    while True:
        if not resumed:
            tuned = []
            for ind in population:
                if ind.fitness is None:
                    ind = tune(ind, evaluator, cfg, derive_rng(cfg.seed, "tune", gen, ind.id), budget)
                if ind.fitness is not None:
                    tuned.append(ind)
            population = tuned
            if not population:
                raise RuntimeError("evaluation budget exhausted before any individual was scored")
            best = _champion(population)
            record = GenerationRecord(gen, budget.used, best.fitness)
            history.append(record)
            while probe is not None and budget.used >= next_probe:
                record.best_test_fitness = probe(best, next_probe)
                last_probe_at = next_probe
                next_probe += cfg.probe_interval
            log.debug("generation %d: %d evaluations, best %.4f", gen, budget.used, best.fitness)
            if checkpoint_dir is not None:
                save_checkpoint(Path(checkpoint_dir) / f"gen_{gen:05d}.json", cfg, gen, budget.used,
                                next_probe, last_probe_at, next_ind, history, population)
        resumed = False
        best = _champion(population)
        done = (budget.exhausted
                or (cfg.goal_fitness is not None and best.fitness >= cfg.goal_fitness)
                or (cfg.time_limit is not None and time.monotonic() - started >= cfg.time_limit))
        if done:
            break
        survivors = select(rank(population, cfg.size_penalty))
        if not any(s is best for s in survivors):
            survivors[-1] = best
        offspring = []
        for parent, count in allot_offspring(survivors, cfg.population_size, cfg.size_penalty):
            for _ in range(count):
                rng = derive_rng(cfg.seed, "mutate", gen, next_ind)
                offspring.append(Individual(mutate(parent.genotype, rng, cfg.mutation_retries), None, next_ind))
                next_ind += 1
        population = survivors + offspring
        gen += 1

    best = _champion(population)
    if probe is not None and cfg.probe_final and last_probe_at < budget.used:
        history[-1].best_test_fitness = probe(best, budget.used)
    return best, history


def save_checkpoint(path: Path, cfg: EvolutionConfig, generation: int, evaluations: int,
                    next_probe: int, last_probe_at: int, next_id: int,
                    history: list[GenerationRecord], population: list[Individual]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(cfg),
        "generation": generation,
        "evaluations": evaluations,
        "next_probe": next_probe,
        "last_probe_at": last_probe_at,
        "next_id": next_id,
        "history": [asdict(r) for r in history],
        "population": [
            {"id": ind.id, "fitness": ind.fitness, "eval_count": ind.eval_count,
             "genotype": ind.genotype.to_dict()}
            for ind in population
        ],
    }
    path.write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an evolution checkpoint")
    doc["history"] = [GenerationRecord(**r) for r in doc["history"]]
    doc["population"] = [
        Individual(Genotype.from_dict(p["genotype"]), p["fitness"], p["id"], p["eval_count"])
        for p in doc["population"]
    ]
    return doc


def write_history(history: list[GenerationRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("evaluations\tbest_train_fitness\tbest_test_fitness\n")
        for r in history:
            test = "" if r.best_test_fitness is None else f"{r.best_test_fitness:.6f}"
            fh.write(f"{r.evaluations}\t{r.best_fitness:.6f}\t{test}\n")
