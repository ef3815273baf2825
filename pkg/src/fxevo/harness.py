"""Benchmark arms, generalization probes, run statistics and report files."""

from __future__ import annotations

import math
import re
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .agents import MarketEvaluator
from .evolution import EvolutionConfig, GenerationRecord, Individual, evolve
from .market import DEFAULT_PARAMS, MarketParams, buy_and_hold, max_possible
from .neuralnet import (ActuatorGene, Genotype, SensorGene, internals_sensor, seed_genotype,
                        sliding_window_sensor, trade_actuator)
from .pricefeed import PriceSeries, load_csv, split, synth_series
from .substrate import SubstrateSpec, preprocessor_arity

PLI_WINDOWS = (5, 10, 20, 50, 100)
PCI_CHARTS = ((5, 10), (5, 20), (10, 10), (10, 20), (20, 10), (20, 20), (50, 10), (50, 20))

PROFILES = {
    "full": {"max_evaluations": 25000, "runs": 10},
    "desk": {"max_evaluations": 2000, "runs": 3},
}

RESULT_COLUMNS = ("TrnAvg", "TrnBst", "TstWrst", "TstAvg", "TstStd", "TstBst", "ExperimentName",
                  "TstBstProfitShare")


@dataclass(frozen=True)
class ExperimentSpec:
    """One benchmark arm. ``window`` is set for price-list arms, ``chart`` for chart arms."""

    name: str
    window: Optional[int] = None
    chart: Optional[tuple[int, int]] = None
    runs: int = 10
    max_evaluations: int = 25000
    population: int = 10
    probe_interval: int = 500
    dataset: Optional[str] = None
    train_len: int = 800
    tuning_patience: int = 10
    restarts: int = 2
    perturbation_range: float = 1.0
    size_penalty: float = 0.5
    jordan: bool = True
    normalize_inputs: bool = False
    pooled: bool = False

    def __post_init__(self):
        if (self.window is None) == (self.chart is None):
            raise ValueError(f"{self.name}: set exactly one of window or chart")
        if self.runs < 1:
            raise ValueError(f"{self.name}: runs must be >= 1")
        if self.window is not None and self.window < 1:
            raise ValueError(f"{self.name}: window must be >= 1")

    @property
    def kind(self) -> str:
        return "PLI" if self.window is not None else "PCI"

    @property
    def lookback(self) -> int:
        return self.window if self.window is not None else self.chart[0]

    def substrate_spec(self) -> SubstrateSpec:
        h, v = self.chart
        return SubstrateSpec(h, v, jordan=self.jordan, normalize_inputs=self.normalize_inputs)

    def evolution_config(self, seed: int) -> EvolutionConfig:
        return EvolutionConfig(population_size=self.population, max_evaluations=self.max_evaluations,
                               tuning_patience=self.tuning_patience, restarts=self.restarts,
                               perturbation_range=self.perturbation_range,
                               size_penalty=self.size_penalty, seed=seed,
                               probe_interval=self.probe_interval)

    def seeder(self):
        return _Seeder(self)


class _Seeder:
    # a class rather than a closure so specs can cross process boundaries
    def __init__(self, spec: ExperimentSpec):
        self.spec = spec

    def __call__(self, rng) -> Genotype:
        spec = self.spec
        if spec.kind == "PLI":
            sensors = [sliding_window_sensor(spec.window), internals_sensor()]
            return seed_genotype(sensors, [trade_actuator()], rng, sensor_pool=sensors,
                                 actuator_pool=[trade_actuator()])
        sub = spec.substrate_spec()
        dim = sub.dimensionality
        coords = SensorGene("", "coordinates", preprocessor_arity("cartesian", dim),
                            {"preprocessor": "cartesian", "dim": dim})
        weight = ActuatorGene("", "weight", 1)
        return seed_genotype([coords], [weight], rng, encoding="substrate", substrate_spec=sub,
                             actuator_pool=[weight])


def experiment_names() -> list[str]:
    return ([f"SlidingWindow{n}" for n in PLI_WINDOWS]
            + [f"ChartPlane{h}X{v}" for h, v in PCI_CHARTS])


def experiment(name: str, profile: str = "full", **overrides) -> ExperimentSpec:
    """The named benchmark arm at a budget profile, with field overrides."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    m = re.fullmatch(r"SlidingWindow(\d+)", name)
    if m:
        base = ExperimentSpec(name, window=int(m.group(1)))
    else:
        m = re.fullmatch(r"ChartPlane(\d+)X(\d+)", name)
        if not m:
            raise ValueError(f"unknown experiment {name!r}")
        base = ExperimentSpec(name, chart=(int(m.group(1)), int(m.group(2))))
    return replace(base, **{**PROFILES[profile], **overrides})


def all_experiments(profile: str = "full", **overrides) -> list[ExperimentSpec]:
    return [experiment(n, profile, **overrides) for n in experiment_names()]


# --- runs ------------------------------------------------------------------------

@dataclass
class ProbeRecord:
    run: int
    evaluations: int
    train_best: float
    test_best: float


@dataclass
class RunResult:
    run: int
    seed: int
    final_train_best: float
    probes: list[ProbeRecord]
    history: list[GenerationRecord]
    best: Individual

    @property
    def best_test(self) -> float:
        return max(p.test_best for p in self.probes)


@dataclass
class RunStats:
    TrnAvg: float
    TrnBst: float
    TstWrst: float
    TstAvg: float
    TstStd: float
    TstBst: float
    runs: list[RunResult] = field(default_factory=list, repr=False)

    @property
    def probes(self) -> list[ProbeRecord]:
        return [p for r in self.runs for p in r.probes]


def run_seed(master_seed: int, run: int) -> int:
    return int(np.random.SeedSequence([master_seed, run]).generate_state(1)[0])


def default_series() -> PriceSeries:
    """Stand-in data when no dataset is given: a seeded 1000-point 15-minute random walk."""
    return synth_series("random_walk", 1000, seed=0, base=1.45, sigma=0.0005)


def load_series(spec: ExperimentSpec, gap_tolerant: bool = False) -> PriceSeries:
    return load_csv(spec.dataset, gap_tolerant) if spec.dataset else default_series()


def run_once(spec: ExperimentSpec, series: PriceSeries, run: int, master_seed: int,
             params: MarketParams = DEFAULT_PARAMS) -> RunResult:
    train, test = split(series, spec.train_len)
    if len(train) < spec.lookback:
        raise ValueError(f"{spec.name}: training segment shorter than lookback {spec.lookback}")
    seed = run_seed(master_seed, run)
    train_eval = MarketEvaluator(train, params)
    # the test evaluator sees only the test segment plus lookback closes from the training tail
    test_eval = MarketEvaluator(test, params, history=train)
    probes: list[ProbeRecord] = []

    def probe(best: Individual, evaluations: int) -> float:
        f = test_eval(best.genotype)
        probes.append(ProbeRecord(run, evaluations, best.fitness, f))
        return f

    best, history = evolve(spec.evolution_config(seed), spec.seeder(), train_eval, probe)
    return RunResult(run, seed, history[-1].best_fitness, probes, history, best)


def _run_job(args) -> RunResult:
    spec, series, run, master_seed, params = args
    return run_once(spec, series, run, master_seed, params)


def run_experiment(spec: ExperimentSpec, master_seed: int, series: PriceSeries | None = None,
                   params: MarketParams = DEFAULT_PARAMS, jobs: int = 1) -> RunStats:
    series = series if series is not None else load_series(spec)
    if len(series) <= spec.train_len:
        raise ValueError(f"{spec.name}: dataset of {len(series)} points leaves no test segment "
                         f"after {spec.train_len} training points")
    tasks = [(spec, series, r, master_seed, params) for r in range(spec.runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, tasks))
    else:
        results = [_run_job(t) for t in tasks]
    return aggregate(results, pooled=spec.pooled)


def aggregate(results: Sequence[RunResult], pooled: bool = False) -> RunStats:
    """Table statistics over runs.

    Training figures use each run's final-generation best. Test figures use
    each run's best probe, or every probe when ``pooled``.
    """
    if not results:
        raise ValueError("cannot aggregate zero runs")
    train = [r.final_train_best for r in results]
    if pooled:
        test = [p.test_best for r in results for p in r.probes]
    else:
        test = [r.best_test for r in results if r.probes]
    if not test:
        raise ValueError("no probe results to aggregate")
    lo, hi = min(test), max(test)
    avg = min(max(statistics.fmean(test), lo), hi)
    return RunStats(TrnAvg=statistics.fmean(train), TrnBst=max(train), TstWrst=lo, TstAvg=avg,
                    TstStd=statistics.pstdev(test), TstBst=hi, runs=list(results))


# --- baselines and reports -----------------------------------------------------------

@dataclass
class Baselines:
    buy_hold_train: float
    buy_hold_test: float
    max_train: float
    max_test: float


def baseline_report(series: PriceSeries, train_len: int,
                    params: MarketParams = DEFAULT_PARAMS) -> Baselines:
    train, test = split(series, train_len)
    return Baselines(buy_and_hold(train, params), buy_and_hold(test, params),
                     max_possible(train, params), max_possible(test, params))


def format_baselines(b: Baselines) -> str:
    rows = [("", "Train", "Test"),
            ("Buy & Hold", f"{b.buy_hold_train:.2f}", f"{b.buy_hold_test:.2f}"),
            ("Max Possible", f"{b.max_train:.2f}", f"{b.max_test:.2f}")]
    return "\n".join(f"{a:<14}{c:>10}{d:>10}" for a, c, d in rows)


def profit_share(fitness: float, best_possible: float, start: float = DEFAULT_PARAMS.start_balance) -> float:
    """Fraction of the available profit captured; NaN when nothing was available."""
    available = best_possible - start
    return (fitness - start) / available if available > 0 else math.nan


def _num(x: Optional[float]) -> str:
    return "N/A" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"


def emit_outputs(stats: Mapping[str, RunStats], out_dir: str | Path,
                 baselines: Baselines | None = None,
                 config: Mapping[str, object] | None = None) -> list[Path]:
    """Write ``results.tsv``, ``probes_<name>.tsv``, ``history_<name>.tsv`` and ``config_snapshot.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    lines = ["\t".join(RESULT_COLUMNS)]
    for name, st in stats.items():
        share = profit_share(st.TstBst, baselines.max_test) if baselines else None
        lines.append("\t".join([_num(st.TrnAvg), _num(st.TrnBst), _num(st.TstWrst), _num(st.TstAvg),
                                _num(st.TstStd), _num(st.TstBst), name, _num(share)]))
    if baselines is not None:
        lines.append("\t".join([_num(baselines.buy_hold_train), "N/A", "N/A",
                                _num(baselines.buy_hold_test), "N/A", "N/A", "Buy & Hold", "N/A"]))
        lines.append("\t".join(["N/A", _num(baselines.max_train), "N/A", "N/A", "N/A",
                                _num(baselines.max_test), "Max Possible", "N/A"]))
    path = out / "results.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(path)
    for name, st in stats.items():
        path = out / f"probes_{name}.tsv"
        rows = ["run\tevaluations\ttrain_best\ttest_best"]
        rows += [f"{p.run}\t{p.evaluations}\t{p.train_best:.6f}\t{p.test_best:.6f}" for p in st.probes]
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        written.append(path)
        path = out / f"history_{name}.tsv"
        rows = ["run\tevaluations\tbest_train_fitness\tbest_test_fitness"]
        for r in st.runs:
            for h in r.history:
                test = "" if h.best_test_fitness is None else f"{h.best_test_fitness:.6f}"
                rows.append(f"{r.run}\t{h.evaluations}\t{h.best_fitness:.6f}\t{test}")
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        written.append(path)
        for r in st.runs:
            path = out / f"best_{name}_run{r.run}.json"
            path.write_text(r.best.genotype.to_json() + "\n", encoding="utf-8")
            written.append(path)
    if config is not None:
        path = out / "config_snapshot.txt"
        path.write_text(format_config(config), encoding="utf-8")
        written.append(path)
    return written


def read_probes(path: str | Path) -> list[ProbeRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split("\t") != ["run", "evaluations", "train_best", "test_best"]:
        raise ValueError(f"{path} is not a probe file")
    out = []
    for line in lines[1:]:
        if line.strip():
            run, ev, tr, te = line.split("\t")
            out.append(ProbeRecord(int(run), int(ev), float(tr), float(te)))
    return out


@dataclass
class Consistency:
    per_run: dict[int, float]
    pooled: float


def generalization_consistency(probes: Iterable[ProbeRecord], threshold: float = 320.0) -> Consistency:
    """Share of probes whose test fitness reaches ``threshold``, per run and pooled."""
    probes = list(probes)
    if not probes:
        raise ValueError("no probes given")
    by_run: dict[int, list[float]] = {}
    for p in probes:
        by_run.setdefault(p.run, []).append(p.test_best)
    per_run = {r: sum(v >= threshold for v in vals) / len(vals) for r, vals in sorted(by_run.items())}
    pooled = sum(p.test_best >= threshold for p in probes) / len(probes)
    return Consistency(per_run, pooled)


# --- configuration files -----------------------------------------------------------

def parse_config(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def format_config(config: Mapping[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config.items())

