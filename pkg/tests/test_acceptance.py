"""Acceptance suite: one recorded PASS/FAIL line per criterion (see the terminal summary)."""

import math
from fractions import Fraction
import os
import random
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from fxevo.chartizer import BODY, MARKER, rasterize
from fxevo.evolution import EvolutionConfig, Individual, evolve, mutate, tune
from fxevo.harness import (RESULT_COLUMNS, emit_outputs, experiment, experiment_names,
                           generalization_consistency, read_probes, run_experiment)
from fxevo.agents import MarketEvaluator
from fxevo.market import (FLAT, LONG, SHORT, TradeAccount, buy_and_hold, internals, max_possible,
                          networth, step)
from fxevo.neuralnet import seed_genotype, sliding_window_sensor, trade_actuator
from fxevo.pricefeed import PriceSeries, load_csv, split, synth_series, write_csv
from fxevo.substrate import SubstrateSpec, build_substrate

from oracles import check_genotype, enumerate_max, hand_count

TESTS = Path(__file__).parent
RESOLUTIONS = ((5, 10), (5, 20), (10, 10), (10, 20), (20, 10), (20, 20), (50, 10), (50, 20))
LEARN_SERIES = dict(kind="sine", length=1000, amp=0.0015, period=20.0, base=1.3)


# 1 -----------------------------------------------------------------------------------

def test_c01_max_possible_matches_enumeration(criterion):
    rng = np.random.default_rng(2024)
    worst, t0 = 0.0, time.perf_counter()
    for i in range(200):
        length = 2 + i % 11
        if i % 2:
            sigma = (0.0005, 0.005, 0.03)[i % 3]
            s = synth_series("random_walk", length, seed=i, sigma=sigma)
        else:
            s = synth_series("sine", length, amp=float(rng.uniform(0.0001, 0.08)),
                             period=float(rng.uniform(2.0, 12.0)), phase=float(rng.uniform(0, 6.3)))
        closes = s.as_array()
        worst = max(worst, abs(max_possible(closes) - enumerate_max(closes)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9
    criterion(1, ok, f"200 series, max |DP - enumeration| = {worst:.3g} (tol 1e-9), {elapsed:.1f}s")
    assert ok


# 2 -----------------------------------------------------------------------------------

def test_c02_market_hand_examples(criterion):
    sp = 0.00015
    checks = {}
    a = step(TradeAccount.fresh(), LONG, 1.30)
    checks["long units"] = (a.units, 5000 / 1.30015)
    checks["long hold no-op"] = (step(a, LONG, 1.31).balance, 300.0)
    checks["long close P&L"] = (step(a, FLAT, 1.31).balance, 300 + a.units * (1.31 - 1.30015))
    checks["long round trip"] = (step(a, FLAT, 1.30).balance, 300 - a.units * sp)
    s = step(TradeAccount.fresh(), SHORT, 1.30)
    checks["short units"] = (s.units, 5000 / 1.30)
    checks["short round trip"] = (step(s, FLAT, 1.30).balance, 300 - s.units * sp)
    checks["networth fresh"] = (networth(TradeAccount.fresh(), 1.3), 300.0)
    checks["networth at entry"] = (networth(a, 1.30), 300 - a.units * sp)
    checks["networth 1.32"] = (networth(a, 1.32), 300 + a.units * (1.32 - 1.30015))
    checks["buy&hold [1.0,1.1]"] = (buy_and_hold([1.0, 1.1]), 300 + (5000 / 1.00015) * (1.1 - 1.00015))
    checks["buy&hold constant"] = (buy_and_hold([1.3] * 6), 300 - 5000 / 1.30015 * sp)
    checks["max possible constant"] = (max_possible([1.3] * 6), 300.0)
    long1 = step(TradeAccount.fresh(), LONG, 1.00)
    checks["internals long pct"] = (internals(long1, 1.01)[2], 1.0)
    short1 = step(TradeAccount.fresh(), SHORT, 1.00)
    checks["internals short pct"] = (internals(short1, 1.01)[2], -1.0)
    bad = [k for k, (got, want) in checks.items() if abs(got - want) > 1e-9]
    ok = not bad
    criterion(2, ok, f"{len(checks) - len(bad)}/{len(checks)} hand examples within 1e-9"
              + (f"; failed: {', '.join(bad)}" if bad else ""))
    assert ok, bad


# 3 -----------------------------------------------------------------------------------

def _row(p, lo, hi, v):
    # exact rational bucketing; positions within 1e-9 of a boundary count as on it
    if hi == lo:
        return 0
    pos = (Fraction(p) - Fraction(lo)) * v / (Fraction(hi) - Fraction(lo))
    k = round(pos)
    if abs(pos - k) <= Fraction(1, 10**9):
        pos = Fraction(k)
    return min(v - 1, math.floor(pos))


def _raster_problems(w, v, raster):
    cells = raster.cells
    out = []
    if cells.shape != (len(w), v) or not np.isin(cells, (-1, 0, 1)).all():
        out.append("shape or values")
    lo, hi = min(w), max(w)
    rows = [_row(p, lo, hi, v) for p in w]
    if int((cells == MARKER).sum()) != len(w):
        out.append("marker count")
    for t, col in enumerate(cells):
        if (col == -1).all():
            out.append(f"column {t} all background")
        if col[rows[t]] != MARKER or (col == MARKER).sum() != 1:
            out.append(f"column {t} marker")
        want = 0 if t == 0 else max(0, abs(rows[t] - rows[t - 1]) - 1)
        if int((col == BODY).sum()) != want:
            out.append(f"column {t} body count")
    return out


def test_c03_chart_raster_invariants(criterion):
    rng = np.random.default_rng(3)
    failures, windows = [], 0
    for i in range(1000):
        h, v = RESOLUTIONS[i % len(RESOLUTIONS)]
        kind = i % 4
        if kind == 0:
            w = 1.3 * np.exp(np.cumsum(rng.normal(0, 0.001, h)))
        elif kind == 1:
            w = 1.3 + 0.01 * np.sin(np.arange(h) / rng.uniform(0.5, 5) + rng.uniform(0, 6))
        elif kind == 2:
            w = np.round(1.3 + rng.integers(-5, 6, h) * 0.0001, 4)  # many ties and flat stretches
        else:
            w = rng.uniform(0.5, 2.0, h)
        w = w.tolist()
        r = rasterize(w, v)
        problems = _raster_problems(w, v, r)
        for a in (0.5, 2.0, 10.0):
            b = float(rng.uniform(-1, 1))
            if not np.array_equal(rasterize([a * x + b for x in w], v).cells, r.cells):
                problems.append(f"scale covariance a={a}")
        if problems:
            failures.append((i, problems[:3]))
        windows += 1
    ok = not failures
    criterion(3, ok, f"{windows} windows over 8 resolutions, {len(failures)} with violations"
              + (f"; first {failures[0]}" if failures else ""))
    assert ok, failures[:5]


# 4 -----------------------------------------------------------------------------------

def test_c04_mutation_keeps_genotypes_valid(criterion):
    seeders = [experiment("SlidingWindow5").seeder(), experiment("ChartPlane10X10").seeder()]
    rng = random.Random(4)
    bad, applied, g = [], 0, None
    for i in range(10000):
        if i % 40 == 0:  # fresh lineage every 40 generations keeps genotypes a realistic size
            g = seeders[(i // 40) % 2](random.Random(i))
        child = mutate(g, rng)
        applied += 1
        problems = check_genotype(child)
        if child.size < g.size or child.link_count() < g.link_count():
            problems.append("structure decreased")
        if problems:
            bad.append((i, problems[:2]))
        g = child
    ok = not bad
    criterion(4, ok, f"{applied} mutation batches, {len(bad)} invariant violations")
    assert ok, bad[:5]


# 5 -----------------------------------------------------------------------------------

def _bowl(g):
    return -(g.neurons[0].in_links[0].weights[0] - 0.7) ** 2 + 500


def test_c05_tuning_contract(criterion):
    never_worse = close = 0
    for seed in range(100):
        g = seed_genotype([sliding_window_sensor(1)], [trade_actuator()], random.Random(seed), af="linear")
        start = _bowl(g)
        out = tune(Individual(g, start), _bowl, EvolutionConfig(), random.Random(1000 + seed))
        never_worse += out.fitness >= start
        close += abs(out.genotype.neurons[0].in_links[0].weights[0] - 0.7) <= 0.1
    ok = never_worse == 100 and close >= 90
    criterion(5, ok, f"fitness >= input in {never_worse}/100, within 0.1 of optimum in {close}/100 (need 90)")
    assert ok


# 6 -----------------------------------------------------------------------------------

def test_c06_best_fitness_monotone(criterion):
    closes = synth_series("sine", 400, amp=0.0015, period=20.0).as_array()
    seeder = experiment("SlidingWindow5").seeder()
    monotone, t0 = 0, time.perf_counter()
    for seed in range(20):
        cfg = EvolutionConfig(population_size=10, max_evaluations=2000, seed=seed)
        _, history = evolve(cfg, seeder, MarketEvaluator(closes))
        fits = [r.best_fitness for r in history]
        monotone += all(b >= a for a, b in zip(fits, fits[1:]))
    ok = monotone == 20
    criterion(6, ok, f"{monotone}/20 desk-scale histories monotone non-decreasing "
              f"({time.perf_counter() - t0:.0f}s)")
    assert ok


# 7 / 11 ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def learn_runs(tmp_path_factory):
    series = synth_series(**LEARN_SERIES)
    spec = experiment("SlidingWindow5", runs=10, max_evaluations=2000, population=10)
    t0 = time.perf_counter()
    stats = run_experiment(spec, 7, series)
    per_run = (time.perf_counter() - t0) / spec.runs
    out = tmp_path_factory.mktemp("learn")
    emit_outputs({spec.name: stats}, out)
    train, _ = split(series, spec.train_len)
    return stats, out / f"probes_{spec.name}.tsv", buy_and_hold(train), per_run


def test_c07_pli_beats_buy_and_hold(criterion, learn_runs):
    stats, _, bh, per_run = learn_runs
    fits = [r.final_train_best for r in stats.runs]
    wins = sum(f > bh for f in fits)
    ok = wins >= 8 and per_run < 300
    criterion(7, ok, f"{wins}/10 runs beat Buy&Hold {bh:.2f} on training (need 8); "
              f"median best {np.median(fits):.2f}; {per_run:.1f}s per run")
    assert ok


def test_c11_consistency_matches_hand_count(criterion, learn_runs):
    _, probe_file, _, _ = learn_runs
    lines = probe_file.read_text().splitlines()
    probes = read_probes(probe_file)
    # the fixed threshold, plus the probe median so both sides of the cut are populated
    median = float(np.median([p.test_best for p in probes]))
    notes, ok = [], True
    for threshold in (320.0, median):
        c = generalization_consistency(probes, threshold)
        pooled, per_run = hand_count(lines, threshold)
        same = c.pooled == pooled and c.per_run == per_run
        ok &= same
        notes.append(f"@{threshold:.2f}: {c.pooled:.4f} vs hand {pooled:.4f}"
                     f"{'' if same else ' MISMATCH'}")
    criterion(11, ok, f"{len(lines) - 1} probes; " + "; ".join(notes) + "; per-run fractions compared too")
    assert ok


# 8 -----------------------------------------------------------------------------------

def test_c08_substrate_determinism_and_count(criterion):
    spec = SubstrateSpec(10, 10)
    count = build_substrate(spec).connection_count()
    outs = []
    for hashseed in ("0", "12345"):
        env = dict(os.environ, PYTHONHASHSEED=hashseed)
        r = subprocess.run([sys.executable, str(TESTS / "paint_probe.py"), "11"], env=env,
                           capture_output=True, text=True, check=True)
        outs.append(r.stdout.strip())
    reported = int(outs[0].split()[0])
    ok = outs[0] == outs[1] and count == reported == (10 * 10 + 4) * 25 + 25 == 2625
    criterion(8, ok, f"digests {'identical' if outs[0] == outs[1] else 'differ'} across 2 processes; "
              f"connections {count} (expected 2625)")
    assert ok


# 9 -----------------------------------------------------------------------------------

def _cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "fxevo", *args], capture_output=True, text=True, cwd=cwd)


def test_c09_cli_reproducible(criterion, tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        r = _cli("run", "--experiment", "ChartPlane5X10", "--seed", "42", "--budget", "1000", "--out", str(d))
        assert r.returncode == 0, r.stderr
    files = ["results.tsv", "probes_ChartPlane5X10.tsv"]
    same = [(dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes() for f in files]
    ok = all(same)
    criterion(9, ok, ", ".join(f"{f} {'identical' if s else 'DIFFERENT'}" for f, s in zip(files, same)))
    assert ok


# 10 ----------------------------------------------------------------------------------

def test_c10_full_report_invariants(criterion, tmp_path):
    # an arbitrary user series: geometric walk with a trend change, 15-minute stamps
    rng = np.random.default_rng(10)
    steps = np.concatenate([rng.normal(0.0002, 0.0008, 500), rng.normal(-0.0001, 0.0012, 500)])
    closes = 1.42 * np.exp(np.cumsum(steps))
    data = tmp_path / "user.csv"
    write_csv(PriceSeries.from_closes(closes.tolist(), interval=900, start=1_600_000_000), data)
    out = tmp_path / "report"
    r = _cli("run", "--all", "--budget", "60", "--runs", "2", "--data", str(data), "--seed", "5",
             "--out", str(out))
    assert r.returncode == 0, r.stderr
    lines = (out / "results.tsv").read_text().splitlines()
    header, rows = lines[0].split("\t"), [l.split("\t") for l in lines[1:]]
    col = {name: i for i, name in enumerate(header)}
    problems = []
    if header != list(RESULT_COLUMNS):
        problems.append("header")
    names = [row[col["ExperimentName"]] for row in rows]
    if names != experiment_names() + ["Buy & Hold", "Max Possible"]:
        problems.append("row names")
    for row in rows[:13]:
        v = {k: float(row[i]) for k, i in col.items() if k.startswith(("Trn", "Tst")) and k != "TstBstProfitShare"}
        if not v["TstWrst"] <= v["TstAvg"] <= v["TstBst"]:
            problems.append(f"{row[col['ExperimentName']]} test ordering")
        if not v["TrnBst"] >= v["TrnAvg"]:
            problems.append(f"{row[col['ExperimentName']]} train ordering")
    bh, mp = rows[13], rows[14]
    bh_train, bh_test = float(bh[col["TrnAvg"]]), float(bh[col["TstAvg"]])
    mp_train, mp_test = float(mp[col["TrnBst"]]), float(mp[col["TstBst"]])
    if not (mp_train >= bh_train and mp_test >= bh_test):
        problems.append("max possible below buy and hold")
    train, test = split(load_csv(data), 800)
    if abs(bh_train - buy_and_hold(train)) > 1e-4 or abs(mp_test - max_possible(test)) > 1e-4:
        problems.append("baseline rows disagree with the market module")
    probe_files = sorted(out.glob("probes_*.tsv"))
    if len(probe_files) != 13:
        problems.append("probe files")
    ok = not problems
    criterion(10, ok, f"{len(rows)} rows (13 arms + 2 baselines); "
              f"B&H {bh_train:.2f}/{bh_test:.2f}, Max {mp_train:.2f}/{mp_test:.2f}"
              + (f"; problems: {problems}" if problems else ""))
    assert ok, problems
