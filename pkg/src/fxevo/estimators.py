"""scikit-learn compatible wrappers around the chartizer and the neuroevolution loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .agents import MarketEvaluator, make_agent
from .chartizer import flatten, rasterize
from .evolution import EvolutionConfig, evolve
from .harness import ExperimentSpec
from .market import MarketParams, evaluate_agent


class ChartRasterizer(TransformerMixin, BaseEstimator):
    """Turn price windows (one per row) into flattened ternary chart rasters.

    Parameters
    ----------
    height : int
        Number of price buckets (vertical resolution).
    """

    def __init__(self, height=10):
        self.height = height

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if self.height < 1:
            raise ValueError(f"height must be >= 1, got {self.height}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return np.vstack([flatten(rasterize(row, self.height))[0] for row in X])


def _closes(X) -> np.ndarray:
    X = check_array(X, dtype=float, ensure_2d=False)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError("expected a 1-D close series or an (n, 1) column")
        X = X[:, 0]
    if len(X) < 2 or np.any(X <= 0):
        raise ValueError("close series needs at least 2 strictly positive prices")
    return X


class NeuroTrader(BaseEstimator):
    """Evolve a trading agent on a close-price series.

    Parameters
    ----------
    encoding : {"direct", "substrate"}
        Price-list network or chart-reading substrate.
    window : int
        Sliding-window length for the direct encoding.
    chart_shape : tuple of int
        ``(points, buckets)`` of the chart plane for the substrate encoding.
    population_size, max_evaluations, tuning_patience, restarts,
    perturbation_range, size_penalty
        Evolution settings, see :class:`fxevo.evolution.EvolutionConfig`.
    spread : float
        Flat transaction spread of the simulated market.
    random_state : int
        Master seed; equal seeds give identical fits.

    Attributes
    ----------
    best_ : Individual
        Champion after the budget is spent.
    history_ : list of GenerationRecord
    """

    def __init__(self, encoding="direct", window=5, chart_shape=(10, 10), population_size=10,
                 max_evaluations=2000, tuning_patience=10, restarts=2, perturbation_range=1.0,
                 size_penalty=0.5, spread=0.00015, random_state=0):
        self.encoding = encoding
        self.window = window
        self.chart_shape = chart_shape
        self.population_size = population_size
        self.max_evaluations = max_evaluations
        self.tuning_patience = tuning_patience
        self.restarts = restarts
        self.perturbation_range = perturbation_range
        self.size_penalty = size_penalty
        self.spread = spread
        self.random_state = random_state

    def _spec(self) -> ExperimentSpec:
        if self.encoding == "direct":
            return ExperimentSpec("estimator", window=self.window)
        if self.encoding == "substrate":
            return ExperimentSpec("estimator", chart=tuple(self.chart_shape))
        raise ValueError(f"encoding must be 'direct' or 'substrate', got {self.encoding!r}")

    def fit(self, X, y=None):
        closes = _closes(X)
        spec = self._spec()
        cfg = EvolutionConfig(population_size=self.population_size,
                              max_evaluations=self.max_evaluations,
                              tuning_patience=self.tuning_patience, restarts=self.restarts,
                              perturbation_range=self.perturbation_range,
                              size_penalty=self.size_penalty, seed=int(self.random_state))
        self.params_ = MarketParams(spread=self.spread)
        evaluator = MarketEvaluator(closes, self.params_)
        self.best_, self.history_ = evolve(cfg, spec.seeder(), evaluator)
        self.genotype_ = self.best_.genotype
        self.fitness_ = self.best_.fitness
        self.n_evaluations_ = evaluator.calls
        return self

    def _replay(self, X, history):
        check_is_fitted(self, "genotype_")
        closes = _closes(X)
        past = None if history is None else _closes(history)
        return evaluate_agent(make_agent(self.genotype_), closes, self.params_, history=past, log=True)

    def predict(self, X, history=None):
        """Trade signals (-1, 0, 1) issued at each traded step of ``X``."""
        return np.array([row[1] for row in self._replay(X, history).log], dtype=int)

    def score(self, X, y=None, history=None):
        """Final networth after trading ``X``."""
        return self._replay(X, history).fitness
