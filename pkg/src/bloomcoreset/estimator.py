"""scikit-learn style front end for the coreset sampler."""

import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted
from threadpoolctl import threadpool_limits

from .cbf import DEFAULT_NUM_HASHES
from .embedding_io import binarize, normalize
from .exceptions import DimError, EmptyCandidateError
from .sampler import (
    STRATEGIES,
    SamplerConfig,
    budget_count_for,
    build_fingerprint,
    resolve_threads,
    screen,
    select_from_pool,
)


class BloomCoresetSampler(BaseEstimator):
    """Select the open-set rows closest to a downstream embedding set.

    ``fit`` builds a counting Bloom filter from the downstream signatures,
    ``predict`` screens open-set rows against it and ``sample`` returns the
    budgeted coreset.

    Parameters
    ----------
    budget_fraction : float, default=0.01
        Coreset size as a fraction of the open-set passed to ``sample``.
    strategy : {"max", "sum", "base"}, default="max"
        How a candidate's similarities to the downstream rows are combined.
    normalize : bool, default=True
        Scale rows to unit norm so dot products are cosine similarities.
    seeds : sequence of int, optional
        murmur3 seeds, one per hash function; defaults to ``range(10)``.
    filter_size : int, optional
        Counter count; defaults to the downstream-size rule.
    n_threads : int, optional
        Worker cap; results do not depend on it.

    Attributes
    ----------
    filter_ : CountingBloomFilter
    downstream_ : ndarray of shape (n_downstream, n_features)
    n_features_in_ : int
    """

    def __init__(
        self,
        budget_fraction=0.01,
        strategy="max",
        normalize=True,
        seeds=None,
        filter_size=None,
        n_threads=None,
    ):
        self.budget_fraction = budget_fraction
        self.strategy = strategy
        self.normalize = normalize
        self.seeds = seeds
        self.filter_size = filter_size
        self.n_threads = n_threads

    def _config(self):
        seeds = tuple(range(DEFAULT_NUM_HASHES)) if self.seeds is None else tuple(self.seeds)
        return SamplerConfig(
            budget_fraction=self.budget_fraction,
            strategy=self.strategy,
            normalize=self.normalize,
            seeds=seeds,
            filter_size=self.filter_size,
            threads=self.n_threads,
        )

    def _validate(self, X, reset):
        X = check_array(X, dtype=np.float32, ensure_min_samples=1 if reset else 0)
        X = np.ascontiguousarray(X, dtype=np.float32)
        if reset:
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise DimError(f"X has {X.shape[1]} features, sampler was fit with {self.n_features_in_}")
        return normalize(X) if self.normalize else X

    def fit(self, X, y=None):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        config = self._config()
        X = self._validate(X, reset=True)
        self.downstream_ = X
        self.filter_ = build_fingerprint(X, config)
        return self

    def predict(self, X):
        """Boolean membership mask over the rows of ``X``."""
        check_is_fitted(self, "filter_")
        X = self._validate(X, reset=False)
        return self.filter_.check_many(binarize(X))

    def screen(self, X):
        check_is_fitted(self, "filter_")
        X = self._validate(X, reset=False)
        return screen(X, self.filter_, threads=resolve_threads(self.n_threads))

    def sample(self, X):
        """Coreset of ``X`` as a :class:`CoresetSelection` (indices into ``X``)."""
        check_is_fitted(self, "filter_")
        config = self._config()
        threads = resolve_threads(config.threads)
        X = self._validate(X, reset=False)
        with threadpool_limits(limits=threads, user_api="blas"):
            t0 = time.perf_counter()
            candidates = screen(X, self.filter_, threads=threads)
            screen_ms = (time.perf_counter() - t0) * 1000.0
            if not len(candidates):
                raise EmptyCandidateError("no rows passed the membership screen")
            budget = budget_count_for(config.budget_fraction, X.shape[0])
            selection, score_ms, refine_ms = select_from_pool(
                self.downstream_, candidates.embeddings, candidates.indices, budget, config.strategy
            )
        selection.budget_fraction = config.budget_fraction
        selection.n_openset = int(X.shape[0])
        selection.timings_ms = {"fingerprint": 0.0, "screen": screen_ms, "score": score_ms, "refine": refine_ms}
        return selection

    def fit_sample(self, X_downstream, X_openset):
        return self.fit(X_downstream).sample(X_openset)

    def transform(self, X):
        """Rows of ``X`` that make up its coreset, best first."""
        return np.asarray(X)[self.sample(X).indices]
