"""Coreset sampling: fingerprint the downstream set, screen the open-set,
then keep the budgeted best candidates by cosine similarity.

Similarities are accumulated in float64 and stored as float32. Rounding the
wide result makes each score independent of how BLAS blocks the product, so
dense and blocked evaluation (and any thread count) select the same rows.
"""

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import Decimal

import numpy as np
from threadpoolctl import threadpool_limits

from .cbf import DEFAULT_NUM_HASHES, CountingBloomFilter, HashFamily, sized_for
from .embedding_io import as_matrix, binarize, normalize
from .exceptions import DimError, EmptyCandidateError, EmptyInputError

STRATEGIES = ("base", "sum", "max")
THREADS_ENV = "BLOOMCORESET_THREADS"

BASE_NOTE = (
    "base: round-robin over downstream rows; each row in turn takes its most "
    "similar candidate not yet selected"
)

# float64 score elements held at once by the blocked evaluators (~64 MB)
_BLOCK_ELEMS = 1 << 23
_SCREEN_CHUNK = 1 << 15


def resolve_threads(threads=None):
    """Worker count: explicit value, else $BLOOMCORESET_THREADS, else CPU count."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            threads = int(env)
        else:
            threads = os.cpu_count() or 1
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def budget_count_for(budget_fraction, openset_count):
    """``ceil(budget_fraction * openset_count)`` evaluated on the decimal literal."""
    frac = Decimal(repr(float(budget_fraction)))
    return int(math.ceil(frac * int(openset_count)))


@dataclass
class SamplerConfig:
    budget_fraction: float = 0.01
    strategy: str = "max"
    normalize: bool = True
    seeds: tuple = tuple(range(DEFAULT_NUM_HASHES))
    filter_size: int = None
    threads: int = None

    def __post_init__(self):
        if not 0 < self.budget_fraction <= 1:
            raise ValueError("budget_fraction must be in (0, 1]")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.filter_size is not None and int(self.filter_size) < 1:
            raise ValueError("filter_size must be >= 1")

    @property
    def family(self):
        return HashFamily(self.seeds)

    def to_dict(self):
        return {
            "budget_fraction": self.budget_fraction,
            "strategy": self.strategy,
            "normalize": self.normalize,
            "seeds": list(self.seeds),
            "filter_size": self.filter_size,
            "threads": self.threads,
        }


@dataclass
class CandidateSet:
    """Open-set rows that passed the membership screen, in increasing order."""

    indices: np.ndarray
    openset: np.ndarray

    def __len__(self):
        return int(self.indices.size)

    @property
    def embeddings(self):
        return self.openset[self.indices]


@dataclass
class ScoreTable:
    """Dense ``(n_downstream, n_candidates)`` cosine similarities."""

    scores: np.ndarray

    @property
    def shape(self):
        return self.scores.shape


@dataclass
class CoresetSelection:
    indices: np.ndarray
    scores: np.ndarray
    strategy: str
    budget_count: int
    budget_fraction: float = None
    n_downstream: int = 0
    n_openset: int = 0
    n_candidates: int = 0
    timings_ms: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def n_selected(self):
        return int(self.indices.size)

    def to_dict(self, include_timings=True):
        out = {
            "strategy": self.strategy,
            "budget_fraction": self.budget_fraction,
            "budget_count": self.budget_count,
            "n_downstream": self.n_downstream,
            "n_openset": self.n_openset,
            "n_candidates": self.n_candidates,
            "n_selected": self.n_selected,
        }
        if include_timings:
            out["timings_ms"] = {
                k: self.timings_ms.get(k, 0.0)
                for k in ("fingerprint", "screen", "score", "refine")
            }
        out["notes"] = list(self.notes)
        out["selected"] = [
            {"index": int(i), "score": float(s)} for i, s in zip(self.indices, self.scores)
        ]
        return out

    def to_json(self, include_timings=True, indent=None):
        return json.dumps(self.to_dict(include_timings), indent=indent)

    def write_json(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json(indent=2))
            fh.write("\n")

    def write_indices(self, path):
        with open(path, "w") as fh:
            fh.writelines(f"{int(i)}\n" for i in self.indices)


def _ms(start):
    return (time.perf_counter() - start) * 1000.0


def build_fingerprint(downstream, config=None):
    """Insert the sign signature of every downstream row into a fresh filter.

    The filter has ``sized_for(len(downstream))`` counters unless
    ``config.filter_size`` overrides it; it is frozen on return.
    """
    config = config or SamplerConfig()
    downstream = as_matrix(downstream)
    n, dim = downstream.shape
    if n < 1:
        raise EmptyInputError("downstream set has no rows")
    size = config.filter_size if config.filter_size is not None else sized_for(n)
    filt = CountingBloomFilter(size, dim, family=config.family)
    filt.update(binarize(downstream))
    return filt.freeze()


def screen(openset, filt, threads=1):
    """Indices of open-set rows whose signature passes ``filt.check``.

    Chunks are checked concurrently and merged in index order, so the result
    is the same for any ``threads``.
    """
    openset = as_matrix(openset)
    if openset.shape[1] != filt.dim:
        raise DimError(f"open-set dim {openset.shape[1]} != filter dim {filt.dim}")
    n = openset.shape[0]
    starts = range(0, n, _SCREEN_CHUNK)

    def _chunk(start):
        return filt.check_many(binarize(openset[start : start + _SCREEN_CHUNK]))

    if threads > 1 and n > _SCREEN_CHUNK:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            masks = list(pool.map(_chunk, starts))
    else:
        masks = [_chunk(s) for s in starts]
    mask = np.concatenate(masks) if masks else np.zeros(0, dtype=bool)
    return CandidateSet(indices=np.flatnonzero(mask).astype(np.int64), openset=openset)


def _similarity(rows64, pool):
    """float32-rounded dot products of float64 rows against a float32 pool."""
    return (rows64 @ pool.astype(np.float64).T).astype(np.float32)


def score(downstream, candidates):
    """Full cosine-similarity table between downstream rows and candidates."""
    downstream = as_matrix(downstream)
    pool = candidates.embeddings
    if len(candidates) and pool.shape[1] != downstream.shape[1]:
        raise DimError(f"candidate dim {pool.shape[1]} != downstream dim {downstream.shape[1]}")
    if not len(candidates):
        return ScoreTable(np.zeros((downstream.shape[0], 0), dtype=np.float32))
    return ScoreTable(_similarity(downstream.astype(np.float64), pool))


# -- selection rules ---------------------------------------------------------


def column_aggregate(scores, strategy):
    """Per-candidate aggregate of a dense score block (max or row-ordered sum)."""
    if strategy == "max":
        return scores.max(axis=0)
    if strategy == "sum":
        return scores.astype(np.float64).sum(axis=0)
    raise ValueError(f"no column aggregate for strategy {strategy!r}")


def top_by_aggregate(aggregate, budget):
    """Positions of the ``budget`` largest aggregates; ties go to the lower position."""
    n = aggregate.size
    take = min(budget, n)
    positions = np.arange(n)
    order = np.lexsort((positions, -aggregate))[:take]
    return order


def ranked_row(row, t):
    """Top ``t`` positions of one score row, best first, ties by lower position."""
    n = row.size
    t = min(t, n)
    if t == 0:
        return np.zeros(0, dtype=np.int64)
    if t < n:
        threshold = np.partition(row, n - t)[n - t]
        cand = np.flatnonzero(row >= threshold)
    else:
        cand = np.arange(n)
    order = cand[np.argsort(-row[cand], kind="stable")]
    return order[:t]


def round_robin(n_rows, n_pool, budget, ranking, initial_depth):
    """Per-query round-robin selection.

    ``ranking(i, t)`` must return row ``i``'s top ``t`` pool positions (best
    first). Rows are visited in order; each visit takes that row's best
    not-yet-selected position. Rankings are deepened on demand.

    Returns ``(positions, row_of_pick)`` in selection order.
    """
    target = min(budget, n_pool)
    taken = np.zeros(n_pool, dtype=bool)
    picks, owners = [], []
    depth = max(1, min(initial_depth, n_pool))
    lists = [None] * n_rows
    ptr = [0] * n_rows
    while len(picks) < target:
        for i in range(n_rows):
            if lists[i] is None:
                lists[i] = ranking(i, depth)
            lst, p = lists[i], ptr[i]
            while True:
                if p >= lst.size:
                    if lst.size >= n_pool:
                        break
                    lst = lists[i] = ranking(i, min(n_pool, 2 * lst.size))
                    continue
                j = int(lst[p])
                p += 1
                if not taken[j]:
                    taken[j] = True
                    picks.append(j)
                    owners.append(i)
                    break
            ptr[i] = p
            if len(picks) >= target:
                break
    return np.asarray(picks, dtype=np.int64), np.asarray(owners, dtype=np.int64)


def refine(table, candidates, budget_count, strategy="max"):
    """Budgeted selection from a dense score table.

    ``max`` and ``sum`` rank candidates by the column maximum / column sum of
    similarities; ``base`` runs per-downstream-row round robin. Ties always go
    to the lower open-set index.
    """
    budget_count = int(budget_count)
    if budget_count < 1:
        raise ValueError("budget_count must be >= 1")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    scores = table.scores
    n_rows, n_pool = scores.shape
    idx = candidates.indices
    if n_pool == 0:
        positions = np.zeros(0, dtype=np.int64)
        picked = np.zeros(0, dtype=np.float32)
    elif strategy == "base":
        positions, owners = round_robin(
            n_rows, n_pool, budget_count, lambda i, t: ranked_row(scores[i], t), budget_count
        )
        picked = scores[owners, positions]
    else:
        agg = column_aggregate(scores, strategy)
        positions = top_by_aggregate(agg, budget_count)
        picked = agg[positions]
    return CoresetSelection(
        indices=idx[positions],
        scores=np.asarray(picked),
        strategy=strategy,
        budget_count=budget_count,
        n_downstream=n_rows,
        n_openset=int(candidates.openset.shape[0]),
        n_candidates=n_pool,
        notes=[BASE_NOTE] if strategy == "base" else [],
    )


# -- memory-bounded evaluation -----------------------------------------------


def _blocked_aggregate(down64, pool, strategy):
    n_rows = down64.shape[0]
    width = max(1, _BLOCK_ELEMS // max(1, n_rows))
    parts = []
    for start in range(0, pool.shape[0], width):
        block = _similarity(down64, pool[start : start + width])
        parts.append(column_aggregate(block, strategy))
    return np.concatenate(parts)


def _blocked_rankings(down64, pool, depth):
    """Top-``depth`` positions for every downstream row, computed in row blocks."""
    n_rows, n_pool = down64.shape[0], pool.shape[0]
    height = max(1, _BLOCK_ELEMS // max(1, n_pool))
    out = []
    for start in range(0, n_rows, height):
        block = _similarity(down64[start : start + height], pool)
        out.extend(ranked_row(row, depth) for row in block)
    return out


def select_from_pool(downstream, pool, pool_indices, budget_count, strategy):
    """Blocked equivalent of ``refine(score(...))``; returns (selection, score_ms, refine_ms).

    Never materializes the full similarity table.
    """
    n_rows = downstream.shape[0]
    n_pool = pool.shape[0]
    down64 = downstream.astype(np.float64)
    t0 = time.perf_counter()
    if strategy == "base":
        depth = min(n_pool, budget_count, max(8, 2 * math.ceil(budget_count / max(1, n_rows))))
        initial = _blocked_rankings(down64, pool, depth)
        score_ms = _ms(t0)
        t1 = time.perf_counter()

        def ranking(i, t):
            if t <= initial[i].size:
                return initial[i][:t]
            row = _similarity(down64[i : i + 1], pool)[0]
            return ranked_row(row, t)

        positions, owners = round_robin(n_rows, n_pool, budget_count, ranking, depth)
        picked = np.array(
            [_similarity(down64[o : o + 1], pool[p : p + 1])[0, 0] for o, p in zip(owners, positions)],
            dtype=np.float32,
        )
    else:
        agg = _blocked_aggregate(down64, pool, strategy)
        score_ms = _ms(t0)
        t1 = time.perf_counter()
        positions = top_by_aggregate(agg, budget_count)
        picked = agg[positions]
    refine_ms = _ms(t1)
    selection = CoresetSelection(
        indices=np.asarray(pool_indices)[positions].astype(np.int64),
        scores=np.asarray(picked),
        strategy=strategy,
        budget_count=int(budget_count),
        n_downstream=n_rows,
        n_candidates=n_pool,
        notes=[BASE_NOTE] if strategy == "base" else [],
    )
    return selection, score_ms, refine_ms


def _prepare(matrix, config):
    return normalize(matrix) if config.normalize else as_matrix(matrix)


def sample_coreset(downstream, openset, config=None, filt=None):
    """Fingerprint, screen, score and refine in one call.

    Pass a prebuilt ``filt`` to reuse a persisted fingerprint. Raises
    EmptyCandidateError when screening admits nothing; when fewer candidates
    than the budget survive, all of them are returned and the shortfall is
    noted.
    """
    config = config or SamplerConfig()
    threads = resolve_threads(config.threads)
    downstream = _prepare(downstream, config)
    openset = _prepare(openset, config)
    if downstream.shape[0] < 1:
        raise EmptyInputError("downstream set has no rows")
    if downstream.shape[1] != openset.shape[1]:
        raise DimError(f"downstream dim {downstream.shape[1]} != open-set dim {openset.shape[1]}")

    timings = {}
    with threadpool_limits(limits=threads, user_api="blas"):
        t0 = time.perf_counter()
        if filt is None:
            filt = build_fingerprint(downstream, config)
        timings["fingerprint"] = _ms(t0)

        t0 = time.perf_counter()
        candidates = screen(openset, filt, threads=threads)
        timings["screen"] = _ms(t0)
        if not len(candidates):
            raise EmptyCandidateError(
                f"no open-set rows passed the membership screen "
                f"({openset.shape[0]} checked, filter size {filt.size})"
            )

        budget = budget_count_for(config.budget_fraction, openset.shape[0])
        selection, timings["score"], timings["refine"] = select_from_pool(
            downstream, candidates.embeddings, candidates.indices, budget, config.strategy
        )

    notes = list(selection.notes)
    if len(candidates) < budget:
        notes.append(f"shortfall: {budget - len(candidates)} below budget, no backfill")
    return replace(
        selection,
        budget_fraction=config.budget_fraction,
        n_openset=int(openset.shape[0]),
        timings_ms=timings,
        notes=notes,
    )
