"""Synthetic clustered embeddings and the four-way sampling benchmark.

Cluster prototypes are random sign patterns scaled to unit norm, so the
cluster identity is visible to binarization; ``cluster_spread`` sets the
per-coordinate Gaussian noise and with it how often a point's signature
drifts away from its prototype (which is what feeds filter false positives).
"""

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .embedding_io import as_matrix, normalize
from .sampler import (
    SamplerConfig,
    budget_count_for,
    build_fingerprint,
    resolve_threads,
    sample_coreset,
    screen,
    select_from_pool,
)

BENCH_STRATEGIES = ("bloom_topk", "bloom_only", "random", "exhaustive")


@dataclass
class SyntheticSpec:
    dim: int = 512
    num_clusters: int = 10
    points_per_cluster: int = 1000
    downstream_clusters: tuple = (0, 1)
    downstream_count: int = 500
    cluster_spread: float = 0.015
    rng_seed: int = 0

    def __post_init__(self):
        self.downstream_clusters = tuple(int(c) for c in self.downstream_clusters)
        if self.dim < 1 or self.num_clusters < 1:
            raise ValueError("dim and num_clusters must be positive")
        if self.points_per_cluster < 0 or self.downstream_count < 1:
            raise ValueError("points_per_cluster must be >= 0 and downstream_count >= 1")
        if not self.downstream_clusters:
            raise ValueError("downstream_clusters must be nonempty")
        if any(not 0 <= c < self.num_clusters for c in self.downstream_clusters):
            raise ValueError("downstream_clusters must lie in [0, num_clusters)")
        if not self.cluster_spread > 0:
            raise ValueError("cluster_spread must be > 0")

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        out = asdict(self)
        out["downstream_clusters"] = list(self.downstream_clusters)
        return out


def prototypes(spec, rng):
    signs = rng.choice(np.array([-1.0, 1.0]), size=(spec.num_clusters, spec.dim))
    return signs / np.sqrt(spec.dim)


def _noisy(protos, labels, spread, rng):
    points = protos[labels] + spread * rng.standard_normal((labels.size, protos.shape[1]))
    norms = np.linalg.norm(points, axis=1, keepdims=True)
    return (points / norms).astype(np.float32)


def generate(spec):
    """Deterministic ``(downstream, openset, labels)`` for ``spec``.

    The open-set holds ``points_per_cluster`` rows per cluster in shuffled
    order; ``labels`` gives each open-set row's cluster. Downstream rows are
    spread evenly over ``downstream_clusters``.
    """
    rng = np.random.default_rng(spec.rng_seed)
    protos = prototypes(spec, rng)
    labels = np.repeat(np.arange(spec.num_clusters), spec.points_per_cluster)
    labels = rng.permutation(labels)
    openset = _noisy(protos, labels, spec.cluster_spread, rng)
    chosen = np.asarray(spec.downstream_clusters)
    down_labels = chosen[np.arange(spec.downstream_count) % chosen.size]
    downstream = _noisy(protos, down_labels, spec.cluster_spread, rng)
    return downstream, openset, labels.astype(np.int64)


def oracle_coreset(downstream, openset, budget_count, strategy="max", normalize_rows=True):
    """Exhaustive selection over every open-set row, with no Bloom stage."""
    downstream = as_matrix(downstream)
    openset = as_matrix(openset)
    if normalize_rows:
        downstream, openset = normalize(downstream), normalize(openset)
    selection, score_ms, refine_ms = select_from_pool(
        downstream, openset, np.arange(openset.shape[0]), budget_count, strategy
    )
    selection.n_openset = int(openset.shape[0])
    selection.timings_ms = {"score": score_ms, "refine": refine_ms}
    return selection


@dataclass
class BenchRow:
    strategy: str
    timings_ms: dict
    n_candidates: int
    n_selected: int
    precision_vs_oracle: float
    recall_vs_oracle: float
    in_distribution_fraction: float
    selected: list = field(default_factory=list)

    @property
    def total_ms(self):
        return float(sum(self.timings_ms.values()))


@dataclass
class BenchReport:
    spec: SyntheticSpec
    config: SamplerConfig
    budget_count: int
    rows: list

    def row(self, strategy):
        for r in self.rows:
            if r.strategy == strategy:
                return r
        raise KeyError(strategy)

    def to_dict(self, include_timings=True):
        config = self.config.to_dict()
        config.pop("threads")
        rows = []
        for r in self.rows:
            d = {
                "strategy": r.strategy,
                "n_candidates": r.n_candidates,
                "n_selected": r.n_selected,
                "precision_vs_oracle": r.precision_vs_oracle,
                "recall_vs_oracle": r.recall_vs_oracle,
                "in_distribution_fraction": r.in_distribution_fraction,
            }
            if include_timings:
                d["wall_ms"] = dict(r.timings_ms)
                d["total_ms"] = r.total_ms
            d["selected"] = list(r.selected)
            rows.append(d)
        return {
            "spec": self.spec.to_dict(),
            "config": config,
            "budget_count": self.budget_count,
            "rows": rows,
        }

    def to_json(self, include_timings=True, indent=None):
        return json.dumps(self.to_dict(include_timings), indent=indent)

    _COLUMNS = ("strategy", "candidates", "selected", "precision", "recall", "in_dist", "total_ms")

    def _table(self):
        for r in self.rows:
            yield (
                r.strategy,
                str(r.n_candidates),
                str(r.n_selected),
                f"{r.precision_vs_oracle:.4f}",
                f"{r.recall_vs_oracle:.4f}",
                f"{r.in_distribution_fraction:.4f}",
                f"{r.total_ms:.1f}",
            )

    def to_text(self):
        body = [self._COLUMNS, *self._table()]
        widths = [max(len(line[i]) for line in body) for i in range(len(self._COLUMNS))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in body]
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self._COLUMNS)
        writer.writerows(self._table())
        return buf.getvalue()


def _overlap(selected, reference):
    selected = np.asarray(selected)
    if selected.size == 0:
        return 0.0, 0.0
    hits = np.intersect1d(selected, reference).size
    recall = hits / reference.size if reference.size else 0.0
    return hits / selected.size, recall


def run_bench(spec=None, config=None):
    """Run bloom_topk, bloom_only, random and exhaustive on one synthetic draw.

    Precision and recall are measured against the exhaustive selection;
    ``in_distribution_fraction`` is the share of picks whose cluster is one of
    the downstream clusters. Strategies run one after another so their
    timings do not contend.
    """
    spec = spec or SyntheticSpec()
    config = config or SamplerConfig()
    downstream, openset, labels = generate(spec)
    budget = budget_count_for(config.budget_fraction, openset.shape[0])
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(spec.rng_seed).spawn(2)]
    in_dist = np.isin(labels, spec.downstream_clusters)
    threads = resolve_threads(config.threads)

    exhaustive = oracle_coreset(downstream, openset, budget, config.strategy, config.normalize)
    reference = exhaustive.indices

    topk = sample_coreset(downstream, openset, config)

    with threadpool_limits(limits=threads, user_api="blas"):
        t0 = time.perf_counter()
        filt = build_fingerprint(downstream, config)
        fp_ms = (time.perf_counter() - t0) * 1000.0
        t0 = time.perf_counter()
        candidates = screen(openset, filt, threads=threads)
        screen_ms = (time.perf_counter() - t0) * 1000.0
    t0 = time.perf_counter()
    take = min(budget, len(candidates))
    bloom_only = np.sort(rngs[0].choice(candidates.indices, size=take, replace=False))
    bloom_only_ms = {"fingerprint": fp_ms, "screen": screen_ms, "select": (time.perf_counter() - t0) * 1000.0}

    t0 = time.perf_counter()
    random_pick = np.sort(rngs[1].choice(openset.shape[0], size=min(budget, openset.shape[0]), replace=False))
    random_ms = {"select": (time.perf_counter() - t0) * 1000.0}

    def make_row(name, selected, timings, n_candidates):
        selected = np.asarray(selected, dtype=np.int64)
        precision, recall = _overlap(selected, reference)
        frac = float(in_dist[selected].mean()) if selected.size else 0.0
        return BenchRow(
            strategy=name,
            timings_ms=timings,
            n_candidates=int(n_candidates),
            n_selected=int(selected.size),
            precision_vs_oracle=float(precision),
            recall_vs_oracle=float(recall),
            in_distribution_fraction=frac,
            selected=[int(i) for i in selected],
        )

    rows = [
        make_row("bloom_topk", topk.indices, dict(topk.timings_ms), topk.n_candidates),
        make_row("bloom_only", bloom_only, bloom_only_ms, len(candidates)),
        make_row("random", random_pick, random_ms, openset.shape[0]),
        make_row("exhaustive", reference, dict(exhaustive.timings_ms), openset.shape[0]),
    ]
    return BenchReport(spec=spec, config=config, budget_count=budget, rows=rows)
