"""Next-item evaluation: case enumeration, ranking, sampling, metrics.

The evaluator turns a split into test cases (prefix, next item), asks the
model for full-catalog scores per case, and ranks the true next item either
against the whole catalog or against a set of sampled negatives.  Metrics are
recall@N and MRR@N averaged over scoreable cases.

Determinism is load-bearing: every case draws randomness from a generator
seeded by (master seed, case index) alone, and parallel workers write ranks
into a shared-order array, so worker count cannot change a single digit of
the output.  Reports carry no timestamps or timing for the same reason.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import multiprocessing

import numpy as np

from .errors import EvaluationError
from .models import EmbeddingMatrix, RecommenderModel
from .splitting import STRATEGY_LOO, DatasetSplit

TIE_OPTIMISTIC = "optimistic"
TIE_PESSIMISTIC = "pessimistic"
TIE_RANDOM = "random"
_TIE_POLICIES = (TIE_OPTIMISTIC, TIE_PESSIMISTIC, TIE_RANDOM)

SAMPLER_NONE = "none"
SAMPLER_UNIFORM = "uniform"
SAMPLER_POPULARITY = "popularity"
SAMPLER_TOP_POPULAR = "top_popular"
SAMPLER_INVERSE_POPULARITY = "inverse_popularity"
SAMPLER_SIMILAR = "similar_embedding"
SAMPLER_CLOSE = "close_embedding"
SAMPLER_LEAST_SIMILAR = "least_similar_embedding"
SAMPLER_FARTHEST = "farthest_embedding"

SAMPLER_STRATEGIES = (
    SAMPLER_NONE,
    SAMPLER_UNIFORM,
    SAMPLER_POPULARITY,
    SAMPLER_TOP_POPULAR,
    SAMPLER_INVERSE_POPULARITY,
    SAMPLER_SIMILAR,
    SAMPLER_CLOSE,
    SAMPLER_LEAST_SIMILAR,
    SAMPLER_FARTHEST,
)

EMBEDDING_SAMPLERS = (
    SAMPLER_SIMILAR,
    SAMPLER_CLOSE,
    SAMPLER_LEAST_SIMILAR,
    SAMPLER_FARTHEST,
)

# strategies whose candidate set depends only on the target, not the rng
DETERMINISTIC_SAMPLERS = (SAMPLER_TOP_POPULAR,) + EMBEDDING_SAMPLERS


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation knobs shared by every model/sampler combination."""

    cutoffs: tuple[int, ...] = (1, 5, 10, 20)
    tie_policy: str = TIE_OPTIMISTIC
    master_seed: int = 0
    prefix_start: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "cutoffs", tuple(self.cutoffs))
        if not self.cutoffs:
            raise ValueError("at least one cutoff is required")
        if any(c < 1 for c in self.cutoffs):
            raise ValueError("cutoffs must be positive")
        if any(b <= a for a, b in zip(self.cutoffs, self.cutoffs[1:])):
            raise ValueError("cutoffs must be strictly increasing")
        if self.tie_policy not in _TIE_POLICIES:
            raise ValueError(f"tie_policy must be one of {_TIE_POLICIES}")
        if self.prefix_start < 1:
            raise ValueError("prefix_start must be at least 1")


@dataclass(frozen=True)
class SamplerSpec:
    """Which negatives to rank the target against, and how many.

    ``sample_count`` is an absolute size; ``sample_fraction`` expresses it as
    a share of the catalog instead and is resolved per dataset.
    """

    strategy: str = SAMPLER_NONE
    sample_count: int = 100
    sample_fraction: float | None = None

    def __post_init__(self) -> None:
        if self.strategy not in SAMPLER_STRATEGIES:
            raise ValueError(f"unknown sampler strategy {self.strategy!r}")
        if self.strategy != SAMPLER_NONE:
            if self.sample_fraction is not None:
                if not 0 < self.sample_fraction < 1:
                    raise ValueError("sample_fraction must be in (0, 1)")
            elif self.sample_count < 1:
                raise ValueError("sample_count must be at least 1")

    @classmethod
    def parse(cls, text: str) -> "SamplerSpec":
        """Parse CLI forms: ``none``, ``uniform:100``, ``uniform:0.1%``."""
        text = text.strip()
        if text == SAMPLER_NONE:
            return cls(strategy=SAMPLER_NONE)
        strategy, sep, amount = text.partition(":")
        if not sep:
            return cls(strategy=strategy)
        if amount.endswith("%"):
            return cls(strategy=strategy, sample_fraction=float(amount[:-1]) / 100.0)
        return cls(strategy=strategy, sample_count=int(amount))

    def describe(self) -> str:
        if self.strategy == SAMPLER_NONE:
            return SAMPLER_NONE
        if self.sample_fraction is not None:
            return f"{self.strategy}:{self.sample_fraction * 100:g}%"
        return f"{self.strategy}:{self.sample_count}"

    def resolve_count(self, catalog_size: int) -> int:
        """Concrete negative-set size for this catalog; validates feasibility."""
        if self.strategy == SAMPLER_NONE:
            raise EvaluationError("full ranking has no sample size to resolve")
        if self.sample_fraction is not None:
            count = max(1, round(self.sample_fraction * catalog_size))
        else:
            count = self.sample_count
        if count > catalog_size - 1:
            raise EvaluationError(
                f"cannot sample {count} negatives from a {catalog_size}-item catalog"
            )
        return count


@dataclass(frozen=True)
class EvalCase:
    """One ranking decision: given this prefix, is the target found?"""

    case_index: int
    seq_id: int
    prefix: np.ndarray
    target: int


def enumerate_cases(split: DatasetSplit, prefix_start: int = 1) -> list[EvalCase]:
    """Deterministically list the (prefix, next item) decisions a split implies.

    Time and random splits grow a prefix inside each test sequence: lengths
    ``prefix_start`` .. len-1, each predicting the following event.  A
    leave-one-out split pairs each one-event test sequence with its training
    prefix (matched by sequence id).

    Case indices from this enumeration are the seeding unit for everything
    stochastic downstream, so the order is part of the contract.
    """
    cases: list[EvalCase] = []
    if split.spec.strategy == STRATEGY_LOO:
        prefixes = {seq.seq_id: seq for seq in split.train.sequences}
        for seq in split.test.sequences:
            source = prefixes.get(seq.seq_id)
            if source is None:
                raise EvaluationError(
                    f"test sequence {seq.seq_id} has no training prefix to extend"
                )
            cases.append(
                EvalCase(
                    case_index=len(cases),
                    seq_id=seq.seq_id,
                    prefix=source.items,
                    target=int(seq.items[0]),
                )
            )
        return cases
    for seq in split.test.sequences:
        for length in range(prefix_start, len(seq)):
            cases.append(
                EvalCase(
                    case_index=len(cases),
                    seq_id=seq.seq_id,
                    prefix=seq.items[:length],
                    target=int(seq.items[length]),
                )
            )
    return cases


def case_rng(master_seed: int, case_index: int) -> np.random.Generator:
    """The one true per-case generator: depends on seed and case index only."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, case_index]))


def rank_of_target(
    scores: np.ndarray,
    target: int,
    tie_policy: str = TIE_OPTIMISTIC,
    rng: np.random.Generator | None = None,
    candidates: np.ndarray | None = None,
) -> int:
    """Position of the target when scores are sorted descending.

    ``candidates`` restricts the comparison to a negative set (the target
    itself must not be in it); None means the full catalog.  Ties resolve per
    policy: optimistic puts the target first, pessimistic last, random draws a
    position from ``rng``.
    """
    target_score = scores[target]
    if candidates is None:
        field_scores = scores
        self_tie = 1  # the target's own equality hit
    else:
        field_scores = scores[candidates]
        self_tie = 0
    if not np.isfinite(target_score) or not np.isfinite(field_scores).all():
        raise EvaluationError("non-finite score encountered while ranking")
    greater = int(np.count_nonzero(field_scores > target_score))
    if tie_policy == TIE_OPTIMISTIC:
        return 1 + greater
    ties = int(np.count_nonzero(field_scores == target_score)) - self_tie
    if tie_policy == TIE_PESSIMISTIC:
        return 1 + greater + ties
    if rng is None:
        raise EvaluationError("random tie policy needs a generator")
    return 1 + greater + int(rng.integers(0, ties + 1))


def _weighted_without_replacement(
    weights: np.ndarray, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Exponential-keys draw: smallest exp(1)/w keys win, zero weight never."""
    positive = int(np.count_nonzero(weights > 0))
    if positive < count:
        raise EvaluationError(
            f"only {positive} items have positive sampling weight, need {count}"
        )
    keys = np.full(len(weights), np.inf)
    mask = weights > 0
    keys[mask] = rng.exponential(size=positive) / weights[mask]
    return np.argpartition(keys, count - 1)[:count]


def _top_by_value(values: np.ndarray, count: int, target: int) -> np.ndarray:
    """Indices of the ``count`` largest values, target excluded, ties by index."""
    order = np.lexsort((np.arange(len(values)), -values))
    order = order[order != target]
    return order[:count]


def sample_negatives(
    spec: SamplerSpec,
    target: int,
    catalog_size: int,
    support: np.ndarray,
    embeddings: EmbeddingMatrix | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw the negative candidate set for one test case.

    The target is never a candidate.  The ``top_popular`` and embedding
    strategies are deterministic (rank by support / similarity / distance with
    index tie-breaks); the others draw through ``rng``.
    """
    count = spec.resolve_count(catalog_size)
    strategy = spec.strategy
    if strategy == SAMPLER_UNIFORM:
        weights = np.ones(catalog_size)
        weights[target] = 0.0
        return _weighted_without_replacement(weights, count, rng)
    if strategy in (SAMPLER_POPULARITY, SAMPLER_INVERSE_POPULARITY):
        weights = support.astype(np.float64).copy()
        if strategy == SAMPLER_INVERSE_POPULARITY:
            out = np.zeros_like(weights)
            np.divide(1.0, weights, out=out, where=weights > 0)
            weights = out
        weights[target] = 0.0
        return _weighted_without_replacement(weights, count, rng)
    if strategy == SAMPLER_TOP_POPULAR:
        return _top_by_value(support.astype(np.float64), count, target)
    if strategy in EMBEDDING_SAMPLERS:
        if embeddings is None:
            raise EvaluationError(
                f"sampler {strategy!r} needs item embeddings, none were provided"
            )
        embeddings.check_catalog(catalog_size)
        vectors = embeddings.vectors
        anchor = vectors[target]
        if strategy in (SAMPLER_SIMILAR, SAMPLER_LEAST_SIMILAR):
            norms = np.linalg.norm(vectors, axis=1) * (np.linalg.norm(anchor) or 1.0)
            raw = vectors @ anchor
            values = np.divide(raw, norms, out=np.zeros_like(raw), where=norms > 0)
            if strategy == SAMPLER_LEAST_SIMILAR:
                values = -values
        else:
            distances = np.linalg.norm(vectors - anchor, axis=1)
            values = -distances if strategy == SAMPLER_CLOSE else distances
        return _top_by_value(values, count, target)
    raise EvaluationError(f"sampler {strategy!r} draws no negatives")


@dataclass
class MetricReport:
    """Recall@N / MRR@N for one (model, sampler) evaluation."""

    model: str
    sampler: str
    tie_policy: str
    master_seed: int
    cutoffs: tuple[int, ...]
    recall: dict[int, float]
    mrr: dict[int, float]
    case_count: int
    skipped_unseen_target_count: int
    total_cases: int
    catalog_size: int
    ranks: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        """JSON-ready payload; per-case ranks and any timing stay out."""
        return {
            "model": self.model,
            "sampler": self.sampler,
            "tie_policy": self.tie_policy,
            "master_seed": self.master_seed,
            "cutoffs": list(self.cutoffs),
            "recall": {str(n): self.recall[n] for n in self.cutoffs},
            "mrr": {str(n): self.mrr[n] for n in self.cutoffs},
            "case_count": self.case_count,
            "skipped_unseen_target_count": self.skipped_unseen_target_count,
            "total_cases": self.total_cases,
            "catalog_size": self.catalog_size,
        }


def _rank_case_range(
    model: RecommenderModel,
    cases: list[EvalCase],
    start: int,
    stop: int,
    cfg: EvalConfig,
    sampler: SamplerSpec,
    support: np.ndarray,
    embeddings: EmbeddingMatrix | None,
    scoreable: np.ndarray,
    fixed_candidates: dict[int, np.ndarray] | None,
) -> np.ndarray:
    ranks = np.empty(stop - start, dtype=np.int64)
    for offset, case in enumerate(cases[start:stop]):
        if not scoreable[case.target]:
            ranks[offset] = -1
            continue
        rng = case_rng(cfg.master_seed, case.case_index)
        scores = model.score_case(case.case_index, case.prefix)
        if sampler.strategy == SAMPLER_NONE:
            candidates = None
        elif fixed_candidates is not None:
            candidates = fixed_candidates[case.target]
        else:
            candidates = sample_negatives(
                sampler, case.target, len(support), support, embeddings, rng
            )
        ranks[offset] = rank_of_target(
            scores, case.target, cfg.tie_policy, rng, candidates
        )
    return ranks


_FORK_STATE: dict = {}


def _forked_rank_range(bounds: tuple[int, int]) -> tuple[int, np.ndarray]:
    start, stop = bounds
    s = _FORK_STATE
    return start, _rank_case_range(
        s["model"], s["cases"], start, stop, s["cfg"], s["sampler"],
        s["support"], s["embeddings"], s["scoreable"], s["fixed_candidates"],
    )


def compute_case_ranks(
    model: RecommenderModel,
    cases: list[EvalCase],
    split: DatasetSplit,
    cfg: EvalConfig,
    sampler: SamplerSpec,
    embeddings: EmbeddingMatrix | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Rank the target for every case; -1 marks targets absent from train.

    The result depends only on inputs and ``cfg.master_seed``; ``workers``
    changes wall time, never values.  Workers receive contiguous case blocks
    and the parent reassembles them by position.
    """
    support = split.train.item_support
    scoreable = support > 0
    fixed_candidates: dict[int, np.ndarray] | None = None
    if sampler.strategy in DETERMINISTIC_SAMPLERS:
        throwaway = np.random.default_rng(0)
        fixed_candidates = {}
        for case in cases:
            if scoreable[case.target] and case.target not in fixed_candidates:
                fixed_candidates[case.target] = sample_negatives(
                    sampler, case.target, len(support), support, embeddings, throwaway
                )

    ranks = np.empty(len(cases), dtype=np.int64)
    if workers <= 1 or len(cases) < 2:
        ranks[:] = _rank_case_range(
            model, cases, 0, len(cases), cfg, sampler,
            support, embeddings, scoreable, fixed_candidates,
        )
        return ranks

    chunk = max(1, math.ceil(len(cases) / (workers * 4)))
    bounds = [(lo, min(lo + chunk, len(cases))) for lo in range(0, len(cases), chunk)]
    _FORK_STATE.update(
        model=model, cases=cases, cfg=cfg, sampler=sampler, support=support,
        embeddings=embeddings, scoreable=scoreable, fixed_candidates=fixed_candidates,
    )
    try:
        context = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=context) as pool:
            for start, chunk_ranks in pool.map(_forked_rank_range, bounds):
                ranks[start : start + len(chunk_ranks)] = chunk_ranks
    finally:
        _FORK_STATE.clear()
    return ranks


def metrics_from_ranks(ranks: np.ndarray, cutoffs: tuple[int, ...]):
    """Aggregate recall@N and MRR@N over counted (non-negative) ranks."""
    counted = ranks[ranks > 0]
    if len(counted) == 0:
        raise EvaluationError("no scoreable test cases (all targets unseen in train)")
    recall = {}
    mrr = {}
    for n in cutoffs:
        hits = counted <= n
        recall[n] = float(np.mean(hits))
        mrr[n] = float(np.mean(np.where(hits, 1.0 / counted, 0.0)))
    return recall, mrr


def evaluate(
    model: RecommenderModel,
    split: DatasetSplit,
    cfg: EvalConfig,
    sampler: SamplerSpec = SamplerSpec(),
    embeddings: EmbeddingMatrix | None = None,
    workers: int = 1,
    model_name: str | None = None,
) -> MetricReport:
    """Evaluate one fitted model on a split under one candidate policy.

    Cases whose target never occurs in train are excluded from the averages
    and reported in ``skipped_unseen_target_count`` (a collaborative model
    cannot score them; silently including zeros would fake a penalty that
    depends on split luck).
    """
    cases = enumerate_cases(split, cfg.prefix_start)
    if not cases:
        raise EvaluationError("the split yields no test cases")
    ranks = compute_case_ranks(model, cases, split, cfg, sampler, embeddings, workers)
    recall, mrr = metrics_from_ranks(ranks, cfg.cutoffs)
    skipped = int(np.count_nonzero(ranks < 0))
    return MetricReport(
        model=model_name or type(model).__name__,
        sampler=sampler.describe(),
        tie_policy=cfg.tie_policy,
        master_seed=cfg.master_seed,
        cutoffs=cfg.cutoffs,
        recall=recall,
        mrr=mrr,
        case_count=len(cases) - skipped,
        skipped_unseen_target_count=skipped,
        total_cases=len(cases),
        catalog_size=split.train.num_items,
        ranks=ranks,
    )


@dataclass(frozen=True)
class CrossingReport:
    """Where the ordering of two models flips along the cutoff axis."""

    metric: str
    model_a: str
    model_b: str
    sampler: str
    cutoffs: tuple[int, ...]
    difference: dict[int, float]
    relative_difference: dict[int, float | None]
    flips: tuple[tuple[int, int], ...]

    @property
    def first_flip(self) -> tuple[int, int] | None:
        return self.flips[0] if self.flips else None

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "model_a": self.model_a,
            "model_b": self.model_b,
            "sampler": self.sampler,
            "cutoffs": list(self.cutoffs),
            "difference": {str(n): self.difference[n] for n in self.cutoffs},
            "relative_difference": {
                str(n): self.relative_difference[n] for n in self.cutoffs
            },
            "flips": [list(pair) for pair in self.flips],
        }


def crossing_analysis(
    report_a: MetricReport, report_b: MetricReport, metric: str = "recall"
) -> CrossingReport:
    """Find cutoff intervals where the sign of (A - B) changes.

    Both reports must come from the same cutoff grid and evaluation data.
    The relative difference is (A - B) / B, None where B is zero.
    """
    if metric not in ("recall", "mrr"):
        raise EvaluationError(f"unknown metric {metric!r}")
    if report_a.cutoffs != report_b.cutoffs:
        raise EvaluationError(
            f"cutoff grids differ: {report_a.cutoffs} vs {report_b.cutoffs}"
        )
    values_a = getattr(report_a, metric)
    values_b = getattr(report_b, metric)
    cutoffs = report_a.cutoffs
    difference = {n: values_a[n] - values_b[n] for n in cutoffs}
    relative: dict[int, float | None] = {}
    for n in cutoffs:
        relative[n] = (difference[n] / values_b[n]) if values_b[n] else None
    flips = []
    for lo, hi in zip(cutoffs, cutoffs[1:]):
        if difference[lo] * difference[hi] < 0:
            flips.append((lo, hi))
    return CrossingReport(
        metric=metric,
        model_a=report_a.model,
        model_b=report_b.model,
        sampler=report_a.sampler,
        cutoffs=cutoffs,
        difference=difference,
        relative_difference=relative,
        flips=tuple(flips),
    )
