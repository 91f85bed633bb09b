"""Ranked-list truncation strategies.

Every strategy maps a :class:`~citemate.core.embedding.RankedList` to a
:class:`TruncationResult` whose kept ids are a prefix of the ranking. Strategies
are selected by strings such as ``fixed:10`` or ``surprise:0.05`` through the
:class:`Strategy` registry.
"""

from abc import ABC, abstractmethod
from collections.abc import Mapping
from logging import getLogger
from typing import Any, ClassVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from citemate.core.config import settings
from citemate.core.embedding import RankedList
from citemate.core.gpd import GpdFitError, GpdParams, gpd_fit, gpd_survival

logger = getLogger(__name__)
logger.setLevel(settings.LOG_LEVEL)

# Absorbs float noise when comparing drops and chord distances.
EPS = 1e-12

Diagnostics = dict[str, Any]


class StrategyError(ValueError):
    """Raised for unknown strategy strings or invalid strategy parameters."""


class TruncationResult(BaseModel):
    """Kept prefix of a ranked list plus strategy diagnostics."""

    model_config = ConfigDict(frozen=True)

    case_id: str
    kept_ids: tuple[int, ...]
    cut_index: int = Field(..., ge=0)
    strategy_name: str
    diagnostics: Diagnostics = Field(default_factory=dict)

    @model_validator(mode="after")
    def validate_cut(self) -> "TruncationResult":
        if len(self.kept_ids) != self.cut_index:
            raise ValueError(
                f"cut_index {self.cut_index} does not match {len(self.kept_ids)} kept ids"
            )
        return self


def _result(
    ranked: RankedList, cut: int, name: str, diagnostics: Diagnostics | None = None
) -> TruncationResult:
    cut = min(cut, len(ranked))
    return TruncationResult(
        case_id=ranked.case_id,
        kept_ids=tuple(ranked.ids[:cut]),
        cut_index=cut,
        strategy_name=name,
        diagnostics=diagnostics or {},
    )


def _require_entries(ranked: RankedList) -> np.ndarray:
    if len(ranked) == 0:
        raise StrategyError(f"cannot truncate the empty ranked list of {ranked.case_id!r}")
    scores = ranked.scores
    if not np.all(np.isfinite(scores)):
        raise StrategyError(f"non-finite scores in ranked list of {ranked.case_id!r}")
    return scores


# ----------------------------
# CUT RULES
# ----------------------------


def fixed_k(ranked: RankedList, k: int) -> TruncationResult:
    """Keep the first ``k`` entries.

    Raises:
        StrategyError: If ``k < 1`` or the list is empty.
    """
    if k < 1:
        raise StrategyError(f"fixed-k requires k >= 1, got {k}")
    _require_entries(ranked)
    return _result(ranked, k, f"fixed:{k}", {"k": k})


def keep_all(ranked: RankedList) -> TruncationResult:
    _require_entries(ranked)
    return _result(ranked, len(ranked), "all")


class Reranker(ABC):
    """Re-scores a (query, sentence text) pair."""

    name: ClassVar[str] = "reranker"

    @abstractmethod
    def score(self, query: str, text: str, score: float) -> float: ...  # pragma: no cover


class PassThroughReranker(Reranker):
    """Returns the retrieval score unchanged."""

    name = "pass-through"

    def score(self, query: str, text: str, score: float) -> float:
        return score


def rerank_then_cut(
    ranked: RankedList,
    reranker: Reranker,
    k: int,
    n: int,
    query: str = "",
    texts: Mapping[int, str] | None = None,
) -> TruncationResult:
    """Re-score the top ``k`` entries with ``reranker`` and keep the best ``n``.

    Raises:
        StrategyError: If ``n > k``, either is below 1, or the list is empty.
    """
    if k < 1 or n < 1:
        raise StrategyError(f"rerank requires k, n >= 1, got k={k}, n={n}")
    if n > k:
        raise StrategyError(f"rerank requires n <= k, got n={n}, k={k}")
    _require_entries(ranked)
    texts = texts or {}
    head = ranked.entries[:k]
    rescored = RankedList.from_scores(
        ranked.case_id,
        {
            e.sentence_id: float(reranker.score(query, texts.get(e.sentence_id, ""), e.score))
            for e in head
        },
    )
    return _result(
        rescored, n, f"rerank:{k}:{n}", {"k": k, "n": n, "reranker": reranker.name}
    )


def autocut_cut(scores: np.ndarray, jump_tolerance: float) -> int | None:
    """Index (1-based) of the first entry below the straight decline, or None."""
    n = scores.size
    if n <= 2 or scores[0] == scores[-1]:
        return None
    tolerance = jump_tolerance * (scores[0] - scores[-1])
    positions = np.arange(n)
    line = scores[0] + (scores[-1] - scores[0]) * positions / (n - 1)
    below = np.nonzero(scores[1:] < line[1:] - tolerance)[0]
    return int(below[0]) + 2 if below.size else None


def autocut(
    ranked: RankedList, jump_tolerance: float = settings.AUTOCUT_JUMP_TOLERANCE
) -> TruncationResult:
    """Cut at the first divergence from the straight line joining first and last score."""
    if jump_tolerance <= 0:
        raise StrategyError(f"jump_tolerance must be positive, got {jump_tolerance}")
    scores = _require_entries(ranked)
    divergence = autocut_cut(scores, jump_tolerance)
    cut = len(ranked) if divergence is None else divergence - 1
    return _result(
        ranked,
        cut,
        "autocut",
        {"jump_tolerance": jump_tolerance, "divergence_index": divergence or "none"},
    )


def autocut_star_cut(scores: np.ndarray) -> int | None:
    """Index (1-based) of the entry after the first significant drop, or None.

    A drop is significant when it exceeds the mean of the other drops by more
    than two of their population standard deviations.
    """
    n = scores.size
    if n <= 2:
        return None
    drops = scores[:-1] - scores[1:]
    for j, drop in enumerate(drops):
        others = np.delete(drops, j)
        if drop > others.mean() + 2.0 * others.std() + EPS:
            return j + 2
    return None


def autocut_star(ranked: RankedList) -> TruncationResult:
    """Cut before the first statistically significant score drop."""
    scores = _require_entries(ranked)
    index = autocut_star_cut(scores)
    cut = len(ranked) if index is None else index - 1
    return _result(ranked, cut, "autocut-star", {"drop_index": index or "none"})


def elbow_cut(scores: np.ndarray) -> tuple[int, bool] | None:
    """Point farthest from the normalized chord, or None for a straight curve.

    Returns the 1-based index of that point and whether it lies above the
    chord (a concave curve, where it is the last high score) rather than
    below it (a convex drop, where it is the first low score).
    """
    n = scores.size
    if n <= 2 or scores[0] == scores[-1]:
        return None
    x = np.arange(n) / (n - 1)
    y = (scores - scores[-1]) / (scores[0] - scores[-1])
    # chord from (0, 1) to (1, 0); the 1/sqrt(2) factor does not move the argmax
    offset = x + y - 1.0
    distance = np.abs(offset)
    best = int(np.argmax(distance))
    if distance[best] < EPS:
        return None
    return best + 1, bool(offset[best] > 0)


def elbow(ranked: RankedList) -> TruncationResult:
    """Keep the high-score regime of the curve.

    The knee is kept when it lies above the chord and dropped when it lies
    below it. A straight curve keeps everything.
    """
    scores = _require_entries(ranked)
    knee = elbow_cut(scores)
    if knee is None:
        return _result(ranked, len(ranked), "elbow", {"elbow_index": "none"})
    index, above = knee
    cut = index if above else max(1, index - 1)
    return _result(
        ranked,
        cut,
        "elbow",
        {"elbow_index": index, "knee_side": "above" if above else "below"},
    )


def surprise(
    ranked: RankedList,
    alpha: float = settings.SURPRISE_ALPHA,
    min_exceedances: int = settings.SURPRISE_MIN_EXCEEDANCES,
) -> TruncationResult:
    """Keep the top scores that are surprising under a GPD model of the rest.

    The threshold is the median score. For each candidate prefix length ``k`` a
    GPD is fitted to the excesses of the exceedances ranked after ``k``; the
    prefix qualifies when its weakest member has survival below ``alpha``.
    Among qualifying prefixes the one whose gap to the next score is largest
    relative to the fitted scale wins. When nothing qualifies the elbow rule
    decides.
    """
    if not 0 < alpha < 1:
        raise StrategyError(f"surprise alpha must be in (0, 1), got {alpha}")
    scores = _require_entries(ranked)
    u = float(np.median(scores))
    tail = scores[scores > u]
    m = int(tail.size)
    base: Diagnostics = {"method": "reconstruction", "u": u, "alpha": alpha, "n_exceedances": m}

    best: tuple[float, int, GpdParams, float] | None = None
    fit_errors = 0
    for k in range(1, m - min_exceedances + 1):
        try:
            params = gpd_fit(tail[k:] - u, u=u)
        except GpdFitError as e:
            logger.debug("surprise fit for k=%d of %r failed: %s", k, ranked.case_id, e)
            fit_errors += 1
            continue
        p_value = gpd_survival(float(tail[k - 1] - u), params)
        if p_value >= alpha:
            continue
        gap = float(scores[k - 1] - scores[k]) / params.sigma
        if best is None or gap > best[0]:
            best = (gap, k, params, p_value)

    if best is None:
        if m < min_exceedances + 1:
            reason = f"too few exceedances ({m})"
        elif fit_errors == m - min_exceedances:
            reason = "gpd fit failed"
        else:
            reason = "no surprising prefix"
        logger.warning("surprise fell back to elbow for %r: %s", ranked.case_id, reason)
        fallback = elbow(ranked)
        return _result(
            ranked,
            fallback.cut_index,
            "surprise",
            {**base, "fallback": "elbow", "reason": reason, **fallback.diagnostics},
        )

    gap, k, params, p_value = best
    return _result(
        ranked,
        k,
        "surprise",
        {
            **base,
            "xi": params.xi,
            "sigma": params.sigma,
            "n_tail": params.n_tail,
            "fit": params.method,
            "p_value": p_value,
            "standardized_gap": gap,
            "fallback": None,
        },
    )


# ----------------------------
# STRATEGY BASE & REGISTRY
# ----------------------------


class Strategy(ABC):
    """Base class for truncation strategies.

    Attributes:
        name (ClassVar[str]): Prefix of the strategy selection string.
        registry (ClassVar[dict[str, type["Strategy"]]]): All available strategies.
    """

    name: ClassVar[str]
    registry: ClassVar[dict[str, type["Strategy"]]] = {}

    def __init_subclass__(cls) -> None:
        """Register new strategy classes automatically."""
        if hasattr(cls, "name"):
            Strategy.registry[cls.name] = cls

    @classmethod
    def from_args(cls, args: list[str]) -> "Strategy":
        if args:
            raise StrategyError(f"strategy {cls.name!r} takes no parameters")
        return cls()

    @abstractmethod
    def apply(
        self, ranked: RankedList, query: str = "", texts: Mapping[int, str] | None = None
    ) -> TruncationResult:
        """Truncate ``ranked``. Only re-ranking strategies use ``query`` and ``texts``."""
        ...  # pragma: no cover

    @property
    def spec(self) -> str:
        return self.name

    @staticmethod
    def parse(spec: str) -> "Strategy":
        """Build a strategy from a selection string such as ``rerank:20:10``.

        Raises:
            StrategyError: If the name is unknown or the parameters are invalid.
        """
        name, *args = spec.strip().split(":")
        strategy_cls = Strategy.registry.get(name)
        if strategy_cls is None:
            raise StrategyError(
                f"Unsupported strategy: {spec!r}. Supported: {sorted(Strategy.registry)}"
            )
        return strategy_cls.from_args(args)


def _positive_int(value: str, what: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise StrategyError(f"{what} must be an integer, got {value!r}") from None
    if number < 1:
        raise StrategyError(f"{what} must be >= 1, got {number}")
    return number


class FixedKStrategy(Strategy):
    name = "fixed"

    def __init__(self, k: int) -> None:
        self.k = k

    @classmethod
    def from_args(cls, args: list[str]) -> "FixedKStrategy":
        if len(args) != 1:
            raise StrategyError("usage: fixed:<k>")
        return cls(_positive_int(args[0], "k"))

    @property
    def spec(self) -> str:
        return f"fixed:{self.k}"

    def apply(
        self, ranked: RankedList, query: str = "", texts: Mapping[int, str] | None = None
    ) -> TruncationResult:
        return fixed_k(ranked, self.k)


class RerankStrategy(Strategy):
    name = "rerank"

    def __init__(self, k: int, n: int, reranker: Reranker | None = None) -> None:
        if n > k:
            raise StrategyError(f"rerank requires n <= k, got n={n}, k={k}")
        self.k = k
        self.n = n
        self.reranker = reranker or PassThroughReranker()

    @classmethod
    def from_args(cls, args: list[str]) -> "RerankStrategy":
        if len(args) != 2:
            raise StrategyError("usage: rerank:<k>:<n>")
        return cls(_positive_int(args[0], "k"), _positive_int(args[1], "n"))

    @property
    def spec(self) -> str:
        return f"rerank:{self.k}:{self.n}"

    def apply(
        self, ranked: RankedList, query: str = "", texts: Mapping[int, str] | None = None
    ) -> TruncationResult:
        return rerank_then_cut(ranked, self.reranker, self.k, self.n, query, texts)


class AutocutStrategy(Strategy):
    name = "autocut"

    def apply(
        self, ranked: RankedList, query: str = "", texts: Mapping[int, str] | None = None
    ) -> TruncationResult:
        return autocut(ranked)


class AutocutStarStrategy(Strategy):
    name = "autocut-star"

    def apply(
        self, ranked: RankedList, query: str = "", texts: Mapping[int, str] | None = None
    ) -> TruncationResult:
        return autocut_star(ranked)


class ElbowStrategy(Strategy):
    name = "elbow"

    def apply(
        self, ranked: RankedList, query: str = "", texts: Mapping[int, str] | None = None
    ) -> TruncationResult:
        return elbow(ranked)


class SurpriseStrategy(Strategy):
    name = "surprise"

    def __init__(self, alpha: float = settings.SURPRISE_ALPHA) -> None:
        if not 0 < alpha < 1:
            raise StrategyError(f"surprise alpha must be in (0, 1), got {alpha}")
        self.alpha = alpha

    @classmethod
    def from_args(cls, args: list[str]) -> "SurpriseStrategy":
        if len(args) > 1:
            raise StrategyError("usage: surprise[:alpha]")
        if not args:
            return cls()
        try:
            alpha = float(args[0])
        except ValueError:
            raise StrategyError(f"alpha must be a number, got {args[0]!r}") from None
        return cls(alpha)

    @property
    def spec(self) -> str:
        return f"surprise:{self.alpha:g}"

    def apply(
        self, ranked: RankedList, query: str = "", texts: Mapping[int, str] | None = None
    ) -> TruncationResult:
        return surprise(ranked, self.alpha)


class KeepAllStrategy(Strategy):
    name = "all"

    def apply(
        self, ranked: RankedList, query: str = "", texts: Mapping[int, str] | None = None
    ) -> TruncationResult:
        return keep_all(ranked)
