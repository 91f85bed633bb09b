"""Text similarity: lexical, fuzzy and semantic scores and the metrics behind them.

Lexical metrics are directional. The first argument is the hypothesis (an
answer sentence) and the second the reference (an evidence sentence).
"""

import re
from collections import Counter
from collections.abc import Sequence
from logging import getLogger

import Levenshtein
import numpy as np
from nltk.translate.bleu_score import SmoothingFunction, sentence_bleu
from nltk.util import ngrams
from pydantic import BaseModel, ConfigDict, Field, model_validator
from rouge_score import rouge_scorer

from citemate.core.config import settings
from citemate.core.embedding import EmbeddingProvider, cosine

logger = getLogger(__name__)
logger.setLevel(settings.LOG_LEVEL)

TOKEN = re.compile(r"[a-z0-9]+")
SARI_MAX_ORDER = 4

_rouge = rouge_scorer.RougeScorer(["rougeL"], use_stemmer=False)
_smoothing = SmoothingFunction().method2


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return TOKEN.findall(text.lower())


# ----------------------------
# LEXICAL METRICS
# ----------------------------


def bleu(hypothesis: str, references: Sequence[str]) -> float:
    """Sentence BLEU with orders 1-4, brevity penalty and add-one smoothing above unigrams."""
    hyp = tokenize(hypothesis)
    refs = [tokens for tokens in (tokenize(r) for r in references) if tokens]
    if not hyp or not refs:
        return 0.0
    score = sentence_bleu(refs, hyp, weights=(0.25, 0.25, 0.25, 0.25), smoothing_function=_smoothing)
    return float(min(1.0, max(0.0, score)))


def rouge_l(hypothesis: str, reference: str) -> float:
    """ROUGE-L F-measure on the longest common subsequence."""
    if not tokenize(hypothesis) or not tokenize(reference):
        return 0.0
    return float(_rouge.score(target=reference, prediction=hypothesis)["rougeL"].fmeasure)


def meteor_lite(hypothesis: str, reference: str) -> float:
    """Recall-weighted unigram F-mean (1:9), without stemming or synonyms."""
    hyp = Counter(tokenize(hypothesis))
    ref = Counter(tokenize(reference))
    matches = sum((hyp & ref).values())
    if matches == 0:
        return 0.0
    precision = matches / sum(hyp.values())
    recall = matches / sum(ref.values())
    return 10 * precision * recall / (recall + 9 * precision)


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _sari_order(
    source: Counter, candidate: Counter, references: list[Counter]
) -> tuple[float, float, float]:
    """Keep F1, deletion precision and addition F1 for one n-gram order."""
    n_refs = len(references)
    ref_all: Counter = Counter()
    for ref in references:
        ref_all.update(ref)
    source_rep = Counter({g: c * n_refs for g, c in source.items()})
    candidate_rep = Counter({g: c * n_refs for g, c in candidate.items()})

    keep = source_rep & candidate_rep
    keep_good = keep & ref_all
    keep_all = source_rep & ref_all
    keep_p = sum(keep_good[g] / keep[g] for g in keep) / len(keep) if keep else 1.0
    keep_r = (
        sum(keep_good[g] for g in keep) / sum(keep_all.values())
        if keep_all
        else 1.0
    )

    deleted = source_rep - candidate_rep
    deleted_good = deleted - ref_all
    del_p = (
        sum(deleted_good[g] / deleted[g] for g in deleted) / len(deleted) if deleted else 1.0
    )

    added = set(candidate) - set(source)
    added_good = added & set(ref_all)
    added_all = set(ref_all) - set(source)
    add_p = len(added_good) / len(added) if added else 1.0
    add_r = len(added_good) / len(added_all) if added_all else 1.0

    return _f1(keep_p, keep_r), del_p, _f1(add_p, add_r)


def sari(source: str, hypothesis: str, references: Sequence[str]) -> float:
    """SARI: mean of keep, delete and add scores averaged over n-gram orders 1-4.

    Returns a value in [0, 1] rather than the customary percentage.
    """
    if not references:
        raise ValueError("sari requires at least one reference")
    src, hyp = tokenize(source), tokenize(hypothesis)
    refs = [tokenize(r) for r in references]
    keep_scores, del_scores, add_scores = [], [], []
    for n in range(1, SARI_MAX_ORDER + 1):
        keep, delete, add = _sari_order(
            Counter(ngrams(src, n)),
            Counter(ngrams(hyp, n)),
            [Counter(ngrams(r, n)) for r in refs],
        )
        keep_scores.append(keep)
        del_scores.append(delete)
        add_scores.append(add)
    return float((np.mean(keep_scores) + np.mean(del_scores) + np.mean(add_scores)) / 3)


# ----------------------------
# ATTRIBUTION SIMILARITIES
# ----------------------------


def lexical_sim(a: str, b: str) -> float:
    """Mean of ROUGE-L, smoothed BLEU and METEOR-lite of ``a`` against ``b``."""
    return float(np.mean([rouge_l(a, b), bleu(a, [b]), meteor_lite(a, b)]))


def fuzzy_sim(a: str, b: str) -> float:
    """One minus the normalized Levenshtein distance of the lowercased strings."""
    a, b = a.lower(), b.lower()
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - Levenshtein.distance(a, b) / longest


def semantic_sim(a: str, b: str, provider: EmbeddingProvider) -> float:
    """Embedding cosine floored at 0. Texts without content score 0."""
    if a == b:
        return 1.0
    va, vb = provider.embed_many([a, b])
    if not np.any(va) or not np.any(vb):
        return 0.0
    return min(1.0, max(0.0, cosine(va, vb)))


class SimilarityWeights(BaseModel):
    """Convex weights of the lexical, fuzzy and semantic components."""

    model_config = ConfigDict(frozen=True)

    w1: float = Field(..., ge=0, le=1, description="Lexical weight")
    w2: float = Field(..., ge=0, le=1, description="Fuzzy weight")
    w3: float = Field(..., ge=0, le=1, description="Semantic weight")

    @model_validator(mode="after")
    def validate_simplex(self) -> "SimilarityWeights":
        total = self.w1 + self.w2 + self.w3
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total:.6f}")
        return self

    @classmethod
    def parse(cls, value: str) -> "SimilarityWeights":
        """Parse ``"w1,w2,w3"``."""
        parts = [p.strip() for p in value.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three comma-separated weights, got {value!r}")
        w1, w2, w3 = (float(p) for p in parts)
        return cls(w1=w1, w2=w2, w3=w3)

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3])


def similarity_components(a: str, b: str, provider: EmbeddingProvider) -> tuple[float, float, float]:
    """(lexical, fuzzy, semantic) similarity of ``a`` to ``b``."""
    return lexical_sim(a, b), fuzzy_sim(a, b), semantic_sim(a, b, provider)


def combined_score(
    a: str, b: str, weights: SimilarityWeights, provider: EmbeddingProvider
) -> float:
    """Weighted sum of the three components, clamped to [0, 1]."""
    components = np.array(similarity_components(a, b, provider))
    return float(np.clip(components @ weights.as_array(), 0.0, 1.0))
