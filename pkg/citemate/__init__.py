"""
Citemate - Retrieval, ranked-list truncation and cited answer generation over clinical notes.
"""

__version__ = "0.1.0"

from .core.attribution import AttributionConfig as AttributionConfig
from .core.attribution import GridResult as GridResult
from .core.attribution import attribute_post_generation as attribute_post_generation
from .core.attribution import grid_search as grid_search
from .core.attribution import weight_grid as weight_grid
from .core.citations import Answer as Answer
from .core.citations import Citation as Citation
from .core.citations import CitationParseError as CitationParseError
from .core.citations import NoValidAttributionError as NoValidAttributionError
from .core.citations import parse_citations as parse_citations
from .core.citations import render_citations as render_citations
from .core.config import CitemateSettings as CitemateSettings
from .core.config import settings as settings
from .core.corpus import CaseStudy as CaseStudy
from .core.corpus import Dataset as Dataset
from .core.corpus import DatasetError as DatasetError
from .core.corpus import NoteSentence as NoteSentence
from .core.corpus import QueryMode as QueryMode
from .core.corpus import RelevanceLabel as RelevanceLabel
from .core.corpus import build_query as build_query
from .core.corpus import corpus_stats as corpus_stats
from .core.corpus import load_dataset as load_dataset
from .core.embedding import CachedEmbeddingProvider as CachedEmbeddingProvider
from .core.embedding import EmbeddingProvider as EmbeddingProvider
from .core.embedding import FileEmbeddingProvider as FileEmbeddingProvider
from .core.embedding import HashingEmbeddingProvider as HashingEmbeddingProvider
from .core.embedding import HttpEmbeddingProvider as HttpEmbeddingProvider
from .core.embedding import RankedList as RankedList
from .core.embedding import VectorIndex as VectorIndex
from .core.embedding import cosine as cosine
from .core.embedding import embed as embed
from .core.embedding import rank_sentences as rank_sentences
from .core.evaluation import evaluate as evaluate
from .core.evaluation import factuality as factuality
from .core.evaluation import overall_score as overall_score
from .core.evaluation import prf as prf
from .core.evaluation import relevance as relevance
from .core.evaluation import retrieval_eval as retrieval_eval
from .core.generation import EchoClient as EchoClient
from .core.generation import HttpLlmClient as HttpLlmClient
from .core.generation import PromptSpec as PromptSpec
from .core.generation import ScriptedClient as ScriptedClient
from .core.generation import build_prompt as build_prompt
from .core.generation import generate_valid as generate_valid
from .core.gpd import GpdParams as GpdParams
from .core.gpd import gpd_fit as gpd_fit
from .core.gpd import gpd_survival as gpd_survival
from .core.pipeline import Pipeline as Pipeline
from .core.pipeline import RunConfig as RunConfig
from .core.similarity import SimilarityWeights as SimilarityWeights
from .core.similarity import combined_score as combined_score
from .core.similarity import fuzzy_sim as fuzzy_sim
from .core.similarity import lexical_sim as lexical_sim
from .core.similarity import semantic_sim as semantic_sim
from .core.truncation import Strategy as Strategy
from .core.truncation import TruncationResult as TruncationResult
from .core.truncation import autocut as autocut
from .core.truncation import autocut_star as autocut_star
from .core.truncation import elbow as elbow
from .core.truncation import fixed_k as fixed_k
from .core.truncation import rerank_then_cut as rerank_then_cut
from .core.truncation import surprise as surprise
from .types import FactualityReport as FactualityReport
from .types import PipelineScore as PipelineScore
from .types import RelevanceReport as RelevanceReport
