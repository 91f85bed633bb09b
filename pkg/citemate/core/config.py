from pydantic import Field, SecretStr
from pydantic_settings import BaseSettings, SettingsConfigDict


class CitemateSettings(BaseSettings):
    """Citemate configuration settings.

    This class provides a centralized configuration system for Citemate.
    All settings can be overridden using environment variables with the prefix `CITEMATE_`.
    Endpoint tokens are the exception: they are read from `LLM_API_TOKEN` and
    `EMBED_API_TOKEN` and are never accepted from flags or files.
    """

    # Retrieval
    DEFAULT_STRATEGY: str = Field(
        default="surprise", description="Truncation strategy used when none is given"
    )
    DEFAULT_QUERY_MODE: str = Field(
        default="both",
        description="Query formulation. Options: 'patient', 'clinician', 'both'",
    )
    DEFAULT_EMBEDDING: str = Field(
        default="hash:1024",
        description="Retrieval embedding provider: 'file:<path>', 'http(s)://...' or 'hash:<dim>'",
    )
    TEXT_EMBEDDING: str = Field(
        default="hash:1024",
        description="Provider for answer-side similarity (attribution and relevance)",
    )
    EMBEDDING_DIM: int = Field(
        default=1024, ge=1, description="Declared dimension of HTTP embeddings"
    )
    AUTOCUT_JUMP_TOLERANCE: float = Field(
        default=0.1,
        gt=0,
        description="Autocut deviation tolerance as a fraction of the score range",
    )
    SURPRISE_ALPHA: float = Field(
        default=0.05, gt=0, lt=1, description="Surprise significance level"
    )
    SURPRISE_MIN_EXCEEDANCES: int = Field(
        default=4, ge=2, description="Minimum tail size for a surprise GPD fit"
    )

    # Generation
    DEFAULT_SHOTS: str = Field(
        default="one", description="Prompt shots. Options: 'zero', 'one'"
    )
    DEFAULT_ATTRIBUTION_MODE: str = Field(
        default="post-retrieval",
        description="Options: 'post-retrieval', 'post-generation'",
    )
    LLM_MODEL: str = Field(
        default="meta-llama/Llama-3.3-70B-Instruct",
        description="Model name sent to the completion endpoint",
    )
    MAX_TOKENS: int = Field(
        default=200, ge=1, le=4096, description="Generation token cap"
    )
    TEMPERATURE: float = Field(default=0.001, ge=0, description="Sampling temperature")
    WORD_LIMIT: int = Field(
        default=75, ge=1, description="Maximum answer length in words"
    )
    MAX_ATTEMPTS: int = Field(
        default=5, ge=1, le=5, description="Generation attempts per case"
    )
    HTTP_TIMEOUT: float = Field(
        default=60.0, gt=0, description="Timeout in seconds for endpoint calls"
    )

    # Post-generation attribution
    ATTRIBUTION_WEIGHTS: tuple[float, float, float] = Field(
        default=(0.0, 0.5, 0.5),
        description="Lexical, fuzzy and semantic weights",
    )
    ATTRIBUTION_THRESHOLD: float = Field(
        default=0.5, gt=0, lt=1, description="Attribution threshold T"
    )
    GRID_WEIGHT_STEP: float = Field(
        default=0.1, gt=0, le=1, description="Weight step for grid search"
    )
    GRID_THRESHOLDS: tuple[float, ...] = Field(
        default=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
        description="Thresholds explored by grid search",
    )

    # Evaluation
    INCLUDE_EXTERNAL_IN_MEAN: bool = Field(
        default=False,
        description="Average external scorer results into the relevance mean",
    )

    # Execution
    JOBS: int = Field(default=4, ge=1, description="Per-case parallelism bound")
    SEED: int = Field(default=0, description="Run seed recorded in artifacts")

    # Logging configuration
    LOG_FORMAT: str = Field(
        default="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        description="Log format",
    )
    LOG_LEVEL: str = Field(default="INFO", description="Log level")

    # Secrets, environment only
    LLM_API_TOKEN: SecretStr | None = Field(
        default=None,
        validation_alias="LLM_API_TOKEN",
        description="Bearer token for the completion endpoint",
    )
    EMBED_API_TOKEN: SecretStr | None = Field(
        default=None,
        validation_alias="EMBED_API_TOKEN",
        description="Bearer token for the embedding endpoint",
    )

    model_config = SettingsConfigDict(env_prefix="CITEMATE_", case_sensitive=False)


# Create and export a global settings instance
settings = CitemateSettings()
