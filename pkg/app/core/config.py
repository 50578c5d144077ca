from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict
from pathlib import Path


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="MCTN_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        protected_namespaces=(),
    )

    # Model dimensions
    model_dim: int = 16  # shared projection space for every modality
    hidden_dim: int = 16  # encoder, decoder and prediction-head GRUs
    attention_dim: int = 16

    # Optimization
    optimizer: str = "adam"  # or "sgd"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    patience: int = 10  # early stopping on validation prediction loss
    max_grad_norm: Optional[float] = None  # single max-norm safeguard, off by default
    seed: int = 0
    init_scale: float = 0.2  # uniform(-s, s) parameter initialisation

    # Coupled objective weights
    lambda_t: float = 1.0
    lambda_c: float = 1.0
    lambda_t1: float = 1.0
    lambda_c1: float = 1.0
    lambda_t2: float = 1.0

    # Gradient checking
    gradcheck_eps: float = 1e-4
    gradcheck_threshold: float = 1e-4

    # Paths
    project_root: Path = Path(__file__).parent.parent.parent
    output_dir: Path = project_root / "runs"
    data_dir: Path = project_root / "data"

    # Dataset loading
    loader_workers: int = 1

    # Progress bars (tqdm) for epoch and ablation loops
    show_progress: bool = False

    # Inference API
    api_host: str = "0.0.0.0"
    api_port: int = 8000
    served_checkpoint: Path = output_dir / "latest" / "checkpoint.json"
    rate_limit_enabled: bool = True
    rate_limit_requests: int = 60  # requests per minute

    # Caches
    dataset_cache_size: int = 8
    prediction_cache_size: int = 256
    prediction_cache_ttl: int = 300


settings = Settings()
