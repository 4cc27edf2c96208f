import os
from pydantic import BaseSettings, Field, validator

class Settings(BaseSettings):
    # Output paths
    results_dir: str = Field(
        default="data/results",
        description="Directory where experiment records (CSV + JSON sidecar) are written"
    )

    # Parallelism
    workers: int = Field(
        default=1,
        ge=1,
        env="DIAMONDLAB_WORKERS",
        description="Default number of worker processes for replicate sampling"
    )

    # Exact-lattice budgets
    enumeration_cap: int = Field(
        default=10**6,
        ge=1,
        description="Maximum number of directed paths materialised by path enumeration"
    )
    max_sites: int = Field(
        default=4**14,
        ge=1,
        description="Largest (bs)^depth evaluated on the exact lattice without allow_large"
    )
    max_sites_per_replicate: int = Field(
        default=1 << 20,
        ge=1,
        description="Above this many sites per replicate experiments switch to the population engine"
    )
    max_leaves_per_draw: int = Field(
        default=2048,
        ge=1,
        description="Leaf budget that caps the truncation depth of the limit-law sampler"
    )
    pool_size: int = Field(
        default=100_000,
        ge=2,
        description="Pool size of the population engine"
    )

    # Numerics
    blow_up_threshold: float = Field(
        default=1e12,
        gt=0,
        description="Flow values above this are recorded as a blow-up"
    )
    ks_alpha: float = Field(
        default=0.01,
        gt=0,
        lt=1,
        description="Significance level of the Kolmogorov-Smirnov checks"
    )
    float_mode: str = Field(
        default="double",
        regex=r"^(double|extended)$",
        description="'extended' iterates the variance flows in numpy.longdouble"
    )

    # Debugging and logging
    log_level: str = Field(
        default="INFO",
        regex=r"^(DEBUG|INFO|WARNING|ERROR|CRITICAL)$",
        description="Log level for the application"
    )

    # Allowed CORS origins (optional override)
    allowed_origins: str = Field(
        default="*",
        description="Comma-separated list of allowed origins for CORS"
    )

    @validator("results_dir")
    def ensure_dir_exists(cls, v: str) -> str:
        if not os.path.exists(v):
            os.makedirs(v, exist_ok=True)
        return v

    @property
    def extended(self) -> bool:
        return self.float_mode == "extended"

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"

# Dependency for FastAPI and the CLI
def get_settings():
    return Settings()
