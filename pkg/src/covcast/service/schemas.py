"""Request and response models for the covariance-forecasting service.

Every endpoint takes one request model and returns one response model, so
the HTTP layer, the in-process handlers and the command-line client all
share a single validated surface.
"""

from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

MODEL_NAMES = ("fmsv", "dcc", "sbekk", "fgarch", "sample", "cov1para")
DGP_NAMES = ("dgp1", "dgp2", "fmsv")


class ModelSpec(BaseModel):
    """One candidate covariance model with its estimation options."""

    name: Literal["fmsv", "dcc", "sbekk", "fgarch", "sample", "cov1para"]
    n_factors: int = Field(1, ge=1, le=5)
    q: int = Field(10, ge=1)
    gamma: float = Field(1.0, gt=0.0)
    cv_ratio: float = Field(0.75, gt=0.0, lt=1.0)
    penalize_intercept: bool = True
    likelihood: Literal["auto", "full", "composite"] = "auto"
    lognormal_correction: bool = False
    label: Optional[str] = None

    def display_label(self) -> str:
        if self.label:
            return self.label
        if self.name in ("fmsv", "fgarch"):
            return f"{self.name}{self.n_factors}"
        return self.name


def default_models() -> list:
    """The standard comparison set: dynamic competitors plus factor models."""
    specs = [ModelSpec(name="dcc"), ModelSpec(name="sbekk")]
    specs += [ModelSpec(name="fgarch", n_factors=m) for m in (1, 2, 3)]
    specs += [ModelSpec(name="fmsv", n_factors=m) for m in (1, 2, 3)]
    return specs


class EvalOptions(BaseModel):
    """Evaluation knobs: distance asymmetry, proxy blend, confidence set."""

    b: float = Field(3.0, gt=2.0)
    proxy_blend: float = Field(0.01, ge=0.0, le=1.0)
    proxy_window: Optional[int] = Field(None, ge=1)
    mcs_alpha: float = Field(0.10, gt=0.0, lt=1.0)
    mcs_reps: int = Field(1000, ge=100)
    mcs_block: Optional[int] = Field(None, ge=1)
    mcs_seed: int = 0


class SimulateRequest(BaseModel):
    dgp: Literal["dgp1", "dgp2", "fmsv"]
    p: int = Field(ge=2)
    t: int = Field(ge=10)
    seed: int = 0
    batches: int = Field(10, ge=1)
    fmsv_factors: int = Field(2, ge=1)
    out_dir: str


class BatchFiles(BaseModel):
    batch: int
    seed: int
    returns_path: str
    truth_path: str


class SimulateResponse(BaseModel):
    dgp: str
    p: int
    t: int
    batches: int
    files: list[BatchFiles]
    manifest_path: str


class BenchmarkRequest(BaseModel):
    dgp: Literal["dgp1", "dgp2", "fmsv"]
    p: int = Field(ge=2)
    t: int = Field(ge=10)
    seed: int = 0
    batches: int = Field(10, ge=1)
    fmsv_factors: int = Field(2, ge=1)
    models: list[ModelSpec] = Field(default_factory=default_models, min_length=1)
    eval: EvalOptions = Field(default_factory=EvalOptions)
    jobs: int = Field(1, ge=1)
    report_path: Optional[str] = None
    tables_dir: Optional[str] = None
    plot_data: bool = False

    @model_validator(mode="after")
    def _unique_labels(self):
        labels = [m.display_label() for m in self.models]
        if len(labels) != len(set(labels)):
            raise ValueError("model labels must be unique; set explicit labels")
        return self


class BenchmarkResponse(BaseModel):
    report: dict
    runtimes: dict[str, float]
    report_path: Optional[str] = None
    files: list[str] = Field(default_factory=list)


class BacktestRequest(BaseModel):
    returns_csv: str
    split_ratio: float = Field(0.75, gt=0.0, lt=1.0)
    models: list[ModelSpec] = Field(default_factory=default_models, min_length=1)
    eval: EvalOptions = Field(default_factory=EvalOptions)
    refit_every: int = Field(0, ge=0)
    report_path: Optional[str] = None
    tables_dir: Optional[str] = None
    plot_data: bool = False

    @model_validator(mode="after")
    def _unique_labels(self):
        labels = [m.display_label() for m in self.models]
        if len(labels) != len(set(labels)):
            raise ValueError("model labels must be unique; set explicit labels")
        return self


class BacktestResponse(BaseModel):
    report: dict
    runtimes: dict[str, float]
    report_path: Optional[str] = None
    files: list[str] = Field(default_factory=list)


class FitRequest(BaseModel):
    returns_csv: str
    model: ModelSpec = Field(default_factory=lambda: ModelSpec(name="fmsv"))
    out_path: str


class FitResponse(BaseModel):
    label: str
    schema_name: str
    out_path: str
    summary: dict


class ForecastRequest(BaseModel):
    model_path: str
    returns_csv: str
    horizon: int = Field(1, ge=1)
    lognormal_correction: bool = False
    out_path: Optional[str] = None
    vech_csv: Optional[str] = None


class ForecastResponse(BaseModel):
    horizon: int
    dates: list[str]
    assets: list[str]
    out_path: Optional[str] = None
    vech_csv: Optional[str] = None


class ReportRequest(BaseModel):
    artifact_path: str
    out_dir: str
    plot_data: bool = False


class ReportResponse(BaseModel):
    schema_name: str
    files: list[str]


class HealthResponse(BaseModel):
    status: str
    version: str
