"""Request/response models for the explanation service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

MEASURE_CHOICES = ("euclidean", "angle", "projection", "inner")


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthRequest(BaseModel):
    n: int = Field(ge=1)
    side: int = 32
    seed: int = 0
    out_dir: str


class SynthResponse(BaseModel):
    n_images: int
    out_dir: str
    class_counts: dict[str, int]


class TrainRequest(BaseModel):
    dataset_dir: str
    out_model: str
    config_path: Optional[str] = None
    epochs: int = Field(default=30, ge=0)
    lr: float = 0.04
    batch_size: int = Field(default=8, ge=1)
    seed: int = 0


class EpochStats(BaseModel):
    epoch: int
    loss: float
    acc: float


class TrainResponse(BaseModel):
    model_path: str
    config_path: str
    epochs: list[EpochStats]
    final_acc: float


class ExplainRequest(BaseModel):
    model_path: str
    image_path: str
    out_dir: str
    config_path: Optional[str] = None
    method: str = "vscam"
    layer: int = -1
    measure: str = "inner"
    top_k: Optional[int] = None  # None = all probes
    score_mode: str = "logit"
    class_index: Optional[int] = None


class ExplainResponse(BaseModel):
    files: dict[str, str]  # artifact name -> path
    class_index: int
    score: float
    method: str


class ProbeRequest(BaseModel):
    model_path: str
    image_path: str
    out_dir: str
    config_path: Optional[str] = None
    layer: int = -1
    measure: str = "all"  # one measure or "all"


class ProbeResponse(BaseModel):
    files: dict[str, str]
    n_probes: int
    grid_side: int


class TopologyRequest(BaseModel):
    model_path: str
    image_path: str
    out_dir: str
    config_path: Optional[str] = None
    vertices: list[tuple[int, int]]
    layers: list[int]
    measure: str = "inner"


class TopologyResponse(BaseModel):
    files: dict[str, str]
    ref_side: int


class EvaluateRequest(BaseModel):
    model_path: str
    dataset_dir: str
    out_dir: str
    config_path: Optional[str] = None
    methods: list[str] = ["vscam", "gradcam"]
    layer: int = -1
    measure: str = "inner"
    top_k: Optional[int] = None
    score_mode: str = "softmax"
    cam_score_mode: str = "logit"


class MethodSummary(BaseModel):
    mean_confidence_drop: float
    increase_count: int
    increase_percent: float


class EvaluateResponse(BaseModel):
    files: dict[str, str]
    summary: dict[str, MethodSummary]
    n_images: int
