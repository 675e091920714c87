from pathlib import Path
from typing import Annotated, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


Vec3 = Annotated[List[float], Field(min_length=3, max_length=3)]
Vec4 = Annotated[List[float], Field(min_length=4, max_length=4)]
Vec6 = Annotated[List[float], Field(min_length=6, max_length=6)]

SkinningMode = Literal["lbs", "dqs", "ahs"]
Metric = Literal["geodesic", "euclidean"]
Optimizer = Literal["gd", "lbfgs"]

GAUSSIANS_PER_FACE = (1, 3, 4, 6)


class NodeDoc(BaseModel):
    rotvec: Vec3
    shear6: Vec6
    translation: Vec3
    eta: float = Field(ge=0.0, le=1.0)


class FrameDoc(BaseModel):
    time: float
    nodes: List[NodeDoc] = Field(min_length=1)


class TrajectoryDoc(BaseModel):
    frames: List[FrameDoc] = Field(min_length=1)

    @model_validator(mode="after")
    def _same_node_count(self) -> "TrajectoryDoc":
        counts = {len(f.nodes) for f in self.frames}
        if len(counts) != 1:
            raise ValueError(f"frames disagree on node count: {sorted(counts)}")
        return self


class GraphVertexDoc(BaseModel):
    neighbors: List[int]
    weights: List[float]


class GraphDoc(BaseModel):
    nodes: List[int] = Field(min_length=1)
    metric: Metric
    vertices: List[GraphVertexDoc] = Field(min_length=1)

    @model_validator(mode="after")
    def _consistent(self) -> "GraphDoc":
        k = len(self.vertices[0].neighbors)
        for i, vert in enumerate(self.vertices):
            if len(vert.neighbors) != k or len(vert.weights) != k:
                raise ValueError(f"vertex {i}: expected {k} neighbors and weights")
            if any(n < 0 or n >= len(self.nodes) for n in vert.neighbors):
                raise ValueError(f"vertex {i}: neighbor id outside [0, {len(self.nodes)})")
            if len(set(vert.neighbors)) != k:
                raise ValueError(f"vertex {i}: duplicate neighbor node")
            if any(w < 0 for w in vert.weights) or abs(sum(vert.weights) - 1.0) > 1e-9:
                raise ValueError(f"vertex {i}: weights must be nonnegative and sum to 1")
        return self


class GaussianDoc(BaseModel):
    face: int = Field(ge=0)
    bary: Vec3
    quat: Vec4
    scale: Vec3
    payload: str
    # deformed sets carry their centers; a bound set recomputes them from the mesh
    center: Optional[Vec3] = None


class GaussianSetDoc(BaseModel):
    per_face: int
    gaussians: List[GaussianDoc]

    @field_validator("per_face")
    @classmethod
    def _supported(cls, v: int) -> int:
        if v not in GAUSSIANS_PER_FACE:
            raise ValueError(f"per_face must be one of {GAUSSIANS_PER_FACE}")
        return v


class RotationsDoc(BaseModel):
    rotvecs: List[Vec3]


class EnergyDoc(BaseModel):
    arap: float
    nc: float


class TracePoint(BaseModel):
    iter: int
    data: float
    arap: float
    nc: float
    total: float


class FrameReport(BaseModel):
    frame: int
    rmse: float
    rmse_over_bbox: float
    iterations: int
    converged: bool


class FitConfig(BaseModel):
    lambda_arap: float = Field(5.0, ge=0.0)
    lambda_nc: float = Field(10.0, ge=0.0)
    max_iters: int = Field(500, ge=1)
    step_size: float = Field(1e-2, gt=0.0)
    convergence_tol: float = Field(1e-8, ge=0.0)
    mode: SkinningMode = "ahs"
    optimizer: Optimizer = "lbfgs"

    model_config = {"extra": "forbid"}


_INPUT_PATHS = ("mesh", "graph", "trajectory", "targets", "gaussians", "rotations", "deformed")


class RunConfig(BaseModel):
    mesh: Optional[Path] = None
    graph: Optional[Path] = None
    trajectory: Optional[Path] = None
    targets: Optional[Path] = None
    gaussians: Optional[Path] = None
    rotations: Optional[Path] = None
    deformed: Optional[Path] = None
    out: Optional[Path] = None
    n_node: int = Field(1024, ge=1)
    n_neighbor: int = Field(4, ge=1)
    metric: Metric = "geodesic"
    mode: SkinningMode = "ahs"
    per_face: int = 6
    seed: int = 0
    serial: bool = False
    lambda_arap: float = Field(5.0, ge=0.0)
    lambda_nc: float = Field(10.0, ge=0.0)
    max_iters: int = Field(500, ge=1)
    step_size: float = Field(1e-2, gt=0.0)
    convergence_tol: float = Field(1e-8, ge=0.0)
    optimizer: Optimizer = "lbfgs"

    model_config = {"extra": "forbid"}

    @field_validator(*_INPUT_PATHS)
    @classmethod
    def _exists(cls, v: Optional[Path]) -> Optional[Path]:
        if v is not None and not v.exists():
            raise ValueError(f"path does not exist: {v}")
        return v

    @field_validator("per_face")
    @classmethod
    def _supported(cls, v: int) -> int:
        if v not in GAUSSIANS_PER_FACE:
            raise ValueError(f"per_face must be one of {GAUSSIANS_PER_FACE}")
        return v

    def fit_config(self) -> FitConfig:
        return FitConfig(**{name: getattr(self, name) for name in FitConfig.model_fields})
