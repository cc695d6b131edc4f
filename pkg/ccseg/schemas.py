from collections import Counter
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


Stage = Literal["train", "1", "2", "3"]
STAGES: Tuple[str, ...] = ("train", "1", "2", "3")


class Detection(BaseModel):
    class_confidence: float = Field(..., ge=0.0, le=1.0)
    box: Tuple[float, float, float, float]
    mask_coefficients: List[float]

    @field_validator("box")
    @classmethod
    def box_is_ordered(cls, v):
        x0, y0, x1, y1 = v
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"box must satisfy x0<x1 and y0<y1, got {v}")
        return v


class MatchedPair(BaseModel):
    gt_id: int
    pred_id: int
    dsc: float
    nsd: float


class FrameEval(BaseModel):
    frame_id: str = ""
    mi_dsc: float = Field(..., ge=0.0, le=1.0)
    mi_nsd: float = Field(..., ge=0.0, le=1.0)
    matches: List[MatchedPair] = []
    n_gt: int = Field(0, ge=0)
    n_pred: int = Field(0, ge=0)
    n_matched: int = Field(0, ge=0)

    def to_record(self) -> Dict:
        """Flat JSON-lines record."""
        return {
            "frame_id": self.frame_id,
            "mi_dsc": self.mi_dsc,
            "mi_nsd": self.mi_nsd,
            "n_gt": self.n_gt,
            "n_pred": self.n_pred,
            "n_matched": self.n_matched,
        }


class StageRow(BaseModel):
    name: str
    mi_dsc: float
    mi_nsd: float
    rank_dsc: int = Field(..., ge=1)
    rank_nsd: int = Field(..., ge=1)
    n_frames: int = Field(0, ge=0)
    fps: Optional[float] = None
    fps_approximate: bool = False
    architecture: Optional[str] = None
    # per-frame scores, kept for boxplot export
    frame_dsc: List[float] = []
    frame_nsd: List[float] = []


class StageReport(BaseModel):
    stage: str = "3"
    percentile: float = 0.05
    rows: List[StageRow] = []


class BenchResult(BaseModel):
    variant: str
    image_size: Tuple[int, int]
    runs: List[float]
    mean_fps: float
    repetitions: int = Field(..., ge=1)
    warmup: int = Field(0, ge=0)
    frames: int = Field(..., ge=1)
    mode: Literal["sequential", "parallel"] = "sequential"
    stage_seconds: Dict[str, float] = {}
    output_digest: str = ""

    @model_validator(mode="after")
    def runs_match_mean(self):
        if len(self.runs) != self.repetitions:
            raise ValueError(f"expected {self.repetitions} runs, got {len(self.runs)}")
        mean = sum(self.runs) / len(self.runs)
        if abs(mean - self.mean_fps) > 1e-9 * max(1.0, abs(mean)):
            raise ValueError("mean_fps must equal the arithmetic mean of runs")
        return self


class FrameRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    frame_id: str
    procedure: str
    stage: Stage
    image_path: str
    annotation_path: str
    instrument_count: Optional[int] = None
    shape_families: List[str] = []
    nuisance_tags: List[str] = []


class DatasetManifest(BaseModel):
    version: int = 1
    frames: List[FrameRecord] = []
    root: Optional[Path] = Field(None, exclude=True)

    def counts(self) -> Dict[str, int]:
        """Frame count per stage; every stage key is present."""
        tally = Counter(record.stage for record in self.frames)
        return {stage: tally.get(stage, 0) for stage in STAGES}

    def counts_by_procedure(self) -> Dict[str, Dict[str, int]]:
        table: Dict[str, Dict[str, int]] = {}
        for record in self.frames:
            row = table.setdefault(record.procedure, {stage: 0 for stage in STAGES})
            row[record.stage] += 1
        return table

    def by_stage(self, stage: str) -> List[FrameRecord]:
        return [record for record in self.frames if record.stage == stage]

    def resolve(self, relative: str) -> Path:
        """Absolute path of a record path relative to the manifest directory."""
        path = Path(relative)
        if path.is_absolute() or self.root is None:
            return path
        return self.root / path

    def replace_frames(self, frames: List[FrameRecord]) -> "DatasetManifest":
        return DatasetManifest(version=self.version, frames=frames, root=self.root)


class OpCountRow(BaseModel):
    """Analytic cost of one network stage or attention site."""

    stage: str
    site: str = ""
    height: int = 0
    width: int = 0
    criss_cross_entries: int = 0
    dense_entries: int = 0
    macs: int = 0


class OpCountReport(BaseModel):
    variant: str
    image_size: Tuple[int, int]
    rows: List[OpCountRow] = []

    @property
    def attention_entries(self) -> int:
        return sum(row.criss_cross_entries for row in self.rows)

    @property
    def dense_entries(self) -> int:
        return sum(row.dense_entries for row in self.rows)

    def macs_by_stage(self) -> Dict[str, int]:
        totals: Dict[str, int] = {}
        for row in self.rows:
            totals[row.stage] = totals.get(row.stage, 0) + row.macs
        return totals


class OrderingCheck(BaseModel):
    """Expected fps ordering between two variants on the same frames."""

    faster: str
    slower: str
    faster_mean_fps: float
    slower_mean_fps: float
    slower_p05_fps: float
    reversed: bool
