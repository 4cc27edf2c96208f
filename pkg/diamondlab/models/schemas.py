import math
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, root_validator, validator

from ..core.disorder import DisorderFamily, DisorderSpec
from ..core.lattice import LatticeParams
from ..core.limitlaw import DEFAULT_PERMUTATIONS
from ..core.rgflow import FlowKind, kappa

class ExperimentKind(str, Enum):
    SAMPLE_W = "sample-w"
    VARIANCE_FLOW = "variance-flow"
    CRITICAL_TABLE = "critical-table"
    EXPLOSION = "explosion"
    LIMIT_LAW = "limit-law"
    FIXED_POINT = "fixed-point"
    SMALL_R = "small-r"
    STRONG_DISORDER = "strong-disorder"
    UNIVERSALITY = "universality"
    FOLD_VARIANCE = "fold-variance"
    MEASURE_CONSISTENCY = "measure-consistency"
    CLT = "clt"
    CRITICAL = "critical"
    PROCESS = "process"
    BGS_LIMIT = "bgs-limit"

# Regime each experiment is defined for; None means any regime
EXPERIMENT_REGIME = {
    ExperimentKind.SAMPLE_W: None,
    ExperimentKind.VARIANCE_FLOW: None,
    ExperimentKind.CRITICAL_TABLE: "b=s",
    ExperimentKind.EXPLOSION: "b=s",
    ExperimentKind.LIMIT_LAW: "b<s",
    ExperimentKind.FIXED_POINT: "b<s",
    ExperimentKind.SMALL_R: "b<s",
    ExperimentKind.STRONG_DISORDER: "b<s",
    ExperimentKind.UNIVERSALITY: "b<s",
    ExperimentKind.FOLD_VARIANCE: "b<s",
    ExperimentKind.MEASURE_CONSISTENCY: "b<s",
    ExperimentKind.CLT: "b=s",
    ExperimentKind.CRITICAL: "b=s",
    ExperimentKind.PROCESS: "b=s",
    ExperimentKind.BGS_LIMIT: "b>s",
}

# Experiments that draw one value per replicate and emit a per-replicate CSV
REPLICATE_EXPERIMENTS = {
    ExperimentKind.SAMPLE_W,
    ExperimentKind.LIMIT_LAW,
    ExperimentKind.CLT,
    ExperimentKind.BGS_LIMIT,
}

class ScheduleKind(str, Enum):
    FIXED = "fixed"
    BLS = "bls"
    BEQ = "beq"
    EDGE = "edge"
    CRITICAL = "critical"
    TABLE = "table"

class LatticeModel(BaseModel):
    b: int = Field(..., ge=2, description="Number of branches", example=2)
    s: int = Field(..., ge=1, description="Number of segments per branch", example=2)
    n: Optional[int] = Field(None, ge=0, description="Depth of the lattice", example=10)
    n_grid: Optional[List[int]] = Field(None, description="Depths for experiments that sweep n", example=[256, 1024])

    @validator("n_grid")
    def positive_depths(cls, v, field):
        if v is not None and (not v or any(n < 1 for n in v)):
            raise ValueError(f"{field.name} must be a non-empty list of depths >= 1")
        return v

    def params(self) -> LatticeParams:
        return LatticeParams(self.b, self.s)

    @property
    def regime(self) -> str:
        return "b<s" if self.b < self.s else ("b=s" if self.b == self.s else "b>s")

    def depths(self) -> List[int]:
        if self.n_grid:
            return list(self.n_grid)
        return [self.n] if self.n is not None else []

class DisorderModel(BaseModel):
    family: DisorderFamily = Field(DisorderFamily.GAUSSIAN, description="Disorder law of ω")
    values: Optional[List[float]] = Field(None, description="Atoms of a discrete law")
    probs: Optional[List[float]] = Field(None, description="Probabilities of the atoms")

    @root_validator(skip_on_failure=True)
    def discrete_needs_atoms(cls, values):
        if values.get("family") is DisorderFamily.DISCRETE and not values.get("values"):
            raise ValueError("a discrete disorder law needs values and probs")
        # mean/variance errors of a discrete law surface here as field errors
        DisorderSpec(values["family"], tuple(values.get("values") or ()), tuple(values.get("probs") or ()))
        return values

    def to_spec(self) -> DisorderSpec:
        return DisorderSpec(self.family, tuple(self.values or ()), tuple(self.probs or ()))

class BetaSchedule(BaseModel):
    kind: ScheduleKind = Field(..., description="How β depends on the depth n", example="beq")
    beta: Optional[float] = Field(None, description="Inverse temperature of the fixed schedule")
    beta_hat: Optional[float] = Field(None, ge=0, description="Rescaled inverse temperature β̂", example=1.0)
    table: Optional[Dict[int, float]] = Field(None, description="Custom n -> β table")

    @root_validator(skip_on_failure=True)
    def required_parameter(cls, values):
        kind = values.get("kind")
        if kind is ScheduleKind.FIXED and values.get("beta") is None:
            raise ValueError("the fixed schedule needs beta")
        if kind in (ScheduleKind.BLS, ScheduleKind.BEQ, ScheduleKind.EDGE) and values.get("beta_hat") is None:
            raise ValueError(f"the {kind.value} schedule needs beta_hat")
        if kind is ScheduleKind.TABLE and not values.get("table"):
            raise ValueError("the table schedule needs a non-empty table")
        return values

    def value(self, params: LatticeParams, n: int) -> float:
        """β at depth n."""
        kind = self.kind
        if kind is ScheduleKind.FIXED:
            return float(self.beta)
        if kind is ScheduleKind.BLS:
            return self.beta_hat * (params.b / params.s) ** (n / 2.0)
        if kind is ScheduleKind.BEQ:
            return self.beta_hat / n
        if kind is ScheduleKind.EDGE:
            return self.beta_hat / math.sqrt(n)
        if kind is ScheduleKind.CRITICAL:
            return kappa(params.b) / n
        if n not in self.table:
            raise ValueError(f"the schedule table has no entry for n={n}")
        return float(self.table[n])

    def rescaled(self, params: LatticeParams) -> float:
        """β̂ (or the fixed β) that the moment flows take as their parameter."""
        if self.kind is ScheduleKind.CRITICAL:
            return kappa(params.b)
        if self.kind is ScheduleKind.FIXED:
            return float(self.beta)
        if self.kind is ScheduleKind.TABLE:
            raise ValueError("a table schedule has no single rescaled parameter")
        return float(self.beta_hat)

class OutputModel(BaseModel):
    prefix: Optional[str] = Field(None, description="File prefix under results_dir; defaults to '<experiment>-<seed>'")
    write_csv: bool = Field(True, description="Write the per-replicate (or per-row) CSV")

class ExperimentConfig(BaseModel):
    experiment: ExperimentKind = Field(..., description="Which experiment to run", example="clt")
    lattice: LatticeModel
    disorder: DisorderModel = Field(default_factory=DisorderModel)
    schedule: Optional[BetaSchedule] = Field(None, description="β schedule; required by W and flow experiments")
    replicates: int = Field(1000, ge=0, description="Number of Monte Carlo replicates (or samples)")
    master_seed: int = Field(0, ge=0, lt=2**64, description="Master seed of every random stream")
    workers: Optional[int] = Field(None, ge=1, description="Worker processes; defaults to Settings.workers")
    engine: str = Field("auto", regex=r"^(auto|lattice|population)$", description="Sampling engine")
    edge: bool = Field(False, description="Use edge disorder instead of vertex disorder")
    r: Optional[float] = Field(None, ge=0, description="Variance parameter of the L_r law")
    r_grid: Optional[List[float]] = Field(None, description="r values of process / decay experiments")
    k: Optional[int] = Field(None, ge=0, description="Coarse depth or fold depth")
    depth: Optional[int] = Field(None, ge=1, description="Truncation depth of the L_r sampler")
    leaf_mode: Optional[str] = Field(None, description="Leaf law of the L_r sampler")
    leaf_variance: str = Field("matched", regex=r"^(linear|matched)$", description="Leaf variance of the L_r sampler")
    n_permutations: int = Field(DEFAULT_PERMUTATIONS, ge=0, description="Permutations for the two-sample KS p-value")
    analog_beta_hat: Optional[float] = Field(None, gt=0, description="β̂ > κ_b of the shifted-size critical run")
    flow_variant: str = Field("exact", regex=r"^(exact|quadratic|cubic)$", description="b=s flow variant")
    output: OutputModel = Field(default_factory=OutputModel)

    @validator("r_grid")
    def unit_interval(cls, v, field):
        if v is not None and any(not 0.0 <= r for r in v):
            raise ValueError(f"{field.name} entries must be >= 0")
        return v

    @root_validator(skip_on_failure=True)
    def regime_and_schedule(cls, values):
        kind: ExperimentKind = values["experiment"]
        lattice: LatticeModel = values["lattice"]
        schedule: Optional[BetaSchedule] = values.get("schedule")
        regime = EXPERIMENT_REGIME[kind]
        if regime is not None and lattice.regime != regime:
            raise ValueError(f"the {kind.value} experiment needs {regime}, got b={lattice.b}, s={lattice.s}")
        if schedule is not None:
            if schedule.kind is ScheduleKind.BLS and lattice.regime != "b<s":
                raise ValueError("the bls schedule β̂(b/s)^{n/2} needs b < s")
            if schedule.kind in (ScheduleKind.BEQ, ScheduleKind.CRITICAL) and lattice.regime != "b=s":
                raise ValueError(f"the {schedule.kind.value} schedule needs b = s")
        needs_schedule = {
            ExperimentKind.SAMPLE_W, ExperimentKind.VARIANCE_FLOW, ExperimentKind.EXPLOSION,
            ExperimentKind.CLT, ExperimentKind.PROCESS, ExperimentKind.BGS_LIMIT,
        }
        if kind in needs_schedule and schedule is None:
            raise ValueError(f"the {kind.value} experiment needs a schedule")
        needs_depth = needs_schedule | {ExperimentKind.CRITICAL_TABLE, ExperimentKind.CRITICAL}
        if kind in needs_depth and not lattice.depths():
            raise ValueError(f"the {kind.value} experiment needs lattice.n or lattice.n_grid")
        needs_r = {
            ExperimentKind.LIMIT_LAW, ExperimentKind.FIXED_POINT, ExperimentKind.SMALL_R,
            ExperimentKind.UNIVERSALITY, ExperimentKind.FOLD_VARIANCE, ExperimentKind.MEASURE_CONSISTENCY,
        }
        if kind in needs_r and values.get("r") is None:
            raise ValueError(f"the {kind.value} experiment needs r")
        if kind in (ExperimentKind.PROCESS, ExperimentKind.STRONG_DISORDER) and not values.get("r_grid"):
            raise ValueError(f"the {kind.value} experiment needs r_grid")
        if kind is ExperimentKind.PROCESS and any(r > 1 for r in values["r_grid"]):
            raise ValueError("process r_grid entries must lie in [0, 1]")
        if kind in (ExperimentKind.FOLD_VARIANCE, ExperimentKind.MEASURE_CONSISTENCY) and values.get("k") is None:
            raise ValueError(f"the {kind.value} experiment needs k")
        if kind is ExperimentKind.MEASURE_CONSISTENCY and lattice.n is None:
            raise ValueError("the measure-consistency experiment needs lattice.n")
        if kind is ExperimentKind.CLT and schedule is not None and schedule.kind is ScheduleKind.BEQ:
            if schedule.beta_hat >= kappa(lattice.b):
                raise ValueError(f"the clt experiment needs beta_hat < κ_b = {kappa(lattice.b):.6f}")
        return values

class ResultRecord(BaseModel):
    config: ExperimentConfig
    values: Optional[List[float]] = Field(None, description="Per-replicate values in replicate order")
    statistics: Dict[str, Any] = Field(default_factory=dict, description="Aggregated statistics")
    report: Dict[str, Any] = Field(default_factory=dict, description="Experiment-specific report")
    rows: List[Dict[str, Any]] = Field(default_factory=list, description="Tabular output (flows, sweeps)")
    wall_time: float = Field(..., ge=0, description="Wall time in seconds")
    version: str = Field(..., description="diamondlab version that produced the record")
    provenance: Dict[str, Any] = Field(default_factory=dict, description="Seeds, streams and engine")

class SummaryRow(BaseModel):
    experiment: str
    b: int
    s: int
    n: Optional[int] = None
    quantity: str = Field(..., description="What the estimate measures", example="variance")
    estimate: Optional[float] = None
    se: Optional[float] = None
    target: Optional[float] = None
    target_name: Optional[str] = Field(None, example="upsilon_b(beta_hat)")
    deviation: Optional[float] = None
    tolerance: Optional[float] = None
    flagged: bool = False

class FlowRequest(BaseModel):
    b: int = Field(..., ge=2, example=2)
    s: int = Field(..., ge=1, example=2)
    kind: FlowKind = Field(..., description="Which map to iterate", example="Mn_beq")
    beta: float = Field(0.0, description="β, β̂ or βₙ depending on the map", example=1.0)
    n: int = Field(1, ge=1, description="System size of the n-dependent maps", example=1000)
    x0: float = Field(0.0, ge=0, description="Starting value")
    steps: Optional[int] = Field(None, ge=0, description="Iterations; defaults to n")
    disorder: DisorderModel = Field(default_factory=DisorderModel)
    extended: Optional[bool] = Field(None, description="Iterate in numpy.longdouble; defaults to Settings.float_mode")

class FlowResponse(BaseModel):
    kind: str
    values: List[float]
    blow_up_index: Optional[int] = None
    converged: bool = False

class CriticalRequest(BaseModel):
    b: int = Field(..., ge=2, example=2)
    n_grid: List[int] = Field(..., min_items=1, example=[1000, 10000])
    variant: str = Field("cubic", regex=r"^(exact|quadratic|cubic)$")
    disorder: DisorderModel = Field(default_factory=DisorderModel)

    @validator("n_grid")
    def at_least_two(cls, v, field):
        if any(n < 2 for n in v):
            raise ValueError(f"{field.name} entries must be >= 2")
        return v

class CriticalRow(BaseModel):
    n: int
    value: float
    target: float
    relative_gap: float

class SummarizeRequest(BaseModel):
    records: Optional[List[ResultRecord]] = Field(None, description="Records to compare with their targets")
    pattern: Optional[str] = Field(None, description="Glob of saved record files under results_dir", example="clt-*.json")

    @root_validator(skip_on_failure=True)
    def one_source(cls, values):
        if (values.get("records") is None) == (values.get("pattern") is None):
            raise ValueError("give exactly one of records or pattern")
        return values
