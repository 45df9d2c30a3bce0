"""
Records exchanged between the controllers and persisted by the harness.
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

import numpy as np

logger = logging.getLogger(__name__)

MODES = ("vertices", "subtrees", "conditioned")
CAPACITY_POLICIES = ("hybrid", "exact", "monte-carlo", "bounds")

CSV_COLUMNS = [
    "config_hash", "mode", "dim", "mu", "theta", "eta", "n", "trial", "seed",
    "num_vertices", "num_subtrees", "range_size", "max_depth", "max_abs_pos",
    "sum_L2", "green_sum", "green_sum_method", "cap_lower", "cap_upper",
    "cap_value", "cap_method", "cap_error", "elapsed_ms", "error_tag",
]


@dataclass
class CapacityResult:
    """
    One capacity evaluation.

    method is one of exact-solve, monte-carlo, lower-bound, upper-bound.
    error is the absolute solve tolerance, the 1-sigma interval plus bias, or
    the bound gap, depending on the method.
    """
    value: float
    method: str
    error: float = 0.0
    escape_probs: Optional[np.ndarray] = None
    params: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        record = {"value": float(self.value), "method": self.method, "error": float(self.error)}
        record.update({key: (value.item() if isinstance(value, np.generic) else value)
                       for key, value in self.params.items()})
        return record


@dataclass
class ExperimentConfig:
    """Everything that determines the output of a run"""
    mode: str = "vertices"
    dim: int = 3
    mu: str = "geometric:0.5"
    theta: str = "srw"
    eta: str = "lazy-srw:0.5"
    n_min: int = 4096
    n_max: int = 262144
    ratio: float = 2.0
    trials: int = 8
    seed: int = 42
    capacity_policy: str = "hybrid"
    out: str = "results.csv"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.capacity_policy not in CAPACITY_POLICIES:
            raise ValueError(f"capacity_policy must be one of {CAPACITY_POLICIES}, got {self.capacity_policy!r}")
        if int(self.trials) < 1:
            raise ValueError("trials must be at least 1")
        if int(self.n_min) < 1 or int(self.n_max) < int(self.n_min):
            raise ValueError(f"need 1 <= n_min <= n_max, got {self.n_min}..{self.n_max}")
        if float(self.ratio) <= 1.0 and self.n_max > self.n_min:
            raise ValueError(f"grid ratio must exceed 1, got {self.ratio}")
        self.dim = int(self.dim)
        self.n_min = int(self.n_min)
        self.n_max = int(self.n_max)
        self.trials = int(self.trials)
        self.seed = int(self.seed)
        self.ratio = float(self.ratio)

    def grid(self) -> List[int]:
        """Geometric n-grid n_min, n_min*ratio, ... <= n_max, strictly increasing"""
        values = []
        if self.n_min == self.n_max:
            return [self.n_min]
        steps = int(math.floor(math.log(self.n_max / self.n_min) / math.log(self.ratio) + 1e-9))
        for k in range(steps + 1):
            n = int(round(self.n_min * self.ratio ** k))
            if n > self.n_max:
                break
            if not values or n > values[-1]:
                values.append(n)
        return values

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        """Short SHA-256 of the settings that affect results (out excluded)"""
        settings = self.to_dict()
        settings.pop("out", None)
        text = json.dumps(settings, sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, values: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            key = key.replace("-", "_")
            if key not in known:
                logger.warning(f"Ignoring unknown experiment setting: {key}")
                continue
            if value is not None:
                kwargs[key] = value
        return cls(**kwargs)


@dataclass
class TrialRecord:
    """One row of the results file"""
    config_hash: str
    mode: str
    dim: int
    mu: str
    theta: str
    eta: str
    n: int
    trial: int
    seed: int
    num_vertices: Optional[int] = None
    num_subtrees: Optional[int] = None
    range_size: Optional[int] = None
    max_depth: Optional[int] = None
    max_abs_pos: Optional[int] = None
    sum_L2: Optional[int] = None
    green_sum: Optional[float] = None
    green_sum_method: Optional[str] = None
    cap_lower: Optional[float] = None
    cap_upper: Optional[float] = None
    cap_value: Optional[float] = None
    cap_method: Optional[str] = None
    cap_error: Optional[float] = None
    elapsed_ms: Optional[float] = None
    error_tag: Optional[str] = None

    def to_row(self) -> Dict[str, Any]:
        row = asdict(self)
        return {column: row[column] for column in CSV_COLUMNS}

    def sandwich_holds(self, tolerance: float = 1e-6) -> bool:
        """cap_lower <= cap_value + error and cap_value - error <= cap_upper"""
        if self.cap_value is None:
            return True
        error = self.cap_error or 0.0
        slack = tolerance * max(1.0, abs(self.cap_value))
        if self.cap_lower is not None and self.cap_lower > self.cap_value + error + slack:
            return False
        if self.cap_upper is not None and self.cap_value - error > self.cap_upper + slack:
            return False
        return True


@dataclass
class ExponentFit:
    """Least-squares fit of mean log(statistic) against log n"""
    statistic: str
    log_n: List[float]
    mean_log: List[float]
    slope: float
    intercept: float
    stderr: float
    r_squared: float
    target: Optional[float] = None
    kind: str = "eq"
    margin: Optional[float] = None
    verdict: str = "n/a"
    trend: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ExponentFit":
        return cls(**{f.name: values[f.name] for f in fields(cls) if f.name in values})
