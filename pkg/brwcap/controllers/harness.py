"""
Experiment controller: seeded trials over n-grids, CSV persistence and
log-log exponent fits.
"""

import os
import math
import time
import logging
import traceback
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from brwcap.controllers.capacity import (cap_exact, cap_lower_bound, cap_monte_carlo,
                                         cap_upper_bound, distinct_points)
from brwcap.controllers.green import GreenEvaluator
from brwcap.controllers.gw_forest import (build_forest_by_subtrees, build_forest_by_vertices,
                                          sample_conditioned_tree)
from brwcap.controllers.tree_walk import (PositionedForest, RangeAccounting, assign_positions,
                                          range_accounting, range_subtree_mode)
from brwcap.models.lattice import parse_step_distribution
from brwcap.models.offspring import parse_offspring
from brwcap.models.records import (CSV_COLUMNS, CapacityResult, ExperimentConfig, ExponentFit,
                                   TrialRecord)
from brwcap.utils.config import Config, default_config
from brwcap.utils.errors import ForestInvariantError, ForestSizeError, InsufficientDataError
from brwcap.utils.seeding import derive_seed, make_rng
from brwcap.utils.worker import TrialPool

logger = logging.getLogger(__name__)

# (mode, statistic) -> dim -> (target exponent, kind, margin)
TARGETS: Dict[Tuple[str, str], Callable[[int], Tuple[float, str, float]]] = {
    ("subtrees", "num_vertices"): lambda d: (2.0, "eq", 0.2),
    ("vertices", "max_depth"): lambda d: (0.5, "eq", 0.1),
    ("vertices", "max_abs_pos"): lambda d: (0.25, "eq", 0.08),
    ("vertices", "range_size"): lambda d: (min(d / 4.0, 1.0), "at-least", 0.1),
    ("vertices", "sum_L2"): lambda d: (max((8.0 - d) / 4.0, 1.0), "at-most", 0.15),
    ("vertices", "green_sum"): lambda d: (1.25 if d == 3 else (10.0 - d) / 4.0, "at-most", 0.15),
    ("vertices", "cap"): lambda d: ((d - 2) / 4.0, "eq", 0.15),
    ("vertices", "cap_lower"): lambda d: ((d - 2) / 4.0, "at-most", 0.15),
    ("vertices", "cap_upper"): lambda d: ((d - 2) / 4.0, "at-least", 0.15),
    ("subtrees", "cap"): lambda d: ((d - 2) / 2.0, "eq", 0.2),
    ("conditioned", "cap"): lambda d: ((d - 2) / 4.0, "eq", 0.2),
}

STATISTIC_COLUMNS = {"cap": "cap_value"}
STATISTICS = ("cap", "cap_lower", "cap_upper", "range_size", "sum_L2", "green_sum",
              "max_depth", "max_abs_pos", "num_vertices")


def exponent_target(mode: str, statistic: str, dim: int) -> Optional[Tuple[float, str, float]]:
    rule = TARGETS.get((mode, statistic))
    return rule(int(dim)) if rule else None


def judge(slope: float, target: float, kind: str, margin: float) -> bool:
    if kind == "eq":
        return abs(slope - target) <= margin
    if kind == "at-least":
        return slope >= target - margin
    if kind == "at-most":
        return slope <= target + margin
    raise ValueError(f"unknown target kind {kind!r}")


# ----------------------------------------------------------------------
# Capacity per policy


def capacity_by_policy(points: np.ndarray, seq: np.ndarray, policy: str, ev: GreenEvaluator,
                       rng, config: Config) -> Dict[str, Optional[CapacityResult]]:
    """
    Capacity of the distinct points plus both bounds.

    hybrid solves exactly up to the solve ceiling and falls back to Monte Carlo
    above it; bounds leaves the value empty.
    """
    results: Dict[str, Optional[CapacityResult]] = {"value": None}
    results["lower"] = cap_lower_bound(points, ev, config=config, rng=rng)
    results["upper"] = cap_upper_bound(seq, ev, config=config)

    if policy == "exact" or (policy == "hybrid" and points.shape[0] <= int(config.get("solve_ceiling"))):
        results["value"] = cap_exact(points, ev, config=config)
    elif policy in ("hybrid", "monte-carlo"):
        results["value"] = cap_monte_carlo(points, ev.dist, ev, rng, config=config)
    return results


def subadditivity_split(pf: PositionedForest, fraction: float, ev: GreenEvaluator, rng,
                        policy: str = "hybrid", config: Optional[Config] = None) -> Dict[str, Any]:
    """
    Capacity of a conditioned tree's range against its two DFS halves.

    The range splits into the first floor(fraction * n) visited sites and the
    rest; capacity is subadditive, so cap(whole) <= cap(first) + cap(second)
    up to the reported errors.
    """
    config = config or default_config()
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    positions = pf.positions.astype(np.int64)
    n = positions.shape[0]
    cut = int(math.floor(fraction * n))
    if cut < 1 or cut >= n:
        raise ValueError(f"cannot split {n} vertices at fraction {fraction}")

    parts = {}
    for name, seq in (("whole", positions), ("first", positions[:cut]), ("second", positions[cut:])):
        points = distinct_points(seq)
        if policy == "exact" or points.shape[0] <= int(config.get("solve_ceiling")):
            parts[name] = cap_exact(points, ev, config=config)
        else:
            parts[name] = cap_monte_carlo(points, ev.dist, ev, rng, config=config)

    slack = sum(part.error for part in parts.values())
    whole, first, second = parts["whole"], parts["first"], parts["second"]
    return {"n": n, "cut": cut,
            "cap_whole": whole.value, "cap_first": first.value, "cap_second": second.value,
            "slack": slack,
            "holds": whole.value <= first.value + second.value + slack + 1e-9}


# ----------------------------------------------------------------------
# Trials

_WORKER_STATE: Dict[str, Any] = {}


def init_worker(settings: Dict[str, Any], knobs: Dict[str, Any]):
    """Per-process setup: parse the laws once and warm a Green evaluator"""
    cfg = ExperimentConfig(**settings)
    config = Config.defaults()
    config.update(knobs)
    eta = parse_step_distribution(cfg.eta, cfg.dim)
    _WORKER_STATE.clear()
    _WORKER_STATE.update({
        "cfg": cfg,
        "config": config,
        "mu": parse_offspring(cfg.mu, truncation=float(config.get("pmf_truncation"))),
        "theta": parse_step_distribution(cfg.theta, cfg.dim),
        "ev": GreenEvaluator(eta, config=config),
    })
    logger.debug(f"Worker {os.getpid()} ready for {cfg.config_hash()}")


def check_identities(acc: RangeAccounting, num_vertices: int):
    """Sum of local times and the Cauchy-Schwarz range bound, in integers"""
    if acc.sum_L != num_vertices:
        raise ForestInvariantError(f"sum of local times {acc.sum_L} != {num_vertices}")
    if acc.range_size * acc.sum_L2 < num_vertices ** 2:
        raise ForestInvariantError(
            f"range {acc.range_size} violates (#vertices)^2 / sum L^2 = {num_vertices ** 2 / acc.sum_L2:.3f}")


def _blank_record(cfg: ExperimentConfig, n: int, trial: int, seed: int) -> TrialRecord:
    return TrialRecord(config_hash=cfg.config_hash(), mode=cfg.mode, dim=cfg.dim, mu=cfg.mu,
                       theta=cfg.theta, eta=cfg.eta, n=int(n), trial=int(trial), seed=int(seed))


def _measure(record: TrialRecord, pf: PositionedForest, acc: RangeAccounting, num_vertices: int,
             rng, started: float):
    """Fill the statistics and capacities of one checkpoint into ``record``"""
    cfg, config, ev = _WORKER_STATE["cfg"], _WORKER_STATE["config"], _WORKER_STATE["ev"]
    try:
        check_identities(acc, num_vertices)
        f = pf.forest
        last = num_vertices - 1
        record.num_vertices = num_vertices
        record.num_subtrees = int(f.spine_index[last]) + 1 if cfg.mode != "conditioned" else 1
        record.range_size = acc.range_size
        record.max_depth = int(f.depth[: last + 1].max())
        record.max_abs_pos = acc.max_abs_pos
        record.sum_L2 = acc.sum_L2

        capacities = capacity_by_policy(acc.points, pf.positions[:num_vertices], cfg.capacity_policy,
                                        ev, rng, config)
        lower, upper, value = capacities["lower"], capacities["upper"], capacities["value"]
        record.green_sum = float(lower.params["green_sum"])
        record.green_sum_method = lower.params["green_sum_method"]
        record.cap_lower = lower.value
        record.cap_upper = upper.value
        if value is not None:
            record.cap_value = value.value
            record.cap_method = value.method
            record.cap_error = value.error
    except Exception as e:
        logger.error(f"Trial n={record.n} t={record.trial} failed: {str(e)}")
        logger.debug(traceback.format_exc())
        record.error_tag = type(e).__name__
    record.elapsed_ms = round(1000.0 * (time.perf_counter() - started), 3)


def run_trial(task: Tuple[Tuple[int, ...], int, int]) -> List[TrialRecord]:
    """
    One task: a trial seed and the grid points it serves.

    vertices and subtrees modes grow one forest for the largest n and read
    every smaller n off its prefix; conditioned mode samples one tree per n.
    """
    checkpoints, trial, seed = task
    cfg, config = _WORKER_STATE["cfg"], _WORKER_STATE["config"]
    mu, theta = _WORKER_STATE["mu"], _WORKER_STATE["theta"]
    rng = make_rng(seed)
    started = time.perf_counter()
    records = []

    if cfg.mode == "vertices":
        f = build_forest_by_vertices(mu, checkpoints[-1] + 1, rng, complete_subtree=False, config=config)
        pf = assign_positions(f, theta, rng)
        for acc in range_accounting(pf, checkpoints, with_points=True):
            record = _blank_record(cfg, acc.n, trial, seed)
            _measure(record, pf, acc, acc.n + 1, rng, started)
            records.append(record)
    elif cfg.mode == "subtrees":
        f = build_forest_by_subtrees(mu, checkpoints[-1], rng, config=config, allow_partial=True)
        pf = assign_positions(f, theta, rng)
        for m in checkpoints:
            record = _blank_record(cfg, m, trial, seed)
            if m > f.num_subtrees:
                # the first m subtrees pass the vertex ceiling
                record.error_tag = ForestSizeError.__name__
                record.elapsed_ms = round(1000.0 * (time.perf_counter() - started), 3)
                records.append(record)
                continue
            acc = range_subtree_mode(pf, m, with_points=True)
            _measure(record, pf, acc, acc.n + 1, rng, started)
            record.num_subtrees = m
            records.append(record)
    else:
        (n,) = checkpoints
        f = sample_conditioned_tree(mu, n, rng, config=config)
        pf = assign_positions(f, theta, rng)
        acc = range_accounting(pf, [n - 1], with_points=True)[0]
        record = _blank_record(cfg, n, trial, seed)
        _measure(record, pf, acc, n, rng, started)
        records.append(record)
    return records


# ----------------------------------------------------------------------
# Runner


class ExperimentRunner:
    """Runs an ExperimentConfig and appends its records to the output CSV"""

    def __init__(self, cfg: ExperimentConfig, config: Optional[Config] = None,
                 workers: Optional[int] = None,
                 progress_callback: Optional[Callable[[int, str], None]] = None,
                 show_progress: bool = False, resume: bool = True):
        self.cfg = cfg
        self.config = config or default_config()
        self.workers = int(workers or self.config.get("workers"))
        self.progress_callback = progress_callback
        self.show_progress = show_progress
        self.resume = resume
        self.records: List[TrialRecord] = []
        self.sandwich_violations = 0

    def tasks(self) -> List[Tuple[Tuple[int, ...], int, int]]:
        """(checkpoints, trial, seed) in deterministic order"""
        grid = self.cfg.grid()
        if self.cfg.mode == "conditioned":
            return [((n,), t, derive_seed(self.cfg.seed, n, t))
                    for n in grid for t in range(self.cfg.trials)]
        top = grid[-1]
        return [(tuple(grid), t, derive_seed(self.cfg.seed, top, t)) for t in range(self.cfg.trials)]

    def _completed(self) -> set:
        """(n, trial) pairs of this configuration already present in the output"""
        if not self.resume or not os.path.exists(self.cfg.out):
            return set()
        try:
            frame = pd.read_csv(self.cfg.out, usecols=["config_hash", "n", "trial"])
        except Exception as e:
            logger.error(f"Could not read existing results {self.cfg.out}: {str(e)}")
            return set()
        frame = frame[frame["config_hash"] == self.cfg.config_hash()]
        return set(zip(frame["n"].astype(int), frame["trial"].astype(int)))

    def ingest(self, record: TrialRecord) -> TrialRecord:
        """Re-check per-record invariants before a record is persisted"""
        if record.error_tag is None and not record.sandwich_holds():
            self.sandwich_violations += 1
            logger.error(f"Sandwich violated at n={record.n} t={record.trial}: "
                         f"{record.cap_lower} <= {record.cap_value} +- {record.cap_error} <= {record.cap_upper}")
            record.error_tag = "SandwichViolation"
        self.records.append(record)
        return record

    def _append(self, records: List[TrialRecord]):
        if not records:
            return
        frame = pd.DataFrame([r.to_row() for r in records], columns=CSV_COLUMNS)
        header = not os.path.exists(self.cfg.out) or os.path.getsize(self.cfg.out) == 0
        directory = os.path.dirname(os.path.abspath(self.cfg.out))
        os.makedirs(directory, exist_ok=True)
        frame.to_csv(self.cfg.out, mode="a", header=header, index=False, encoding="utf-8")

    def run(self) -> List[TrialRecord]:
        tasks = self.tasks()
        done = self._completed()
        if done:
            pending = [task for task in tasks if not all((n, task[1]) in done for n in task[0])]
            logger.info(f"Resuming: {len(tasks) - len(pending)} of {len(tasks)} tasks already in {self.cfg.out}")
            tasks = pending

        logger.info(f"Running {self.cfg.mode} experiment {self.cfg.config_hash()}: "
                    f"grid {self.cfg.grid()}, {self.cfg.trials} trials, {len(tasks)} tasks")
        pool = TrialPool(run_trial, workers=self.workers, initializer=init_worker,
                         initargs=(self.cfg.to_dict(), self.config.as_dict()),
                         progress_callback=self.progress_callback)

        with tqdm(total=len(tasks), desc=f"{self.cfg.mode} d={self.cfg.dim}",
                  disable=not self.show_progress) as bar:
            for outcome in pool.run(tasks):
                checkpoints, trial, seed = outcome.task
                if outcome.ok:
                    batch = outcome.result
                else:
                    batch = []
                    for n in checkpoints:
                        record = _blank_record(self.cfg, n, trial, seed)
                        record.error_tag = outcome.error_type
                        batch.append(record)
                self._append([self.ingest(record) for record in sorted(batch, key=lambda r: r.n)])
                bar.update(1)

        failed = sum(1 for r in self.records if r.error_tag)
        logger.info(f"Experiment finished: {len(self.records)} records, {failed} with errors, "
                    f"{self.sandwich_violations} sandwich violations")
        return self.records


def run_experiment(cfg: ExperimentConfig, config: Optional[Config] = None, **kwargs) -> List[TrialRecord]:
    return ExperimentRunner(cfg, config=config, **kwargs).run()


# ----------------------------------------------------------------------
# Fitting


def load_records(path: str, config_hash: Optional[str] = None) -> pd.DataFrame:
    """
    Read a results CSV, keeping error-free rows.

    Rows whose capacity sandwich or Cauchy-Schwarz bound fails are dropped
    with an error log line.
    """
    frame = pd.read_csv(path)
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    if config_hash is not None:
        frame = frame[frame["config_hash"] == config_hash]
    frame = frame[frame["error_tag"].isna()].copy()

    bad = frame["range_size"] * frame["sum_L2"] < frame["num_vertices"] ** 2
    error = frame["cap_error"].fillna(0.0)
    slack = 1e-6 * frame["cap_value"].abs().clip(lower=1.0)
    bad |= frame["cap_lower"] > frame["cap_value"] + error + slack
    bad |= frame["cap_value"] - error > frame["cap_upper"] + slack
    if bad.any():
        logger.error(f"{path}: dropping {int(bad.sum())} rows that violate per-record invariants")
        frame = frame[~bad]
    return frame


def _as_frame(records) -> pd.DataFrame:
    if isinstance(records, pd.DataFrame):
        return records
    return pd.DataFrame([r.to_row() if isinstance(r, TrialRecord) else r for r in records])


def _log_means(frame: pd.DataFrame, statistic: str, n_min=None, n_max=None) -> pd.Series:
    column = STATISTIC_COLUMNS.get(statistic, statistic)
    if column not in frame.columns:
        raise InsufficientDataError(f"no column for statistic {statistic!r}")
    data = frame[["n", column]].dropna()
    data = data[data[column] > 0]
    if n_min is not None:
        data = data[data["n"] >= n_min]
    if n_max is not None:
        data = data[data["n"] <= n_max]
    return np.log(data[column].astype(float)).groupby(data["n"].astype(int)).mean().sort_index()


def _unique(frame: pd.DataFrame, column: str):
    values = frame[column].dropna().unique() if column in frame.columns else []
    return values[0] if len(values) == 1 else None


def slope_trend(records, statistic: str, window: int = 4, n_min=None, n_max=None) -> pd.DataFrame:
    """OLS slopes over sliding windows of consecutive grid points"""
    means = _log_means(_as_frame(records), statistic, n_min, n_max)
    rows = []
    for start in range(0, len(means) - window + 1):
        part = means.iloc[start:start + window]
        fit = stats.linregress(np.log(part.index.to_numpy(dtype=float)), part.to_numpy())
        rows.append({"n_lo": int(part.index[0]), "n_hi": int(part.index[-1]),
                     "slope": float(fit.slope), "stderr": float(fit.stderr)})
    return pd.DataFrame(rows, columns=["n_lo", "n_hi", "slope", "stderr"])


def fit_exponent(records, statistic: str, n_min=None, n_max=None, mode: Optional[str] = None,
                 dim: Optional[int] = None, window: int = 4) -> ExponentFit:
    """
    Least squares of mean log(statistic) against log n.

    A failed verdict is refined by the sliding-window trend: "approaching"
    when the window slopes move monotonically toward the target, "diverging"
    otherwise.
    """
    frame = _as_frame(records)
    means = _log_means(frame, statistic, n_min, n_max)
    if len(means) < 3:
        raise InsufficientDataError(f"{statistic}: need at least 3 grid points, got {len(means)}")

    log_n = np.log(means.index.to_numpy(dtype=float))
    fit = stats.linregress(log_n, means.to_numpy())
    result = ExponentFit(statistic=statistic, log_n=log_n.tolist(), mean_log=means.tolist(),
                         slope=float(fit.slope), intercept=float(fit.intercept),
                         stderr=float(fit.stderr), r_squared=float(fit.rvalue ** 2))

    mode = mode or _unique(frame, "mode")
    dim = dim or _unique(frame, "dim")
    target = exponent_target(mode, statistic, dim) if mode and dim else None
    if target is None:
        return result

    result.target, result.kind, result.margin = target
    if judge(result.slope, *target):
        result.verdict = "pass"
        return result

    trend = slope_trend(frame, statistic, window, n_min, n_max)
    result.trend = trend["slope"].tolist()
    if len(trend) >= 2:
        distance = np.abs(trend["slope"].to_numpy() - result.target)
        result.verdict = "approaching" if np.all(np.diff(distance) <= 0) else "diverging"
    else:
        result.verdict = "fail"
    logger.info(f"{statistic}: slope {result.slope:.3f} vs target {result.target:.3f} -> {result.verdict}")
    return result


def fit_all(records, statistics: Iterable[str] = STATISTICS, n_min=None, n_max=None,
            window: int = 4) -> List[ExponentFit]:
    """Fit every statistic with enough data; the rest are skipped with a log line"""
    fits = []
    for statistic in statistics:
        try:
            fits.append(fit_exponent(records, statistic, n_min, n_max, window=window))
        except InsufficientDataError as e:
            logger.info(f"Skipping {statistic}: {str(e)}")
    return fits
