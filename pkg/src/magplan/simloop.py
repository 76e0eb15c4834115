"""Closed-loop episode simulation with full trace logging.

Each step: the planner picks an action from the current belief, the true
state advances under that action with process noise, a measurement is
synthesized at the new true pose, and the filter assimilates it (predict,
update, conditional resample) while the belief entropy is estimated. The
runner exposes these substeps individually; the true state is touched only
by advance_truth and measure, so the filter and planner can be shown to see
the world through measurements alone.

Randomness is split into four independent streams derived from the master
seed (truth noise, sensor noise, filter, EER hypothesis subsampling), so
e.g. changing the hypothesis budget cannot perturb the true trajectory.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import pflocal
from .infogain import entropy_posterior, entropy_predicted, iqr_reject
from .magmap import MagMap
from .models import (
    ControlInput,
    ModelSet,
    MotionNoise,
    Pose,
    SensorNoise,
    simulate_measurement,
    step_motion,
)
from .pflocal import ParticleBelief, WeightCollapseError
from .planner import (
    ActionSet,
    EerParams,
    Goal,
    PlannerWeights,
    SelectionResult,
    select_action,
)


class EpisodeError(Exception):
    """Base error for episode configuration and execution."""


class StepFailure(EpisodeError):
    """A step failed at runtime; carries the 0-based step index."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class EpisodeConfig:
    """Everything one episode needs, already resolved to domain objects."""

    grid: MagMap
    start: Pose
    goal: Goal
    weights: PlannerWeights
    actions: ActionSet
    motion: MotionNoise
    sensor: SensorNoise
    prior_cov: np.ndarray
    n_particles: int
    eer_params: EerParams
    dt: float
    step_budget: int
    seed: int
    resample_threshold: Optional[float] = None
    distance_mode: str = "mean_pose"

    def __post_init__(self) -> None:
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise EpisodeError(f"dt must be finite and > 0, got {self.dt}")
        if self.step_budget < 1:
            raise EpisodeError(f"step_budget must be >= 1, got {self.step_budget}")
        if self.n_particles < 2:
            raise EpisodeError(f"n_particles must be >= 2, got {self.n_particles}")
        if self.eer_params.m_count > self.n_particles:
            raise EpisodeError(
                f"eer m_count {self.eer_params.m_count} exceeds "
                f"n_particles {self.n_particles}"
            )
        if self.sensor.sigma_z <= 0:
            raise EpisodeError("sensor sigma_z must be > 0 for a running filter")
        if self.seed < 0:
            raise EpisodeError(f"seed must be >= 0, got {self.seed}")
        cov = np.asarray(self.prior_cov, dtype=float)
        if cov.shape != (3, 3):
            raise EpisodeError(f"prior_cov must be 3x3, got {cov.shape}")
        cov = cov.copy()
        cov.setflags(write=False)
        object.__setattr__(self, "prior_cov", cov)
        if not bool(self.grid.contains(np.array([self.goal.position]))[0]):
            raise EpisodeError(f"goal {self.goal.position} lies outside the map")
        if not bool(self.grid.contains(self.start.position().reshape(1, 2))[0]):
            raise EpisodeError(f"start ({self.start.x}, {self.start.y}) lies outside the map")
        threshold = self.resample_threshold
        if threshold is not None and threshold <= 0:
            raise EpisodeError(f"resample_threshold must be > 0, got {threshold}")
        if self.distance_mode not in ("mean_pose", "particle_mean"):
            raise EpisodeError(f"unknown distance_mode {self.distance_mode!r}")

    @property
    def models(self) -> ModelSet:
        return ModelSet(self.motion, self.sensor, self.dt)

    @property
    def ess_threshold(self) -> float:
        if self.resample_threshold is not None:
            return self.resample_threshold
        return self.n_particles / 2.0


@dataclass(frozen=True)
class TraceRow:
    step: int
    time_s: float
    truth: Pose
    z: float
    action_index: int
    action: ControlInput
    est: Pose
    covariance: np.ndarray
    det_pos_cov: float
    entropy_bits: float
    ess: float
    resampled: bool
    collapsed: bool
    eer_bits: tuple[float, ...]
    distances: tuple[float, ...]
    costs: tuple[float, ...]


@dataclass(frozen=True)
class EpisodeTrace:
    rows: tuple[TraceRow, ...]
    reached_goal: bool
    n_actions: int

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class MetricsRecord:
    """Per-step series plus scalar episode summaries."""

    det_pos_cov: np.ndarray
    entropy_raw: np.ndarray
    entropy_filtered: np.ndarray
    position_error: np.ndarray
    rmse_position: float
    mean_error: float
    final_error: float
    final_det_pos_cov: float
    mean_det_pos_cov: float
    path_length: float
    steps: int
    reached_goal: bool


class EpisodeRunner:
    """One episode's mutable state, stepped substep by substep.

    The belief and planner never read `truth`; it feeds only the motion
    and measurement synthesis. Overwriting `truth` between measure() and
    assimilate() provably cannot change the belief.
    """

    def __init__(self, cfg: EpisodeConfig):
        self.cfg = cfg
        streams = np.random.SeedSequence(cfg.seed).spawn(4)
        self.truth_rng = np.random.default_rng(streams[0])
        self.sensor_rng = np.random.default_rng(streams[1])
        self.eer_rng = np.random.default_rng(streams[3])
        self.truth: Pose = cfg.start
        self.belief: ParticleBelief = pflocal.init(
            cfg.start, cfg.prior_cov, cfg.n_particles, np.random.default_rng(streams[2])
        )
        self.step_index = 0
        self.rows: list[TraceRow] = []
        self.reached_goal = False

    def plan(self) -> SelectionResult:
        return select_action(
            self.belief,
            self.cfg.goal,
            self.cfg.actions,
            self.cfg.weights,
            self.cfg.grid,
            self.cfg.models,
            self.cfg.eer_params,
            self.eer_rng,
            self.cfg.distance_mode,
        )

    def advance_truth(self, action: ControlInput) -> Pose:
        self.truth = step_motion(
            self.truth, action, self.cfg.dt, self.cfg.motion, self.truth_rng
        )
        return self.truth

    def measure(self) -> float:
        return simulate_measurement(
            self.truth, self.cfg.grid, self.cfg.sensor, self.sensor_rng
        )

    def assimilate(
        self, action: ControlInput, z: float
    ) -> tuple[float, pflocal.GaussianSummary, float, bool, bool]:
        """Predict + update + entropy + conditional resample.

        Returns (entropy_bits, estimate, ess, resampled, collapsed). On
        weight collapse the belief resets to uniform weights over the
        predicted particles and the entropy falls back to the
        no-measurement estimate.
        """
        cfg = self.cfg
        prev = self.belief
        predicted = pflocal.predict(prev, action, cfg.dt, cfg.motion)
        try:
            updated = pflocal.update(predicted, z, cfg.grid, cfg.sensor)
            collapsed = False
        except WeightCollapseError:
            updated = ParticleBelief(
                predicted.particles,
                np.full(predicted.n, 1.0 / predicted.n),
                predicted.rng,
            )
            collapsed = True
        if collapsed:
            entropy = entropy_predicted(prev, updated, action, cfg.models)
        else:
            entropy = entropy_posterior(prev, updated, z, action, cfg.grid, cfg.models)
        summary = pflocal.estimate(updated)
        ess = pflocal.effective_sample_size(updated)
        resampled = ess < cfg.ess_threshold
        self.belief = pflocal.resample_if_needed(updated, cfg.ess_threshold)
        return entropy.bits, summary, ess, resampled, collapsed

    def _at_goal(self, summary: pflocal.GaussianSummary) -> bool:
        gx, gy = self.cfg.goal.position
        return (
            math.hypot(summary.mean.x - gx, summary.mean.y - gy)
            <= self.cfg.goal.arrival_radius
        )

    def step(self) -> TraceRow:
        """Run one full closed-loop step and append its trace row."""
        k = self.step_index
        try:
            selection = self.plan()
            self.advance_truth(selection.chosen)
            z = self.measure()
            entropy_bits, summary, ess, resampled, collapsed = self.assimilate(
                selection.chosen, z
            )
        except EpisodeError:
            raise
        except Exception as exc:
            raise StepFailure(k, exc) from exc
        row = TraceRow(
            step=k,
            time_s=(k + 1) * self.cfg.dt,
            truth=self.truth,
            z=z,
            action_index=selection.chosen_index,
            action=selection.chosen,
            est=summary.mean,
            covariance=summary.covariance,
            det_pos_cov=summary.det_positional(),
            entropy_bits=entropy_bits,
            ess=ess,
            resampled=resampled,
            collapsed=collapsed,
            eer_bits=tuple(d.eer_bits for d in selection.diagnostics),
            distances=tuple(d.distance for d in selection.diagnostics),
            costs=tuple(d.cost for d in selection.diagnostics),
        )
        self.rows.append(row)
        self.step_index += 1
        if self._at_goal(summary):
            self.reached_goal = True
        return row

    def run(self) -> EpisodeTrace:
        while self.step_index < self.cfg.step_budget and not self.reached_goal:
            self.step()
        return EpisodeTrace(
            tuple(self.rows), self.reached_goal, len(self.cfg.actions)
        )


def run_episode(cfg: EpisodeConfig) -> EpisodeTrace:
    return EpisodeRunner(cfg).run()


def compute_metrics(trace: EpisodeTrace) -> MetricsRecord:
    """Series and scalars behind the covariance/entropy-over-time plots.

    The IQR filter needs at least 4 samples; shorter traces pass the raw
    entropy series through unchanged.
    """
    if len(trace) == 0:
        raise EpisodeError("cannot compute metrics of an empty trace")
    det = np.array([r.det_pos_cov for r in trace.rows])
    entropy = np.array([r.entropy_bits for r in trace.rows])
    filtered = iqr_reject(entropy) if len(trace) >= 4 else entropy.copy()
    truth = np.array([[r.truth.x, r.truth.y] for r in trace.rows])
    est = np.array([[r.est.x, r.est.y] for r in trace.rows])
    err = np.hypot(*(truth - est).T)
    seg = np.diff(truth, axis=0)
    path_length = float(np.hypot(seg[:, 0], seg[:, 1]).sum()) if len(trace) > 1 else 0.0
    return MetricsRecord(
        det_pos_cov=det,
        entropy_raw=entropy,
        entropy_filtered=filtered,
        position_error=err,
        rmse_position=float(np.sqrt(np.mean(err**2))),
        mean_error=float(err.mean()),
        final_error=float(err[-1]),
        final_det_pos_cov=float(det[-1]),
        mean_det_pos_cov=float(det.mean()),
        path_length=path_length,
        steps=len(trace),
        reached_goal=trace.reached_goal,
    )


@dataclass(frozen=True)
class SweepCell:
    w_h: float
    seed: int
    trace: Optional[EpisodeTrace]
    metrics: Optional[MetricsRecord]
    error: Optional[str]


@dataclass(frozen=True)
class SweepResult:
    cells: tuple[SweepCell, ...]

    def cell(self, w_h: float, seed: int) -> SweepCell:
        for c in self.cells:
            if c.w_h == w_h and c.seed == seed:
                return c
        raise KeyError(f"no sweep cell for w_h={w_h}, seed={seed}")


def sweep(
    base_cfg: EpisodeConfig, w_h_values: Sequence[float], seeds: Sequence[int]
) -> SweepResult:
    """Cross product of uncertainty weights and seeds.

    Each cell reuses the seed entry unchanged, so cells in one seed column
    are exactly paired across w_h values. A failing cell records its error
    and the sweep continues.
    """
    if not w_h_values or not seeds:
        raise EpisodeError("sweep needs at least one w_h value and one seed")
    cells: list[SweepCell] = []
    for w_h in w_h_values:
        for seed in seeds:
            cfg = replace(
                base_cfg,
                weights=PlannerWeights(w_h, base_cfg.weights.w_d, base_cfg.weights.alpha),
                seed=int(seed),
            )
            try:
                trace = run_episode(cfg)
                cells.append(
                    SweepCell(w_h, int(seed), trace, compute_metrics(trace), None)
                )
            except EpisodeError as exc:
                cells.append(SweepCell(w_h, int(seed), None, None, str(exc)))
    return SweepResult(tuple(cells))


@dataclass(frozen=True)
class BenchmarkResult:
    """Wall-time statistics of the planning call, milliseconds."""

    times_ms: tuple[float, ...]
    mean_ms: float
    max_ms: float
    n_particles: int
    m_count: int
    horizon_steps: int
    n_actions: int


def benchmark_planning(cfg: EpisodeConfig, n_steps: int = 50) -> BenchmarkResult:
    """Time select_action inside a live closed loop for n_steps steps."""
    if n_steps < 1:
        raise EpisodeError(f"n_steps must be >= 1, got {n_steps}")
    runner = EpisodeRunner(cfg)
    times: list[float] = []
    for _ in range(min(n_steps, cfg.step_budget)):
        t0 = time.perf_counter()
        selection = runner.plan()
        times.append((time.perf_counter() - t0) * 1e3)
        runner.advance_truth(selection.chosen)
        z = runner.measure()
        runner.assimilate(selection.chosen, z)
    return BenchmarkResult(
        times_ms=tuple(times),
        mean_ms=float(np.mean(times)),
        max_ms=float(np.max(times)),
        n_particles=cfg.n_particles,
        m_count=cfg.eer_params.m_count,
        horizon_steps=cfg.eer_params.horizon_steps,
        n_actions=len(cfg.actions),
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trace(trace: EpisodeTrace, path: str, provenance: dict[str, str]) -> None:
    """Write the trace CSV: `#`-comment provenance, header row, one row per step.

    Floats are written with round-trip precision so identical runs produce
    byte-identical files.
    """
    a = trace.n_actions
    header = (
        [
            "step", "time_s", "truth_x", "truth_y", "truth_theta", "z_nt",
            "action_index", "action_v", "action_omega",
            "est_x", "est_y", "est_theta",
            "cov_xx", "cov_xy", "cov_xt", "cov_yx", "cov_yy", "cov_yt",
            "cov_tx", "cov_ty", "cov_tt",
            "det_pos_cov", "entropy_bits", "ess", "resampled", "collapsed",
        ]
        + [f"eer_{j}" for j in range(a)]
        + [f"dist_{j}" for j in range(a)]
        + [f"cost_{j}" for j in range(a)]
    )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# magplan-trace v1\n")
        for key in sorted(provenance):
            fh.write(f"# {key}: {provenance[key]}\n")
        fh.write(f"# reached_goal: {'1' if trace.reached_goal else '0'}\n")
        fh.write(",".join(header) + "\n")
        for r in trace.rows:
            cov = r.covariance.ravel()
            fields = (
                [str(r.step), _fmt(r.time_s), _fmt(r.truth.x), _fmt(r.truth.y),
                 _fmt(r.truth.theta), _fmt(r.z), str(r.action_index),
                 _fmt(r.action.v), _fmt(r.action.omega),
                 _fmt(r.est.x), _fmt(r.est.y), _fmt(r.est.theta)]
                + [_fmt(c) for c in cov]
                + [_fmt(r.det_pos_cov), _fmt(r.entropy_bits), _fmt(r.ess),
                   "1" if r.resampled else "0", "1" if r.collapsed else "0"]
                + [_fmt(v) for v in r.eer_bits]
                + [_fmt(v) for v in r.distances]
                + [_fmt(v) for v in r.costs]
            )
            fh.write(",".join(fields) + "\n")


@dataclass(frozen=True)
class TraceData:
    """Column arrays of a trace file, for metrics recomputation and export."""

    step: np.ndarray
    time_s: np.ndarray
    truth: np.ndarray
    z: np.ndarray
    action_index: np.ndarray
    action_v: np.ndarray
    action_omega: np.ndarray
    est: np.ndarray
    covariance: np.ndarray
    det_pos_cov: np.ndarray
    entropy_bits: np.ndarray
    ess: np.ndarray
    resampled: np.ndarray
    collapsed: np.ndarray
    eer_bits: np.ndarray
    distances: np.ndarray
    costs: np.ndarray
    reached_goal: bool
    comments: dict[str, str]


def read_trace(path: str) -> TraceData:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    comments: dict[str, str] = {}
    body: list[str] = []
    for line in lines:
        if line.startswith("#"):
            stripped = line[1:].strip()
            if ":" in stripped:
                key, _, val = stripped.partition(":")
                comments[key.strip()] = val.strip()
        elif line.strip():
            body.append(line)
    if not body:
        raise EpisodeError(f"{path}: no header row")
    header = body[0].split(",")
    n_actions = sum(1 for name in header if name.startswith("eer_"))
    rows = [line.split(",") for line in body[1:]]
    if not rows:
        raise EpisodeError(f"{path}: trace has no data rows")
    if any(len(r) != len(header) for r in rows):
        raise EpisodeError(f"{path}: ragged trace rows")
    cols = {name: np.array([r[i] for r in rows]) for i, name in enumerate(header)}

    def f(name: str) -> np.ndarray:
        return cols[name].astype(float)

    return TraceData(
        step=cols["step"].astype(int),
        time_s=f("time_s"),
        truth=np.stack([f("truth_x"), f("truth_y"), f("truth_theta")], axis=1),
        z=f("z_nt"),
        action_index=cols["action_index"].astype(int),
        action_v=f("action_v"),
        action_omega=f("action_omega"),
        est=np.stack([f("est_x"), f("est_y"), f("est_theta")], axis=1),
        covariance=np.stack(
            [f(c) for c in ("cov_xx", "cov_xy", "cov_xt",
                            "cov_yx", "cov_yy", "cov_yt",
                            "cov_tx", "cov_ty", "cov_tt")],
            axis=1,
        ).reshape(-1, 3, 3),
        det_pos_cov=f("det_pos_cov"),
        entropy_bits=f("entropy_bits"),
        ess=f("ess"),
        resampled=cols["resampled"].astype(int).astype(bool),
        collapsed=cols["collapsed"].astype(int).astype(bool),
        eer_bits=np.stack([f(f"eer_{j}") for j in range(n_actions)], axis=1),
        distances=np.stack([f(f"dist_{j}") for j in range(n_actions)], axis=1),
        costs=np.stack([f(f"cost_{j}") for j in range(n_actions)], axis=1),
        reached_goal=comments.get("reached_goal", "0") == "1",
        comments=comments,
    )


def write_metrics(metrics: MetricsRecord, path: str, provenance: dict[str, str]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# magplan-metrics v1\n")
        for key in sorted(provenance):
            fh.write(f"# {key}: {provenance[key]}\n")
        for key in (
            "rmse_position", "mean_error", "final_error",
            "final_det_pos_cov", "mean_det_pos_cov", "path_length",
        ):
            fh.write(f"# {key}: {_fmt(getattr(metrics, key))}\n")
        fh.write(f"# steps: {metrics.steps}\n")
        fh.write(f"# reached_goal: {'1' if metrics.reached_goal else '0'}\n")
        fh.write("step,det_pos_cov,entropy_raw,entropy_filtered,position_error\n")
        for k in range(metrics.steps):
            fh.write(
                ",".join(
                    [str(k), _fmt(metrics.det_pos_cov[k]), _fmt(metrics.entropy_raw[k]),
                     _fmt(metrics.entropy_filtered[k]), _fmt(metrics.position_error[k])]
                )
                + "\n"
            )


def write_summary(result: SweepResult, path: str, provenance: dict[str, str]) -> None:
    """One CSV row per (w_h, seed) sweep cell."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# magplan-summary v1\n")
        for key in sorted(provenance):
            fh.write(f"# {key}: {provenance[key]}\n")
        fh.write(
            "w_h,seed,steps,reached_goal,final_det_pos_cov,mean_det_pos_cov,"
            "rmse_position,mean_error,final_error,path_length,error\n"
        )
        for c in result.cells:
            if c.metrics is None:
                msg = (c.error or "failed").replace(",", ";").replace("\n", " ")
                fh.write(f"{_fmt(c.w_h)},{c.seed},0,0,,,,,,,{msg}\n")
                continue
            m = c.metrics
            fh.write(
                ",".join(
                    [
                        _fmt(c.w_h), str(c.seed), str(m.steps),
                        "1" if m.reached_goal else "0",
                        _fmt(m.final_det_pos_cov), _fmt(m.mean_det_pos_cov),
                        _fmt(m.rmse_position), _fmt(m.mean_error),
                        _fmt(m.final_error), _fmt(m.path_length), "",
                    ]
                )
                + "\n"
            )
