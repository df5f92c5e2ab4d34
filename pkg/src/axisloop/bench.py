"""Batch experiments, results tables and offline replay of recorded frames."""

from __future__ import annotations

import configparser
import csv
import enum
import hashlib
import json
import logging
import math
import statistics
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .cloud import FilterParams, MotionExtractionParams
from .errors import ConfigError, DegenerateCloud, NoValidWindow
from .estimation import WindowPolicy
from .geometry import JointKind
from .ply import read_ply
from .policy import FramePipeline, Mode, PerceptionConfig, PolicyConfig, simulate
from .sim import SensorModel, random_scene

log = logging.getLogger(__name__)

RESULTS_HEADER = (
    "task",
    "target",
    "unit",
    "mode",
    "success_rate",
    "median_direction_error_deg",
    "median_pivot_error_m",
    "mean_steps",
    "trials",
    "config_hash",
    "version",
)
PLOT_HEADER = ("target", "success_rate")
OFFLINE_HEADER = (
    "frame",
    "file",
    "status",
    "window_st",
    "window_ed",
    "pivot_x",
    "pivot_y",
    "pivot_z",
    "dir_x",
    "dir_y",
    "dir_z",
    "low_confidence",
    "flags",
)


class Task(str, enum.Enum):
    OPEN_DOOR = "open_door"
    OPEN_DRAWER = "open_drawer"

    @property
    def kind(self) -> JointKind:
        return JointKind.REVOLUTE if self is Task.OPEN_DOOR else JointKind.PRISMATIC

    @property
    def unit(self) -> str:
        return "deg" if self is Task.OPEN_DOOR else "m"

    def to_joint(self, value: float) -> float:
        return math.radians(value) if self is Task.OPEN_DOOR else float(value)


DEFAULT_TARGETS = {
    Task.OPEN_DOOR: (8.6, 10.0, 20.0, 30.0, 40.0, 45.0, 50.0, 55.0, 60.0, 65.0, 70.0),
    Task.OPEN_DRAWER: (0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45),
}
DEFAULT_MAX_STEPS = {Task.OPEN_DOOR: 24, Task.OPEN_DRAWER: 12}


@dataclass(frozen=True)
class ExperimentConfig:
    """One batch: every target and mode, ``trials_per_target`` seeds each.

    Targets are in degrees for doors and meters for drawers. Trial ``i``
    uses seed ``seed_base + i`` for every target and mode.
    """

    task: Task = Task.OPEN_DOOR
    targets: tuple[float, ...] = ()
    trials_per_target: int = 100
    modes: tuple[Mode, ...] = (Mode.CLOSED_LOOP, Mode.OPEN_LOOP)
    filter: FilterParams = field(default_factory=lambda: FilterParams(0.04, 3))
    extraction: MotionExtractionParams = field(
        default_factory=lambda: MotionExtractionParams(0.01, FilterParams(0.04, 3))
    )
    window: WindowPolicy = field(default_factory=WindowPolicy)
    sensor: SensorModel = field(
        default_factory=lambda: SensorModel(2000.0, 0.005, 0.01)
    )
    seed_base: int = 0
    step_size: float = 0.05
    init_steps: int = 2
    max_steps: int | None = None
    slip_tolerance: float = 0.02
    oracle_axis: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "task", Task(self.task))
            object.__setattr__(self, "modes", tuple(Mode(m) for m in self.modes))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        targets = tuple(float(t) for t in (self.targets or DEFAULT_TARGETS[self.task]))
        object.__setattr__(self, "targets", targets)
        if self.max_steps is None:
            object.__setattr__(self, "max_steps", DEFAULT_MAX_STEPS[self.task])
        if not targets:
            raise ConfigError("targets must not be empty")
        if any(b <= a for a, b in zip(targets, targets[1:])):
            raise ConfigError("targets must be strictly increasing")
        if self.trials_per_target < 1:
            raise ConfigError("trials_per_target must be at least 1")
        if not self.modes:
            raise ConfigError("at least one mode is required")
        if self.slip_tolerance <= 0:
            raise ConfigError("slip_tolerance must be positive")
        try:
            self.policy(Mode.CLOSED_LOOP)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def joint_targets(self) -> tuple[float, ...]:
        return tuple(self.task.to_joint(t) for t in self.targets)

    @property
    def perception(self) -> PerceptionConfig:
        return PerceptionConfig(self.filter, self.extraction, self.window)

    def policy(self, mode: Mode) -> PolicyConfig:
        return PolicyConfig(
            mode, self.step_size, self.init_steps, self.max_steps,
            self.joint_targets[-1], self.oracle_axis,
        )

    def canonical(self) -> dict:
        data = asdict(self)
        data["task"] = self.task.value
        data["modes"] = [m.value for m in self.modes]
        view = data["sensor"]["view_direction"]
        data["sensor"]["view_direction"] = None if view is None else list(np.asarray(view, dtype=float))
        data["sensor"].pop("seed")
        return data

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _section_values(parser, name, converters):
    """Typed values of one INI section; ``converters`` maps key to type."""
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in converters:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        try:
            out[key] = converters[key](raw)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key} = {raw!r}: {exc}") from None
    return out


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.replace(",", " ").split())


def _words(raw: str) -> tuple[str, ...]:
    return tuple(v for v in raw.replace(",", " ").split())


def _bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _optional_vector(raw: str):
    if raw.strip().lower() in ("", "none"):
        return None
    v = _floats(raw)
    if len(v) != 3:
        raise ValueError("expected three components")
    return np.asarray(v) / np.linalg.norm(v)


SECTIONS = {
    "experiment": {
        "task": str, "targets": _floats, "trials_per_target": int, "modes": _words,
        "seed_base": int, "step_size": float, "init_steps": int, "max_steps": int,
        "oracle_axis": _bool,
    },
    "filter": {"r": float, "epsilon": int},
    "extraction": {"margin": float, "refilter_r": float, "refilter_epsilon": int},
    "window": {"max_length": int, "min_displacement": float, "min_rotation_deg": float},
    "sensor": {
        "surface_density": float, "noise_sigma": float, "outlier_fraction": float,
        "view_direction": _optional_vector,
    },
    "grasp": {"slip_tolerance": float},
}


def parse_config(text: str, seed_base: int | None = None) -> ExperimentConfig:
    """Build a config from INI text; absent keys keep their defaults.

    Raises:
        ConfigError: syntax errors, unknown sections or keys, bad values.
    """
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
    v = {name: _section_values(parser, name, conv) for name, conv in SECTIONS.items()}
    base = ExperimentConfig(task=v["experiment"].get("task", Task.OPEN_DOOR))
    try:
        filt = FilterParams(v["filter"].get("r", base.filter.r), v["filter"].get("epsilon", base.filter.epsilon))
        ex = v["extraction"]
        extraction = MotionExtractionParams(
            ex.get("margin", base.extraction.margin),
            FilterParams(ex.get("refilter_r", filt.r), ex.get("refilter_epsilon", filt.epsilon)),
        )
        win = v["window"]
        window = WindowPolicy(
            win.get("max_length", base.window.max_length),
            win.get("min_displacement", base.window.min_displacement),
            math.radians(win["min_rotation_deg"]) if "min_rotation_deg" in win else base.window.min_rotation,
        )
        sensor = replace(base.sensor, **v["sensor"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    exp = dict(v["experiment"])
    if seed_base is not None:
        exp["seed_base"] = seed_base
    if "slip_tolerance" in v["grasp"]:
        exp["slip_tolerance"] = v["grasp"]["slip_tolerance"]
    return replace(
        base, filter=filt, extraction=extraction, window=window, sensor=sensor, **exp
    )


def load_config(path, seed_base: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, seed_base)


@dataclass(frozen=True)
class ResultRow:
    task: Task
    target: float
    mode: Mode
    success_rate: float
    median_direction_error_deg: float
    median_pivot_error_m: float
    mean_steps: float
    trials: int


@dataclass
class ResultsTable:
    rows: list[ResultRow]
    config_hash: str = ""
    version: str = __version__

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RESULTS_HEADER)
            for r in self.rows:
                writer.writerow(
                    [
                        r.task.value, _fmt(r.target), r.task.unit, r.mode.value,
                        f"{r.success_rate:.1f}", _fmt(r.median_direction_error_deg),
                        _fmt(r.median_pivot_error_m), f"{r.mean_steps:.2f}", r.trials,
                        self.config_hash, self.version,
                    ]
                )
        return path

    @classmethod
    def read_csv(cls, path) -> ResultsTable:
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != RESULTS_HEADER:
                raise ConfigError(f"{path}: unexpected results header")
            rows, meta = [], ("", __version__)
            for rec in reader:
                rows.append(
                    ResultRow(
                        Task(rec["task"]), float(rec["target"]), Mode(rec["mode"]),
                        float(rec["success_rate"]), float(rec["median_direction_error_deg"]),
                        float(rec["median_pivot_error_m"]), float(rec["mean_steps"]),
                        int(rec["trials"]),
                    )
                )
                meta = (rec["config_hash"], rec["version"])
        return cls(rows, *meta)

    def series(self, task: Task, mode: Mode) -> list[ResultRow]:
        return sorted(
            (r for r in self.rows if r.task is Task(task) and r.mode is Mode(mode)),
            key=lambda r: r.target,
        )

    def success(self, task: Task, mode: Mode) -> dict[float, float]:
        return {r.target: r.success_rate for r in self.series(task, mode)}


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(round(float(x), 6))


def _median(values) -> float:
    values = [v for v in values if not math.isnan(v)]
    return statistics.median(values) if values else float("nan")


def trial_seed(config: ExperimentConfig, index: int) -> int:
    return config.seed_base + index


def _run_seed(args):
    config, seed = args
    scene = random_scene(config.task.kind, np.random.default_rng([seed, 1]))
    sensor = replace(config.sensor, seed=seed)
    out = {}
    for mode in config.modes:
        out[mode] = simulate(
            scene, sensor, config.policy(mode), config.joint_targets,
            config.perception, config.slip_tolerance,
        )
    return out


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ResultsTable:
    """Run every (target, mode) cell and aggregate success and error metrics.

    Each seed is simulated once per mode up to the largest target; smaller
    targets read off the same trajectory, which is exactly what a separate
    run would produce because the controller only consults the target to stop.
    """
    tasks = [(config, trial_seed(config, i)) for i in range(config.trials_per_target)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_seed = list(pool.map(_run_seed, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        per_seed = [_run_seed(t) for t in tasks]
    rows = []
    for ti, target in enumerate(config.targets):
        for mode in config.modes:
            reports = [s[mode][ti] for s in per_seed]
            rows.append(
                ResultRow(
                    config.task, target, mode,
                    100.0 * sum(r.success for r in reports) / len(reports),
                    _median(r.final_direction_error() for r in reports),
                    _median(r.final_pivot_error() for r in reports),
                    sum(r.steps_used for r in reports) / len(reports),
                    len(reports),
                )
            )
            failures = {}
            for r in reports:
                if r.failure:
                    failures[r.failure] = failures.get(r.failure, 0) + 1
            log.info(
                "%s target=%g mode=%s success=%.1f%% failures=%s",
                config.task.value, target, mode.value, rows[-1].success_rate, failures,
            )
    return ResultsTable(rows, config.hash(), __version__)


def export_plot_data(table: ResultsTable, out_dir, modes=None) -> list[Path]:
    """Write ``{task}_{mode}.csv`` with columns target, success_rate.

    Requested modes without rows are skipped with a warning.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    modes = [Mode(m) for m in modes] if modes is not None else sorted(
        {r.mode for r in table.rows}, key=lambda m: m.value
    )
    tasks = sorted({r.task for r in table.rows}, key=lambda t: t.value)
    written = []
    for task in tasks:
        for mode in modes:
            series = table.series(task, mode)
            if not series:
                msg = f"no rows for task {task.value} mode {mode.value}; no file written"
                warnings.warn(msg, stacklevel=2)
                log.warning(msg)
                continue
            path = out_dir / f"{task.value}_{mode.value}.csv"
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(PLOT_HEADER)
                for r in series:
                    writer.writerow([_fmt(r.target), f"{r.success_rate:.1f}"])
            written.append(path)
    return written


@dataclass(frozen=True)
class OfflineFrame:
    frame: int
    file: str
    status: str
    estimate: object = None


def offline_perception(filter: FilterParams, margin: float = 0.01, min_points: int = 30) -> PerceptionConfig:
    """Perception settings for replay: one filter used both before and after subtraction.

    At the default a lone handle in a dense frame is not taken for motion;
    sparse recordings of a few hundred points per frame want about 10.
    """
    return PerceptionConfig(
        filter, MotionExtractionParams(margin, filter), WindowPolicy(),
        cluster_motion=True, min_motion_points=min_points,
    )


def replay_frames(clouds, kind, perception: PerceptionConfig) -> list[tuple[str, object]]:
    """Feed clouds through the trial pipeline; ``(status, estimate)`` per frame."""
    pipeline = FramePipeline(kind, perception)
    for cloud in clouds:
        pipeline.add(cloud)
    return list(zip(pipeline.status, pipeline.frame_estimates))


def run_offline(
    frames_dir, kind, filter: FilterParams = FilterParams(), out_csv=None,
    perception: PerceptionConfig | None = None,
) -> list[OfflineFrame]:
    """Estimate the axis over a directory of PLY frames (lexicographic order).

    Raises:
        ParseError: a frame is malformed.
        NoValidWindow: no frame pair produced an estimate.
        ConfigError: fewer than two frames.
    """
    files = sorted(Path(frames_dir).glob("*.ply"))
    if len(files) < 2:
        raise ConfigError(f"need at least two .ply frames in {frames_dir}")
    clouds = [read_ply(f) for f in files]
    perception = offline_perception(filter) if perception is None else perception
    try:
        replay = replay_frames(clouds, kind, perception)
    except DegenerateCloud as exc:
        raise NoValidWindow(f"reference frame {files[0].name} has no usable body box: {exc}") from None
    out = []
    for i, (f, (status, est)) in enumerate(zip(files, replay)):
        if est is None and status not in ("reference", "first_valid"):
            log.info("frame %d (%s) skipped: %s", i, f.name, status)
        out.append(OfflineFrame(i, f.name, status, est))
    if out_csv is not None:
        write_offline_csv(out, out_csv)
    if not any(o.estimate is not None for o in out):
        raise NoValidWindow("no frame pair produced an axis estimate")
    return out


def write_offline_csv(frames: list[OfflineFrame], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(OFFLINE_HEADER)
        for f in frames:
            e = f.estimate
            if e is None:
                writer.writerow([f.frame, f.file, f.status] + [""] * (len(OFFLINE_HEADER) - 3))
                continue
            writer.writerow(
                [f.frame, f.file, f.status, e.window.st, e.window.ed]
                + [repr(float(v)) for v in e.axis.pivot]
                + [repr(float(v)) for v in e.axis.direction]
                + [int(e.low_confidence), ";".join(e.evidence.flags)]
            )
    return path

