"""Simulation and estimation runs driven by a JSON run configuration.

A dataset directory holds ``config.json``, the scene (``scene.sasg``), the
true trajectory (``truth.csv``) and one ``pings/ping_NNN.sasp`` file per
ping.  Ping files carry the *nominal* geometry, i.e. what the platform
believes; the tracks were synthesized with the true, perturbed one.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import io as sio
from .acoustic import Track, time_window
from .errors import FormatError, IndexOutOfRange, ShapeMismatch, ValidationError
from .geometry import IDENTITY, PingGeometry, Pose, SystemConfig, compose, relative_pose
from .imaging import PingOperator, PingRecord, backproject
from .micronav import (EstimationOptions, PairProblem, TrajectoryEstimate, Truncation,
                       combine_phase_estimates, estimate_displacement, estimate_trajectory,
                       extract_siso, integrate, rearrange_pings, relative_from_sigma,
                       sigma_from_relative)
from .scene import (PhantomSpec, ReflectivityGrid, RippleSpec, export_grid_csv, make_grid, save_grid,
                    synth_scene)

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
AXES = ("surge", "sway", "yaw")

# SystemConfig attribute -> JSON key
_SYSTEM_KEYS = {
    "f0": "f0_hz",
    "bandwidth": "bandwidth_hz",
    "c": "sound_speed_m_s",
    "D_tx": "tx_aperture_m",
    "D_rx": "rx_aperture_m",
    "N": "n_receivers",
    "L": "spacing_m",
    "K": "overlap_k",
    "midrange": "midrange_m",
    "range_window": "range_window_m",
}


def _positive(owner: str, **values) -> None:
    for name, v in values.items():
        if v is None:
            continue
        arr = np.atleast_1d(np.asarray(v, dtype=float))
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValidationError(f"{owner}.{name} must be positive, got {v}")


def _non_negative(owner: str, **values) -> None:
    for name, v in values.items():
        if not (math.isfinite(v) and v >= 0):
            raise ValidationError(f"{owner}.{name} must be >= 0, got {v}")


def _tuple(v):
    return None if v is None else tuple(_tuple(x) if isinstance(x, (list, tuple)) else x for x in v)


def _from_dict(cls, data: dict, owner: str):
    if not isinstance(data, dict):
        raise ValidationError(f"{owner} must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValidationError(f"unknown {owner} fields: {sorted(unknown)}")
    return cls(**{k: _tuple(v) if isinstance(v, list) else v for k, v in data.items()})


@dataclass(frozen=True)
class SceneSpec:
    """Seabed scene.  ``None`` extents and centers follow the trajectory."""

    extent_m: tuple[float, float] | None = None
    center_m: tuple[float, float] | None = None
    spacing_m: float | None = None
    ripple_wavelength_m: float = 0.15
    ripple_direction_rad: float = 0.3
    ripple_depth: float = 0.6
    ripple_sigma: float = 1.0
    phantom: bool = True
    phantom_center_m: tuple[float, float] | None = None
    phantom_diameter_m: float = 0.40
    phantom_gain_db: float = 20.0
    time_margin_m: float = 0.15

    def __post_init__(self):
        _positive("scene", extent_m=self.extent_m, spacing_m=self.spacing_m,
                  ripple_wavelength_m=self.ripple_wavelength_m,
                  phantom_diameter_m=self.phantom_diameter_m)
        _non_negative("scene", ripple_sigma=self.ripple_sigma, ripple_depth=self.ripple_depth, time_margin_m=self.time_margin_m)


@dataclass(frozen=True)
class TrajectorySpec:
    """Nominal straight track plus per-ping motion errors.

    ``perturbations`` lists the motion error ``(surge_m, sway_m, yaw_rad)``
    of every ping with respect to its predecessor; without it they are
    drawn from zero-mean Gaussians with the given deviations, clipped at
    ``clip_sigmas`` deviations.
    """

    n_pings: int = 16
    advance_m: float = 0.20
    sigma_surge_m: float = 0.01
    sigma_sway_m: float = 0.005
    sigma_yaw_rad: float = 0.01
    clip_sigmas: float = 2.0
    perturbations: tuple[tuple[float, float, float], ...] | None = None

    def __post_init__(self):
        if int(self.n_pings) != self.n_pings or self.n_pings < 1:
            raise ValidationError("trajectory.n_pings must be a positive integer")
        _positive("trajectory", advance_m=self.advance_m, clip_sigmas=self.clip_sigmas)
        _non_negative("trajectory", sigma_surge_m=self.sigma_surge_m, sigma_sway_m=self.sigma_sway_m,
                      sigma_yaw_rad=self.sigma_yaw_rad)
        if self.perturbations is not None:
            if len(self.perturbations) != self.n_pings - 1:
                raise ValidationError(f"need {self.n_pings - 1} perturbations, got {len(self.perturbations)}")
            if any(len(p) != 3 for p in self.perturbations):
                raise ValidationError("perturbations are (surge_m, sway_m, yaw_rad) triplets")

    @property
    def path_length(self) -> float:
        return (self.n_pings - 1) * self.advance_m


@dataclass(frozen=True)
class SolverSpec:
    inner_iterations: int = 5
    outer_iterations: int = 5
    grid_extent_m: tuple[float, float] = (1.6, 0.6)
    grid_spacing_m: float | None = None
    tol_zeta_m: float | None = None
    tol_eta_m: float | None = None
    max_evaluations: int = 500
    plateau: float = 0.25
    yaw_lobe_rad: float = 0.01
    max_yaw_rad: float = 0.1
    restarts: int = 6
    surge_period_m: float | None = None
    surge_hops: int = 2
    workers: int = 1

    def __post_init__(self):
        _positive("solver", inner_iterations=self.inner_iterations, outer_iterations=self.outer_iterations,
                  grid_extent_m=self.grid_extent_m, grid_spacing_m=self.grid_spacing_m,
                  tol_zeta_m=self.tol_zeta_m, tol_eta_m=self.tol_eta_m,
                  max_evaluations=self.max_evaluations, plateau=self.plateau,
                  yaw_lobe_rad=self.yaw_lobe_rad, max_yaw_rad=self.max_yaw_rad,
                  surge_period_m=self.surge_period_m, workers=self.workers)
        if self.restarts < 0 or self.surge_hops < 0:
            raise ValidationError("solver.restarts and solver.surge_hops must be >= 0")

    def options(self) -> EstimationOptions:
        return EstimationOptions(
            grid_extent=tuple(self.grid_extent_m), spacing=self.grid_spacing_m,
            trunc=Truncation(int(self.inner_iterations), int(self.outer_iterations)),
            tol_zeta=self.tol_zeta_m, tol_eta=self.tol_eta_m, max_evals=int(self.max_evaluations),
            plateau=self.plateau, yaw_lobe=self.yaw_lobe_rad, max_yaw=self.max_yaw_rad,
            restarts=int(self.restarts), surge_period=self.surge_period_m, surge_hops=int(self.surge_hops),
            workers=int(self.workers))


def system_to_dict(cfg: SystemConfig) -> dict:
    d = {key: getattr(cfg, attr) for attr, key in _SYSTEM_KEYS.items()}
    d["tx_offset_m"] = [cfg.tx_offset.x, cfg.tx_offset.y]
    d["tx_offset_rad"] = cfg.tx_offset.theta
    return d


def system_from_dict(data: dict) -> SystemConfig:
    if not isinstance(data, dict):
        raise ValidationError("system must be a JSON object")
    data = dict(data)
    kw = {}
    off = data.pop("tx_offset_m", None)
    off_th = data.pop("tx_offset_rad", 0.0)
    if off is not None:
        if len(off) != 2:
            raise ValidationError("system.tx_offset_m must be [x, y]")
        kw["tx_offset"] = Pose(off[0], off[1], off_th)
    rev = {v: k for k, v in _SYSTEM_KEYS.items()}
    unknown = set(data) - set(rev)
    if unknown:
        raise ValidationError(f"unknown system fields: {sorted(unknown)}")
    kw.update({rev[k]: v for k, v in data.items()})
    return SystemConfig(**kw)


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    seed: int = 1
    output_dir: str = "run"

    def __post_init__(self):
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "system": system_to_dict(self.system),
            "scene": asdict(self.scene),
            "trajectory": asdict(self.trajectory),
            "solver": asdict(self.solver),
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        data = dict(data)
        version = data.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise FormatError(f"unsupported config version {version}")
        unknown = set(data) - {"system", "scene", "trajectory", "solver", "seed", "output_dir"}
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        kw = {}
        if "system" in data:
            kw["system"] = system_from_dict(data["system"])
        for key, sub in (("scene", SceneSpec), ("trajectory", TrajectorySpec), ("solver", SolverSpec)):
            if key in data:
                kw[key] = _from_dict(sub, data[key], key)
        for key in ("seed", "output_dir"):
            if key in data:
                kw[key] = data[key]
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> RunConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> RunConfig:
        return cls.from_json(Path(path).read_text())


# ---------------------------------------------------------------- simulation

@dataclass
class Simulation:
    config: RunConfig
    scene: ReflectivityGrid
    true_poses: list
    nominal_poses: list
    sigmas: list
    records: list

    @property
    def phantom(self) -> PhantomSpec | None:
        return phantom_spec(self.config)


def nominal_poses(spec: TrajectorySpec) -> list:
    # same composition chain as the true track, so zero errors reproduce it bit for bit
    return integrate([Pose(spec.advance_m, 0.0, 0.0)] * (spec.n_pings - 1), IDENTITY)


def draw_perturbations(spec: TrajectorySpec, rng: np.random.Generator) -> list:
    """Per-ping motion errors relative to the previous ping."""
    if spec.perturbations is not None:
        return [Pose(*p) for p in spec.perturbations]
    sd = np.array([spec.sigma_surge_m, spec.sigma_sway_m, spec.sigma_yaw_rad])
    draws = rng.standard_normal((spec.n_pings - 1, 3)) * sd
    draws = np.clip(draws, -spec.clip_sigmas * sd, spec.clip_sigmas * sd)
    return [Pose(*row) for row in draws]


def true_trajectory(spec: TrajectorySpec, sigmas) -> list:
    """Phase-center poses obtained by applying the motion errors to the nominal track."""
    step = Pose(spec.advance_m, 0.0, 0.0)
    return integrate([relative_from_sigma(step, s) for s in sigmas], IDENTITY)


def scene_grid(config: RunConfig) -> ReflectivityGrid:
    cfg, sc, tr = config.system, config.scene, config.trajectory
    extent = sc.extent_m or (tr.path_length + 2.4, 1.2)
    center = sc.center_m or (tr.path_length / 2.0, cfg.midrange)
    return make_grid(cfg, extent, center, sc.spacing_m)


def phantom_spec(config: RunConfig) -> PhantomSpec | None:
    sc = config.scene
    if not sc.phantom:
        return None
    center = sc.phantom_center_m or scene_grid(config).center
    return PhantomSpec(center=tuple(center), diameter=sc.phantom_diameter_m, gain_db=sc.phantom_gain_db)


def simulate(config: RunConfig) -> Simulation:
    """Scene, true trajectory and raw tracks of every ping."""
    cfg, sc, tr = config.system, config.scene, config.trajectory
    scene_seed, traj_seed = np.random.SeedSequence(config.seed).spawn(2)
    grid = scene_grid(config)
    ripple = RippleSpec(sc.ripple_wavelength_m, sc.ripple_direction_rad, sc.ripple_depth, sc.ripple_sigma)
    rho = synth_scene(grid, ripple, phantom_spec(config), scene_seed)

    sigmas = draw_perturbations(tr, np.random.default_rng(traj_seed))
    truth = true_trajectory(tr, sigmas)
    nominal = nominal_poses(tr)
    true_geo = [PingGeometry.replacement(p, cfg) for p in truth]
    pairs = [(g.tx, r) for g in true_geo for r in g.rx_centers]
    time = time_window(grid.points(), pairs, cfg, margin=sc.time_margin_m)

    records = []
    for k, (geo, nom) in enumerate(zip(true_geo, nominal)):
        data = PingOperator(geo, grid, time, cfg).apply(rho.flat())
        tracks = [Track(time, row) for row in data]
        records.append(sio.ping_record(tracks, PingGeometry.replacement(nom, cfg), cfg, {"index": k}))
        log.debug("synthesized ping %d", k)
    return Simulation(config, rho, truth, nominal, sigmas, records)


# ---------------------------------------------------------------- datasets

@dataclass
class Dataset:
    config: RunConfig
    records: list
    truth: list | None = None

    @property
    def cfg(self) -> SystemConfig:
        return self.config.system

    @property
    def indices(self) -> list:
        return [r.meta["index"] for r in self.records]

    def true_pose(self, index: int) -> Pose:
        return self.truth[self.indices.index(index)]

    def record(self, index: int) -> PingRecord:
        try:
            return self.records[self.indices.index(index)]
        except ValueError:
            raise IndexOutOfRange(f"ping {index} not in dataset (have {self.indices[0]}..{self.indices[-1]})") from None

    def true_sigma(self, p: int, q: int) -> Pose | None:
        """Motion error of ping ``q`` relative to ping ``p`` in the estimator's convention."""
        if self.truth is None:
            return None
        nominal = relative_pose(self.record(p).geometry.pca, self.record(q).geometry.pca)
        return sigma_from_relative(nominal, relative_pose(self.true_pose(p), self.true_pose(q)))

    def subset(self, records) -> Dataset:
        records = list(records)
        truth = None if self.truth is None else [self.true_pose(r.meta["index"]) for r in records]
        return Dataset(self.config, records, truth)


def ping_path(root, index: int) -> Path:
    return Path(root) / "pings" / f"ping_{index:03d}.sasp"


def write_dataset(root, config: RunConfig, records, truth=None, scene: ReflectivityGrid | None = None) -> Path:
    root = Path(root)
    (root / "pings").mkdir(parents=True, exist_ok=True)
    config.save(root / "config.json")
    for r in records:
        sio.save_ping(ping_path(root, r.meta["index"]), r.tracks, r.geometry)
    if scene is not None:
        save_grid(root / "scene.sasg", scene)
        export_grid_csv(root / "scene.csv", scene)
    if truth is not None:
        write_pose_table(root / "truth.csv", [r.meta["index"] for r in records],
                         [r.geometry.pca for r in records], truth)
    return root


def write_pose_table(path, indices, nominal, poses) -> None:
    """Trajectory CSV: poses plus the motion error of each ping relative to the previous one."""
    sig = [sigma_from_relative(relative_pose(n0, n1), relative_pose(p0, p1))
           for n0, n1, p0, p1 in zip(nominal[:-1], nominal[1:], poses[:-1], poses[1:])]
    sio.write_trajectory_csv(path, poses, sig, indices)


def load_dataset(root) -> Dataset:
    root = Path(root)
    if not (root / "config.json").is_file():
        raise FormatError(f"{root}: no config.json, not a dataset")
    config = RunConfig.load(root / "config.json")
    files = sorted((root / "pings").glob("ping_*.sasp"))
    if not files:
        raise FormatError(f"{root}: no ping files")
    records = []
    for path in files:
        tracks, geo = sio.load_ping(path)
        if geo.N != config.system.N:
            raise FormatError(f"{path}: {geo.N} receivers, config says {config.system.N}")
        records.append(sio.ping_record(tracks, geo, config.system, {"index": int(path.stem.split("_")[1])}))
    truth = None
    if (root / "truth.csv").is_file():
        idx, poses, _ = sio.read_trajectory_csv(root / "truth.csv")
        by_index = dict(zip(idx, poses))
        if all(r.meta["index"] in by_index for r in records):
            truth = [by_index[r.meta["index"]] for r in records]
    return Dataset(config, records, truth)


def select(dataset: Dataset, k: int | None = None, phase: int | None = None, rx: int | None = None) -> Dataset:
    """Optional sub-sampling by ``(k, phase)`` followed by single-receiver extraction."""
    records = dataset.records
    if k is not None:
        records = rearrange_pings(records, k, 0 if phase is None else phase, dataset.cfg.N)
    elif phase is not None:
        raise ValidationError("--phase needs --k")
    if rx is not None:
        records = extract_siso(records, rx)
    return dataset.subset(records)


# ---------------------------------------------------------------- estimation

@dataclass
class PairResult:
    p: int
    q: int
    estimate: object
    truth: Pose | None

    @property
    def error(self) -> Pose | None:
        return None if self.truth is None else self.estimate.sigma - self.truth


@dataclass
class TrajectoryResult:
    indices: list
    poses: list
    estimate: TrajectoryEstimate
    pairs: list
    truth: list | None

    def errors(self) -> list | None:
        """Pose errors relative to the first ping, expressed in its true frame."""
        if self.truth is None:
            return None
        t0, e0 = self.truth[0], self.poses[0]
        return [relative_pose(e0, e) - relative_pose(t0, t) for e, t in zip(self.poses, self.truth)]


def estimate_pair(dataset: Dataset, p: int, q: int, opts: EstimationOptions | None = None) -> PairResult:
    est = estimate_displacement(dataset.record(p), dataset.record(q), opts, dataset.cfg)
    return PairResult(p, q, est, dataset.true_sigma(p, q))


def estimate_dataset(dataset: Dataset, opts: EstimationOptions | None = None) -> TrajectoryResult:
    """Chained pair estimates over the (possibly sub-sampled) dataset."""
    idx = dataset.indices

    def progress(k, est):
        log.info("pair %d-%d: sigma=(%.5f, %.5f, %.6f) evals=%d", idx[k], idx[k + 1], *est.sigma, est.evaluations)

    traj = estimate_trajectory(dataset.records, opts, dataset.cfg, progress=progress)
    origin = dataset.records[0].geometry.pca
    poses = [compose(origin, p) for p in traj.poses]
    pairs = [PairResult(a, b, e, dataset.true_sigma(a, b)) for a, b, e in zip(idx[:-1], idx[1:], traj.estimates)]
    return TrajectoryResult(idx, poses, traj, pairs, dataset.truth)


def estimate_interlaced(dataset: Dataset, k: int, opts: EstimationOptions | None = None,
                        rx: int | None = None) -> TrajectoryResult:
    """Estimate every sub-sampled phase separately and interlace the results."""
    stride = dataset.cfg.N - k
    per_phase, pairs = [], []
    for phase in range(stride):
        sub = select(dataset, k, phase, rx)
        res = estimate_dataset(sub, opts)
        per_phase.append(res.estimate)
        pairs.extend(res.pairs)
    merged = combine_phase_estimates(per_phase, stride)
    records = dataset.records[:len(merged.poses)]
    origin = records[0].geometry.pca
    poses = [compose(origin, p) for p in merged.poses]
    truth = None if dataset.truth is None else dataset.truth[:len(poses)]
    return TrajectoryResult([r.meta["index"] for r in records], poses, merged, pairs, truth)


# ---------------------------------------------------------------- scans

def axis_pose(axis: str, value: float, base: Pose) -> Pose:
    if axis == "surge":
        return Pose(value, base.y, base.theta)
    if axis == "sway":
        return Pose(base.x, value, base.theta)
    if axis == "yaw":
        return Pose(base.x, base.y, value)
    raise ValidationError(f"axis must be one of {AXES}, got {axis!r}")


def scan_values(lo: float, hi: float, steps: int) -> np.ndarray:
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
        raise ValidationError(f"empty scan range [{lo}, {hi}]")
    if hi == lo:
        return np.array([lo])
    if steps < 2:
        raise ValidationError("a non-degenerate scan range needs at least 2 steps")
    return np.linspace(lo, hi, steps)


def scan_axis(ping_p: PingRecord, ping_q: PingRecord, axis: str, lo: float, hi: float, steps: int,
              base: Pose = IDENTITY, opts: EstimationOptions | None = None,
              cfg: SystemConfig | None = None, problem: PairProblem | None = None):
    """Both error functions along one axis of the motion error.

    The other two components are held at ``base``.  Returns
    ``(values, zeta, eta)``.
    """
    axis_pose(axis, 0.0, base)
    values = scan_values(lo, hi, steps)
    problem = problem or PairProblem(ping_p, ping_q, cfg, opts)
    z = np.array([problem.zeta(axis_pose(axis, v, base)) for v in values])
    e = np.array([problem.eta(axis_pose(axis, v, base)) for v in values])
    return values, z, e


# ---------------------------------------------------------------- imaging

def form_image(records, poses, grid: ReflectivityGrid, cfg: SystemConfig) -> ReflectivityGrid:
    """Backprojection of every ping placed at the given phase-center poses."""
    records, poses = list(records), list(poses)
    if len(records) != len(poses):
        raise ShapeMismatch(f"{len(poses)} poses for {len(records)} pings")
    # localized() puts the phase center at the origin, so any sub-array keeps its offsets
    ops = [PingOperator(r.geometry.localized().transformed(pose), grid, r.op.time, cfg)
           for r, pose in zip(records, poses)]
    return backproject(ops, [r.data for r in records], grid)


def image_grid(config: RunConfig, extent=None, center=None, spacing: float | None = None) -> ReflectivityGrid:
    ph = phantom_spec(config)
    if center is None:
        center = ph.center if ph is not None else scene_grid(config).center
    if extent is None:
        d = ph.diameter if ph is not None else 0.4
        extent = (max(1.2, 4 * d), max(0.6, 2 * d))
    return make_grid(config.system, extent, center, spacing)


def phantom_contrast(image: ReflectivityGrid, phantom: PhantomSpec, guard: float = 0.1) -> float:
    """Peak magnitude inside the phantom over background RMS, in dB.

    The background is every cell farther than ``guard`` from the phantom rim.
    """
    pts = image.points()
    r = np.hypot(pts[:, 0] - phantom.center[0], pts[:, 1] - phantom.center[1])
    mag = np.abs(image.flat())
    inside = r <= phantom.diameter / 2.0
    outside = r > phantom.diameter / 2.0 + guard
    if not inside.any() or not outside.any():
        raise ValidationError("image grid must contain the phantom and some background")
    rms = math.sqrt(float(np.mean(mag[outside] ** 2)))
    if rms == 0.0:
        raise ValidationError("background of the image is zero")
    return 20.0 * math.log10(mag[inside].max() / rms)


# ---------------------------------------------------------------- config helpers

def with_overrides(config: RunConfig, seed: int | None = None, truncation=None, out: str | None = None) -> RunConfig:
    if seed is not None:
        config = replace(config, seed=int(seed))
    if truncation is not None:
        inner, outer = truncation
        config = replace(config, solver=replace(config.solver, inner_iterations=int(inner),
                                                outer_iterations=int(outer)))
    if out is not None:
        config = replace(config, output_dir=str(out))
    return config
