"""
Scenario files.

A scenario is a YAML document (schema ``version: 1``) describing the vessel,
world, sensors, algorithm parameters and the behaviour tree of one
simulated run.  :func:`load_scenario` parses and validates it; problems are
reported as :class:`ScenarioParseError` (unreadable YAML) or
:class:`ScenarioValidationError` (carrying the dotted path of the offending
field).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from ..behavior import BehaviorConfig, TreeError, build_tree
from ..dynamics import Pose2D, PropellerParams, VesselParams, BodyVelocity
from ..follower import FollowerParams
from ..heartbeat import FlatEarthDatum
from ..localization import ProcessNoise
from ..perception import CameraModel, Circle, Polygon, ScanGeometry, World
from ..planner import PlannerParams, offset_grid

SCHEMA_VERSION = 1


class ScenarioError(Exception):
    pass


class ScenarioParseError(ScenarioError):
    pass


class ScenarioValidationError(ScenarioError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class LidarConfig:
    geometry: ScanGeometry
    rate: float = 10.0
    noise_sigma: float = 0.02
    outlier_k: int = 1
    outlier_thresh: float = 1.0
    base_thresh: float = 0.3
    slope: float = 0.05
    min_points: int = 2


@dataclass
class CameraConfig:
    model: CameraModel
    rate: float = 10.0
    miss_rate: float = 0.0
    bbox_jitter_px: float = 0.0
    max_range: float = 40.0
    iou_gate: float = 0.3
    object_height: float = 1.0


@dataclass
class GnssConfig:
    rate: float = 1.0
    sigma: float = 0.3


@dataclass
class ImuConfig:
    rate: float = 50.0
    sigma_psi: float = 0.02
    sigma_omega: float = 0.01


@dataclass
class EkfConfig:
    q: ProcessNoise = field(default_factory=ProcessNoise)
    initial_sigma: Tuple[float, ...] = (0.5, 0.5, 0.05, 0.2, 0.2, 0.05)


@dataclass
class ControllerConfig:
    rate: float = 20.0
    k_u: float = 0.3  # 1/s, surge speed loop
    k_r: float = 3.0  # 1/s, yaw-rate loop


@dataclass
class HeartbeatConfig:
    enabled: bool = False
    host: str = "127.0.0.1"
    port: int = 9000
    team_id: str = "OUXT"
    rate_hz: float = 1.0
    datum: FlatEarthDatum = field(default_factory=FlatEarthDatum)


@dataclass
class Scenario:
    name: str
    seed: int
    duration: float
    dt: float
    vessel: VesselParams
    propeller: PropellerParams
    world: World
    start: Pose2D
    start_vel: BodyVelocity
    tree: Any  # declaration; instantiated per run
    behavior: BehaviorConfig
    behavior_rate: float
    lidar: LidarConfig
    camera: CameraConfig
    gnss: GnssConfig
    imu: ImuConfig
    ekf: EkfConfig
    planner: PlannerParams
    follower: FollowerParams
    controller: ControllerConfig
    heartbeat: HeartbeatConfig
    coriolis_mode: str = "skew_corrected"
    gates: List[Tuple[int, int]] = field(default_factory=list)
    source: Optional[Path] = None

    def due(self, k: int, rate: float) -> bool:
        """True on the first tick at or after each ``1/rate`` boundary."""
        if k == 0:
            return True
        return math.floor(k * self.dt * rate + 1e-9) > math.floor((k - 1) * self.dt * rate + 1e-9)


# ---------------------------------------------------------------- helpers


class _Section:
    """Dict view that tracks its dotted path and rejects unknown keys."""

    def __init__(self, data, path: str):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ScenarioValidationError(path or "<root>", f"expected a mapping, got {type(data).__name__}")
        self.data = data
        self.path = path
        self.used = set()

    def _p(self, key):
        return f"{self.path}.{key}" if self.path else key

    def sub(self, key) -> "_Section":
        self.used.add(key)
        return _Section(self.data.get(key), self._p(key))

    def raw(self, key, default=None):
        self.used.add(key)
        return self.data.get(key, default)

    def num(self, key, default=None, *, gt=None, ge=None, le=None, integer=False):
        self.used.add(key)
        if key not in self.data:
            if default is None:
                raise ScenarioValidationError(self._p(key), "required field missing")
            return default
        v = self.data[key]
        if isinstance(v, str):
            # YAML 1.1 reads 1e-4 (no dot) as a string
            try:
                v = float(v)
            except ValueError:
                pass
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ScenarioValidationError(self._p(key), f"expected a number, got {v!r}")
        if integer and not float(v).is_integer():
            raise ScenarioValidationError(self._p(key), f"expected an integer, got {v!r}")
        if not math.isfinite(v) and not (v == math.inf and gt is not None):
            raise ScenarioValidationError(self._p(key), f"must be finite, got {v!r}")
        if gt is not None and not v > gt:
            raise ScenarioValidationError(self._p(key), f"must be > {gt}, got {v!r}")
        if ge is not None and not v >= ge:
            raise ScenarioValidationError(self._p(key), f"must be >= {ge}, got {v!r}")
        if le is not None and not v <= le:
            raise ScenarioValidationError(self._p(key), f"must be <= {le}, got {v!r}")
        return int(v) if integer else float(v)

    def done(self):
        extra = set(self.data) - self.used
        if extra:
            raise ScenarioValidationError(self._p(sorted(extra)[0]), "unknown field")


def _build(path: str, ctor, *args, **kw):
    try:
        return ctor(*args, **kw)
    except (ValueError, TypeError) as e:
        raise ScenarioValidationError(path, str(e)) from None


def _check_rate(path: str, rate: float, dt: float):
    if rate * dt > 1.0 + 1e-9:
        raise ScenarioValidationError(path, f"rate {rate} Hz exceeds the simulation rate 1/dt = {1 / dt:g} Hz")


# ---------------------------------------------------------------- sections


def _vessel(sec: _Section) -> VesselParams:
    drag = sec.raw("lin_drag", [40.0, 300.0, 200.0])
    if not isinstance(drag, list) or len(drag) != 3:
        raise ScenarioValidationError(sec._p("lin_drag"), "expected a list of three numbers")
    for i, d in enumerate(drag):
        if isinstance(d, bool) or not isinstance(d, (int, float)) or not d >= 0:
            raise ScenarioValidationError(f"{sec._p('lin_drag')}[{i}]", f"must be a number >= 0, got {d!r}")
    p = VesselParams(
        m=sec.num("m", gt=0),
        mx=sec.num("mx", 0.0, ge=0),
        my=sec.num("my", 0.0, ge=0),
        Iz=sec.num("Iz", gt=0),
        Jz=sec.num("Jz", 0.0, ge=0),
        w=sec.num("w", gt=0),
        hull_width=sec.num("hull_width", 1.2, ge=0),
        lin_drag=tuple(float(d) for d in drag),
        f_max=sec.num("f_max", math.inf, gt=0),
    )
    sec.done()
    return p


def _propeller(sec: _Section) -> PropellerParams:
    p = _build(
        sec.path,
        PropellerParams,
        rho=sec.num("rho", gt=0),
        Dp=sec.num("Dp", gt=0),
        k0=sec.num("k0", gt=0),
        k1=sec.num("k1", 0.0),
        k2=sec.num("k2", 0.0),
        n_max=sec.num("n_max", gt=0),
    )
    sec.done()
    return p


def _world(sec: _Section) -> World:
    obstacles = []
    for i, o in enumerate(sec.raw("obstacles", []) or []):
        s = _Section(o, f"{sec.path}.obstacles[{i}]")
        kind = s.raw("type", "circle")
        if kind == "circle":
            obstacles.append(_build(s.path, Circle, s.num("x"), s.num("y"), s.num("r", gt=0)))
        elif kind == "polygon":
            verts = s.raw("vertices")
            if not isinstance(verts, list):
                raise ScenarioValidationError(s._p("vertices"), "expected a list of [x, y] pairs")
            obstacles.append(_build(s._p("vertices"), Polygon, tuple(tuple(v) for v in verts)))
        else:
            raise ScenarioValidationError(s._p("type"), f"unknown obstacle type {kind!r}")
        s.done()
    buoys = []
    for i, b in enumerate(sec.raw("buoys", []) or []):
        s = _Section(b, f"{sec.path}.buoys[{i}]")
        label = s.raw("label")
        if not isinstance(label, str) or not label:
            raise ScenarioValidationError(s._p("label"), "buoys need a string label")
        buoys.append(
            _build(s.path, Circle, s.num("x"), s.num("y"), s.num("r", 0.4, gt=0), label, s.num("height", 1.0, gt=0))
        )
        s.done()
    sec.done()
    return World(tuple(obstacles), tuple(buoys))


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioParseError(f"{path}: cannot read ({e})") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioParseError(f"{path}: {e}") from None
    sc = parse_scenario(data)
    sc.source = path
    return sc


def parse_scenario(data) -> Scenario:
    root = _Section(data, "")
    version = root.raw("version")
    if version != SCHEMA_VERSION:
        raise ScenarioValidationError("version", f"unsupported schema version {version!r}; expected {SCHEMA_VERSION}")
    name = root.raw("name", "scenario")
    seed = root.raw("seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ScenarioValidationError("seed", "a non-negative integer seed is required")

    sim = root.sub("sim")
    dt = sim.num("dt", 0.02, gt=0)
    duration = sim.num("duration", gt=0)
    mode = sim.raw("coriolis_mode", "skew_corrected")
    if mode not in ("skew_corrected", "paper_literal"):
        raise ScenarioValidationError("sim.coriolis_mode", f"unknown mode {mode!r}")
    sim.done()
    if abs(duration / dt - round(duration / dt)) > 1e-6:
        raise ScenarioValidationError("sim.duration", "must be a whole number of dt steps")

    vessel = _vessel(root.sub("vessel"))
    propeller = _propeller(root.sub("propeller"))
    world = _world(root.sub("world"))

    st = root.sub("start")
    start = Pose2D(st.num("x", 0.0), st.num("y", 0.0), st.num("psi", 0.0))
    start_vel = BodyVelocity(st.num("u", 0.0), 0.0, 0.0)
    st.done()

    sens = root.sub("sensors")
    ls = sens.sub("lidar")
    n_beams = ls.num("n_beams", 720, integer=True, ge=2)
    geom = _build(
        ls.path,
        ScanGeometry,
        ls.num("angle_min", -math.pi),
        ls.num("angle_increment", 2 * math.pi / n_beams, gt=0),
        n_beams,
        ls.num("range_max", 40.0, gt=0),
    )
    lidar = LidarConfig(
        geom,
        rate=ls.num("rate", 10.0, gt=0),
        noise_sigma=ls.num("noise_sigma", 0.02, ge=0),
        outlier_k=ls.num("outlier_k", 1, integer=True, ge=1),
        outlier_thresh=ls.num("outlier_thresh", 1.0, gt=0),
        base_thresh=ls.num("base_thresh", 0.3, gt=0),
        slope=ls.num("slope", 0.05, ge=0),
        min_points=ls.num("min_points", 2, integer=True, ge=1),
    )
    ls.done()
    cs = sens.sub("camera")
    width = cs.num("width", 1280, integer=True, gt=0)
    height = cs.num("height", 720, integer=True, gt=0)
    hfov = cs.num("hfov", math.radians(100.0), gt=0, le=math.radians(179.0))
    fx = 0.5 * width / math.tan(0.5 * hfov)
    cam = _build(
        cs.path,
        CameraModel,
        fx,
        fx,
        0.5 * width,
        0.5 * height,
        width,
        height,
        mount_x=cs.num("mount_x", 0.0),
        mount_y=cs.num("mount_y", 0.0),
        mount_z=cs.num("mount_z", 1.5),
        mount_yaw=cs.num("mount_yaw", 0.0),
    )
    camera = CameraConfig(
        cam,
        rate=cs.num("rate", 10.0, gt=0),
        miss_rate=cs.num("miss_rate", 0.0, ge=0, le=1),
        bbox_jitter_px=cs.num("bbox_jitter_px", 0.0, ge=0),
        max_range=cs.num("max_range", 40.0, gt=0),
        iou_gate=cs.num("iou_gate", 0.3, gt=0, le=0.999),
        object_height=cs.num("object_height", 1.0, gt=0),
    )
    cs.done()
    gs = sens.sub("gnss")
    gnss = GnssConfig(gs.num("rate", 1.0, gt=0), gs.num("sigma", 0.3, gt=0))
    gs.done()
    im = sens.sub("imu")
    imu = ImuConfig(im.num("rate", 50.0, gt=0), im.num("sigma_psi", 0.02, gt=0), im.num("sigma_omega", 0.01, gt=0))
    im.done()
    sens.done()

    es = root.sub("ekf")
    qs = es.sub("q")
    q0 = ProcessNoise()
    q = ProcessNoise(
        qs.num("q_pos", q0.q_pos, ge=0),
        qs.num("q_psi", q0.q_psi, ge=0),
        qs.num("q_u", q0.q_u, ge=0),
        qs.num("q_v", q0.q_v, ge=0),
        qs.num("q_omega", q0.q_omega, ge=0),
    )
    qs.done()
    init = es.raw("initial_sigma", [0.5, 0.5, 0.05, 0.2, 0.2, 0.05])
    if not isinstance(init, list) or len(init) != 6 or any(not isinstance(v, (int, float)) or v <= 0 for v in init):
        raise ScenarioValidationError("ekf.initial_sigma", "expected six positive numbers")
    ekf = EkfConfig(q, tuple(float(v) for v in init))
    es.done()

    ps = root.sub("planner")
    offs = ps.raw("offsets")
    if offs is None:
        offsets = offset_grid(ps.num("offset_step", 1.0, gt=0), ps.num("offset_extent", 4.0, ge=0))
    else:
        if not isinstance(offs, list) or any(not isinstance(o, list) or len(o) != 2 for o in offs):
            raise ScenarioValidationError("planner.offsets", "expected a list of [dx, dy] pairs")
        offsets = [tuple(o) for o in offs]
    planner = _build(
        ps.path,
        PlannerParams,
        width=ps.num("width", vessel.hull_width, ge=0),
        margin=ps.num("margin", 0.5, ge=0),
        a_max=ps.num("a_max", 0.3, gt=0),
        a_dec=ps.num("a_dec", 0.3, gt=0),
        omega_max=ps.num("omega_max", 0.4, gt=0),
        v_cruise=ps.num("v_cruise", 2.0, gt=0),
        standoff=ps.num("standoff", 2.0, ge=0),
        ds=ps.num("ds", 0.5, gt=0),
        n_levels=ps.num("n_levels", 21, integer=True, ge=2),
        offsets=offsets,
    )
    ps.done()

    fs = root.sub("follower")
    follower = _build(
        fs.path,
        FollowerParams,
        lookahead=fs.num("lookahead", 4.0, gt=0),
        v_from_profile=bool(fs.raw("v_from_profile", True)),
        extension_len=fs.num("extension_len", 10.0, ge=0),
        preview=fs.num("preview", 0.5, ge=0),
    )
    fs.done()

    ct = root.sub("controller")
    controller = ControllerConfig(ct.num("rate", 20.0, gt=0), ct.num("k_u", 0.3, gt=0), ct.num("k_r", 3.0, gt=0))
    ct.done()

    bs = root.sub("behavior")
    behavior_rate = bs.num("rate", 10.0, gt=0)
    tree = bs.raw("tree")
    if tree is None:
        raise ScenarioValidationError("behavior.tree", "required field missing")
    try:
        build_tree(tree)
    except TreeError as e:
        raise ScenarioValidationError("behavior.tree", str(e)) from None
    bcfg = BehaviorConfig(
        pos_tol=bs.num("pos_tol", 1.0, gt=0),
        heading_tol=bs.num("heading_tol", 0.2, gt=0),
        stop_speed=bs.num("stop_speed", 0.15, gt=0),
        min_ahead=bs.num("min_ahead", 2.0, ge=0),
        max_gate_width=bs.num("max_gate_width", 10.0, gt=0),
    )
    bs.done()

    hs = root.sub("heartbeat")
    dsec = hs.sub("datum")
    datum = FlatEarthDatum(dsec.num("lat", 21.3099, ge=-90, le=90), dsec.num("lon", -157.8881, ge=-180, le=180))
    dsec.done()
    team = hs.raw("team_id", "OUXT")
    if not isinstance(team, str) or not team.isalnum():
        raise ScenarioValidationError("heartbeat.team_id", "must be alphanumeric")
    heartbeat = HeartbeatConfig(
        enabled=bool(hs.raw("enabled", False)),
        host=str(hs.raw("host", "127.0.0.1")),
        port=hs.num("port", 9000, integer=True, ge=0, le=65535),
        team_id=team,
        rate_hz=hs.num("rate_hz", 1.0, gt=0),
        datum=datum,
    )
    hs.done()

    ts = root.sub("task")
    gates = []
    for i, g in enumerate(ts.raw("gates", []) or []):
        gp = f"task.gates[{i}]"
        if not isinstance(g, list) or len(g) != 2 or any(not isinstance(k, int) for k in g):
            raise ScenarioValidationError(gp, "expected [red_buoy_index, green_buoy_index]")
        for k in g:
            if not 0 <= k < len(world.buoys):
                raise ScenarioValidationError(gp, f"buoy index {k} out of range")
        gates.append((g[0], g[1]))
    ts.done()
    root.done()

    for key, rate in (
        ("sensors.lidar.rate", lidar.rate),
        ("sensors.camera.rate", camera.rate),
        ("sensors.gnss.rate", gnss.rate),
        ("sensors.imu.rate", imu.rate),
        ("controller.rate", controller.rate),
        ("behavior.rate", behavior_rate),
    ):
        _check_rate(key, rate, dt)

    return Scenario(
        name=str(name),
        seed=seed,
        duration=duration,
        dt=dt,
        vessel=vessel,
        propeller=propeller,
        world=world,
        start=start,
        start_vel=start_vel,
        tree=tree,
        behavior=bcfg,
        behavior_rate=behavior_rate,
        lidar=lidar,
        camera=camera,
        gnss=gnss,
        imu=imu,
        ekf=ekf,
        planner=planner,
        follower=follower,
        controller=controller,
        heartbeat=heartbeat,
        coriolis_mode=mode,
        gates=gates,
    )


def shipped_scenarios() -> List[Path]:
    """Paths of the example scenarios bundled with the package."""
    return sorted((Path(__file__).parent / "scenarios").glob("*.yaml"))
