"""
Minimal behaviour-tree engine and the vessel's task actions.

Only the ``Sequence`` composite exists.  It keeps memory: a child that
returned ``RUNNING`` is resumed directly on the next tick, earlier
children are not re-run.  Leaves are actions that read and write a typed
:class:`Blackboard`; they never block and return ``RUNNING`` while work is
in progress.

Trees are declared as nested plain data, e.g.::

    {"sequence": ["search_channel_markers", "navigate",
                  {"move_forward": {"dist": 5.0}}]}
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence as Seq

import numpy as np

from .dynamics import Pose2D, wrap_angle
from .localization import EkfState
from .perception import FusedObject

RED = "red_marker"
GREEN = "green_marker"


class NodeStatus(enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    FAILURE = "failure"


class TreeError(ValueError):
    """Malformed tree declaration."""


class BlackboardError(KeyError):
    """Read of a key that has not been written."""


@dataclass(frozen=True)
class Goal:
    """Target pose for the planner.

    ``hold`` requests zero velocity in place; ``position_only`` ignores the
    heading when judging arrival.
    """

    pose: Pose2D
    hold: bool = False
    position_only: bool = False


@dataclass(frozen=True)
class BehaviorConfig:
    pos_tol: float = 1.0
    heading_tol: float = 0.2
    stop_speed: float = 0.15  # m/s; GNSS-only velocity estimates are noisy at ~0.1 m/s
    min_ahead: float = 2.0
    max_gate_width: float = 10.0  # rejects red/green pairs from different gates
    red_label: str = RED
    green_label: str = GREEN


class Blackboard:
    """Keyed store with declared value types."""

    SCHEMA: Dict[str, tuple] = {
        "ego": (EkfState,),
        "objects": (list,),
        "goal": (Goal, type(None)),
        "flags": (dict,),
        "config": (BehaviorConfig,),
    }

    def __init__(self, **values):
        self._data: Dict[str, Any] = {"flags": {}, "config": BehaviorConfig(), "goal": None, "objects": []}
        for k, v in values.items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in self.SCHEMA:
            raise BlackboardError(f"undeclared blackboard key {key!r}")
        if not isinstance(value, self.SCHEMA[key]):
            raise TypeError(f"blackboard key {key!r} expects {self.SCHEMA[key]}, got {type(value).__name__}")
        self._data[key] = value

    def get(self, key: str):
        try:
            return self._data[key]
        except KeyError:
            raise BlackboardError(f"blackboard key {key!r} has not been set") from None

    def __contains__(self, key: str) -> bool:
        return key in self._data

    # shorthands used by every action
    @property
    def ego_pose(self) -> Pose2D:
        return self.get("ego").pose

    @property
    def config(self) -> BehaviorConfig:
        return self.get("config")


# ---------------------------------------------------------------- nodes


class Node:
    name = "node"

    def tick(self, bb: Blackboard, trace: Optional[list] = None) -> NodeStatus:
        status = self._tick(bb, trace)
        if trace is not None:
            trace.append((self.name, status))
        return status

    def _tick(self, bb, trace) -> NodeStatus:
        raise NotImplementedError

    def reset(self) -> None:
        pass


class Sequence(Node):
    name = "sequence"

    def __init__(self, children: Seq[Node], name: str = "sequence"):
        if not children:
            raise TreeError("a sequence needs at least one child")
        for c in children:
            if not isinstance(c, Node):
                raise TreeError(f"sequence child {c!r} is not a node")
        self.children = tuple(children)
        self.name = name
        self._current = 0

    def _tick(self, bb, trace):
        while self._current < len(self.children):
            status = self.children[self._current].tick(bb, trace)
            if status is NodeStatus.RUNNING:
                return status
            if status is NodeStatus.FAILURE:
                self.reset()
                return status
            self._current += 1
        self.reset()
        return NodeStatus.SUCCESS

    def reset(self):
        self._current = 0
        for c in self.children:
            c.reset()


class Action(Node):
    """Leaf wrapping a callable ``fn(bb) -> NodeStatus``."""

    def __init__(self, name: str, fn: Callable[[Blackboard], NodeStatus]):
        self.name = name
        self.fn = fn

    def _tick(self, bb, trace):
        status = self.fn(bb)
        if not isinstance(status, NodeStatus):
            raise TypeError(f"action {self.name!r} returned {status!r}")
        return status


class Condition(Node):
    def __init__(self, name: str, pred: Callable[[Blackboard], bool]):
        self.name = name
        self.pred = pred

    def _tick(self, bb, trace):
        return NodeStatus.SUCCESS if self.pred(bb) else NodeStatus.FAILURE


def tick(tree: Node, bb: Blackboard, trace: Optional[list] = None) -> NodeStatus:
    return tree.tick(bb, trace)


# ---------------------------------------------------------------- actions


PLANNED_GOAL = "planned_goal"  # flag: (requested Goal, Pose2D the planner actually targets)


def _speed(bb: Blackboard) -> float:
    return float(np.linalg.norm(bb.get("ego").mean[3:6]))


def reached(ego: Pose2D, goal: Goal, cfg: BehaviorConfig) -> bool:
    if math.hypot(goal.pose.x - ego.x, goal.pose.y - ego.y) >= cfg.pos_tol:
        return False
    return goal.position_only or abs(wrap_angle(goal.pose.psi - ego.psi)) < cfg.heading_tol


def find_gate(objects: Seq[FusedObject], ego: Pose2D, cfg: BehaviorConfig) -> Optional[Pose2D]:
    """World-frame gate pose from the nearest red/green pair ahead of the vessel.

    The heading crosses the red-green line, pointing away from the vessel.
    """
    reds = [o for o in objects if o.label == cfg.red_label]
    greens = [o for o in objects if o.label == cfg.green_label]
    best = None
    for r in reds:
        for g in greens:
            mid_body = 0.5 * (np.asarray(r.position) + np.asarray(g.position))
            if mid_body[0] < cfg.min_ahead or np.hypot(*np.subtract(r.position, g.position)) > cfg.max_gate_width:
                continue
            d = float(np.hypot(*mid_body))
            if best is None or d < best[0]:
                best = (d, r, g)
    if best is None:
        return None
    _, r, g = best
    rw, gw = ego.to_world(np.array([r.position, g.position]))
    mid = 0.5 * (rw + gw)
    normal = np.array([-(gw - rw)[1], (gw - rw)[0]])
    if normal @ (mid - ego.position) < 0:
        normal = -normal
    return Pose2D(float(mid[0]), float(mid[1]), math.atan2(normal[1], normal[0]))


def action_search_channel_markers(bb: Blackboard) -> NodeStatus:
    gate = find_gate(bb.get("objects"), bb.ego_pose, bb.config)
    if gate is None:
        return NodeStatus.RUNNING
    bb.set("goal", Goal(gate))
    return NodeStatus.SUCCESS


def action_navigate(bb: Blackboard) -> NodeStatus:
    goal = bb.get("goal")
    if goal is None:
        return NodeStatus.FAILURE
    if goal.hold:
        return NodeStatus.SUCCESS if _speed(bb) < bb.config.stop_speed else NodeStatus.RUNNING
    # the planner may have moved the goal off an obstacle; arrival is judged there
    planned = bb.get("flags").get(PLANNED_GOAL)
    if planned is not None and planned[0] is goal:
        goal = Goal(planned[1], goal.hold, goal.position_only)
    return NodeStatus.SUCCESS if reached(bb.ego_pose, goal, bb.config) else NodeStatus.RUNNING


def action_stop(bb: Blackboard) -> NodeStatus:
    goal = bb.get("goal")
    if goal is None or not goal.hold:
        bb.set("goal", Goal(bb.ego_pose, hold=True))
    return NodeStatus.SUCCESS if _speed(bb) < bb.config.stop_speed else NodeStatus.RUNNING


class SetGoal(Action):
    def __init__(self, x: float, y: float, psi: float = 0.0, name: str = "set_goal"):
        self.pose = Pose2D(x, y, psi)
        super().__init__(name, self._run)

    def _run(self, bb):
        bb.set("goal", Goal(self.pose))
        return NodeStatus.SUCCESS


class MoveForward(Action):
    """Drive ``dist`` metres along the heading held when the action starts."""

    def __init__(self, dist: float, name: str = "move_forward"):
        if not (dist > 0):
            raise TreeError("move_forward needs dist > 0")
        self.dist = float(dist)
        self._goal: Optional[Goal] = None
        super().__init__(name, self._run)

    def _run(self, bb):
        if self._goal is None:
            ego = bb.ego_pose
            self._goal = Goal(
                Pose2D(ego.x + self.dist * math.cos(ego.psi), ego.y + self.dist * math.sin(ego.psi), ego.psi)
            )
            bb.set("goal", self._goal)
        if reached(bb.ego_pose, self._goal, bb.config):
            self._goal = None
            return NodeStatus.SUCCESS
        return NodeStatus.RUNNING

    def reset(self):
        self._goal = None


def circle_waypoints(centre, radius: float, start_angle: float, direction: int, n: int = 8) -> List[Pose2D]:
    """``n + 1`` poses on a circle, closing the loop at the start angle; headings follow the tangent."""
    out = []
    for k in range(n + 1):
        a = start_angle + direction * 2.0 * math.pi * k / n
        x = centre[0] + radius * math.cos(a)
        y = centre[1] + radius * math.sin(a)
        out.append(Pose2D(x, y, a + direction * 0.5 * math.pi))
    return out


class RotateAroundBuoy(Action):
    """Circle the nearest fused buoy once at ``radius``.

    ``direction`` is +1 for counter-clockwise, -1 for clockwise.
    """

    def __init__(self, radius: float = 3.0, direction: int = 1, n_points: int = 8, name: str = "rotate_around_buoy"):
        if not (radius > 0):
            raise TreeError("rotate_around_buoy needs radius > 0")
        if direction not in (1, -1):
            raise TreeError("direction must be +1 or -1")
        if n_points < 3:
            raise TreeError("n_points must be >= 3")
        self.radius = float(radius)
        self.direction = direction
        self.n_points = n_points
        self.waypoints: List[Pose2D] = []
        self._i = 0
        super().__init__(name, self._run)

    def _run(self, bb):
        ego = bb.ego_pose
        if not self.waypoints:
            objs = bb.get("objects")
            if not objs:
                return NodeStatus.FAILURE
            nearest = min(objs, key=lambda o: math.hypot(*o.position))
            c = ego.to_world(np.asarray(nearest.position))
            start = math.atan2(ego.y - c[1], ego.x - c[0])
            self.waypoints = circle_waypoints(c, self.radius, start, self.direction, self.n_points)
            self._i = 0
            bb.set("goal", Goal(self.waypoints[0], position_only=True))
        if reached(ego, bb.get("goal"), bb.config):
            self._i += 1
            if self._i >= len(self.waypoints):
                self.reset()
                return NodeStatus.SUCCESS
            bb.set("goal", Goal(self.waypoints[self._i], position_only=True))
        return NodeStatus.RUNNING

    def reset(self):
        self.waypoints = []
        self._i = 0


# ---------------------------------------------------------------- declarations


def _plain(name, fn):
    def make(**kw):
        if kw:
            raise TreeError(f"action {name!r} takes no parameters")
        return Action(name, fn)

    return make


ACTIONS: Dict[str, Callable[..., Node]] = {
    "search_channel_markers": _plain("search_channel_markers", action_search_channel_markers),
    "navigate": _plain("navigate", action_navigate),
    "stop": _plain("stop", action_stop),
    "move_forward": MoveForward,
    "rotate_around_buoy": RotateAroundBuoy,
    "set_goal": SetGoal,
}


def build_tree(decl) -> Node:
    """Instantiate a tree from its plain-data declaration; raises :class:`TreeError` on bad input."""
    if isinstance(decl, str):
        decl = {decl: {}}
    if not isinstance(decl, dict) or len(decl) != 1:
        raise TreeError(f"node declaration must be a name or a single-key mapping, got {decl!r}")
    (kind, body), = decl.items()
    if kind == "sequence":
        if not isinstance(body, list) or not body:
            raise TreeError("sequence needs a non-empty list of children")
        return Sequence([build_tree(c) for c in body])
    if kind not in ACTIONS:
        raise TreeError(f"unknown action {kind!r}; known: {sorted(ACTIONS)}")
    body = body or {}
    if not isinstance(body, dict):
        raise TreeError(f"parameters of {kind!r} must be a mapping")
    try:
        return ACTIONS[kind](**body)
    except TypeError as e:
        raise TreeError(f"bad parameters for {kind!r}: {e}") from None
