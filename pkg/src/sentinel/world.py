"""Deterministic 2D grid world standing in for the robot's physical environment.

The world is a rectangular cell grid with static obstacles, scripted or
random-walking intruders, and scheduled fires. All randomness flows from the
scenario seed, so equal (scenario, seed, step count) always reproduces the
same world state, frames, and sensor readings.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from enum import Enum

from sentinel.vision import Frame

EMPTY = 0
OBSTACLE = 1

AMBIENT_SMOKE_PPM = 10.0
AMBIENT_TEMPERATURE_C = 21.0
FIRE_SMOKE_PPM = 500.0
FIRE_TEMPERATURE_C = 60.0

PROXIMITY_MAX_RANGE = 8

VIEW_SIZE = 32

# Grayscale palette for rendered frames.
PX_OUT_OF_WORLD = 0
PX_EMPTY = 50
PX_OBSTACLE = 200
PX_BURNING = 230
PX_INTRUDER = 255


class Heading(str, Enum):
    N = "N"
    E = "E"
    S = "S"
    W = "W"


class MoveDirection(str, Enum):
    FORWARD = "Forward"
    BACKWARD = "Backward"
    TURN_LEFT = "TurnLeft"
    TURN_RIGHT = "TurnRight"


# Screen convention: north decreases y.
_HEADING_VECTORS = {
    Heading.N: (0, -1),
    Heading.E: (1, 0),
    Heading.S: (0, 1),
    Heading.W: (-1, 0),
}

_TURN_RIGHT = {Heading.N: Heading.E, Heading.E: Heading.S, Heading.S: Heading.W, Heading.W: Heading.N}
_TURN_LEFT = {v: k for k, v in _TURN_RIGHT.items()}


class _Blocked:
    """Sentinel returned by apply_move when the target cell is not walkable."""

    def __repr__(self) -> str:
        return "BLOCKED"


BLOCKED = _Blocked()


class ScenarioError(ValueError):
    """Scenario file failed to parse or violates a world invariant."""


@dataclass(frozen=True)
class RobotPose:
    x: int
    y: int
    heading: Heading


@dataclass
class Intruder:
    """A moving presence: either a scripted path or a seeded random walk.

    Scripted intruders appear at path[0] on ``active_from``, advance one cell
    per step, and hold the final cell until ``active_until``. Random walkers
    start at ``start`` and take one obstacle-avoiding 4-neighbor step per tick.
    """

    intruder_id: str
    path: list[tuple[int, int]] | None
    active_from: int
    active_until: int
    start: tuple[int, int] | None = None
    random_walk: bool = False
    pos: tuple[int, int] | None = field(default=None, repr=False)
    _path_i: int = field(default=0, repr=False)

    def active_at(self, tick: int) -> bool:
        return self.active_from <= tick <= self.active_until


@dataclass(frozen=True)
class Fire:
    cell: tuple[int, int]
    ignition_tick: int


@dataclass(frozen=True)
class SensorReading:
    smoke_ppm: float
    temperature_c: float
    proximity_front: int
    proximity_rear: int
    tick: int


class WorldGrid:
    """Mutable world state; the owning agent loop is its only mutator."""

    def __init__(
        self,
        width: int,
        height: int,
        seed: int = 0,
        obstacles: list[tuple[int, int]] | None = None,
        intruders: list[Intruder] | None = None,
        fires: list[Fire] | None = None,
    ):
        if width < 8 or height < 8:
            raise ScenarioError(f"world must be at least 8x8, got {width}x{height}")
        self.width = width
        self.height = height
        self.cells = bytearray(width * height)
        self.fires = list(fires or [])
        self.intruders = list(intruders or [])
        self.tick = 0
        self.rng_seed = seed
        self._rng = random.Random(seed)
        for x, y in obstacles or []:
            if not self.in_bounds(x, y):
                raise ScenarioError(f"obstacle ({x},{y}) out of bounds")
            self.cells[y * width + x] = OBSTACLE
        for fire in self.fires:
            if not self.in_bounds(*fire.cell):
                raise ScenarioError(f"fire cell {fire.cell} out of bounds")
        for intr in self.intruders:
            self._check_intruder(intr)

    def _check_intruder(self, intr: Intruder) -> None:
        if intr.random_walk:
            cells = [intr.start] if intr.start else []
        else:
            cells = list(intr.path or [])
            if not cells:
                raise ScenarioError(f"intruder {intr.intruder_id!r} has an empty path")
            for (ax, ay), (bx, by) in zip(cells, cells[1:]):
                if abs(ax - bx) + abs(ay - by) != 1:
                    raise ScenarioError(
                        f"intruder {intr.intruder_id!r} path cells ({ax},{ay})->({bx},{by}) not 4-adjacent"
                    )
        for x, y in cells:
            if not self.in_bounds(x, y):
                raise ScenarioError(f"intruder {intr.intruder_id!r} cell ({x},{y}) out of bounds")
            if self.cell_at(x, y) == OBSTACLE:
                raise ScenarioError(f"intruder {intr.intruder_id!r} cell ({x},{y}) is an obstacle")

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def cell_at(self, x: int, y: int) -> int:
        return self.cells[y * self.width + x]

    def is_walkable(self, x: int, y: int) -> bool:
        return self.in_bounds(x, y) and self.cell_at(x, y) == EMPTY

    def burning_cells(self) -> list[tuple[int, int]]:
        return [f.cell for f in self.fires if f.ignition_tick <= self.tick]

    def step(self) -> None:
        """Advance the simulation one tick: intruders move, fires ignite on schedule."""
        self.tick += 1
        for intr in self.intruders:
            if not intr.active_at(self.tick):
                intr.pos = None
                continue
            if intr.pos is None:
                # First active tick: appear at the script start.
                intr.pos = intr.start if intr.random_walk else intr.path[0]
                intr._path_i = 0
            elif intr.random_walk:
                x, y = intr.pos
                options = [
                    (x + dx, y + dy)
                    for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0))
                    if self.is_walkable(x + dx, y + dy)
                ]
                if options:
                    intr.pos = self._rng.choice(options)
            else:
                intr._path_i = min(intr._path_i + 1, len(intr.path) - 1)
                intr.pos = intr.path[intr._path_i]

    def state_digest(self) -> str:
        """SHA-256 over the canonical world state; equal digests mean equal states."""
        h = hashlib.sha256()
        h.update(json.dumps({
            "width": self.width,
            "height": self.height,
            "cells": self.cells.hex(),
            "tick": self.tick,
            "seed": self.rng_seed,
            "fires": sorted((f.cell, f.ignition_tick) for f in self.fires),
            "intruders": [(i.intruder_id, i.pos, i._path_i) for i in self.intruders],
        }, sort_keys=True, default=list).encode()).hexdigest()
        return h.hexdigest()


def step_world(world: WorldGrid) -> WorldGrid:
    world.step()
    return world


def apply_move(world: WorldGrid, pose: RobotPose, direction: MoveDirection) -> RobotPose | _Blocked:
    """One movement step. Turns always succeed; translations need a walkable target."""
    if direction == MoveDirection.TURN_LEFT:
        return RobotPose(pose.x, pose.y, _TURN_LEFT[pose.heading])
    if direction == MoveDirection.TURN_RIGHT:
        return RobotPose(pose.x, pose.y, _TURN_RIGHT[pose.heading])
    dx, dy = _HEADING_VECTORS[pose.heading]
    if direction == MoveDirection.BACKWARD:
        dx, dy = -dx, -dy
    nx, ny = pose.x + dx, pose.y + dy
    if not world.is_walkable(nx, ny):
        return BLOCKED
    return RobotPose(nx, ny, pose.heading)


def _proximity(world: WorldGrid, x: int, y: int, dx: int, dy: int) -> int:
    """Free cells along (dx,dy) before the first obstacle or the world edge."""
    free = 0
    while free < PROXIMITY_MAX_RANGE:
        x, y = x + dx, y + dy
        if not world.is_walkable(x, y):
            break
        free += 1
    return free


def read_sensors(world: WorldGrid, pose: RobotPose) -> SensorReading:
    smoke = AMBIENT_SMOKE_PPM
    temp = AMBIENT_TEMPERATURE_C
    for fx, fy in world.burning_cells():
        d = max(abs(fx - pose.x), abs(fy - pose.y))
        smoke += FIRE_SMOKE_PPM / (1 + d)
        temp += FIRE_TEMPERATURE_C / (1 + d)
    dx, dy = _HEADING_VECTORS[pose.heading]
    return SensorReading(
        smoke_ppm=smoke,
        temperature_c=temp,
        proximity_front=_proximity(world, pose.x, pose.y, dx, dy),
        proximity_rear=_proximity(world, pose.x, pose.y, -dx, -dy),
        tick=world.tick,
    )


# View geometry: the robot sits at view cell (16, 31) looking "up"; right in
# the view is the heading rotated 90 degrees clockwise on screen.
_VIEW_RIGHT = {Heading.N: (1, 0), Heading.E: (0, 1), Heading.S: (-1, 0), Heading.W: (0, -1)}


def render_frame(world: WorldGrid, pose: RobotPose, frame_index: int = 0, timestamp_ms: int = 0) -> Frame:
    """Render the 32x32 overhead window ahead of the robot, heading-up."""
    fx, fy = _HEADING_VECTORS[pose.heading]
    rx, ry = _VIEW_RIGHT[pose.heading]
    burning = set(world.burning_cells())
    intruder_cells = {i.pos for i in world.intruders if i.pos is not None}
    pixels = bytearray(VIEW_SIZE * VIEW_SIZE)
    i = 0
    for vy in range(VIEW_SIZE):
        ahead = VIEW_SIZE - 1 - vy
        for vx in range(VIEW_SIZE):
            side = vx - VIEW_SIZE // 2
            wx = pose.x + fx * ahead + rx * side
            wy = pose.y + fy * ahead + ry * side
            if not world.in_bounds(wx, wy):
                px = PX_OUT_OF_WORLD
            elif (wx, wy) in intruder_cells:
                px = PX_INTRUDER
            elif (wx, wy) in burning:
                px = PX_BURNING
            elif world.cell_at(wx, wy) == OBSTACLE:
                px = PX_OBSTACLE
            else:
                px = PX_EMPTY
            pixels[i] = px
            i += 1
    return Frame(
        width=VIEW_SIZE,
        height=VIEW_SIZE,
        pixels=bytes(pixels),
        frame_index=frame_index,
        timestamp_ms=timestamp_ms,
    )


_SCENARIO_KEYS = {"width", "height", "seed", "robot", "obstacles", "intruders", "fires"}
_ROBOT_KEYS = {"x", "y", "heading"}
_INTRUDER_KEYS = {"id", "path", "active_from", "active_until"}
_FIRE_KEYS = {"cell", "ignition_tick"}


def _require_int(obj: dict, key: str, where: str) -> int:
    val = obj.get(key)
    if not isinstance(val, int) or isinstance(val, bool):
        raise ScenarioError(f"{where}.{key}: expected integer, got {val!r}")
    return val


def _cell(value, where: str) -> tuple[int, int]:
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    ):
        raise ScenarioError(f"{where}: expected [x, y] integer pair, got {value!r}")
    return (value[0], value[1])


def load_scenario(text: str) -> tuple[WorldGrid, RobotPose]:
    """Parse a scenario file into a fresh world plus the robot start pose.

    Errors name the offending JSON element, e.g. ``intruders[0].path[1]``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario root must be a JSON object")
    unknown = set(doc) - _SCENARIO_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")

    width = _require_int(doc, "width", "scenario")
    height = _require_int(doc, "height", "scenario")
    seed = _require_int(doc, "seed", "scenario") if "seed" in doc else 0

    robot = doc.get("robot")
    if not isinstance(robot, dict):
        raise ScenarioError("scenario.robot: expected object with x, y, heading")
    if set(robot) - _ROBOT_KEYS:
        raise ScenarioError(f"scenario.robot: unknown keys {sorted(set(robot) - _ROBOT_KEYS)}")
    try:
        heading = Heading(robot.get("heading"))
    except ValueError:
        raise ScenarioError(f"scenario.robot.heading: expected one of N/E/S/W, got {robot.get('heading')!r}")
    pose = RobotPose(_require_int(robot, "x", "scenario.robot"), _require_int(robot, "y", "scenario.robot"), heading)

    obstacles = []
    for i, item in enumerate(doc.get("obstacles", [])):
        obstacles.append(_cell(item, f"scenario.obstacles[{i}]"))

    intruders = []
    for i, item in enumerate(doc.get("intruders", [])):
        where = f"scenario.intruders[{i}]"
        if not isinstance(item, dict):
            raise ScenarioError(f"{where}: expected object")
        if set(item) - _INTRUDER_KEYS:
            raise ScenarioError(f"{where}: unknown keys {sorted(set(item) - _INTRUDER_KEYS)}")
        ident = item.get("id")
        if not isinstance(ident, str) or not ident:
            raise ScenarioError(f"{where}.id: expected non-empty string")
        raw_path = item.get("path")
        if not isinstance(raw_path, list) or not raw_path:
            raise ScenarioError(f"{where}.path: expected non-empty list of cells")
        path = [_cell(c, f"{where}.path[{j}]") for j, c in enumerate(raw_path)]
        for j, ((ax, ay), (bx, by)) in enumerate(zip(path, path[1:])):
            if abs(ax - bx) + abs(ay - by) != 1:
                raise ScenarioError(f"{where}.path[{j + 1}]: cell ({bx},{by}) not 4-adjacent to ({ax},{ay})")
        intruders.append(
            Intruder(
                intruder_id=ident,
                path=path,
                active_from=_require_int(item, "active_from", where),
                active_until=_require_int(item, "active_until", where),
            )
        )

    fires = []
    for i, item in enumerate(doc.get("fires", [])):
        where = f"scenario.fires[{i}]"
        if not isinstance(item, dict):
            raise ScenarioError(f"{where}: expected object")
        if set(item) - _FIRE_KEYS:
            raise ScenarioError(f"{where}: unknown keys {sorted(set(item) - _FIRE_KEYS)}")
        fires.append(Fire(cell=_cell(item.get("cell"), f"{where}.cell"), ignition_tick=_require_int(item, "ignition_tick", where)))

    world = WorldGrid(width, height, seed=seed, obstacles=obstacles, intruders=intruders, fires=fires)
    if not world.in_bounds(pose.x, pose.y):
        raise ScenarioError(f"scenario.robot: start ({pose.x},{pose.y}) out of bounds")
    if world.cell_at(pose.x, pose.y) == OBSTACLE:
        raise ScenarioError(f"scenario.robot: start ({pose.x},{pose.y}) is an obstacle")
    return world, pose
