"""Deterministic 2D rigid-body free-fall world.

The world is the unit square with y pointing up and gravity acting along -y.
Ground is the half-plane y <= 0 and is always present; extra axis-aligned
rectangles (walls, ceiling) can be added per scene. Objects are circles and
axis-aligned squares that translate without rotating. Integration is
semi-implicit Euler with a fixed substep, collisions are impulse-based with
pairwise restitution min(e1, e2), and penetrations are clamped.

Everything in this module is a pure function of its inputs: identical inputs
give bit-identical clips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels

CIRCLE = "circle"
BOX = "box"

# Contacts slower than REST_FACTOR * g * dt / (1 - e^2) are treated as resting
# (normal velocity zeroed instead of reflected). Below that speed a reflected
# bounce plus the penetration clamp would inject energy; above it the
# restitution loss dominates and total energy cannot increase. For e == 1 the
# threshold is zero and slow resting contacts may creep upward by O(g^2 dt^2)
# per step; corpus scenes keep e <= 0.9 where the guarantee is exact.
REST_FACTOR = 2.0


@dataclass(frozen=True)
class RigidObject:
    shape: str  # CIRCLE or BOX
    position: tuple[float, float]
    velocity: tuple[float, float]
    size: float  # radius, or half-extent for boxes
    restitution: float
    mass: float
    appearance_id: int

    def __post_init__(self):
        if self.shape not in (CIRCLE, BOX):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.size <= 0:
            raise ValueError("size must be > 0")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must be in [0, 1]")
        if self.mass <= 0:
            raise ValueError("mass must be > 0")


@dataclass(frozen=True)
class Aabb:
    """Static axis-aligned rectangle (obstacle)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float


GROUND = Aabb(-10.0, -10.0, 11.0, 0.0)


@dataclass(frozen=True)
class Scene:
    objects: tuple[RigidObject, ...]
    gravity: float = 2.0
    static_obstacles: tuple[Aabb, ...] = ()
    background_id: int = 0
    category_label: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "static_obstacles", tuple(self.static_obstacles))
        if self.gravity < 0:
            raise ValueError("gravity must be >= 0")

    def obstacles_with_ground(self) -> tuple[Aabb, ...]:
        return (GROUND,) + self.static_obstacles

    def validate(self) -> None:
        """Check the at-rest and initial-placement invariants."""
        if not self.objects:
            return
        if not any(o.velocity == (0.0, 0.0) for o in self.objects):
            raise ValueError("at least one object must start at rest")
        for o in self.objects:
            x, y = o.position
            if not (o.size <= x <= 1 - o.size and o.size <= y <= 1 - o.size):
                raise ValueError("object must start fully inside the unit square")
        for i, a in enumerate(self.objects):
            for b in self.objects[i + 1 :]:
                if _objects_overlap(a, b):
                    raise ValueError("objects must not overlap at t=0")


@dataclass(frozen=True)
class SimState:
    time: float
    objects: tuple[RigidObject, ...]

    @staticmethod
    def initial(scene: Scene) -> "SimState":
        return SimState(time=0.0, objects=tuple(scene.objects))


@dataclass
class VideoClip:
    """Rendered clip plus exact ground truth.

    frames: (T,H,W,C) float32 in [0,1]; masks: (T,N,H,W) bool, un-occluded
    per-object supports; trajectories: (T,N,2) float32 object centers in
    world coordinates.
    """

    frames: np.ndarray
    masks: np.ndarray
    trajectories: np.ndarray
    fps: float
    scene: Scene = field(repr=False)


# ---------------------------------------------------------------------------
# appearance palette
# ---------------------------------------------------------------------------

N_APPEARANCES = 12
N_BACKGROUNDS = 5


def appearance_intensity(appearance_id: int) -> float:
    """Gray level for an object; kept >= 0.25 away from any background level."""
    return 0.45 + 0.05 * (appearance_id % N_APPEARANCES)


def background_intensity(background_id: int) -> float:
    return 0.05 * (background_id % N_BACKGROUNDS)


# ---------------------------------------------------------------------------
# collision helpers
# ---------------------------------------------------------------------------


def _objects_overlap(a: RigidObject, b: RigidObject) -> bool:
    contact = _object_pair_contact(
        a.shape, a.position, a.size, b.shape, b.position, b.size
    )
    return contact is not None


def _object_pair_contact(shape_a, pos_a, size_a, shape_b, pos_b, size_b):
    """Return (normal pointing a->b, penetration depth) or None."""
    ax, ay = pos_a
    bx, by = pos_b
    if shape_a == CIRCLE and shape_b == CIRCLE:
        dx, dy = bx - ax, by - ay
        d = math.hypot(dx, dy)
        pen = size_a + size_b - d
        if pen <= 0:
            return None
        n = (dx / d, dy / d) if d > 0 else (0.0, 1.0)
        return n, pen
    if shape_a == BOX and shape_b == BOX:
        ox = size_a + size_b - abs(bx - ax)
        oy = size_a + size_b - abs(by - ay)
        if ox <= 0 or oy <= 0:
            return None
        if ox < oy:
            return (math.copysign(1.0, bx - ax), 0.0), ox
        return (0.0, math.copysign(1.0, by - ay)), oy
    if shape_a == BOX and shape_b == CIRCLE:
        hit = _object_pair_contact(shape_b, pos_b, size_b, shape_a, pos_a, size_a)
        if hit is None:
            return None
        (nx, ny), pen = hit
        return (-nx, -ny), pen
    # circle (a) vs box (b): closest point on the box to the circle center
    cx = min(max(ax, bx - size_b), bx + size_b)
    cy = min(max(ay, by - size_b), by + size_b)
    dx, dy = ax - cx, ay - cy
    d = math.hypot(dx, dy)
    if d > 0:
        pen = size_a - d
        if pen <= 0:
            return None
        return (-dx / d, -dy / d), pen
    # circle center inside the box: push out along the shallower axis
    ox = size_b - abs(ax - bx)
    oy = size_b - abs(ay - by)
    if ox < oy:
        return (math.copysign(1.0, bx - ax), 0.0), size_a + ox
    return (0.0, math.copysign(1.0, by - ay)), size_a + oy


def _obstacle_contact(obj_shape, pos, size, box: Aabb):
    """Return (outward normal on the object, penetration) or None."""
    x, y = pos
    if obj_shape == CIRCLE:
        cx = min(max(x, box.x_min), box.x_max)
        cy = min(max(y, box.y_min), box.y_max)
        dx, dy = x - cx, y - cy
        d = math.hypot(dx, dy)
        if d > 0:
            pen = size - d
            if pen <= 0:
                return None
            return (dx / d, dy / d), pen
        # center inside the obstacle: exit along the shallowest face
        exits = [
            ((-1.0, 0.0), x - box.x_min),
            ((1.0, 0.0), box.x_max - x),
            ((0.0, -1.0), y - box.y_min),
            ((0.0, 1.0), box.y_max - y),
        ]
        n, depth = min(exits, key=lambda e: e[1])
        return n, size + depth
    # axis-aligned box object vs AABB obstacle
    ox = min(x + size, box.x_max) - max(x - size, box.x_min)
    oy = min(y + size, box.y_max) - max(y - size, box.y_min)
    if ox <= 0 or oy <= 0:
        return None
    if ox < oy:
        n = (1.0, 0.0) if x > (box.x_min + box.x_max) / 2 else (-1.0, 0.0)
        return n, ox
    n = (0.0, 1.0) if y > (box.y_min + box.y_max) / 2 else (0.0, -1.0)
    return n, oy


def _rest_threshold(restitution: float, gravity: float, dt: float) -> float:
    if restitution >= 1.0:
        return 0.0
    return REST_FACTOR * gravity * dt / (1.0 - restitution * restitution)


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


def step(state: SimState, scene: Scene, dt: float) -> SimState:
    """Advance one substep: gravity, translation, then collision resolution."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    g = scene.gravity
    n = len(state.objects)
    pos = [list(o.position) for o in state.objects]
    vel = [list(o.velocity) for o in state.objects]

    for i, o in enumerate(state.objects):
        vel[i][1] = vel[i][1] - g * dt
        pos[i][0] = pos[i][0] + vel[i][0] * dt
        pos[i][1] = pos[i][1] + vel[i][1] * dt

    obstacles = scene.obstacles_with_ground()
    for i, o in enumerate(state.objects):
        for box in obstacles:
            hit = _obstacle_contact(o.shape, tuple(pos[i]), o.size, box)
            if hit is None:
                continue
            (nx, ny), pen = hit
            v_n = vel[i][0] * nx + vel[i][1] * ny
            if v_n < 0:
                scale = (
                    -o.restitution
                    if -v_n > _rest_threshold(o.restitution, g, dt)
                    else 0.0
                )
                vel[i][0] += (scale * v_n - v_n) * nx
                vel[i][1] += (scale * v_n - v_n) * ny
            pos[i][0] += nx * pen
            pos[i][1] += ny * pen

    for i in range(n):
        for j in range(i + 1, n):
            a, b = state.objects[i], state.objects[j]
            hit = _object_pair_contact(
                a.shape, tuple(pos[i]), a.size, b.shape, tuple(pos[j]), b.size
            )
            if hit is None:
                continue
            (nx, ny), pen = hit  # normal points i -> j
            rel = (vel[j][0] - vel[i][0]) * nx + (vel[j][1] - vel[i][1]) * ny
            if rel < 0:
                e = min(a.restitution, b.restitution)
                if -rel <= _rest_threshold(e, g, dt):
                    e = 0.0
                inv_m = 1.0 / a.mass + 1.0 / b.mass
                impulse = -(1.0 + e) * rel / inv_m
                vel[i][0] -= impulse * nx / a.mass
                vel[i][1] -= impulse * ny / a.mass
                vel[j][0] += impulse * nx / b.mass
                vel[j][1] += impulse * ny / b.mass
            # split the positional correction by inverse mass
            inv_m = 1.0 / a.mass + 1.0 / b.mass
            share_i = (1.0 / a.mass) / inv_m
            share_j = (1.0 / b.mass) / inv_m
            pos[i][0] -= nx * pen * share_i
            pos[i][1] -= ny * pen * share_i
            pos[j][0] += nx * pen * share_j
            pos[j][1] += ny * pen * share_j

    new_objects = tuple(
        replace(o, position=(pos[i][0], pos[i][1]), velocity=(vel[i][0], vel[i][1]))
        for i, o in enumerate(state.objects)
    )
    return SimState(time=state.time + dt, objects=new_objects)


def total_energy(state: SimState, scene: Scene) -> float:
    """Kinetic plus gravitational potential energy of all objects."""
    e = 0.0
    for o in state.objects:
        vx, vy = o.velocity
        e += 0.5 * o.mass * (vx * vx + vy * vy) + o.mass * scene.gravity * o.position[1]
    return e


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def render(
    state: SimState, scene: Scene, height: int, width: int
) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize one frame: (H,W,1) float32 frame and (N,H,W) bool masks.

    A pixel belongs to an object iff its center maps inside the shape. The
    frame paints objects in list order (later objects occlude earlier ones);
    masks keep the full un-occluded support of every object.
    """
    if height < 8 or width < 8:
        raise ValueError("height and width must be >= 8")
    frame = np.full(
        (height, width), background_intensity(scene.background_id), dtype=np.float32
    )
    masks = np.zeros((len(state.objects), height, width), dtype=bool)
    for i, o in enumerate(state.objects):
        if o.shape == CIRCLE:
            m = kernels.rasterize_circle(height, width, o.position[0], o.position[1], o.size)
        else:
            m = kernels.rasterize_box(height, width, o.position[0], o.position[1], o.size)
        masks[i] = m
        frame[m] = appearance_intensity(o.appearance_id)
    return frame[:, :, None], masks


def simulate(
    scene: Scene,
    n_frames: int,
    fps: float,
    substeps: int = 8,
    height: int = 64,
    width: int = 64,
) -> VideoClip:
    """Roll the scene out and rasterize it at every frame boundary."""
    if n_frames < 2:
        raise ValueError("n_frames must be >= 2")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    dt = 1.0 / (fps * substeps)
    n_obj = len(scene.objects)
    frames = np.empty((n_frames, height, width, 1), dtype=np.float32)
    masks = np.empty((n_frames, n_obj, height, width), dtype=bool)
    trajectories = np.empty((n_frames, n_obj, 2), dtype=np.float32)

    state = SimState.initial(scene)
    for k in range(n_frames):
        if k > 0:
            for _ in range(substeps):
                state = step(state, scene, dt)
        frame, frame_masks = render(state, scene, height, width)
        frames[k] = frame
        masks[k] = frame_masks
        for i, o in enumerate(state.objects):
            trajectories[k, i] = o.position
    return VideoClip(
        frames=frames, masks=masks, trajectories=trajectories, fps=fps, scene=scene
    )


def mask_centroid_world(mask: np.ndarray) -> tuple[float, float] | None:
    """Area centroid of a boolean (H,W) mask in world coordinates, or None if empty."""
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return None
    h, w = mask.shape
    x = float((cols + 0.5).mean() / w)
    y = float(1.0 - (rows + 0.5).mean() / h)
    return x, y
