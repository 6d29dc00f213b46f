"""Deterministic toy tabletop manipulation environment.

The workspace is the unit cube. Objects sit on the table plane and are
addressed by 2-D centers; containers and placement zones are axis-aligned
rectangles. Dynamics are pure functions (state in, state out) with no
hidden randomness, so identical action sequences replay bit-exactly.

Actions are 7-vectors (dx, dy, dz, droll, dpitch, dyaw, grip). Rotation
deltas are carried for dimensional fidelity but inert; grip >= 0.5 means
close. Translation deltas are clipped to +/-DELTA_CLIP before integration,
and commanding a position outside the cube raises the terminal
out_of_bounds flag.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from actok.errors import SimError

SUITE_FORMAT = "task-suite"
SUITE_VERSION = 1

ACTION_DIM = 7

# --- tuning constants (one block; grasp/clip values sized so scripted
# demonstrations take a few dozen steps inside the unit cube) ---
DELTA_CLIP = 0.05        # max per-step translation per dimension
GRASP_RADIUS = 0.04      # max 2-D distance for a close action to attach
GRASP_MAX_Z = 0.1        # gripper must be at or below this to grasp
GRASP_TARGET_Z = 0.07    # scripted controller descends to here: inside the grasp
                         # window yet a full step-length above the floor
CLOSE_Z = 0.09           # controller closes below this: margin under GRASP_MAX_Z
                         # so tokenized replays with quantization drift still attach
TRAVEL_Z = 0.5           # scripted controller travels at or above this
PLACE_TOL = 0.02         # scripted controller releases within this of target
ALIGN_TOL = 0.01         # height-cone tolerance for lateral alignment
CLOSE_ALIGN = 0.02       # controller closes within this of the object: half the
                         # grasp radius, so replay drift rarely costs the grasp
STEP_LIMIT = 200         # episode step budget
START_POS = (0.5, 0.1, 1.0)
OBJECT_RADIUS = 0.03
CONTAINER_HALF = 0.09    # container rectangles are squares of this half-size

# object-kind pools; OOD kinds never appear in generated demonstrations
DEMO_OBJECT_KINDS = ("cube", "ball", "disk", "peg", "star")
OOD_OBJECT_KINDS = ("wedge", "spool", "ring")
CONTAINER_KINDS = ("tray", "bowl", "box")
ZONE_KIND = "zone"

CATEGORIES = ("single", "multi", "spatial", "distractor")


@dataclass(frozen=True)
class SceneObject:
    id: int
    kind: str
    x: float
    y: float
    radius: float = OBJECT_RADIUS


@dataclass(frozen=True)
class Container:
    id: int
    kind: str
    rect: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax

    def contains(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.rect
        return xmin <= x <= xmax and ymin <= y <= ymax

    @property
    def center(self) -> tuple[float, float]:
        xmin, ymin, xmax, ymax = self.rect
        return (0.5 * (xmin + xmax), 0.5 * (ymin + ymax))


@dataclass(frozen=True)
class EnvState:
    gripper: tuple[float, float, float]
    closed: bool
    held: int | None
    objects: tuple[SceneObject, ...]
    containers: tuple[Container, ...]
    steps: int = 0
    out_of_bounds: bool = False

    def object_by_id(self, obj_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.id == obj_id:
                return obj
        raise SimError(f"no object with id {obj_id}")

    def container_by_id(self, cont_id: int) -> Container:
        for cont in self.containers:
            if cont.id == cont_id:
                return cont
        raise SimError(f"no container with id {cont_id}")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    category: str
    instruction: str
    objects: tuple[tuple[int, str], ...]      # (id, kind) roster
    containers: tuple[tuple[int, str], ...]
    goals: tuple[tuple[int, int], ...]        # object id -> container id
    distractors: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise SimError(f"unknown task category {self.category!r}")
        obj_ids = {i for i, _ in self.objects}
        cont_ids = {i for i, _ in self.containers}
        for obj_id, cont_id in self.goals:
            if obj_id not in obj_ids or cont_id not in cont_ids:
                raise SimError(f"goal ({obj_id} -> {cont_id}) references a missing id")
        if set(self.distractors) & {g for g, _ in self.goals}:
            raise SimError("distractors must not be goal objects")


def _sample_point(rng, x_range, y_range, taken, min_sep, max_tries=200):
    for _ in range(max_tries):
        x = float(rng.uniform(*x_range))
        y = float(rng.uniform(*y_range))
        if all((x - tx) ** 2 + (y - ty) ** 2 >= min_sep ** 2 for tx, ty in taken):
            return x, y
    raise SimError("could not place scene entities without overlap")


def reset(task: TaskSpec) -> EnvState:
    """Deterministic initial layout derived from the task seed."""
    rng = np.random.default_rng(task.seed)
    cont_centers: list[tuple[float, float]] = []
    containers = []
    for cont_id, kind in sorted(task.containers):
        cx, cy = _sample_point(rng, (0.2, 0.8), (0.68, 0.78), cont_centers,
                               2.2 * CONTAINER_HALF)
        cont_centers.append((cx, cy))
        containers.append(Container(id=cont_id, kind=kind,
                                    rect=(cx - CONTAINER_HALF, cy - CONTAINER_HALF,
                                          cx + CONTAINER_HALF, cy + CONTAINER_HALF)))
    obj_points: list[tuple[float, float]] = []
    objects = []
    for obj_id, kind in sorted(task.objects):
        ox, oy = _sample_point(rng, (0.12, 0.88), (0.18, 0.45), obj_points,
                               2.5 * GRASP_RADIUS)
        obj_points.append((ox, oy))
        objects.append(SceneObject(id=obj_id, kind=kind, x=ox, y=oy))
    return EnvState(
        gripper=START_POS,
        closed=False,
        held=None,
        objects=tuple(objects),
        containers=tuple(containers),
    )


def step(state: EnvState, action) -> EnvState:
    """Advance one timestep. All misuse becomes state flags, never raises."""
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape[0] != ACTION_DIM:
        raise SimError(f"action must have {ACTION_DIM} entries, got {a.shape[0]}")
    deltas = np.clip(a[:3], -DELTA_CLIP, DELTA_CLIP)
    gx, gy, gz = state.gripper
    tx, ty, tz = gx + deltas[0], gy + deltas[1], gz + deltas[2]
    oob = state.out_of_bounds or not (0.0 <= tx <= 1.0 and 0.0 <= ty <= 1.0
                                      and 0.0 <= tz <= 1.0)
    nx = float(min(max(tx, 0.0), 1.0))
    ny = float(min(max(ty, 0.0), 1.0))
    nz = float(min(max(tz, 0.0), 1.0))

    close_cmd = bool(a[6] >= 0.5)
    held = state.held
    objects = list(state.objects)

    if held is not None:
        # held object tracks the gripper exactly
        idx = next(i for i, o in enumerate(objects) if o.id == held)
        objects[idx] = replace(objects[idx], x=nx, y=ny)

    if close_cmd and not state.closed and held is None and nz <= GRASP_MAX_Z:
        best = None
        best_d2 = GRASP_RADIUS ** 2
        for i, obj in enumerate(objects):
            d2 = (obj.x - nx) ** 2 + (obj.y - ny) ** 2
            if d2 <= best_d2 and (best is None or d2 < best_d2):
                best, best_d2 = i, d2
        if best is not None:
            held = objects[best].id
            # snap to the gripper so the tracking invariant holds exactly
            objects[best] = replace(objects[best], x=nx, y=ny)
    elif not close_cmd and state.closed and held is not None:
        held = None  # release where the gripper is now

    return EnvState(
        gripper=(nx, ny, nz),
        closed=close_cmd,
        held=held,
        objects=tuple(objects),
        containers=state.containers,
        steps=state.steps + 1,
        out_of_bounds=oob,
    )


def is_success(state: EnvState, task: TaskSpec) -> bool:
    """True iff every goal object rests inside its target region."""
    if state.out_of_bounds:
        return False
    for obj_id, cont_id in task.goals:
        if state.held == obj_id:
            return False
        obj = state.object_by_id(obj_id)
        if not state.container_by_id(cont_id).contains(obj.x, obj.y):
            return False
    return True


def _goal_done(state: EnvState, obj_id: int, cont_id: int) -> bool:
    if state.held == obj_id:
        return False
    obj = state.object_by_id(obj_id)
    return state.container_by_id(cont_id).contains(obj.x, obj.y)


def _toward(cur: float, target: float) -> float:
    return float(np.clip(target - cur, -DELTA_CLIP, DELTA_CLIP))


def _glide(cur: float, target: float) -> float:
    """Full-speed step far out, half the remaining gap inside one step.

    The geometric taper makes demonstrations visit alignment offsets at
    every scale instead of jumping the last gap in a single exact
    remainder, so nearest-neighbour replays always find a fine-correction
    example and never overshoot by more than their own noise.
    """
    d = target - cur
    if abs(d) >= DELTA_CLIP:
        return float(np.copysign(DELTA_CLIP, d))
    return 0.5 * d


def _approach_height(offset: float) -> float:
    """Target gripper height as a function of lateral offset to the goal.

    A synchronized descent cone: far away the controller cruises at
    TRAVEL_Z, then height falls one-for-one with remaining offset so the
    gripper arrives at grasp height exactly as it aligns. Making the
    correct action a pure function of relative geometry (no mode switch)
    is what lets retrieval policies recover from off-path states.
    """
    return min(TRAVEL_Z, GRASP_TARGET_Z + max(0.0, offset - CLOSE_ALIGN))


def scripted_expert(state: EnvState, task: TaskSpec) -> np.ndarray:
    """Memoryless pick-and-place controller: approach the object along a
    descent cone, close, carry while rising, release over the target.
    Pursues goals in spec order; zero action once the task predicate
    holds."""
    action = np.zeros(ACTION_DIM)
    pending = [(o, c) for o, c in task.goals if not _goal_done(state, o, c)]
    if not pending:
        return action
    obj_id, cont_id = pending[0]
    gx, gy, gz = state.gripper

    if state.held == obj_id:
        dx, dy = state.container_by_id(cont_id).center
        action[6] = 1.0
        if max(abs(gx - dx), abs(gy - dy)) <= PLACE_TOL:
            action[6] = 0.0  # release over the target
        else:
            action[0] = _glide(gx, dx)
            action[1] = _glide(gy, dy)
            if gz < TRAVEL_Z - ALIGN_TOL:
                action[2] = _toward(gz, TRAVEL_Z)
        return action

    if state.held is not None:
        return action  # wrong object somehow held: open and re-plan

    obj = state.object_by_id(obj_id)
    offset = max(abs(gx - obj.x), abs(gy - obj.y))
    if offset <= CLOSE_ALIGN:
        if gz > CLOSE_Z:
            action[2] = _toward(gz, GRASP_TARGET_Z)
        else:
            action[6] = 1.0  # close on the object
    else:
        action[0] = _glide(gx, obj.x)
        action[1] = _glide(gy, obj.y)
        action[2] = _toward(gz, _approach_height(offset))
    return action


def state_digest(state: EnvState) -> str:
    """Short stable hash of the full state, for rollout logs and replay."""
    parts = [
        ",".join(f"{v!r}" for v in state.gripper),
        str(int(state.closed)),
        str(state.held),
        ";".join(f"{o.id}:{o.x!r},{o.y!r}" for o in state.objects),
        str(state.steps),
        str(int(state.out_of_bounds)),
    ]
    return hashlib.blake2b("|".join(parts).encode(), digest_size=8).hexdigest()


# --- task construction -----------------------------------------------------

def _pick(rng, pool):
    return pool[int(rng.integers(len(pool)))]


def make_task(category: str, *, seed: int, task_id: str | None = None,
              ood: bool = False, n_distractors: int = 2) -> TaskSpec:
    """Build one task of the given category; layout is recreated from the
    seed at reset time."""
    rng = np.random.default_rng([seed, 0xA5])
    obj_pool = OOD_OBJECT_KINDS if ood else DEMO_OBJECT_KINDS
    task_id = task_id or f"{category}-{seed}"
    if category == "single":
        kind = _pick(rng, obj_pool)
        ckind = _pick(rng, CONTAINER_KINDS)
        return TaskSpec(task_id=task_id, category=category,
                        instruction=f"put the {kind} in the {ckind}",
                        objects=((0, kind),), containers=((100, ckind),),
                        goals=((0, 100),), seed=seed)
    if category == "multi":
        k1 = _pick(rng, obj_pool)
        k2 = _pick(rng, tuple(k for k in obj_pool if k != k1))
        ckind = _pick(rng, CONTAINER_KINDS)
        return TaskSpec(task_id=task_id, category=category,
                        instruction=f"put the {k1} and the {k2} in the {ckind}",
                        objects=((0, k1), (1, k2)), containers=((100, ckind),),
                        goals=((0, 100), (1, 100)), seed=seed)
    if category == "spatial":
        kind = _pick(rng, obj_pool)
        return TaskSpec(task_id=task_id, category=category,
                        instruction=f"move the {kind} to the marked zone",
                        objects=((0, kind),), containers=((100, ZONE_KIND),),
                        goals=((0, 100),), seed=seed)
    if category == "distractor":
        if n_distractors < 2:
            raise SimError("distractor tasks need at least 2 distractors")
        kind = _pick(rng, obj_pool)
        ckind = _pick(rng, CONTAINER_KINDS)
        # distractor ids precede the goal object so they occupy earlier
        # feature slots than the demonstrations had
        distractor_kinds = [_pick(rng, tuple(k for k in obj_pool if k != kind))
                            for _ in range(n_distractors)]
        objects = tuple((i, k) for i, k in enumerate(distractor_kinds))
        goal_id = n_distractors
        return TaskSpec(task_id=task_id, category=category,
                        instruction=f"put the {kind} in the {ckind}",
                        objects=objects + ((goal_id, kind),),
                        containers=((100, ckind),),
                        goals=((goal_id, 100),),
                        distractors=tuple(range(n_distractors)), seed=seed)
    raise SimError(f"unknown task category {category!r}")


def distractor_variant(task: TaskSpec, n_distractors: int = 2) -> TaskSpec:
    """Pair a single-object task with a distractor-augmented twin sharing
    its seed and instruction."""
    if task.category != "single":
        raise SimError("distractor variants are built from single tasks")
    goal_kind = task.objects[0][1]
    rng = np.random.default_rng([task.seed, 0xD1])
    pool = tuple(k for k in DEMO_OBJECT_KINDS if k != goal_kind)
    objects = tuple((i, _pick(rng, pool)) for i in range(n_distractors))
    goal_id = n_distractors
    return TaskSpec(task_id=f"{task.task_id}+distract", category="distractor",
                    instruction=task.instruction,
                    objects=objects + ((goal_id, goal_kind),),
                    containers=task.containers,
                    goals=((goal_id, task.containers[0][0]),),
                    distractors=tuple(range(n_distractors)), seed=task.seed)


def save_suite(tasks: list[TaskSpec], path) -> None:
    with open(path, "w") as fh:
        header = {"format": SUITE_FORMAT, "version": SUITE_VERSION, "tasks": len(tasks)}
        fh.write(json.dumps(header) + "\n")
        for t in tasks:
            fh.write(json.dumps({
                "task_id": t.task_id,
                "category": t.category,
                "instruction": t.instruction,
                "objects": [list(o) for o in t.objects],
                "containers": [list(c) for c in t.containers],
                "goals": [list(g) for g in t.goals],
                "distractors": list(t.distractors),
                "seed": t.seed,
            }) + "\n")


def load_suite(path) -> list[TaskSpec]:
    path = Path(path)
    if not path.exists():
        raise SimError(f"task suite not found: {path}")
    with open(path) as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln]
    if not lines:
        raise SimError(f"{path}: empty suite file")
    header = json.loads(lines[0])
    if header.get("format") != SUITE_FORMAT or header.get("version") != SUITE_VERSION:
        raise SimError(f"{path}: not a version-{SUITE_VERSION} {SUITE_FORMAT} file")
    tasks = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        tasks.append(TaskSpec(
            task_id=rec["task_id"],
            category=rec["category"],
            instruction=rec["instruction"],
            objects=tuple((int(i), str(k)) for i, k in rec["objects"]),
            containers=tuple((int(i), str(k)) for i, k in rec["containers"]),
            goals=tuple((int(o), int(c)) for o, c in rec["goals"]),
            distractors=tuple(int(d) for d in rec["distractors"]),
            seed=int(rec["seed"]),
        ))
    if len(tasks) != int(header.get("tasks", len(tasks))):
        raise SimError(f"{path}: task count does not match header")
    return tasks
