"""Token-emitting policies over featurized observations.

A policy maps an Observation (numeric feature vector + canonical
instruction key) to a token sequence that its bound codec decodes into an
(N, D) action chunk. The trainable policy here is 1-nearest-neighbour
retrieval over tokenized expert demonstrations: the simplest model that
exercises the full token path.

Feature layout (fixed slots):
  [gx, gy, gz, closed, held] +
  OBJECT_SLOTS * (x - gx, y - gy)  in object-id order +
  CONTAINER_SLOTS * (cx - gx, cy - gy, half_w, half_h)
                                   in container-id order

Object and container slots are gripper-relative: together with the
absolute gripper pose this carries exactly the same information as
absolute positions, but nearest-neighbour distances then rank states by
the geometry that determines the next action (how far the gripper is from
things), which is what lets one demonstration layout serve another.
Unused slots hold the sentinel offset PAD_OFFSET, far outside the
reachable relative range.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from actok import sim
from actok.codec import CodecModel, encode_chunk
from actok.errors import DatasetError, PolicyError
from actok.sim import Container, EnvState, SceneObject, TaskSpec
from actok.trajectory import Step, Trajectory, chunk_trajectory

POLICY_FORMAT = "knn-policy"
POLICY_VERSION = 1

OBJECT_SLOTS = 6
CONTAINER_SLOTS = 2
FEATURE_DIM = 5 + 2 * OBJECT_SLOTS + 4 * CONTAINER_SLOTS
PAD_OFFSET = 2.0  # sentinel for unused slots; relative offsets stay in [-1, 1]

_KIND_PATTERN = re.compile(
    "|".join(sorted((*sim.DEMO_OBJECT_KINDS, *sim.OOD_OBJECT_KINDS,
                     *sim.CONTAINER_KINDS), key=len, reverse=True))
)


def canonical_key(instruction: str) -> str:
    """Collapse object/container kind words to slots, so instructions that
    differ only in the named kind share a retrieval key."""
    return _KIND_PATTERN.sub("<kind>", instruction.strip().lower())


def featurize(state: EnvState) -> np.ndarray:
    feats = np.full(FEATURE_DIM, PAD_OFFSET)
    gx, gy, gz = state.gripper
    feats[0:3] = (gx, gy, gz)
    feats[3] = 1.0 if state.closed else 0.0
    feats[4] = 1.0 if state.held is not None else 0.0
    pos = 5
    for obj in sorted(state.objects, key=lambda o: o.id)[:OBJECT_SLOTS]:
        feats[pos:pos + 2] = (obj.x - gx, obj.y - gy)
        pos += 2
    pos = 5 + 2 * OBJECT_SLOTS
    for cont in sorted(state.containers, key=lambda c: c.id)[:CONTAINER_SLOTS]:
        xmin, ymin, xmax, ymax = cont.rect
        feats[pos:pos + 4] = (0.5 * (xmin + xmax) - gx, 0.5 * (ymin + ymax) - gy,
                              0.5 * (xmax - xmin), 0.5 * (ymax - ymin))
        pos += 4
    return feats


@dataclass(frozen=True)
class Observation:
    features: np.ndarray
    instruction_key: str


def make_observation(state: EnvState, task: TaskSpec) -> Observation:
    return Observation(features=featurize(state),
                       instruction_key=canonical_key(task.instruction))


class PolicyModel(Protocol):
    codec: CodecModel

    def predict(self, obs: Observation) -> list[int]: ...


@dataclass
class KnnPolicy:
    codec: CodecModel
    keys: list[str] = field(default_factory=list)
    features: np.ndarray | None = None          # (M, FEATURE_DIM)
    tokens: list[list[int]] = field(default_factory=list)
    _by_key: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def _index(self) -> dict[str, np.ndarray]:
        if not self._by_key:
            groups: dict[str, list[int]] = {}
            for i, k in enumerate(self.keys):
                groups.setdefault(k, []).append(i)
            self._by_key = {k: np.asarray(v) for k, v in groups.items()}
        return self._by_key

    def predict(self, obs: Observation) -> list[int]:
        """Tokens of the nearest stored observation under the same key.

        Distance is plain Euclidean; ties resolve to the earliest-inserted
        entry.
        """
        idx = self._index().get(obs.instruction_key)
        if idx is None:
            raise PolicyError(f"no memory for instruction key {obs.instruction_key!r}")
        diffs = self.features[idx] - obs.features
        j = idx[int(np.argmin(np.einsum("ij,ij->i", diffs, diffs)))]
        return list(self.tokens[j])


def build_knn(demos: list[Trajectory], codec: CodecModel, stride: int = 1,
              pad_tail: bool = False) -> KnnPolicy:
    """Tokenize every demo chunk and store (key, start observation, tokens).

    With pad_tail=True the trailing windows of each demo are kept (padded
    by repeating the final action), so terminal actions such as the final
    gripper release are retrievable as the head of a chunk; without it a
    receding-horizon executor can approach a goal but never finish it.
    """
    if not demos:
        raise PolicyError("cannot build a retrieval policy from zero demos")
    spec = codec.spec
    keys: list[str] = []
    feats: list[np.ndarray] = []
    toks: list[list[int]] = []
    for ti, traj in enumerate(demos):
        key = canonical_key(traj.instruction)
        for chunk in chunk_trajectory(traj, spec, stride=stride, trajectory_id=ti,
                                      pad_tail=pad_tail):
            keys.append(key)
            feats.append(np.asarray(traj.steps[chunk.start].observation, dtype=np.float64))
            toks.append(encode_chunk(chunk, codec))
    if not feats:
        raise PolicyError("no chunks could be extracted from the demos")
    return KnnPolicy(codec=codec, keys=keys, features=np.stack(feats), tokens=toks)


def save_policy(policy: KnnPolicy, path) -> None:
    payload = {
        "format": POLICY_FORMAT,
        "version": POLICY_VERSION,
        "codec_fingerprint": policy.codec.fingerprint(),
        "entries": [
            {"key": k, "features": [float(v) for v in f], "tokens": t}
            for k, f, t in zip(policy.keys, policy.features, policy.tokens)
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_policy(path, codec: CodecModel) -> KnnPolicy:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"policy file not found: {path}")
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != POLICY_FORMAT or payload.get("version") != POLICY_VERSION:
        raise DatasetError(f"{path}: not a version-{POLICY_VERSION} {POLICY_FORMAT} file")
    if payload["codec_fingerprint"] != codec.fingerprint():
        raise PolicyError(
            f"{path}: policy was built against codec {payload['codec_fingerprint'][:12]}..., "
            f"got {codec.fingerprint()[:12]}..."
        )
    entries = payload["entries"]
    return KnnPolicy(
        codec=codec,
        keys=[e["key"] for e in entries],
        features=np.asarray([e["features"] for e in entries], dtype=np.float64),
        tokens=[[int(t) for t in e["tokens"]] for e in entries],
    )


# --- scripted policies (oracle-style baselines for the harness) -------------

def state_from_features(features: np.ndarray, task: TaskSpec) -> EnvState:
    """Rebuild the environment state a feature vector describes.

    Kinds and radii come from the task roster; the held object, when the
    held flag is set, is identified by its exact coincidence with the
    gripper position (the dynamics snap held objects to the gripper).
    """
    gx, gy, gz = (float(features[0]), float(features[1]), float(features[2]))
    closed = features[3] >= 0.5
    held_flag = features[4] >= 0.5
    objects = []
    for slot, (obj_id, kind) in enumerate(sorted(task.objects)[:OBJECT_SLOTS]):
        x = float(features[5 + 2 * slot]) + gx
        y = float(features[5 + 2 * slot + 1]) + gy
        objects.append(SceneObject(id=obj_id, kind=kind, x=x, y=y))
    containers = []
    base = 5 + 2 * OBJECT_SLOTS
    for slot, (cont_id, kind) in enumerate(sorted(task.containers)[:CONTAINER_SLOTS]):
        rcx, rcy, hw, hh = (float(v) for v in features[base + 4 * slot: base + 4 * slot + 4])
        cx, cy = rcx + gx, rcy + gy
        containers.append(Container(id=cont_id, kind=kind,
                                    rect=(cx - hw, cy - hh, cx + hw, cy + hh)))
    held = None
    if held_flag:
        for obj in objects:
            if obj.x == gx and obj.y == gy:
                held = obj.id
                break
    return EnvState(gripper=(gx, gy, gz), closed=closed, held=held,
                    objects=tuple(objects), containers=tuple(containers))


@dataclass
class ScriptedChunkPolicy:
    """Expert-as-policy: rolls the scripted controller forward through the
    dynamics to fill a chunk, then emits it through the codec."""

    codec: CodecModel
    task: TaskSpec

    def predict(self, obs: Observation) -> list[int]:
        state = state_from_features(obs.features, self.task)
        rows = []
        for _ in range(self.codec.spec.horizon):
            action = sim.scripted_expert(state, self.task)
            rows.append(action)
            state = sim.step(state, action)
        return encode_chunk(np.stack(rows), self.codec)


DEMO_NOISE = 0.01        # translation jitter injected while generating demos
DEMO_GRIP_FLIP = 0.04    # per-step chance of flipping the grip command
DEMO_KICK = 0.10         # per-step chance of a full-step random displacement
DEMO_ACTION_GRID = 0.0025  # executed demo actions snap to this grid
_NOISE_FLOOR_Z = 0.2     # no vertical jitter below this height


def expert_demo(task: TaskSpec, max_steps: int = sim.STEP_LIMIT,
                noise: float = DEMO_NOISE,
                grip_flip: float = DEMO_GRIP_FLIP) -> Trajectory:
    """Roll the scripted controller to success and record the trajectory.

    Seeded exploration noise is injected into the executed (and recorded)
    actions: small gridded translation jitter plus an occasional flipped
    grip command. The memoryless controller corrects both on the next
    step, so the dataset covers off-path states, failed grasps, and
    mid-carry drops with corrective labels; that coverage is what lets a
    retrieval policy recover from its own replay drift instead of
    spiralling. Translation values snap to a fine grid, far below any
    control tolerance, to keep the symbol streams the compressor sees
    repetitive. Recorded actions are the executed ones, so replaying a
    demo through the dynamics reproduces it exactly.
    """
    rng = np.random.default_rng([task.seed, 0x0D])
    levels = np.array([-noise, -0.5 * noise, 0.0, 0.5 * noise, noise])
    kick_levels = np.array([-sim.DELTA_CLIP, 0.0, sim.DELTA_CLIP])
    state = sim.reset(task)
    steps: list[Step] = []
    while not sim.is_success(state, task) and state.steps < max_steps:
        action = sim.scripted_expert(state, task).copy()
        roll = rng.random()
        if roll < DEMO_KICK:
            # full-step displacement: puts the next state well off the
            # nominal path so the correction back is demonstrated too
            kick = rng.choice(kick_levels, size=3)
            gx, gy, gz = state.gripper
            kick[0] = np.clip(kick[0], 0.05 - gx, 0.95 - gx)
            kick[1] = np.clip(kick[1], 0.05 - gy, 0.95 - gy)
            kick[2] = np.clip(kick[2], 0.03 - gz, 0.95 - gz)
            if gz <= _NOISE_FLOOR_Z:
                # a replayed downward kick near the floor would leave the
                # workspace; only upward displacements are demonstrated there
                kick[2] = max(kick[2], 0.0)
            action[:3] = kick
        elif noise:
            jitter = rng.choice(levels, size=3)
            if state.gripper[2] <= _NOISE_FLOOR_Z:
                jitter[2] = 0.0  # keep jittered descents clear of the floor
            action[:3] = action[:3] + jitter
        if grip_flip and rng.random() < grip_flip:
            action[6] = 0.0 if action[6] >= 0.5 else 1.0
        action[:3] = np.round(action[:3] / DEMO_ACTION_GRID) * DEMO_ACTION_GRID
        steps.append(Step(observation=featurize(state), action=action))
        state = sim.step(state, action)
        if state.out_of_bounds:
            raise PolicyError(f"demo rollout left the workspace on {task.task_id}")
    if not sim.is_success(state, task):
        raise PolicyError(f"demo rollout failed {task.task_id} within {max_steps} steps")
    return Trajectory(instruction=task.instruction, embodiment="toy-arm", steps=steps)
