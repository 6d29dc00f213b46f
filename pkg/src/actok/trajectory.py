"""Demonstration trajectories, action chunks, and their on-disk format.

A dataset is a JSON-lines file (one trajectory record per line) plus a
sidecar manifest `<path>.manifest.json` declaring the observation length,
action dimension, record count, and format version. Floats are written
with full repr precision so save -> load round-trips bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from actok.errors import DatasetError

FORMAT_NAME = "trajectory-dataset"
FORMAT_VERSION = 1

DEFAULT_ACTION_DIM = 7  # x, y, z, roll, pitch, yaw, gripper


@dataclass
class Step:
    observation: np.ndarray
    action: np.ndarray


@dataclass
class Trajectory:
    instruction: str
    embodiment: str
    steps: list[Step] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def obs_dim(self) -> int:
        return len(self.steps[0].observation)

    @property
    def action_dim(self) -> int:
        return len(self.steps[0].action)

    def actions(self) -> np.ndarray:
        return np.stack([s.action for s in self.steps])


@dataclass(frozen=True)
class ChunkSpec:
    horizon: int
    action_dim: int = DEFAULT_ACTION_DIM

    def __post_init__(self):
        if self.horizon < 1 or self.action_dim < 1:
            raise ValueError("chunk horizon and action dimension must be >= 1")


@dataclass
class ActionChunk:
    values: np.ndarray  # (horizon, action_dim)
    trajectory_id: int = 0
    start: int = 0
    padded: bool = False

    @property
    def origin(self) -> tuple[int, int]:
        return (self.trajectory_id, self.start)


def _validate_trajectory(traj: Trajectory, obs_dim: int, action_dim: int, where: str) -> None:
    if not traj.steps:
        raise DatasetError(f"{where}: trajectory has no steps")
    for i, step in enumerate(traj.steps):
        if len(step.observation) != obs_dim:
            raise DatasetError(
                f"{where} step {i}: observation length {len(step.observation)} != declared {obs_dim}"
            )
        if len(step.action) != action_dim:
            raise DatasetError(
                f"{where} step {i}: action length {len(step.action)} != declared {action_dim}"
            )
        if not (np.all(np.isfinite(step.observation)) and np.all(np.isfinite(step.action))):
            raise DatasetError(f"{where} step {i}: non-finite entry")


def _manifest_path(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


def save_dataset(trajectories: list[Trajectory], path, obs_dim: int | None = None,
                 action_dim: int | None = None) -> None:
    """Write trajectories as JSON lines plus the sidecar manifest."""
    path = Path(path)
    if trajectories:
        obs_dim = len(trajectories[0].steps[0].observation) if obs_dim is None else obs_dim
        action_dim = len(trajectories[0].steps[0].action) if action_dim is None else action_dim
    else:
        obs_dim = 0 if obs_dim is None else obs_dim
        action_dim = 0 if action_dim is None else action_dim
    for ti, traj in enumerate(trajectories):
        _validate_trajectory(traj, obs_dim, action_dim, f"trajectory {ti}")
    with open(path, "w") as fh:
        for traj in trajectories:
            record = {
                "instruction": traj.instruction,
                "embodiment": traj.embodiment,
                "steps": [
                    {"obs": [float(v) for v in s.observation],
                     "action": [float(v) for v in s.action]}
                    for s in traj.steps
                ],
            }
            fh.write(json.dumps(record) + "\n")
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "obs_dim": obs_dim,
        "action_dim": action_dim,
        "records": len(trajectories),
    }
    with open(_manifest_path(path), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_dataset(path) -> list[Trajectory]:
    """Load and validate a trajectory dataset; ordering follows the file."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset not found: {path}")
    mpath = _manifest_path(path)
    if not mpath.exists():
        raise DatasetError(f"manifest not found: {mpath}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT_NAME:
        raise DatasetError(f"{mpath}: unexpected format {manifest.get('format')!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{mpath}: unsupported version {manifest.get('version')!r}")
    obs_dim = int(manifest["obs_dim"])
    action_dim = int(manifest["action_dim"])

    trajectories: list[Trajectory] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path} line {lineno}: invalid JSON ({exc})") from exc
            try:
                steps = [
                    Step(observation=np.asarray(s["obs"], dtype=np.float64),
                         action=np.asarray(s["action"], dtype=np.float64))
                    for s in record["steps"]
                ]
                traj = Trajectory(
                    instruction=str(record["instruction"]),
                    embodiment=str(record["embodiment"]),
                    steps=steps,
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path} line {lineno}: malformed record ({exc})") from exc
            _validate_trajectory(traj, obs_dim, action_dim, f"{path} line {lineno}")
            trajectories.append(traj)
    if len(trajectories) != int(manifest["records"]):
        raise DatasetError(
            f"{path}: {len(trajectories)} records but manifest declares {manifest['records']}"
        )
    return trajectories


def chunk_trajectory(traj: Trajectory, spec: ChunkSpec, stride: int = 1,
                     trajectory_id: int = 0, pad_tail: bool = False) -> list[ActionChunk]:
    """Slice a trajectory into (horizon, action_dim) windows.

    Windows start at 0, stride, 2*stride, ... By default windows that would
    run past the end are dropped; with pad_tail=True they are completed by
    repeating the final action and flagged as padded.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    actions = traj.actions()
    if actions.shape[1] != spec.action_dim:
        raise DatasetError(
            f"trajectory action dim {actions.shape[1]} != chunk spec {spec.action_dim}"
        )
    total = actions.shape[0]
    chunks = []
    for start in range(0, total, stride):
        end = start + spec.horizon
        if end <= total:
            window = actions[start:end]
            padded = False
        elif pad_tail:
            pad = np.repeat(actions[-1:], end - total, axis=0)
            window = np.concatenate([actions[start:], pad])
            padded = True
        else:
            break
        chunks.append(ActionChunk(values=window.copy(), trajectory_id=trajectory_id,
                                  start=start, padded=padded))
    return chunks
