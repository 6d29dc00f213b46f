"""Shared fixtures: the demo corpus, fitted codec, and retrieval policy
used by the policy/harness/acceptance tests. Session-scoped because
generating and tokenizing 500 demonstrations takes tens of seconds."""

from dataclasses import dataclass, replace

import numpy as np
import pytest

from actok import sim
from actok.codec import CodecConfig, CodecModel, encode_chunk, fit_codec
from actok.harness import trial_seed
from actok.policy import build_knn, expert_demo
from actok.trajectory import ChunkSpec, chunk_trajectory

DEMO_SEED = 7
EVAL_SEED = 11
N_DEMOS = 500
HORIZON = 5
ACTION_DIM = 7


@pytest.fixture(scope="session")
def single_suite():
    return [sim.make_task("single", seed=100 + i, task_id=f"single-{i:03d}")
            for i in range(10)]


@pytest.fixture(scope="session")
def demo_set(single_suite):
    demos = []
    for i in range(N_DEMOS):
        task = single_suite[i % len(single_suite)]
        demos.append(expert_demo(replace(task, seed=trial_seed(DEMO_SEED, task.task_id, i))))
    return demos


@pytest.fixture(scope="session")
def demo_chunks(demo_set):
    spec = ChunkSpec(horizon=HORIZON, action_dim=ACTION_DIM)
    return [c for ti, d in enumerate(demo_set)
            for c in chunk_trajectory(d, spec, stride=1, trajectory_id=ti)]


@pytest.fixture(scope="session")
def fitted_codec(demo_chunks):
    config = CodecConfig(spec=ChunkSpec(horizon=HORIZON, action_dim=ACTION_DIM),
                         scale=32.0)
    return fit_codec(demo_chunks, config)


@pytest.fixture(scope="session")
def knn_policy(demo_set, fitted_codec):
    model, _ = fitted_codec
    return build_knn(demo_set, model, pad_tail=True)


@dataclass
class MaxDeltaPolicy:
    """Adversarial policy: full-speed signed steps toward a fixed point,
    emitted as constant chunks through the codec."""

    codec: CodecModel
    target: tuple

    def predict(self, obs):
        gx, gy = float(obs.features[0]), float(obs.features[1])
        row = np.zeros(ACTION_DIM)
        row[0] = np.copysign(sim.DELTA_CLIP, self.target[0] - gx)
        row[1] = np.copysign(sim.DELTA_CLIP, self.target[1] - gy)
        chunk = np.repeat(row[None, :], self.codec.spec.horizon, axis=0)
        return encode_chunk(chunk, self.codec)


@pytest.fixture(scope="session")
def adversarial_codec():
    rng = np.random.default_rng(0)
    mask = np.array([1.0, 1.0, 0, 0, 0, 0, 0])
    chunks = []
    for _ in range(400):
        row = rng.choice([-sim.DELTA_CLIP, 0.0, sim.DELTA_CLIP], size=(1, ACTION_DIM)) * mask
        chunks.append(np.repeat(row, HORIZON, axis=0))
    config = CodecConfig(spec=ChunkSpec(horizon=HORIZON, action_dim=ACTION_DIM),
                         scale=32.0)
    model, _ = fit_codec(chunks, config)
    return model
