"""Tabular epsilon-greedy Q-learning over the fixation environment."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .boxes import BoundingBox, match_iou_sum
from .env import (
    ACTIONS,
    RLConfig,
    advance,
    env_step,
    initial_state,
    state_key,
)
from .scenes import Scene

MAGIC = b"LFPOL1"

StateKey = tuple[int, int, int, int]


@dataclass
class Policy:
    """Action values per discretised state; unseen states read as all zeros."""

    table: dict[StateKey, np.ndarray] = field(default_factory=dict)

    def values(self, key: StateKey) -> np.ndarray:
        return self.table.get(key, _ZEROS)

    def slot(self, key: StateKey) -> np.ndarray:
        if key not in self.table:
            self.table[key] = np.zeros(len(ACTIONS))
        return self.table[key]

    def greedy(self, key: StateKey, rng: np.random.Generator) -> int:
        """Best action; ties (including unseen states) broken uniformly at random."""
        q = self.values(key)
        best = np.flatnonzero(q == q.max())
        return int(best[0]) if len(best) == 1 else int(rng.choice(best))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Policy) or self.table.keys() != other.table.keys():
            return False
        return all(np.array_equal(v, other.table[k]) for k, v in self.table.items())


_ZEROS = np.zeros(len(ACTIONS))
_ZEROS.flags.writeable = False


@dataclass(frozen=True)
class EpisodeLog:
    episode: int
    ret: float
    td_loss: float
    steps: int


def epsilon_at(episode: int, cfg: RLConfig) -> float:
    if cfg.episodes <= 1:
        return cfg.epsilon_end
    frac = episode / (cfg.episodes - 1)
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


def train(scenes: Sequence[Scene], cfg: RLConfig, log: list[EpisodeLog] | None = None) -> Policy:
    """Q-learning with linearly annealed exploration.

    Episodes cycle through ``scenes`` in order.  All randomness comes from one
    generator seeded with ``cfg.seed``.
    """
    if not scenes:
        raise ValueError("training needs at least one scene")
    rng = np.random.default_rng(cfg.seed)
    policy = Policy()
    n_actions = len(ACTIONS)
    for ep in range(cfg.episodes):
        scene = scenes[ep % len(scenes)]
        w, h = scene.image.width, scene.image.height
        eps = epsilon_at(ep, cfg)
        state = initial_state(w, h)
        total, sq_err, steps = 0.0, 0.0, 0
        done = False
        while not done:
            key = state_key(state, w, h, cfg.grid_n)
            if rng.random() < eps:
                action = int(rng.integers(n_actions))
            else:
                action = policy.greedy(key, rng)
            state, reward, done = env_step(state, action, scene, cfg)
            target = reward
            if not done:
                target += cfg.discount * float(policy.values(state_key(state, w, h, cfg.grid_n)).max())
            q = policy.slot(key)
            td = target - q[action]
            q[action] += cfg.learn_rate * td
            total += reward
            sq_err += td * td
            steps += 1
        if log is not None:
            log.append(EpisodeLog(ep, float(total), float(sq_err / steps), steps))
    return policy


def greedy_actions(policy: Policy, width: int, height: int, cfg: RLConfig, seed: int | None = None) -> list[int]:
    """Action sequence of a greedy episode; needs no ground truth.

    Ties are broken by a generator seeded with ``seed`` (default ``cfg.seed``),
    so the same policy always produces the same episode.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    state = initial_state(width, height)
    actions = []
    while not state.terminated:
        a = policy.greedy(state_key(state, width, height, cfg.grid_n), rng)
        actions.append(a)
        state = advance(state, a, width, height, cfg)
    return actions


def replay(actions: Sequence[int], width: int, height: int, cfg: RLConfig) -> list[BoundingBox]:
    """Boxes emitted by an action sequence."""
    state = initial_state(width, height)
    for a in actions:
        if state.terminated:
            break
        state = advance(state, a, width, height, cfg)
    return list(state.emitted)


def greedy_rollout(policy: Policy, width: int, height: int, cfg: RLConfig, seed: int | None = None) -> list[BoundingBox]:
    return replay(greedy_actions(policy, width, height, cfg, seed), width, height, cfg)


def random_rollout(width: int, height: int, cfg: RLConfig, rng: np.random.Generator) -> list[BoundingBox]:
    state = initial_state(width, height)
    while not state.terminated:
        state = advance(state, int(rng.integers(len(ACTIONS))), width, height, cfg)
    return list(state.emitted)


def coverage(emitted: Sequence[BoundingBox], scene: Scene) -> float:
    """Final matched IoU sum divided by the instance count."""
    return match_iou_sum(emitted, scene.boxes) / scene.rho


# -- checkpoint ---------------------------------------------------------------------


def encode_policy(policy: Policy) -> bytes:
    out = [MAGIC, struct.pack("<Q", len(policy.table))]
    for key in sorted(policy.table):
        out.append(struct.pack("<4i", *key))
        out.append(np.asarray(policy.table[key], dtype="<f8").tobytes())
    return b"".join(out)


def decode_policy(data: bytes) -> Policy:
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"not an LFPOL1 checkpoint (magic {data[:len(MAGIC)]!r})")
    pos = len(MAGIC)
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    record = 16 + 8 * len(ACTIONS)
    if len(data) - pos != count * record:
        raise ValueError("truncated or oversized policy checkpoint")
    table = {}
    for _ in range(count):
        key = struct.unpack_from("<4i", data, pos)
        values = np.frombuffer(data, dtype="<f8", count=len(ACTIONS), offset=pos + 16).astype(np.float64)
        table[tuple(key)] = values
        pos += record
    return Policy(table)


def save_policy(policy: Policy, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_policy(policy))


def load_policy(path) -> Policy:
    with open(path, "rb") as fh:
        return decode_policy(fh.read())
