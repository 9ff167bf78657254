"""Episodic fixation environment and its reward terms."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from .boxes import BoundingBox, match_iou_sum
from .scenes import Scene

ACTIONS = ("up", "down", "left", "right", "grow", "shrink", "emit", "done")
UP, DOWN, LEFT, RIGHT, GROW, SHRINK, EMIT, DONE = range(len(ACTIONS))

SCALE_STEP = 1.5
MIN_CURSOR_PX = 8
# size tiers by cursor side relative to the shorter image side
TIER_EDGES = (0.4, 0.7)
TIERS = ("S", "M", "L")
EMIT_SATURATION = 4


@dataclass(frozen=True)
class RLConfig:
    alpha_base: float = -0.05
    max_steps: int = 20
    grid_n: int = 8
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    learn_rate: float = 0.3
    discount: float = 0.95
    episodes: int = 600
    seed: int = 42

    def __post_init__(self):
        if not self.alpha_base < 0:
            raise ValueError("alpha_base must be negative")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        if self.max_steps < 1 or self.grid_n < 1 or self.episodes < 0:
            raise ValueError("max_steps and grid_n must be positive, episodes non-negative")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not self.learn_rate > 0:
            raise ValueError("learn_rate must be positive")


@dataclass(frozen=True)
class FixationState:
    cursor: BoundingBox
    emitted: tuple[BoundingBox, ...] = ()
    step: int = 0
    prev_iou_sum: float = 0.0
    terminated: bool = False


def fixation_reward(prev_sum: float, cur_sum: float, cfg: RLConfig, rho: int) -> float:
    """Per-fixation cost plus coverage gain normalised by the instance count."""
    if rho < 1:
        raise ValueError("rho must be at least 1")
    return cfg.alpha_base + (cur_sum - prev_sum) / rho


def completion_reward(final_sum: float, rho: int) -> float:
    """Terminal reward in [-1, 0]; zero only when every instance is matched at IoU 1."""
    if rho < 1:
        raise ValueError("rho must be at least 1")
    if final_sum > rho + 1e-12 or final_sum < 0:
        raise ValueError(f"matched IoU sum {final_sum} outside [0, {rho}]")
    return (final_sum - rho) / rho


def initial_state(width: int, height: int) -> FixationState:
    side = max(MIN_CURSOR_PX, min(width, height) // 2)
    return FixationState(BoundingBox((width - side) // 2, (height - side) // 2, side, side))


def _clamp_box(cx: float, cy: float, w: int, h: int, width: int, height: int) -> BoundingBox:
    w, h = min(w, width), min(h, height)
    x = int(min(max(math.floor(cx - w / 2 + 0.5), 0), width - w))
    y = int(min(max(math.floor(cy - h / 2 + 0.5), 0), height - h))
    return BoundingBox(x, y, w, h)


def move_cursor(cursor: BoundingBox, action: int, width: int, height: int, grid_n: int) -> BoundingBox:
    """Cursor after a movement or scale action; emit/done leave it unchanged."""
    cx, cy = cursor.x + cursor.w / 2, cursor.y + cursor.h / 2
    step_x = max(1, round(width / grid_n))
    step_y = max(1, round(height / grid_n))
    if action in (UP, DOWN, LEFT, RIGHT):
        dx = {LEFT: -step_x, RIGHT: step_x}.get(action, 0)
        dy = {UP: -step_y, DOWN: step_y}.get(action, 0)
        x = min(max(cursor.x + dx, 0), width - cursor.w)
        y = min(max(cursor.y + dy, 0), height - cursor.h)
        return BoundingBox(x, y, cursor.w, cursor.h)
    if action in (GROW, SHRINK):
        f = SCALE_STEP if action == GROW else 1.0 / SCALE_STEP
        lo = min(MIN_CURSOR_PX, width, height)
        w = int(min(max(round(cursor.w * f), lo), width))
        h = int(min(max(round(cursor.h * f), lo), height))
        return _clamp_box(cx, cy, w, h, width, height)
    return cursor


def size_tier(cursor: BoundingBox, width: int, height: int) -> int:
    rel = max(cursor.w, cursor.h) / min(width, height)
    return sum(rel >= edge for edge in TIER_EDGES)


def state_key(state: FixationState, width: int, height: int, grid_n: int) -> tuple[int, int, int, int]:
    """Discretised state: (cell column, cell row, size tier, saturated emit count)."""
    c = state.cursor
    col = min(int((c.x + c.w / 2) * grid_n / width), grid_n - 1)
    row = min(int((c.y + c.h / 2) * grid_n / height), grid_n - 1)
    return (col, row, size_tier(c, width, height), min(len(state.emitted), EMIT_SATURATION))


def advance(state: FixationState, action: int, width: int, height: int, cfg: RLConfig) -> FixationState:
    """Ground-truth-free transition; rewards are left to :func:`env_step`."""
    if state.terminated:
        raise RuntimeError("episode already terminated")
    if not 0 <= action < len(ACTIONS):
        raise ValueError(f"unknown action {action}")
    emitted = state.emitted + (state.cursor,) if action == EMIT else state.emitted
    cursor = move_cursor(state.cursor, action, width, height, cfg.grid_n)
    step = state.step + 1
    return replace(state, cursor=cursor, emitted=emitted, step=step,
                   terminated=action == DONE or step >= cfg.max_steps)


def env_step(state: FixationState, action: int, scene: Scene, cfg: RLConfig) -> tuple[FixationState, float, bool]:
    if state.step >= cfg.max_steps and not state.terminated:
        raise RuntimeError("step budget exhausted")
    w, h = scene.image.width, scene.image.height
    nxt = advance(state, action, w, h, cfg)
    rho = scene.rho
    if action == DONE:
        reward = completion_reward(state.prev_iou_sum, rho)
        cur_sum = state.prev_iou_sum
    else:
        cur_sum = match_iou_sum(nxt.emitted, scene.boxes) if action == EMIT else state.prev_iou_sum
        reward = fixation_reward(state.prev_iou_sum, cur_sum, cfg, rho)
        if nxt.terminated:
            reward += completion_reward(cur_sum, rho)
    return replace(nxt, prev_iou_sum=cur_sum), reward, nxt.terminated


def return_bounds(cfg: RLConfig) -> tuple[float, float]:
    """Loose finite bounds on any episode return.

    Each step costs ``alpha_base``; coverage gains telescope to at most 1
    (normalised), and the completion term lies in [-1, 0].
    """
    return cfg.max_steps * cfg.alpha_base - 1.0, 1.0


def rollout_actions(actions: Sequence[int], scene: Scene, cfg: RLConfig) -> tuple[FixationState, list[float]]:
    state = initial_state(scene.image.width, scene.image.height)
    rewards = []
    for a in actions:
        state, r, done = env_step(state, a, scene, cfg)
        rewards.append(r)
        if done:
            break
    return state, rewards
