"""Couples enhancement, the fixation policy and the classifier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import convnet
from ..image_core import RgbImage
from ..retinex import EnhanceConfig, enhance
from .boxes import BoundingBox, best_matches, iou
from .env import RLConfig, rollout_actions
from .qlearn import Policy, greedy_actions, replay
from .scenes import Instance, Scene


@dataclass(frozen=True)
class TrainingMatrix:
    """One pooled feature row per enhanced image."""

    rows: np.ndarray

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    class_id: int
    score: float


@dataclass(frozen=True)
class Recognition:
    detections: list[Detection]
    # only available when ground truth is supplied
    episode_quality: float | None = None


def to_network_input(pixels: np.ndarray) -> np.ndarray:
    """``(H, W, 3)`` image -> ``(3, H, W)`` tensor standardised per sample."""
    x = np.transpose(np.asarray(pixels, dtype=np.float64), (2, 0, 1))
    return (x - x.mean()) / (x.std() + 1e-6)


def crop_resize(pixels: np.ndarray, box: BoundingBox, size: int) -> np.ndarray:
    """Nearest-neighbour resample of ``box`` to ``size x size``."""
    idx = np.arange(size)
    ys = box.y + np.minimum((idx * box.h + box.h // 2) // size, box.h - 1)
    xs = box.x + np.minimum((idx * box.w + box.w // 2) // size, box.w - 1)
    return pixels[np.ix_(ys, xs)]


def crop_input(pixels: np.ndarray, box: BoundingBox, net: convnet.Net) -> np.ndarray:
    _, h, w = net.spec.input_shape
    if h != w:
        raise ValueError("square network input expected")
    return to_network_input(crop_resize(pixels, box, h))


def build_training_matrix(
    images: Sequence[RgbImage], net: convnet.Net, enhance_cfg: EnhanceConfig, fast: bool = True
) -> TrainingMatrix:
    rows = []
    for img in images:
        enhanced = enhance(img, enhance_cfg, fast)
        rows.append(convnet.features(net, to_network_input(enhanced.pixels)))
    if not rows:
        return TrainingMatrix(np.zeros((0, 0)))
    widths = {r.shape for r in rows}
    if len(widths) != 1:
        raise ValueError(f"feature widths differ across images: {sorted(widths)}")
    return TrainingMatrix(np.stack(rows))


def proposal_boxes(box: BoundingBox, width: int, height: int, rng: np.random.Generator, count: int,
                   min_iou: float = 0.5) -> list[BoundingBox]:
    """Random boxes overlapping ``box`` with IoU >= ``min_iou``.

    These stand in for region proposals when labelling classifier training
    crops, as detectors label proposals by their matched instance.
    """
    out = []
    tries = 0
    while len(out) < count and tries < 50 * count:
        tries += 1
        w = int(round(box.w * rng.uniform(0.7, 1.4)))
        h = int(round(box.h * rng.uniform(0.7, 1.4)))
        w, h = max(1, min(w, width)), max(1, min(h, height))
        cx = box.x + box.w / 2 + rng.uniform(-0.25, 0.25) * box.w
        cy = box.y + box.h / 2 + rng.uniform(-0.25, 0.25) * box.h
        x = int(np.clip(round(cx - w / 2), 0, width - w))
        y = int(np.clip(round(cy - h / 2), 0, height - h))
        cand = BoundingBox(x, y, w, h)
        if iou(cand, box) >= min_iou:
            out.append(cand)
    return out


def crop_dataset(
    scenes: Sequence[Scene],
    net: convnet.Net,
    enhance_cfg: EnhanceConfig,
    fast: bool = True,
    proposals_per_instance: int = 0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Classifier inputs and labels from ground-truth (plus proposal) crops of enhanced scenes."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for scene in scenes:
        pixels = enhance(scene.image, enhance_cfg, fast).pixels
        w, h = scene.image.width, scene.image.height
        for inst in scene.instances:
            boxes = [inst.box] + proposal_boxes(inst.box, w, h, rng, proposals_per_instance)
            for box in boxes:
                xs.append(crop_input(pixels, box, net))
                ys.append(inst.class_id)
    c, hh, ww = net.spec.input_shape
    if not xs:
        return np.zeros((0, c, hh, ww)), np.zeros(0, dtype=np.int64)
    return np.stack(xs), np.asarray(ys, dtype=np.int64)


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    loss: float
    accuracy: float


def train_classifier(
    net: convnet.Net,
    inputs: np.ndarray,
    labels: np.ndarray,
    epochs: int = 30,
    lr: float = 0.05,
    batch_size: int = 16,
    seed: int = 42,
    final_lr_frac: float = 0.1,
) -> list[EpochLog]:
    """Mini-batch SGD over shuffled crops; mutates ``net`` in place.

    The step size decays linearly from ``lr`` to ``lr * final_lr_frac``.
    """
    rng = np.random.default_rng(seed)
    log = []
    n = len(labels)
    for epoch in range(epochs):
        frac = epoch / (epochs - 1) if epochs > 1 else 0.0
        step = lr * (1.0 - (1.0 - final_lr_frac) * frac)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            losses.append(convnet.backward_and_step(net, inputs[idx], labels[idx], step) * len(idx))
        log.append(EpochLog(epoch, float(sum(losses) / n), classifier_accuracy(net, inputs, labels)))
    return log


def classifier_accuracy(net: convnet.Net, inputs: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    pred = np.argmax(convnet.forward(net, inputs), axis=1)
    return float(np.mean(pred == labels))


def classify_boxes(pixels: np.ndarray, boxes: Sequence[BoundingBox], net: convnet.Net) -> list[Detection]:
    dets = []
    for box in boxes:
        probs = convnet.forward(net, crop_input(pixels, box, net))
        k = int(np.argmax(probs))
        dets.append(Detection(box, k, float(probs[k])))
    # stable sort keeps emission order among equal scores
    return sorted(dets, key=lambda d: -d.score)


def episode_quality(actions: Sequence[int], scene: Scene, cfg: RLConfig) -> float:
    """Summed episode reward scaled by the normalised coverage gain of the episode."""
    state, rewards = rollout_actions(actions, scene, cfg)
    gain = state.prev_iou_sum / scene.rho
    return float(sum(rewards) * gain)


def detect_enhanced(
    enhanced: RgbImage,
    policy: Policy,
    net: convnet.Net,
    rl_cfg: RLConfig,
    ground_truth: Sequence[Instance] | None = None,
) -> Recognition:
    """Greedy policy rollout and RoI classification on an already enhanced image."""
    w, h = enhanced.width, enhanced.height
    actions = greedy_actions(policy, w, h, rl_cfg)
    emitted = replay(actions, w, h, rl_cfg)
    dets = classify_boxes(enhanced.pixels, emitted, net)
    quality = None
    if ground_truth:
        quality = episode_quality(actions, Scene(enhanced, tuple(ground_truth)), rl_cfg)
    return Recognition(dets, quality)


def recognize(
    image: RgbImage,
    policy: Policy,
    net: convnet.Net,
    enhance_cfg: EnhanceConfig,
    rl_cfg: RLConfig,
    fast: bool = True,
    ground_truth: Sequence[Instance] | None = None,
) -> Recognition:
    """Enhance, roll out the greedy policy, classify every emitted RoI.

    Detections come back sorted by classifier confidence, highest first.
    ``episode_quality`` is filled in only when ground truth is given.
    """
    return detect_enhanced(enhance(image, enhance_cfg, fast), policy, net, rl_cfg, ground_truth)


def matched_class_accuracy(dets: Sequence[Detection], scene: Scene, min_iou: float = 0.5) -> tuple[int, int]:
    """(correct, counted) over detections greedily matched to an instance at IoU >= ``min_iou``."""
    boxes = [d.box for d in dets]
    correct = counted = 0
    for i, j, v in best_matches(boxes, scene.boxes):
        if v >= min_iou:
            counted += 1
            correct += int(dets[i].class_id == scene.instances[j].class_id)
    return correct, counted
