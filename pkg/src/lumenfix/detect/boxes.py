"""Integer pixel boxes, IoU and optimal one-to-one matching."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Box covering pixels ``x .. x+w-1`` by ``y .. y+h-1``."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValueError(f"box origin must be non-negative: {self}")
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box size must be at least 1x1: {self}")

    @property
    def area(self) -> int:
        return self.w * self.h

    def fits(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


def intersection(a: BoundingBox, b: BoundingBox) -> int:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    return max(iw, 0) * max(ih, 0)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    # inlined: this sits inside every matching and reward evaluation
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    if iw <= 0:
        return 0.0
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def best_matches(emitted: Sequence[BoundingBox], targets: Sequence[BoundingBox]) -> list[tuple[int, int, float]]:
    """One-to-one pairing that maximises the total IoU.

    Dynamic programme over subsets of the smaller side, so the cost grows as
    ``2**min(m, n)``; scenes here hold a handful of targets. Returns
    ``(emitted_index, target_index, iou)`` for every pair with IoU > 0, sorted
    by descending IoU; among equal totals the earliest-found assignment wins.
    """
    m, n = len(emitted), len(targets)
    if m == 0 or n == 0:
        return []
    table = [[iou(e, t) for t in targets] for e in emitted]
    swap = n > m
    if swap:
        table = [list(col) for col in zip(*table)]
        m, n = n, m
    # rows are the larger side, bits of `mask` mark used columns
    best = {0: (0.0, ())}
    for r in range(m):
        nxt = dict(best)
        for mask, (total, pairs) in best.items():
            for c in range(n):
                v = table[r][c]
                if v <= 0.0 or mask >> c & 1:
                    continue
                key = mask | 1 << c
                cand = total + v
                if key not in nxt or cand > nxt[key][0]:
                    nxt[key] = (cand, pairs + ((r, c, v),))
        best = nxt
    _, pairs = max(best.values(), key=lambda tp: tp[0])
    out = [(c, r, v) if swap else (r, c, v) for r, c, v in pairs]
    return sorted(out, key=lambda p: (-p[2], p[0], p[1]))


def match_iou_sum(emitted: Sequence[BoundingBox], targets: Iterable[BoundingBox]) -> float:
    return sum(v for _, _, v in best_matches(emitted, list(targets)))
