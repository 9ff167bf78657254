"""``lumenfix`` command line: enhance, synth, train, recognize, bench, metrics.

Exit codes: 0 success, 1 one or more items failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import statistics
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import convnet
from .image_core import CodecError, ImagePlane, RgbImage, encode_netpbm, load_image
from .metrics import CSV_HEADER as METRICS_HEADER
from .metrics import measure
from .retinex import EnhanceConfig, enhance
from .detect.env import RLConfig
from .detect.pipeline import crop_dataset, detect_enhanced, train_classifier
from .detect.qlearn import EpisodeLog, Policy, encode_policy, load_policy, train
from .detect.scenes import SceneSpec, load_scene, make_synthetic_scene, read_ground_truth, save_scene

log = logging.getLogger("lumenfix")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2
DEFAULT_SEED = 42
SEED_ENV = "LUMENFIX_SEED"

NET_FILE = "net.lfnet"
POLICY_FILE = "policy.lfpol"
MANIFEST = "manifest.csv"


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    epochs: int = 30
    lr: float = 0.08
    batch_size: int = 16
    proposals_per_instance: int = 6
    input_size: int = 16


@dataclass(frozen=True)
class BenchConfig:
    repeats: int = 5
    targets: int = 8


@dataclass
class RunConfig:
    seed: int = DEFAULT_SEED
    fast: bool = True
    enhance: EnhanceConfig = field(default_factory=EnhanceConfig)
    rl: RLConfig = field(default_factory=RLConfig)
    scene: SceneSpec = field(default_factory=lambda: SceneSpec(placement="centered", min_size=0.4, max_size=0.55, jitter=0.08))
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)


def _strict(cls, doc: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise UsageError(f"unknown keys in {where}: {', '.join(unknown)}")
    return cls(**doc)


def load_run_config(path: str | None, seed_flag: int | None = None, fast_flag: bool | None = None,
                    episodes: int | None = None) -> RunConfig:
    """Defaults <- JSON file <- $LUMENFIX_SEED <- command-line flags."""
    doc: dict = {}
    if path:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
    cfg = RunConfig()
    try:
        allowed = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        if "seed" in doc:
            cfg.seed = int(doc["seed"])
        if "fast" in doc:
            cfg.fast = bool(doc["fast"])
        if "enhance" in doc:
            cfg.enhance = EnhanceConfig.from_dict(doc["enhance"])
        if "rl" in doc:
            cfg.rl = _strict(RLConfig, doc["rl"], "rl")
        if "scene" in doc:
            cfg.scene = _strict(SceneSpec, doc["scene"], "scene")
        if "classifier" in doc:
            cfg.classifier = _strict(ClassifierConfig, doc["classifier"], "classifier")
        if "bench" in doc:
            cfg.bench = _strict(BenchConfig, doc["bench"], "bench")
        if os.environ.get(SEED_ENV):
            cfg.seed = int(os.environ[SEED_ENV])
        if seed_flag is not None:
            cfg.seed = seed_flag
        if fast_flag is not None:
            cfg.fast = fast_flag
        rl_over = {"seed": cfg.seed}
        if episodes is not None:
            rl_over["episodes"] = episodes
        cfg.rl = dataclasses.replace(cfg.rl, **rl_over)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc
    return cfg


# -- output helpers ---------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    """RFC-4180 CSV (minimal quoting, CRLF) written atomically."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    write_atomic(path, buf.getvalue().encode())


def write_atomic(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out_dir(path: str | None) -> Path:
    out = Path(path or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _as_rgb(img) -> RgbImage:
    if isinstance(img, ImagePlane):
        return RgbImage(np.repeat(img.pixels[..., None], 3, axis=2))
    return img


# -- commands --------------------------------------------------------------------------


def cmd_enhance(inputs: Sequence[str], cfg: RunConfig, out_dir: Path) -> int:
    rows = []
    failures = 0
    for path in inputs:
        try:
            img = _as_rgb(load_image(path))
            result = enhance(img, cfg.enhance, cfg.fast)
            target = out_dir / (Path(path).stem + ".ppm")
            write_atomic(target, encode_netpbm(result))
            rows.append(measure(img).row(str(path)))
            rows.append(measure(result).row(str(target)))
            log.info("enhanced %s -> %s", path, target)
        except (OSError, CodecError, ValueError) as exc:
            failures += 1
            print(f"lumenfix: {path}: {exc}", file=sys.stderr)
    write_csv(out_dir / "metrics.csv", METRICS_HEADER, rows)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_metrics(inputs: Sequence[str], out_dir: Path) -> int:
    rows, failures = [], 0
    for path in inputs:
        try:
            rows.append(measure(load_image(path)).row(str(path)))
        except (OSError, CodecError, ValueError) as exc:
            failures += 1
            print(f"lumenfix: {path}: {exc}", file=sys.stderr)
    write_csv(out_dir / "metrics.csv", METRICS_HEADER, rows)
    return EXIT_PARTIAL if failures else EXIT_OK


def scene_seed(seed: int, index: int) -> int:
    """Independent per-scene seed derived from the run seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def cmd_synth(n_scenes: int, cfg: RunConfig, out_dir: Path) -> int:
    if n_scenes < 0:
        raise UsageError("scene count must be non-negative")
    rows = []
    for i in range(n_scenes):
        scene = make_synthetic_scene(cfg.scene, scene_seed(cfg.seed, i))
        stem = f"scene_{i:04d}"
        image_path, json_path = save_scene(scene, out_dir, stem)
        rows.append([stem, image_path.name, json_path.name])
    write_csv(out_dir / MANIFEST, ["scene", "image", "ground_truth"], rows)
    log.info("wrote %d scenes to %s", n_scenes, out_dir)
    return EXIT_OK


def corpus_ground_truth(corpus: Path) -> list[Path]:
    """Ground-truth files listed in the manifest, or every ``*.json`` when there is none."""
    manifest = corpus / MANIFEST
    if manifest.exists():
        with open(manifest, newline="") as fh:
            paths = [corpus / row["ground_truth"] for row in csv.DictReader(fh)]
    else:
        paths = sorted(corpus.glob("*.json"))
    missing = [p for p in paths if not p.exists()]
    if missing:
        raise UsageError(f"missing ground truth: {', '.join(map(str, missing))}")
    return paths


def cmd_train(corpus: Path, cfg: RunConfig, out_dir: Path) -> int:
    gt_paths = corpus_ground_truth(corpus)
    if not gt_paths:
        raise UsageError(f"no ground truth found in {corpus}")
    scenes = [load_scene(p) for p in gt_paths]

    cc = cfg.classifier
    net = convnet.Net.init(convnet.default_spec(input_hw=cc.input_size), cfg.seed)
    inputs, labels = crop_dataset(scenes, net, cfg.enhance, cfg.fast, cc.proposals_per_instance, cfg.seed)
    epochs = train_classifier(net, inputs, labels, cc.epochs, cc.lr, cc.batch_size, cfg.seed)
    write_csv(out_dir / "classifier.csv", ["epoch", "loss", "accuracy"],
              [[e.epoch, e.loss, e.accuracy] for e in epochs])

    episodes: list[EpisodeLog] = []
    policy = train(scenes, cfg.rl, episodes)
    write_csv(out_dir / "training.csv", ["episode", "return", "loss"],
              [[e.episode, e.ret, e.td_loss] for e in episodes])

    write_atomic(out_dir / NET_FILE, convnet.encode_net(net))
    write_atomic(out_dir / POLICY_FILE, encode_policy(policy))
    log.info("trained on %d scenes: crop accuracy %.3f", len(scenes), epochs[-1].accuracy if epochs else 0.0)
    return EXIT_OK


def _load_checkpoints(net_path: str, policy_path: str) -> tuple[convnet.Net, Policy]:
    try:
        return convnet.load_net(net_path), load_policy(policy_path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load checkpoint: {exc}") from exc


DETECTION_HEADER = ["path", "x", "y", "w", "h", "class_id", "score", "episode_quality"]


def _ground_truth_for(image_path: str):
    gt = Path(image_path).with_suffix(".json")
    if not gt.exists():
        return None
    _, instances = read_ground_truth(gt)
    return instances


def cmd_recognize(inputs: Sequence[str], net: convnet.Net, policy: Policy, cfg: RunConfig, out_dir: Path) -> int:
    rows, failures = [], 0
    for path in inputs:
        try:
            img = _as_rgb(load_image(path))
            enhanced = enhance(img, cfg.enhance, cfg.fast)
            result = detect_enhanced(enhanced, policy, net, cfg.rl, _ground_truth_for(path))
            for d in result.detections:
                rows.append([str(path), *d.box.as_tuple(), d.class_id, d.score, result.episode_quality])
            log.info("%s: %d detections", path, len(result.detections))
        except (OSError, CodecError, ValueError) as exc:
            failures += 1
            print(f"lumenfix: {path}: {exc}", file=sys.stderr)
    write_csv(out_dir / "detections.csv", DETECTION_HEADER, rows)
    return EXIT_PARTIAL if failures else EXIT_OK


BENCH_HEADER = ["target_id", "method", "enhance_ms", "recognize_ms", "total_ms"]


def time_pipeline(img: RgbImage, net: convnet.Net, policy: Policy, cfg: RunConfig, fast: bool,
                  repeats: int) -> tuple[float, float, float]:
    """Median-total run of ``repeats`` timed runs after one discarded warm-up.

    Returns that run's (enhance_ms, recognize_ms, total_ms) so the parts
    always add up to no more than the total.
    """
    runs = []
    for i in range(repeats + 1):
        t0 = time.perf_counter()
        enhanced = enhance(img, cfg.enhance, fast)
        t1 = time.perf_counter()
        detect_enhanced(enhanced, policy, net, cfg.rl)
        t2 = time.perf_counter()
        if i:
            runs.append(((t1 - t0) * 1e3, (t2 - t1) * 1e3, (t2 - t0) * 1e3))
    runs.sort(key=lambda r: r[2])
    return runs[(len(runs) - 1) // 2]


def cmd_bench(corpus: Path, cfg: RunConfig, out_dir: Path, net: convnet.Net | None = None,
              policy: Policy | None = None) -> int:
    gt_paths = corpus_ground_truth(corpus)[: cfg.bench.targets]
    if not gt_paths:
        raise UsageError(f"no scenes found in {corpus}")
    net = net or convnet.Net.init(convnet.default_spec(input_hw=cfg.classifier.input_size), cfg.seed)
    policy = policy or Policy()
    rows = []
    totals: dict[str, list[float]] = {"direct": [], "fast": []}
    for target_id, gt in enumerate(gt_paths, start=1):
        img = load_scene(gt).image
        for method in ("direct", "fast"):
            e, r, t = time_pipeline(img, net, policy, cfg, method == "fast", cfg.bench.repeats)
            rows.append([target_id, method, e, r, t])
            totals[method].append(t)
            log.info("target %d %s: %.1f ms", target_id, method, t)
    write_csv(out_dir / "bench.csv", BENCH_HEADER, rows)
    direct_ms = statistics.median(totals["direct"])
    fast_ms = statistics.median(totals["fast"])
    speedup = direct_ms / fast_ms
    write_csv(out_dir / "bench_summary.csv", ["targets", "median_direct_ms", "median_fast_ms", "speedup"],
              [[len(gt_paths), direct_ms, fast_ms, speedup]])
    log.info("fast/direct speedup %.2fx", speedup)
    if not speedup > 1.0:
        print(f"lumenfix: bench gate failed, speedup {speedup:.3f} <= 1", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, help=f"overrides config and ${SEED_ENV}")
    mode = common.add_mutually_exclusive_group()
    mode.add_argument("--fast", dest="fast", action="store_true", default=None, help="bilateral grid (default)")
    mode.add_argument("--direct", dest="fast", action="store_false", help="brute-force bilateral filter")
    common.add_argument("--episodes", type=int, help="Q-learning episodes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lumenfix", description="Low-light enhancement and fixation-based target recognition.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", parents=[common], help="enhance PPM/PGM images")
    p.add_argument("inputs", nargs="*")
    p = sub.add_parser("metrics", parents=[common], help="quality metrics of images")
    p.add_argument("inputs", nargs="*")
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scene corpus")
    p.add_argument("-n", "--scenes", type=int, default=30)
    p = sub.add_parser("train", parents=[common], help="train classifier and fixation policy")
    p.add_argument("corpus")
    p = sub.add_parser("recognize", parents=[common], help="detect and classify targets")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--checkpoints", default=".", help="directory holding net.lfnet and policy.lfpol")
    p = sub.add_parser("bench", parents=[common], help="time direct vs fast pipelines")
    p.add_argument("corpus")
    p.add_argument("--checkpoints", help="optional trained checkpoints directory")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_run_config(args.config, args.seed, args.fast, args.episodes)
        out = _out_dir(args.out)
        if args.command == "enhance":
            return cmd_enhance(args.inputs, cfg, out)
        if args.command == "metrics":
            return cmd_metrics(args.inputs, out)
        if args.command == "synth":
            return cmd_synth(args.scenes, cfg, out)
        if args.command == "train":
            return cmd_train(Path(args.corpus), cfg, out)
        if args.command == "recognize":
            ckpt = Path(args.checkpoints)
            net, policy = _load_checkpoints(str(ckpt / NET_FILE), str(ckpt / POLICY_FILE))
            return cmd_recognize(args.inputs, net, policy, cfg, out)
        if args.command == "bench":
            net = policy = None
            if args.checkpoints:
                ckpt = Path(args.checkpoints)
                net, policy = _load_checkpoints(str(ckpt / NET_FILE), str(ckpt / POLICY_FILE))
            return cmd_bench(Path(args.corpus), cfg, out, net, policy)
    except UsageError as exc:
        print(f"lumenfix: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"lumenfix: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    parser.error(f"unknown command {args.command}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
