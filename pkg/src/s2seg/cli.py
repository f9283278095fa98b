"""Command-line entry point: synth, project, train, infer, eval, rotate-bench, bench.

Configuration is a JSON file validated against the default schema (unknown
keys are rejected); any key can be overridden on the command line by dotted
path, e.g. ``--set optimizer.lr=5e-4``.  All commands are deterministic given
(config, seed): reruns produce identical metrics, files and checkpoints.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data as datamod
from . import serialize
from .data import CLASS_NAMES, SceneConfig, load_dataset_item, read_split, synth_dataset, synth_scan
from .errors import InvalidConfig, S2SegError
from .loss_metrics import (
    ClassWeights,
    ConfusionMatrix,
    compute_weights,
    metrics_report,
    miou_accuracy,
    softmax,
    total_loss,
)
from .nn import (
    GradientTape,
    TrainState,
    accumulate_grads,
    backward,
    default_architecture,
    forward,
    load_checkpoint,
    save_checkpoint,
    scale_grads,
    zero_grads,
)
from .projection import IGNORE, back_project, project, rotate_cloud
from .sphere import make_s2_grid

DEFAULT_CONFIG = {
    "bandwidth": 32,
    "seed": 0,
    "num_classes": 5,
    "range_norm": 80.0,
    "arch": {"widths": [16, 32, 64], "bw_factor": 0.7, "dropout": 0.2},
    "optimizer": {"name": "adam", "lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "train": {
        "epochs": 50,
        "batch_size": 4,
        "dtype": "float32",
        "stop_miou": None,
        "val_level": "point",
    },
    "data": {
        "root": None,
        "count": 200,
        "presets": ["b32_f40", "b64_f28"],
        "split_fraction": 0.8,
        "scene": {},
    },
    "out": None,
}


def _merge_validate(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        here = f"{path}.{k}" if path else k
        if k not in base:
            raise InvalidConfig(f"unknown config key {here!r}")
        if isinstance(base[k], dict) and k != "scene":
            if not isinstance(v, dict):
                raise InvalidConfig(f"config key {here!r} must be a mapping")
            out[k] = _merge_validate(base[k], v, here)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None, seed=None, bw=None, out=None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        user = json.loads(Path(path).read_text())
        cfg = _merge_validate(cfg, user)
    for item in overrides or []:
        if "=" not in item:
            raise InvalidConfig(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise InvalidConfig(f"unknown config key {key!r}")
            node = node[p]
        # scene is free-form (SceneConfig validates later); everything else is strict
        if parts[-1] not in node and parts[:-1] != ["data", "scene"]:
            raise InvalidConfig(f"unknown config key {key!r}")
        node[parts[-1]] = val
    if seed is not None:
        cfg["seed"] = seed
    if bw is not None:
        cfg["bandwidth"] = bw
    if out is not None:
        cfg["out"] = out
    return cfg


def _dtype(cfg):
    name = cfg["train"]["dtype"]
    if name not in ("float32", "float64"):
        raise InvalidConfig(f"train.dtype must be float32 or float64, got {name!r}")
    return np.float32 if name == "float32" else np.float64


def _build_net(cfg, dtype):
    return default_architecture(
        bw_in=int(cfg["bandwidth"]),
        c_in=2,
        num_classes=int(cfg["num_classes"]),
        widths=tuple(cfg["arch"]["widths"]),
        bw_factor=float(cfg["arch"]["bw_factor"]),
        dropout=float(cfg["arch"]["dropout"]),
        r_max=float(cfg["range_norm"]),
        dtype=dtype,
    )


# ---------------------------------------------------------------------------
# Previews
# ---------------------------------------------------------------------------

def write_pgm(path, img: np.ndarray):
    """8-bit binary portable graymap."""
    img = np.clip(np.asarray(img), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


_PALETTE = np.array(
    [[70, 130, 180], [220, 20, 60], [128, 64, 0], [190, 190, 190], [0, 175, 0]],
    dtype=np.uint8,
)


def write_ply(path, points: np.ndarray, labels: np.ndarray):
    """ASCII PLY with per-class vertex colors."""
    n = len(points)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    cols = np.zeros((n, 3), np.uint8)
    valid = labels != IGNORE
    cols[valid] = _PALETTE[labels[valid] % len(_PALETTE)]
    for p, c in zip(points, cols):
        lines.append(f"{p[0]:.4f} {p[1]:.4f} {p[2]:.4f} {c[0]} {c[1]} {c[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _load_cloud_arg(cloud_path, label_path, num_classes):
    cloud_path = Path(cloud_path)
    remap = {c: c for c in range(num_classes)}
    if label_path:
        return datamod.load_kitti_pair(cloud_path, label_path, remap)
    raw = cloud_path.read_bytes()
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    labels = np.full(len(pts), IGNORE, dtype=np.int32)
    from .projection import LabeledPointCloud

    return LabeledPointCloud(pts[:, :3].astype(float), labels, pts[:, 3].astype(float))


def _evaluate(net, items, bw, level="point"):
    """Confusion matrix over (cloud, scan) pairs at cell or point level."""
    cm = ConfusionMatrix(net.num_classes)
    for cloud, scan in items:
        logits = forward(net, scan, mode="eval")
        pred = np.argmax(logits.values, axis=0).astype(np.int32)
        if level == "cell":
            cm.update(scan.cell_label, pred)
        else:
            point_pred, _ = back_project(scan, pred)
            cm.update(cloud.labels, point_pred)
    return cm


def _load_split_items(root, bw, which="val"):
    train, val = read_split(Path(root) / "split.txt")
    stems = {"train": train, "val": val}[which]
    items = []
    for stem in stems:
        cloud = load_dataset_item(root, stem)
        items.append((cloud, project(cloud, bw)))
    return stems, items


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg, args) -> int:
    root = args.root or cfg["data"]["root"]
    if not root:
        raise InvalidConfig("synth requires --root or data.root")
    count = args.count or cfg["data"]["count"]
    info = synth_dataset(
        root,
        count=int(count),
        presets=tuple(cfg["data"]["presets"]),
        seed=int(cfg["seed"]),
        split_fraction=float(cfg["data"]["split_fraction"]),
        scene_kw=dict(cfg["data"]["scene"]),
    )
    print(
        f"synth: wrote {len(info['stems'])} scans to {root} "
        f"(train {len(info['train'])} / val {len(info['val'])})"
    )
    print(f"synth: class histogram {dict(zip(CLASS_NAMES, info['histogram']))}")
    return 0


def cmd_project(cfg, args) -> int:
    bw = int(cfg["bandwidth"])
    out = Path(cfg["out"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    cloud = _load_cloud_arg(args.cloud, args.labels, cfg["num_classes"])
    scan = project(cloud, bw)
    serialize.save(scan.signal, out / "scan.s2sg")
    rng_img = scan.range
    peak = rng_img.max() if rng_img.max() > 0 else 1.0
    write_pgm(out / "range.pgm", 255 * rng_img / peak)
    lab = scan.cell_label.astype(np.int64)
    img = np.where(lab == IGNORE, 0, 40 + lab * 50)
    write_pgm(out / "labels.pgm", img)
    print(
        f"project: bw {bw}, {len(cloud)} points, "
        f"{int(scan.mask.sum())}/{scan.mask.size} cells occupied -> {out}"
    )
    return 0


def _iter_batches(order, size):
    for i in range(0, len(order), size):
        yield order[i : i + size]


def cmd_train(cfg, args) -> int:
    root = args.root or cfg["data"]["root"]
    if not root:
        raise InvalidConfig("train requires --root or data.root")
    out = Path(cfg["out"] or "runs/default")
    out.mkdir(parents=True, exist_ok=True)
    bw = int(cfg["bandwidth"])
    dtype = _dtype(cfg)
    seed = int(cfg["seed"])

    train_stems, train_items = _load_split_items(root, bw, "train")
    val_stems, val_items = _load_split_items(root, bw, "val")
    print(f"train: {len(train_items)} train / {len(val_items)} val scans at bw {bw}")

    hist = np.zeros(int(cfg["num_classes"]), dtype=np.int64)
    for _, scan in train_items:
        lab = scan.cell_label[scan.cell_label != IGNORE]
        hist += np.bincount(lab, minlength=len(hist))
    weights = compute_weights(hist)

    net = _build_net(cfg, dtype).init_params(seed)
    print(f"train: {net.num_params()} parameters, dtype {cfg['train']['dtype']}")
    opt = cfg["optimizer"]
    state = TrainState(
        net, lr=float(opt["lr"]), beta1=float(opt["beta1"]),
        beta2=float(opt["beta2"]), eps=float(opt["eps"]),
    )
    rng = np.random.default_rng(seed)
    epochs = int(cfg["train"]["epochs"])
    batch_size = max(1, int(cfg["train"]["batch_size"]))
    stop_miou = cfg["train"]["stop_miou"]
    level = cfg["train"]["val_level"]

    history = []
    best_miou = -1.0
    if epochs == 0:
        save_checkpoint(net, out / "best.ckpt", meta={"epoch": 0, "miou": None})
        save_checkpoint(net, out / "last.ckpt", meta={"epoch": 0, "miou": None})
        print("train: epochs=0, wrote initial checkpoint")
        return 0

    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_items))
        loss_sum, nb = 0.0, 0
        for batch in _iter_batches(order, batch_size):
            total = zero_grads(net)
            for idx in batch:
                cloud, scan = train_items[idx]
                tape = GradientTape(net, "train", None)
                logits = forward(net, scan, mode="train", rng=rng, tape=tape)
                loss, dlogits = total_loss(logits.values, scan.cell_label, weights)
                accumulate_grads(total, backward(tape, dlogits))
                loss_sum += loss
                nb += 1
            scale_grads(total, 1.0 / len(batch))
            state.apply(total)
        cm = _evaluate(net, val_items, bw, level)
        miou, acc = miou_accuracy(cm)
        dt = time.perf_counter() - t0
        print(
            f"epoch {epoch:3d}: loss {loss_sum / max(nb, 1):.4f} "
            f"val_miou {miou:.4f} val_acc {acc:.4f} ({dt:.1f}s)"
        )
        history.append({"epoch": epoch, "loss": loss_sum / max(nb, 1), "miou": miou, "acc": acc})
        save_checkpoint(net, out / "last.ckpt", meta={"epoch": epoch, "miou": miou})
        if miou > best_miou:
            best_miou = miou
            save_checkpoint(net, out / "best.ckpt", meta={"epoch": epoch, "miou": miou})
        if stop_miou is not None and miou >= float(stop_miou):
            print(f"train: reached stop_miou {stop_miou} at epoch {epoch}")
            break
    (out / "train_log.json").write_text(json.dumps(history, indent=1))
    print(f"train: best val mIoU {best_miou:.4f} -> {out / 'best.ckpt'}")
    return 0


def cmd_infer(cfg, args) -> int:
    net, meta = load_checkpoint(args.checkpoint)
    out = Path(cfg["out"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    cloud = _load_cloud_arg(args.cloud, args.labels, net.num_classes)
    scan = project(cloud, net.bw_in)
    logits = forward(net, scan, mode="eval")
    probs = softmax(logits.values, axis=0)
    pred_cells = np.argmax(probs, axis=0).astype(np.int32)
    point_pred, sampled = back_project(scan, pred_cells)
    (out / "pred.label").write_bytes(point_pred.astype("<u4").tobytes())
    write_ply(out / "pred.ply", cloud.points, point_pred)
    counts = {CLASS_NAMES[c]: int((point_pred == c).sum()) for c in range(net.num_classes)}
    print(f"infer: {len(cloud)} points -> {out / 'pred.label'}; class counts {counts}")
    if args.labels:
        cm = ConfusionMatrix(net.num_classes)
        cm.update(cloud.labels, point_pred)
        miou, acc = miou_accuracy(cm)
        print(f"infer: point mIoU {miou:.4f} acc {acc:.4f}")
    return 0


def cmd_eval(cfg, args) -> int:
    net, meta = load_checkpoint(args.checkpoint)
    root = args.root or cfg["data"]["root"]
    if not root:
        raise InvalidConfig("eval requires --root or data.root")
    _, items = _load_split_items(root, net.bw_in, args.split)
    report = {}
    for level in ("cell", "point"):
        cm = _evaluate(net, items, net.bw_in, level)
        report[level] = metrics_report(cm, CLASS_NAMES[: net.num_classes])
    print(json.dumps(report, indent=1))
    if cfg["out"]:
        Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg["out"]).write_text(json.dumps(report, indent=1))
    return 0


def cmd_rotate_bench(cfg, args) -> int:
    net, _ = load_checkpoint(args.checkpoint)
    root = args.root or cfg["data"]["root"]
    if not root:
        raise InvalidConfig("rotate-bench requires --root or data.root")
    angles = [float(a) for a in args.angles.split(",")] if args.angles else [
        0.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0
    ]
    train, val = read_split(Path(root) / "split.txt")
    clouds = [load_dataset_item(root, s) for s in val]
    rows = []
    for deg in angles:
        rad = deg / 180.0 * np.pi  # exact at 0 and 180
        cm = ConfusionMatrix(net.num_classes)
        for cloud in clouds:
            rc = rotate_cloud(cloud, rad, rad, rad)
            scan = project(rc, net.bw_in)
            logits = forward(net, scan, mode="eval")
            pred = np.argmax(logits.values, axis=0).astype(np.int32)
            point_pred, _ = back_project(scan, pred)
            cm.update(rc.labels, point_pred)
        miou, acc = miou_accuracy(cm)
        rows.append((deg, miou, acc))
        print(f"rotate-bench: angle {deg:6.1f} deg  mIoU {miou:.4f}  acc {acc:.4f}")
    out = Path(cfg["out"] or "rotate_bench.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["angle_deg,miou,accuracy"] + [f"{d},{m:.6f},{a:.6f}" for d, m, a in rows]
    out.write_text("\n".join(lines) + "\n")
    print(f"rotate-bench: wrote {out}")
    return 0


def cmd_bench(cfg, args) -> int:
    bw = int(cfg["bandwidth"])
    repeat = int(args.repeat)
    scene = SceneConfig.from_preset("b64_f28", rng_seed=int(cfg["seed"]),
                                    **dict(cfg["data"]["scene"]))
    cloud = synth_scan(scene)
    net = _build_net(cfg, _dtype(cfg)).init_params(int(cfg["seed"]))
    scan = project(cloud, bw)  # warm caches
    forward(net, scan, mode="eval")
    stages = {"projection": [], "inference": [], "back_projection": []}
    for _ in range(repeat):
        t0 = time.perf_counter()
        scan = project(cloud, bw)
        t1 = time.perf_counter()
        logits = forward(net, scan, mode="eval")
        probs = softmax(logits.values, axis=0)
        pred = np.argmax(probs, axis=0).astype(np.int32)
        t2 = time.perf_counter()
        back_project(scan, pred)
        t3 = time.perf_counter()
        stages["projection"].append(1e3 * (t1 - t0))
        stages["inference"].append(1e3 * (t2 - t1))
        stages["back_projection"].append(1e3 * (t3 - t2))
    rows = [(k, float(np.mean(v)), float(np.std(v))) for k, v in stages.items()]
    total = sum(r[1] for r in rows)
    print(f"bench: bw {bw}, {len(cloud)} points, {repeat} repeats")
    for name, mean, std in rows:
        print(f"  {name:16s} {mean:9.2f} ms  (+/- {std:.2f})")
    print(f"  {'total':16s} {total:9.2f} ms")
    if cfg["out"]:
        out = Path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        lines = ["stage,mean_ms,std_ms"] + [f"{n},{m:.3f},{s:.3f}" for n, m, s in rows]
        out.write_text("\n".join(lines) + "\n")
        print(f"bench: wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="s2seg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                        help="override a config key by dotted path")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--bw", type=int)
        sp.add_argument("--out")

    sp = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    common(sp)
    sp.add_argument("--root")
    sp.add_argument("--count", type=int)

    sp = sub.add_parser("project", help="project one cloud to a spherical scan + previews")
    common(sp)
    sp.add_argument("--cloud", required=True)
    sp.add_argument("--labels")

    sp = sub.add_parser("train", help="train the segmentation network")
    common(sp)
    sp.add_argument("--root")

    sp = sub.add_parser("infer", help="segment one cloud with a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--cloud", required=True)
    sp.add_argument("--labels")

    sp = sub.add_parser("eval", help="evaluate a checkpoint over a split")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--root")
    sp.add_argument("--split", choices=["train", "val"], default="val")

    sp = sub.add_parser("rotate-bench", help="mIoU vs roll/pitch/yaw rotation sweep")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--root")
    sp.add_argument("--angles", help="comma-separated degrees (default 0..180 by 30)")

    sp = sub.add_parser("bench", help="per-stage latency report")
    common(sp)
    sp.add_argument("--repeat", type=int, default=5)
    return p


_COMMANDS = {
    "synth": cmd_synth,
    "project": cmd_project,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "rotate-bench": cmd_rotate_bench,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set, args.seed, args.bw, args.out)
        return _COMMANDS[args.command](cfg, args)
    except (S2SegError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
