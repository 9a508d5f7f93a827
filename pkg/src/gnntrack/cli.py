"""Command line: synth, train-dml, train-gnn, infer, eval, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 bad configuration or usage.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, metrics, pipeline, synth
from .config import load_config
from .errors import ConfigError, FormatError

log = logging.getLogger("gnntrack")


def _common(p):
    p.add_argument("--config", help="JSON pipeline configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. gnn.epochs=5 (repeatable)")
    p.add_argument("--seed", type=int, help="seed for every stochastic component")


def build_parser():
    ap = argparse.ArgumentParser(prog="gnntrack", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic sequences with ground truth")
    _common(p)
    p.add_argument("--preset", help=f"one of {sorted(synth.PRESETS)}")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1, help="sequences to write (seq_000, seq_001, ...)")

    p = sub.add_parser("train-dml", help="train the appearance embedder")
    _common(p)
    p.add_argument("--data", nargs="+", required=True, help="dataset dirs (or parents of seq_*)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-gnn", help="train the edge classifier (and embedder unless given)")
    _common(p)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--embedder", help="embedder checkpoint from train-dml")
    p.add_argument("--out", required=True)

    p = sub.add_parser("infer", help="track a dataset with a trained model")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="tracker checkpoint from train-gnn")
    p.add_argument("--out", required=True)
    p.add_argument("--overlay", action="store_true", help="also write a PNG trajectory overlay")

    p = sub.add_parser("eval", help="score predicted tracks against ground truth")
    p.add_argument("--pred", required=True, help="predicted track file")
    p.add_argument("--gt", required=True, help="ground-truth track file")
    p.add_argument("--edges", help="edge CSV from infer, for edge precision/recall")
    p.add_argument("--out", help="metrics JSON path (default: stdout)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=48, help="entries per tensor at full width")
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"gnntrack: configuration error: {e}", file=sys.stderr)
        return 2
    except (FormatError, OSError, ValueError, RuntimeError, FloatingPointError) as e:
        print(f"gnntrack: {e}", file=sys.stderr)
        return 1


def _config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "preset", None):
        overrides.append(f"preset={args.preset}")
    return load_config(args.config, overrides)


def _dataset_dirs(paths):
    out = []
    for p in map(Path, paths):
        if (p / io.FRAME_DIR).is_dir():
            out.append(p)
        else:
            subs = sorted(d for d in p.glob("seq_*") if (d / io.FRAME_DIR).is_dir())
            if not subs:
                raise ConfigError(f"{p} is neither a dataset nor a folder of seq_* datasets")
            out.extend(subs)
    return out


def _labelled(paths):
    seqs = []
    for d in _dataset_dirs(paths):
        frames, gt = io.read_dataset(d)
        if gt is None:
            raise ConfigError(f"{d} has no {io.GT_TRACKS}; training needs ground truth")
        seqs.append(pipeline.labelled_sequence(frames, gt))
    return seqs


# ----------------------------------------------------------------- commands

def cmd_synth(args):
    cfg = _config(args)
    out = Path(args.out)
    if args.count < 1:
        raise ConfigError("--count must be at least 1")
    for k in range(args.count):
        scfg = cfg.synth_config(seed=cfg.seed + k)
        seq = synth.generate_sequence(scfg)
        target = out if args.count == 1 else out / f"seq_{k:03d}"
        io.write_dataset(target, seq.frames, seq.forest,
                         meta={"preset": cfg.preset, "synth": synth.config_dict(scfg)})
        log.info("wrote %s (%d frames, %d tracks)", target, len(seq.frames), len(seq.forest.tracks))
    return 0


def cmd_train_dml(args):
    cfg = _config(args)
    train = _labelled(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    embedder, history = pipeline.fit_embedder(train, cfg.dml)
    pipeline.save_embedder(out / "embedder.json", embedder, cfg.dml)
    io.write_curve(out / "dml_loss.csv", [(k + 1, l, h) for k, (l, h) in enumerate(history)],
                   ["epoch", "loss", "hard_pairs"])
    io.write_json(out / "config.json", cfg.to_dict())
    return 0


def cmd_train_gnn(args):
    cfg = _config(args)
    train = _labelled(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    embedder = None
    if args.embedder:
        embedder, dml_cfg = pipeline.load_embedder(args.embedder)
        cfg.dml = dml_cfg
        cfg.propagate_seed()
    tracker, result = pipeline.fit_tracker(train, cfg.dml, cfg.gnn, cfg.alpha, embedder,
                                           threshold=cfg.threshold)
    tracker.save(out / "tracker.json")
    io.write_curve(out / "gnn_loss.csv", [(k + 1, l) for k, l in enumerate(result.history)],
                   ["epoch", "loss"])
    io.write_json(out / "config.json", cfg.to_dict())
    return 0


def cmd_infer(args):
    tracker = pipeline.Tracker.load(args.model)
    frames, gt = io.read_dataset(args.data)
    instances = pipeline.sequence_instances(frames)
    res = pipeline.track(tracker, instances)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_tracks(out / "tracks.txt", res.forest)
    keys = res.graph.edge_keys()
    gt_col = None
    if gt is not None:
        links = gt.links()
        gt_col = [k in links for k in keys]
    io.write_edges(out / "edges.csv", keys, res.probs, res.active, gt_col)
    io.write_detections(out / "detections.csv", res.graph.nodes)
    io.write_embeddings(out / "embeddings.csv", [c.key for c in res.graph.nodes], res.graph.v_dml)
    if args.overlay:
        write_overlay(out / "overlay.png", frames, res.forest, {c.key: c for c in res.graph.nodes})
    return 0


def cmd_eval(args):
    gt_path = Path(args.gt)
    if not gt_path.exists():
        raise FileNotFoundError(f"ground truth {gt_path} not found; eval needs ground truth")
    report = evaluate_files(args.pred, gt_path, args.edges)
    if args.out:
        io.write_json(args.out, report)
    else:
        import json
        print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def evaluate_files(pred_path, gt_path, edges_path=None):
    pred = io.read_tracks(pred_path)
    gt = io.read_tracks(gt_path)
    edge_scores = None
    if edges_path:
        e = io.read_edges(edges_path)
        edge_scores = (e["probs"], e["keys"])
    return metrics.evaluate(pred, gt, edge_scores)


def cmd_gradcheck(args):
    from .gradcheck import run_suite
    report = run_suite(full_samples=args.samples, seed=args.seed)
    for line in report.lines():
        print(line)
    w = report.worst
    print(f"{'PASS' if report.ok else 'FAIL'}: {len(report.results)} tensors, "
          f"worst {w.name} {w.max_rel_err:.2e}, {report.seconds:.1f}s")
    return 0 if report.ok else 1


COMMANDS = {"synth": cmd_synth, "train-dml": cmd_train_dml, "train-gnn": cmd_train_gnn,
            "infer": cmd_infer, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


# ----------------------------------------------------------------- overlay

def write_overlay(path, frames, forest, by_key):
    """Last frame in grey with every trajectory's centroid path drawn on top."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    last = frames[-1]
    fig, ax = plt.subplots(figsize=(6, 6), dpi=100)
    ax.imshow(np.asarray(last.image), cmap="gray")
    cmap = plt.get_cmap("tab20")
    for tr in forest.tracks:
        pts = np.array([by_key[k].centroid for k in tr.instances])
        color = cmap(tr.n % 20)
        ax.plot(pts[:, 1], pts[:, 0], "-", color=color, lw=1)
        ax.plot(pts[-1, 1], pts[-1, 0], "o", color=color, ms=2)
        if tr.parent:
            ax.plot(pts[0, 1], pts[0, 0], "x", color="red", ms=4)
    ax.set_axis_off()
    ax.set_title(f"{len(forest.tracks)} trajectories, t={frames[0].t}..{last.t}")
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


if __name__ == "__main__":
    sys.exit(main())
