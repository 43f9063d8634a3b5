"""Command-line interface: ``mixfacenet <command> ...``.

Exit codes: 0 success, 1 computation failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import config as cfgmod
from .complexity import cost_report
from .formats import (FormatError, ids_path, load_image, read_embeddings, read_ids,
                      write_ids, write_tensor)
from .metrics import (PairFileError, ScoreSet, read_pairs, read_scores, rank1_identification,
                      tar_at_far, verification_accuracy_kfold, write_scores)
from .network import METRICS, CheckpointError, Network, forward, load_checkpoint, save_checkpoint
from .network import similarity, thread_count

NORMALIZATION = "(p - 127.5) / 128, P6 PPM maxval 255, channels RGB -> (3, h, w)"
PROTOCOLS = ("kfold", "tarfar", "rank1")


class UsageError(Exception):
    pass


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: list
    config: Optional[str] = None
    seed: Optional[int] = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    version: str = __version__
    normalization: str = NORMALIZATION

    def add_inputs(self, paths) -> None:
        for p in paths:
            self.inputs[str(p)] = sha256(p)

    def write(self, path, outputs=()) -> None:
        for p in outputs:
            self.outputs[str(p)] = sha256(p)
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def manifest_path(output) -> Path:
    return Path(str(output) + ".manifest.json")


def resolve_config(name: str) -> cfgmod.NetworkConfig:
    """Preset name (``nano`` is short for ``mixfacenet-nano``) or a config text file."""
    key = name.lower()
    for cand in (key, f"mixfacenet-{key}"):
        if cand in cfgmod.PRESETS:
            return cfgmod.preset(cand)
    p = Path(name)
    if p.is_file():
        return cfgmod.from_text(p.read_text(encoding="utf-8"))
    raise UsageError(f"unknown architecture {name!r}; presets: {', '.join(cfgmod.PRESETS)} or a config file")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


# describe ------------------------------------------------------------------

def cmd_describe(args) -> int:
    cfg = resolve_config(args.config or args.arch)
    if args.input_size:
        cfg = replace(cfg, input_size=tuple(args.input_size))
    net = Network(cfg, seed=0)
    rep = cost_report(net)
    print(f"# {cfg.name}  input {cfg.input_size[0]}x{cfg.input_size[1]}x{cfg.in_channels}")
    print(rep.to_table())
    if args.csv:
        Path(args.csv).write_text(rep.to_csv(), encoding="utf-8")
        m = RunManifest(args.argv, cfgmod.to_text(cfg))
        m.write(manifest_path(args.csv), [args.csv])
    return 0


# embed ---------------------------------------------------------------------

def _load_net(args) -> tuple:
    if args.weights:
        cfg = resolve_config(args.arch) if args.arch else None
        net = load_checkpoint(args.weights, cfg)
        return net, None
    if not args.arch:
        raise UsageError("embed needs --arch, --weights, or both")
    return Network(resolve_config(args.arch), seed=args.seed).eval(), args.seed


def cmd_embed(args) -> int:
    net, seed = _load_net(args)
    size = net.config.input_size
    paths = [Path(p) for p in args.input]
    images = np.stack([load_image(p, size) for p in paths])
    emb = forward(net, images, threads=thread_count())
    ids = [p.stem for p in paths]
    write_tensor(args.out, emb)
    write_ids(ids_path(args.out), ids)
    m = RunManifest(args.argv, cfgmod.to_text(net.config), seed,
                    settings={"threads": thread_count(), "weights_init": "seeded" if seed is not None else "checkpoint"})
    m.add_inputs(paths + ([Path(args.weights)] if args.weights else []))
    m.write(manifest_path(args.out), [args.out, ids_path(args.out)])
    print(f"wrote {emb.shape[0]} x {emb.shape[1]} embeddings to {args.out}")
    return 0


# verify --------------------------------------------------------------------

def identity_of(sample_id: str) -> str:
    head, sep, _ = sample_id.rpartition("_")
    return head if sep else sample_id


def cmd_verify(args) -> int:
    if not 0 < args.far < 1:
        raise UsageError(f"--far must lie in (0, 1), got {args.far}")
    if (args.embeddings is None) == (args.scores is None):
        raise UsageError("give exactly one of --embeddings or --scores")
    inputs = []
    emb = ids = None
    if args.scores:
        pairs, scores = read_scores(args.scores)
        inputs.append(args.scores)
    else:
        if not args.pairs and args.protocol != "rank1":
            raise UsageError(f"--protocol {args.protocol} with --embeddings needs --pairs")
        emb = read_embeddings(args.embeddings)
        ids = read_ids(ids_path(args.embeddings))
        if len(ids) != len(emb):
            raise FormatError(f"{len(ids)} ids for {len(emb)} embeddings")
        inputs += [args.embeddings, ids_path(args.embeddings)]
        if args.protocol != "rank1":
            pairs = read_pairs(args.pairs)
            inputs.append(args.pairs)
            index = {}
            for k, i in enumerate(ids):
                index.setdefault(i, k)
            missing = sorted({i for a, b, _ in pairs.rows for i in (a, b)} - set(index))
            if missing:
                raise PairFileError(f"pair ids not in embedding manifest: {missing[:10]}")
            scores = np.array([similarity(emb[index[a]], emb[index[b]], args.metric)
                               for a, b, _ in pairs.rows])
    if args.protocol == "kfold":
        r = verification_accuracy_kfold(scores, pairs.labels, k=args.folds, folds=pairs.folds)
        print(f"kfold accuracy {r.mean:.4f} +- {r.std:.4f}  (folds={len(r.accuracies)}, metric={args.metric})")
        for f, (a, t) in enumerate(zip(r.accuracies, r.thresholds)):
            print(f"  fold {f}: accuracy {a:.4f}  threshold {t:.6g}")
    elif args.protocol == "tarfar":
        tar, t = tar_at_far(ScoreSet.from_labels(scores, pairs.labels), args.far)
        print(f"tar {tar:.4f} at far {args.far:g}  threshold {t:.6g}  (metric={args.metric})")
    else:
        if emb is None:
            raise UsageError("rank1 needs --embeddings")
        idents = np.array([identity_of(i) for i in ids])
        rate = rank1_identification(emb, idents, emb, idents, args.metric, self_index=range(len(emb)))
        print(f"rank1 {rate:.4f}  ({len(emb)} probes, gallery = probes minus self, metric={args.metric})")
    if args.scores_out:
        if args.protocol == "rank1":
            raise UsageError("--scores-out applies to pair protocols only")
        write_scores(args.scores_out, pairs, scores)
        m = RunManifest(args.argv, settings={"metric": args.metric, "protocol": args.protocol, "far": args.far})
        m.add_inputs(inputs)
        m.write(manifest_path(args.scores_out), [args.scores_out])
    return 0


# gradcheck -----------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    from .gradcheck import run
    precisions = {"64": (np.float64,), "32": (np.float32,), "both": (np.float64, np.float32)}[args.precision]
    results = run(args.seed, precisions)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


# train-toy -----------------------------------------------------------------

def cmd_train_toy(args) -> int:
    from .training import TrainConfig, train_toy
    if args.lr < 0 or args.weight_decay < 0 or not 0 <= args.momentum < 1:
        raise UsageError("lr and weight decay must be non-negative, momentum in [0, 1)")
    cfg = resolve_config(args.config)
    tc = TrainConfig(preset=cfg.name, steps=args.steps, seed=args.seed, lr=args.lr,
                     momentum=args.momentum, weight_decay=args.weight_decay, margin=args.margin,
                     scale=args.scale, num_classes=args.classes, samples_per_class=args.per_class,
                     eval_every=args.eval_every, stop_at=args.stop_at)
    log = print if not args.quiet else None
    res = train_toy(tc, log=log, config=cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, curve = out / "toy.mfnw", out / "curve.csv"
    save_checkpoint(res.net, ckpt)
    with open(curve, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "loss", "train_accuracy"])
        for step, loss, acc in res.curve:
            w.writerow([step, repr(loss), "" if np.isnan(acc) else repr(acc)])
    m = RunManifest(args.argv, cfgmod.to_text(cfg), args.seed, settings=asdict(tc))
    m.write(out / "manifest.json", [ckpt, curve])
    print(f"final train accuracy {res.final_accuracy:.4f} after {res.steps_run} steps")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixfacenet", description="MixFaceNet engine, budgets and metrics")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("describe", help="per-layer FLOPs / params table")
    g = d.add_mutually_exclusive_group(required=True)
    g.add_argument("--arch", help="preset name")
    g.add_argument("--config", help="config text file")
    d.add_argument("--input-size", type=_positive_int, nargs=2, metavar=("H", "W"))
    d.add_argument("--csv", help="also write the table as CSV")
    d.set_defaults(func=cmd_describe)

    e = sub.add_parser("embed", help="embed PPM / MFTN images")
    e.add_argument("--arch", help="preset name or config file")
    e.add_argument("--weights", help="MFNW checkpoint")
    e.add_argument("--seed", type=int, default=0, help="init seed when no weights are given")
    e.add_argument("--input", nargs="+", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_embed)

    v = sub.add_parser("verify", help="verification / identification metrics")
    v.add_argument("--pairs")
    v.add_argument("--embeddings")
    v.add_argument("--scores", help="score CSV (id_a,id_b,label,score) instead of embeddings")
    v.add_argument("--far", type=float, default=1e-4)
    v.add_argument("--protocol", choices=PROTOCOLS, default="kfold")
    v.add_argument("--metric", choices=METRICS, default="euclidean")
    v.add_argument("--folds", type=_positive_int, default=10)
    v.add_argument("--scores-out")
    v.set_defaults(func=cmd_verify)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--precision", choices=("64", "32", "both"), default="both")
    gc.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train-toy", help="overfit a small synthetic identity set")
    t.add_argument("--config", default="nano")
    t.add_argument("--steps", type=_positive_int, default=2000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--weight-decay", type=float, default=5e-4)
    t.add_argument("--margin", type=float, default=0.5)
    t.add_argument("--scale", type=float, default=64.0)
    t.add_argument("--classes", type=_positive_int, default=8)
    t.add_argument("--per-class", type=_positive_int, default=4)
    t.add_argument("--eval-every", type=_positive_int, default=25)
    t.add_argument("--stop-at", type=float, default=None, help="stop once train accuracy reaches this")
    t.add_argument("--out-dir", default=".")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train_toy)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args.argv = ["mixfacenet", *argv]
    try:
        return args.func(args)
    except (UsageError, cfgmod.ConfigError) as e:
        print(f"mixfacenet {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (FormatError, PairFileError, CheckpointError, ValueError, KeyError, OSError) as e:
        print(f"mixfacenet {args.command}: failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
