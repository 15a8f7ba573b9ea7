"""Command-line entry point: ``realosr <subcommand> ...``.

Exit codes: 0 on success, 1 on domain errors, 2 on usage errors. Every run
writes ``run_manifest.json`` next to its outputs.
"""

import argparse
import json
import logging
import os
import pickle
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import RealOSRError, ValidationError

log = logging.getLogger("realosr")

SUBCOMMANDS = ("synth", "train", "infer", "eval", "ablate", "probe-operator", "dump-kernels", "plot")
MANIFEST = "run_manifest.json"


def _output_root():
    return Path(os.environ.get("REALOSR_OUTPUT_ROOT", "runs"))


def _out_dir(args):
    return Path(args.out) if args.out else _output_root() / args.command


def _manifest_path(args):
    if args.command == "infer":
        out = Path(args.output)
        return out.parent / f"{out.stem}.{MANIFEST}"
    out = _out_dir(args)
    if args.command == "synth":
        # beside the dataset so the dataset tree itself stays byte-reproducible
        return out.parent / f"{out.name}.{MANIFEST}"
    return out / MANIFEST


def _write_manifest(args, path, inputs, outputs, timings):
    from .io import write_json_atomic

    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    write_json_atomic(path, {
        "subcommand": args.command,
        "config": cfg,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "timings": timings,
    })


def _parse_pair(text):
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    return a, b


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


# --------------------------------------------------------------------------- subcommands

def cmd_synth(args):
    from .data import natural_erp, synthetic_panoramas
    from .degrade import DegradationConfig, synthesize_dataset
    from .io import read_png

    if args.input:
        files = sorted(Path(args.input).glob("*.png"))
        if not files:
            raise ValidationError(f"no PNG files in {args.input}")
        images = [(p.stem, read_png(p)) for p in files]
    elif args.synthetic:
        images = [(f"pano_{i:03d}", img) for i, img in enumerate(synthetic_panoramas(args.synthetic, args.height, args.seed))]
    else:
        images = [("astronaut", natural_erp(args.height))]
    cfg = DegradationConfig.preset(args.preset, scale=args.scale)
    out = _out_dir(args)
    t0 = time.perf_counter()
    synthesize_dataset(images, out, cfg, args.seed)
    return [args.input] if args.input else [], [out], {"synth_s": time.perf_counter() - t0}


def cmd_train(args):
    from .training import TrainConfig, train

    cfg = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
    for key in ("dataset", "variant", "steps", "lr", "batch", "seed"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    out = _out_dir(args)
    cfg["out_dir"] = str(out)
    if not cfg.get("dataset"):
        raise ValidationError("train needs --dataset or a config file with a 'dataset' key")
    if args.predictor:
        return _train_predictor(args, cfg, out)
    t0 = time.perf_counter()
    res = train(TrainConfig.from_dict(cfg))
    log.info("trained %d parameters; loss %.4f -> %.4f", res.n_trainable,
             res.losses[0]["total"], res.losses[-1]["total"])
    return [cfg["dataset"]], [res.checkpoint, out / "losses.csv"], {"train_s": time.perf_counter() - t0}


def _train_predictor(args, cfg, out):
    from .predictor import DegradationPredictor, make_patches

    t0 = time.perf_counter()
    X, y = make_patches(args.predictor_patches, seed=cfg.get("seed", 0) or 0)
    model = DegradationPredictor(seed=cfg.get("seed", 0) or 0).fit(X, y)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "predictor.pkl"
    with open(path, "wb") as fh:
        pickle.dump(model, fh)
    return [], [path], {"train_predictor_s": time.perf_counter() - t0}


def _oracle_d(args):
    if args.d_value is not None:
        return np.asarray(args.d_value)
    if args.meta:
        name = Path(args.input).stem
        for line in Path(args.meta).read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                if rec.get("name") == name:
                    return np.asarray(rec["d"], dtype=np.float64)
        raise ValidationError(f"no metadata record named {name!r} in {args.meta}")
    raise ValidationError("--d oracle needs --d-value or --meta")


def cmd_infer(args):
    from .denoiser import realosr_pipeline
    from .io import load_checkpoint, read_png, write_png

    model, _ = load_checkpoint(args.ckpt)
    lr = read_png(args.input)
    record, predictor = None, None
    if args.d == "oracle":
        record = _oracle_d(args)
    else:
        if not args.predictor:
            raise ValidationError("--d learned needs --predictor (see `train --predictor`)")
        with open(args.predictor, "rb") as fh:
            predictor = pickle.load(fh)
    timings = {}
    t0 = time.perf_counter()
    sr = realosr_pipeline(lr, model, mode=args.mode, d_source=args.d, record=record, predictor=predictor,
                          scale=args.scale, jobs=args.jobs, timings=timings)
    timings["total_s"] = time.perf_counter() - t0
    write_png(args.output, sr)
    log.info("%s mode: %.3f s in the per-view stage", args.mode, timings["views_s"])
    return [args.ckpt, args.input], [args.output], timings


def cmd_eval(args):
    from .training import evaluate

    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    if args.variant != "bicubic" and not args.ckpt:
        raise ValidationError("eval needs --ckpt unless --variant bicubic")
    t0 = time.perf_counter()
    csv_path = out / f"metrics_{args.variant}.csv"
    report = evaluate(args.ckpt, args.dataset, args.variant, csv_path, mode=args.mode, jobs=args.jobs)
    log.info("%s mean: %s", args.variant, report.mean())
    return [args.dataset] + ([args.ckpt] if args.ckpt else []), [csv_path], {"eval_s": time.perf_counter() - t0}


def cmd_ablate(args):
    from .duig import VARIANTS
    from .training import ablate

    variants = VARIANTS if args.variants == "all" else tuple(v.strip() for v in args.variants.split(","))
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ValidationError(f"unknown variants {bad}; expected 'all' or a subset of {VARIANTS}")
    out = _out_dir(args)
    t0 = time.perf_counter()
    rows, table = ablate(args.dataset, out, variants, steps=args.steps, seed=args.seed, jobs=args.jobs)
    outputs = [table] + [out / f"metrics_{v}.csv" for v in variants]
    return [args.dataset], outputs, {"ablate_s": time.perf_counter() - t0}


def cmd_probe(args):
    from .io import write_json_atomic
    from .unfold import bicubic_operator, probe_operator

    A = bicubic_operator(args.scale, (3, args.size, args.size))
    t0 = time.perf_counter()
    result = probe_operator(A, args.probes, args.seed)
    print(json.dumps(result, indent=2))
    out = _out_dir(args)
    write_json_atomic(out / "probe.json", result)
    return [], [out / "probe.json"], {"probe_s": time.perf_counter() - t0}


def cmd_dump_kernels(args):
    import torch

    from .io import load_checkpoint

    model, _ = load_checkpoint(args.ckpt)
    if model.duig is None:
        raise ValidationError("checkpoint has no DUIG modules (tp_baseline variant)")
    block = model.duig[args.block]
    bank = block.phi if hasattr(block, "phi") else block.phi_pix
    levels = np.linspace(0.0, 1.0, args.grid)
    d = torch.tensor([[dn, db] for dn in levels for db in levels], dtype=torch.float32)
    with torch.no_grad():
        kernels, _ = bank.assemble(d)
        weights = bank.mixing_weights(d)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "kernels.npz"
    np.savez(path, d=d.numpy(), kernels=kernels.numpy(), weights=weights.numpy(), levels=levels)
    return [args.ckpt], [path], {}


def cmd_plot(args):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import csv

    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    made, inputs = [], []
    if args.losses:
        for path in args.losses:
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
            steps = [int(r["step"]) for r in rows]
            fig, ax = plt.subplots(figsize=(6, 4))
            for col in ("total", "rec", "perc", "gan"):
                ax.plot(steps, [float(r[col]) for r in rows], label=col)
            ax.set_xlabel("step")
            ax.set_ylabel("loss")
            ax.legend()
            target = out / f"losses_{Path(path).parent.name or 'run'}.png"
            fig.savefig(target, dpi=100)
            plt.close(fig)
            made.append(target)
            inputs.append(path)
    if args.metrics:
        with open(args.metrics, newline="") as fh:
            rows = list(csv.DictReader(fh))
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
        for ax, col in zip(axes, ("ws_psnr", "ws_ssim")):
            ax.bar([r["variant"] for r in rows], [float(r[col]) for r in rows])
            ax.set_title(col)
            ax.tick_params(axis="x", rotation=30)
        fig.tight_layout()
        target = out / "metrics.png"
        fig.savefig(target, dpi=100)
        plt.close(fig)
        made.append(target)
        inputs.append(args.metrics)
    if args.kernels:
        data = np.load(args.kernels)
        k, n = data["kernels"], len(data["levels"])
        fig, axes = plt.subplots(n, n, figsize=(1.6 * n, 1.6 * n), squeeze=False)
        for i in range(n):
            for j in range(n):
                axes[i, j].imshow(k[i * n + j, 0, 0], cmap="coolwarm")
                axes[i, j].set_xticks([])
                axes[i, j].set_yticks([])
                if j == 0:
                    axes[i, j].set_ylabel(f"dn={data['levels'][i]:.2f}", fontsize=7)
                if i == n - 1:
                    axes[i, j].set_xlabel(f"db={data['levels'][j]:.2f}", fontsize=7)
        target = out / "kernels.png"
        fig.savefig(target, dpi=100)
        plt.close(fig)
        made.append(target)
        inputs.append(args.kernels)
    if not made:
        raise ValidationError("plot needs at least one of --losses, --metrics, --kernels")
    return inputs, made, {}


# --------------------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="realosr", description="Omnidirectional image SR toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_, out=True):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        if out:
            sp.add_argument("--out", help="output directory (default: $REALOSR_OUTPUT_ROOT/<subcommand>)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=_positive_int, default=4)
        return sp

    sp = add("synth", cmd_synth, "synthesize an HR/LR dataset")
    sp.add_argument("--in", dest="input", help="directory of HR ERP PNGs")
    sp.add_argument("--synthetic", type=_positive_int, help="generate N panoramas from bundled images instead")
    sp.add_argument("--height", type=_positive_int, default=128)
    sp.add_argument("--scale", type=_positive_int, default=4)
    sp.add_argument("--preset", choices=("default", "severe"), default="default")

    sp = add("train", cmd_train, "train LoRA + DUIG on a dataset")
    sp.set_defaults(seed=None)
    sp.add_argument("--dataset")
    sp.add_argument("--config", help="JSON file with training keys")
    sp.add_argument("--variant", choices=("tp_baseline", "latent_add", "pixel_unfold", "full"))
    sp.add_argument("--steps", type=_positive_int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch", type=_positive_int)
    sp.add_argument("--predictor", action="store_true", help="fit the degradation predictor instead")
    sp.add_argument("--predictor-patches", type=_positive_int, default=500)

    sp = add("infer", cmd_infer, "super-resolve one LR ERP image", out=False)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", dest="output", required=True, help="SR PNG path")
    sp.add_argument("--mode", choices=("serial", "parallel"), default="serial")
    sp.add_argument("--d", choices=("oracle", "learned"), default="oracle")
    sp.add_argument("--d-value", type=_parse_pair, help="oracle levels 'dn,db'")
    sp.add_argument("--meta", help="dataset meta jsonl holding the oracle levels")
    sp.add_argument("--predictor", help="pickled degradation predictor")
    sp.add_argument("--scale", type=_positive_int, default=4)

    sp = add("eval", cmd_eval, "metrics of a checkpoint on a dataset")
    sp.add_argument("--ckpt")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--variant", choices=("tp_baseline", "latent_add", "pixel_unfold", "full", "bicubic"),
                    default="full")
    sp.add_argument("--mode", choices=("serial", "parallel"), default="serial")

    sp = add("ablate", cmd_ablate, "train and evaluate the DUIG ablation variants")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--variants", default="all")
    sp.add_argument("--steps", type=_positive_int, default=200)

    sp = add("probe-operator", cmd_probe, "numerical diagnostics of the bicubic operator")
    sp.add_argument("--scale", type=_positive_int, default=4)
    sp.add_argument("--size", type=_positive_int, default=64)
    sp.add_argument("--probes", type=_positive_int, default=100)

    sp = add("dump-kernels", cmd_dump_kernels, "dynamic kernels over a grid of degradation levels")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--block", type=int, default=0)
    sp.add_argument("--grid", type=_positive_int, default=5)

    sp = add("plot", cmd_plot, "static figures from CSV/NPZ outputs")
    sp.add_argument("--losses", nargs="+")
    sp.add_argument("--metrics", help="ablation comparison CSV")
    sp.add_argument("--kernels", help="kernels.npz from dump-kernels")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        inputs, outputs, timings = args.func(args)
    except (RealOSRError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _write_manifest(args, _manifest_path(args), inputs, outputs, timings)
    return 0


if __name__ == "__main__":
    sys.exit(main())
