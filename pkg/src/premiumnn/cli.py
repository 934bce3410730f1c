"""Command-line pipeline: make-data, train, select, decoy, lock, infer, attack, report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import decoy_gen, eval_attack, param_select
from .config import PipelineConfig, load_config
from .pin_vault import (
    ParamCoordinate,
    Pin,
    default_quant,
    install,
    make_vault,
    read_vault,
    unlock,
    write_vault,
)
from .tensor_nn import (
    build_resnet,
    load_checkpoints,
    load_dataset,
    load_model,
    make_blobs,
    save_checkpoints,
    save_dataset,
    save_model,
    train,
)
from .tensor_nn._io import atomic_write_bytes
from .tensor_nn.model import forward

log = logging.getLogger("premiumnn")


class CliError(Exception):
    pass


def _write_json(path, obj):
    atomic_write_bytes(path, (json.dumps(obj, indent=2) + "\n").encode())


def _read_json(path):
    with open(path) as f:
        return json.load(f)


def _config(args) -> PipelineConfig:
    return load_config(args.config) if getattr(args, "config", None) else PipelineConfig()


def _train_data(cfg: PipelineConfig):
    if cfg.train_data:
        return load_dataset(cfg.train_data)
    return make_blobs(cfg.n_train, seed=cfg.synthetic_seed, **cfg.blob_kwargs())


def cmd_make_data(args):
    cfg = _config(args)
    ds = make_blobs(args.n, seed=args.seed, **cfg.blob_kwargs())
    save_dataset(ds, args.out)
    return {"out": args.out, "n": len(ds), "shape": list(ds.images.shape[1:])}


def cmd_train(args):
    cfg = _config(args)
    epochs = args.epochs if args.epochs is not None else cfg.epochs
    data = _train_data(cfg)
    model = build_resnet(cfg.input_shape, cfg.num_classes, cfg.widths, cfg.blocks,
                         seed=args.seed, bn_literal=cfg.bn_literal)
    series = train(model, data, epochs, cfg.lr, args.seed, batch_size=cfg.batch_size,
                   momentum=cfg.momentum, lr_decay=cfg.lr_decay)
    save_checkpoints(series, args.out)
    return {"out": args.out, "epochs": series.epochs, "train_accuracy": series.train_accuracy}


def _layers(arg):
    return [int(x) for x in arg.split(",") if x] if arg else []


def cmd_select(args):
    series = load_checkpoints(args.checkpoints)
    model = series.final_model()
    layers = _layers(args.layers)
    strategy = args.strategy.replace("-", "_")
    if strategy == "bn_full":
        strategy = "bn_full_layer"
    if strategy == "bn_full_layer":
        if len(layers) != 1:
            raise CliError("bn-full needs exactly one --layers entry")
        sel = param_select.select_bn_full_layer(model, layers[0])
    elif strategy == "bn_dynamic":
        sel = param_select.select_bn_dynamic(series, layers or model.layer_indices("batchnorm"),
                                             args.r, args.k)
    elif strategy == "conv_sampled":
        sel = param_select.select_conv_sampled(model, layers[0] if layers else None, args.seed)
    else:
        raise CliError(f"unknown strategy {args.strategy!r}")
    sel.provenance.setdefault("epoch", series.epochs[-1])
    sel.provenance.setdefault("seed", args.seed)
    _write_json(args.out, sel.to_json())
    return {"out": args.out, "strategy": sel.strategy, "n": len(sel.coords)}


def cmd_decoy(args):
    sel = param_select.SelectionResult.from_json(_read_json(args.selection))
    model = load_model(args.checkpoints) if args.checkpoints else None
    if args.mode == "uniform" and (args.lo is None or args.hi is None) and model is None:
        raise CliError("uniform decoys need --lo/--hi or --checkpoints")
    values = decoy_gen.decoys_for(sel, model, args.mode, args.lo, args.hi, args.seed)
    out = {"mode": args.mode, "seed": args.seed, "coords": [c.to_json() for c in sel.coords],
           "values": [float(v) for v in values]}
    _write_json(args.out, out)
    return {"out": args.out, "n": len(values)}


def cmd_lock(args):
    sel = param_select.SelectionResult.from_json(_read_json(args.selection))
    model = load_model(args.checkpoints)
    if not sel.coords:
        raise CliError("selection is empty; nothing to lock")
    pin = Pin.of(args.pin)
    quant = default_quant(model, sel.coords, args.bits)
    vault = make_vault(sel.true_values, sel.coords, pin, quant, args.l,
                       np.random.default_rng(args.seed))
    write_vault(vault, args.vault)
    # the shipped model carries zeros at the protected coordinates; unlock overwrites them
    shipped = install(model, sel.coords, [0.0] * len(sel.coords))
    save_model(shipped, args.model_out)
    return {"vault": args.vault, "model": args.model_out, "n": vault.n, "l": vault.l,
            "pad_bits": vault.pad_bits, "quant": [quant.lo, quant.hi, quant.bits]}


def _load_input(args):
    if args.input:
        x = np.load(args.input)
    elif args.data:
        x = load_dataset(args.data).images[args.index]
    else:
        raise CliError("infer needs --input or --data")
    return np.asarray(x, dtype=np.float32)


def cmd_infer(args):
    """Prediction with the vault decoded under --pin. Any valid PIN gives a prediction."""
    model = load_model(args.model)
    vault = read_vault(args.vault)
    values = unlock(vault, Pin.of(args.pin))
    x = _load_input(args)
    logits = forward(install(model, vault.coords, values), x)
    return {"prediction": int(np.argmax(logits)), "logits": [float(v) for v in logits]}


def cmd_attack(args):
    vault = read_vault(args.vault)
    model = load_model(args.model)
    data = load_dataset(args.data)
    rep = eval_attack.attack_simulation(vault, model, data, args.pins, args.seed,
                                        true_pin=args.pin)
    _write_json(args.report, rep.to_json())
    return {"report": args.report, "pins_tried": rep.pins_tried,
            "premium_accuracy": rep.premium_accuracy, "mean_accuracy": rep.mean_accuracy,
            "min_accuracy": rep.min_accuracy}


def cmd_report(args):
    model = load_model(args.model)
    data = load_dataset(args.data)
    pairs = eval_attack.make_pairs(data.labels, args.pairs, args.seed) if args.pairs else None
    targets = [float(t) for t in args.far.split(",")]
    reports = []
    if args.vault:
        vault = read_vault(args.vault)
        if args.pin:
            premium = install(model, vault.coords, unlock(vault, args.pin))
            reports.append(eval_attack.evaluate(premium, data, "premium", pairs, targets))
        wrong = eval_attack.draw_wrong_pins(1, args.seed, exclude=args.pin, p=vault.field.p)[0]
        degraded = install(model, vault.coords, unlock(vault, wrong))
        reports.append(eval_attack.evaluate(degraded, data, "wrong_pin", pairs, targets))
    else:
        reports.append(eval_attack.evaluate(model, data, "premium", pairs, targets))
    if args.decoys:
        d = _read_json(args.decoys)
        coords = [ParamCoordinate.from_json(c) for c in d["coords"]]
        base = model
        if args.vault and args.pin:
            base = install(model, vault.coords, unlock(vault, args.pin))
        reports.append(eval_attack.evaluate(install(base, coords, d["values"]), data, "degraded",
                                            pairs, targets))
    out = {"reports": [r.to_json() for r in reports]}
    _write_json(args.out, out)
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="premiumnn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-data", help="write a synthetic blob dataset container")
    s.add_argument("--config", help="pipeline config file (image size, noise, ...)")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--n", type=int, default=1000, help="number of images")
    s.add_argument("--seed", type=int, default=0, help="sample seed")
    s.set_defaults(func=cmd_make_data)

    s = sub.add_parser("train", help="train the toy ResNet and write per-epoch checkpoints")
    s.add_argument("--config", help="pipeline config file")
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.add_argument("--epochs", type=int, help="override the config's epoch count")
    s.add_argument("--seed", type=int, default=0, help="initialization and shuffling seed")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("select", help="choose the parameters to protect")
    s.add_argument("--strategy", required=True,
                   choices=["bn-full", "bn-dynamic", "conv-sampled"])
    s.add_argument("--checkpoints", required=True, help="checkpoint directory")
    s.add_argument("--layers", default="", help="comma-separated layer indices")
    s.add_argument("--r", type=float, default=1e-2, help="relative change threshold")
    s.add_argument("--k", type=int, default=1, help="trailing epochs that must be static")
    s.add_argument("--seed", type=int, default=0, help="sampling seed (conv-sampled)")
    s.add_argument("--out", required=True, help="selection.json path")
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("decoy", help="generate plausible replacement values")
    s.add_argument("--selection", required=True, help="selection.json")
    s.add_argument("--mode", choices=["match", "uniform"], default="uniform")
    s.add_argument("--lo", type=float, help="uniform lower bound")
    s.add_argument("--hi", type=float, help="uniform upper bound")
    s.add_argument("--checkpoints", help="model used for the default uniform range")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="decoys.json path")
    s.set_defaults(func=cmd_decoy)

    s = sub.add_parser("lock", help="seal the selected parameters under a PIN")
    s.add_argument("--selection", required=True, help="selection.json")
    s.add_argument("--checkpoints", required=True, help="trained checkpoint directory")
    s.add_argument("--pin", required=True, help="PIN, 1 to 16 digits")
    s.add_argument("--vault", required=True, help="output vault file")
    s.add_argument("--model-out", required=True, help="output directory for the shipped model")
    s.add_argument("--l", type=int, default=521, help="field degree")
    s.add_argument("--bits", type=int, default=8, help="bits per parameter")
    s.add_argument("--seed", type=int, default=None, help="seed for the padding bits")
    s.set_defaults(func=cmd_lock)

    s = sub.add_parser("infer", help="predict with the parameters decoded under a PIN")
    s.add_argument("--model", required=True, help="shipped model directory")
    s.add_argument("--vault", required=True, help="vault file")
    s.add_argument("--pin", required=True, help="PIN, 1 to 16 digits")
    s.add_argument("--input", help=".npy file holding one C,H,W image")
    s.add_argument("--data", help="dataset directory (with --index)")
    s.add_argument("--index", type=int, default=0, help="image index in --data")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("attack", help="simulate an attacker trying random 16-digit PINs")
    s.add_argument("--vault", required=True)
    s.add_argument("--model", required=True, help="shipped model directory")
    s.add_argument("--data", required=True, help="evaluation dataset directory")
    s.add_argument("--pins", type=int, default=100, help="number of PINs to try")
    s.add_argument("--pin", help="true PIN: excluded from draws, used for premium accuracy")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report", required=True, help="output report json")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("report", help="accuracy and FRR@FAR for premium/degraded modes")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--vault")
    s.add_argument("--pin")
    s.add_argument("--decoys", help="decoys.json to evaluate the degraded mode")
    s.add_argument("--pairs", type=int, default=2000, help="verification pairs (0 disables)")
    s.add_argument("--far", default="0.01,0.001", help="comma-separated FAR targets")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=stderr)
    try:
        result = args.func(args)
    except Exception as e:  # reported as a machine-readable error
        if os.environ.get("PREMIUMNN_DEBUG"):
            raise
        stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return 2
    stdout.write(json.dumps(result) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
