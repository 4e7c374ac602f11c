"""Command-line entry point: ``wbcreid {synth,train,eval,gradcheck,ablate}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as kv
from .ablation import run_ablation
from .dataio import ConfigurationError, SynthConfig, load_dataset, resplit_probe_gallery, synth_generate
from .evaluation import evaluate
from .gradcheck import CHECKS, TOLERANCE, Sizes, run_gradchecks
from .loss import LossConfig
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .trainer import SGDConfig, train

PREFIXES = ("model.", "sgd.", "loss.")


class UsageError(Exception):
    pass


def _read_config(path, overrides) -> dict:
    try:
        values = kv.load_kv(path) if path else {}
    except FileNotFoundError as e:
        raise UsageError(str(e)) from None
    values.update(kv.parse_overrides(overrides))
    return values


def training_configs(values: dict):
    """Model, optimizer and loss configs from prefixed keys over desk-scale defaults."""
    kv.check_known(values, PREFIXES)
    model_cfg = kv.build(ModelConfig, values, "model.")
    sgd_cfg = kv.build(SGDConfig, values, "sgd.", base=SGDConfig.desk())
    loss_cfg = kv.build(LossConfig, values, "loss.")
    return model_cfg, sgd_cfg, loss_cfg


def cmd_synth(args) -> int:
    values = _read_config(args.config, args.set)
    values = {k.removeprefix("synth."): v for k, v in values.items()}
    cfg = kv.build(SynthConfig, values)
    manifest = synth_generate(cfg, args.out)
    print(f"wrote {len(manifest.samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    model_cfg, sgd_cfg, loss_cfg = training_configs(_read_config(args.config, args.set))
    data = load_dataset(args.data).subset("train")
    if len(data.labels) == 0:
        raise ConfigurationError(f"dataset {args.data} has no train split")
    params, log = train(data.images, data.labels, model_cfg, sgd_cfg, loss_cfg)
    out = Path(args.out)
    save_checkpoint(params, out)
    (out / "log.csv").write_text(log.to_csv())
    if log.rows:
        it, lr, loss, active = log.rows[-1]
        print(f"iter {it}: lr {lr:g} loss {loss:.6f} active {active:.3f}")
    print(f"checkpoint written to {out}")
    return 0


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    if args.resplit:
        data = resplit_probe_gallery(data.subset("train"))
    probe, gallery = data.subset("probe"), data.subset("gallery")
    if len(probe.labels) == 0 or len(gallery.labels) == 0:
        raise ConfigurationError("dataset has no probe/gallery split; pass --resplit to split the train set")
    report = evaluate(params, (probe.images, probe.labels), (gallery.images, gallery.labels))
    out = Path(args.out)
    fmt = args.format or ("json" if out.suffix == ".json" else "csv")
    out.write_text(report.to_json() if fmt == "json" else report.to_csv())
    print(f"rank-1 {report.rank(1):.4f} rank-5 {report.rank(5):.4f} mAP {report.mAP:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    sizes = Sizes(args.side, args.channels, args.parts, args.embed_dim)
    results = run_gradchecks(args.seed, sizes, args.instances, args.corrupt)
    width = max(len(r.op) for r in results)
    for r in results:
        print(f"{r.op:<{width}}  max_rel_err {r.max_error:.3e}  {'PASS' if r.passed else 'FAIL'}")
    failed = [r.op for r in results if not r.passed]
    print(f"max relative error {max(r.max_error for r in results):.3e} (tolerance {TOLERANCE:g})")
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 1
    return 0


def cmd_ablate(args) -> int:
    model_cfg, sgd_cfg, loss_cfg = training_configs(_read_config(args.config, args.set))
    sweep = tuple(int(s) for s in args.sweep.split(",") if s.strip())
    result = run_ablation(load_dataset(args.data), model_cfg, sgd_cfg, loss_cfg, args.seeds, sweep)
    text = result.to_csv()
    Path(args.out).write_text(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wbcreid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def overrides(sp):
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    s = sub.add_parser("synth", help="generate a synthetic identity dataset")
    s.add_argument("--config", required=True, help="key = value file of generator settings")
    s.add_argument("--out", required=True, help="dataset directory to create")
    overrides(s)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model on the train split")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--config", required=True, help="key = value file with model.*, sgd.*, loss.* keys")
    t.add_argument("--out", required=True, help="checkpoint directory (also receives log.csv)")
    overrides(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="CMC / mAP of a checkpoint on probe vs gallery")
    e.add_argument("--checkpoint", required=True, help="checkpoint directory or checkpoint.json")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--out", required=True, help="report path (.csv or .json)")
    e.add_argument("--format", choices=("csv", "json"), help="report format; default from --out suffix")
    e.add_argument("--resplit", action="store_true", help="evaluate on the train split re-divided into probe/gallery")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="certify backward passes against finite differences")
    g.add_argument("--seed", type=int, default=0, help="seed for the random instances")
    g.add_argument("--instances", type=int, default=20, help="random instances per operation")
    g.add_argument("--side", type=int, default=4, help="feature map height and width")
    g.add_argument("--channels", type=int, default=4, help="feature channels C")
    g.add_argument("--parts", type=int, default=2, help="part count L")
    g.add_argument("--embed-dim", type=int, default=3, help="embedding size D")
    g.add_argument("--corrupt", choices=sorted(CHECKS), help="test hook: perturb one op's gradient")
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="compare the four variants and sweep the part count")
    a.add_argument("--data", required=True, help="dataset directory with train/probe/gallery splits")
    a.add_argument("--config", help="key = value file with model.*, sgd.*, loss.* keys")
    a.add_argument("--out", required=True, help="CSV output path")
    a.add_argument("--seeds", type=int, default=1, help="seeds per configuration; metrics are medians")
    a.add_argument("--sweep", default="1,3,5,8", help="comma-separated WBC_PART part counts")
    overrides(a)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as e:
        print(f"wbcreid {args.command}: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"wbcreid {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
