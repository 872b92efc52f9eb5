"""Command-line entry point: ``buir {prepare,train,evaluate,recommend,compare}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import checkpoint as ckpt
from .config import MODELS, RunConfig, load_config, save_config
from .data import (build_adjacency, filter_long_tail, parse_interactions,
                   read_split, split_per_user, write_split)
from .errors import DataError, NumericalError
from .evaluation import EvalConfig, aggregate, evaluate_model, top_k, write_report
from .training import Trainer, build_model, derive_seeds

_logger = logging.getLogger("buir")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CONFIG_FILE = "config.json"
BEST_CHECKPOINT = "checkpoint_best.bin"
FINAL_CHECKPOINT = "checkpoint_final.bin"
FINAL_OPTIMIZER = "optimizer_final.bin"
TRAIN_LOG = "train_log.tsv"
REPORT = "report"
COMPARE = "compare"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration; flags override it")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--threads", type=int, help="evaluation threads")
    p.add_argument("--data-dir", help="prepared split directory")
    p.add_argument("--k", type=int, nargs="+", help="cut-offs K")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--max-drop-prob", type=float)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--sampler", choices=("uniform", "static_global", "adaptive_contextual"))
    p.add_argument("--negatives", type=int)
    p.add_argument("--score-mode", choices=("inner_product", "cross_prediction"))
    p.add_argument("--epochs", type=int, help="maximum number of epochs")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="buir", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="filter and split a raw interaction log")
    _common(p)
    p.add_argument("--input", help="raw interactions file")
    p.add_argument("--beta", type=float, help="per-user training fraction")
    p.add_argument("--min-user", type=int, help="minimum interactions per user")
    p.add_argument("--min-item", type=int, help="minimum interactions per item")

    p = sub.add_parser("train", help="train one model on a prepared split")
    _common(p)
    _model_flags(p)

    p = sub.add_parser("evaluate", help="test-phase metrics for one or more checkpoints")
    _common(p)
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--seeds", type=int, nargs="+", help="seed label per checkpoint")

    p = sub.add_parser("recommend", help="top-K items for given raw user ids")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--users", nargs="+", required=True, help="raw user ids")

    p = sub.add_parser("compare", help="train two configurations per seed on shared splits")
    _common(p)
    p.add_argument("--config-a", required=True)
    p.add_argument("--config-b", required=True)
    p.add_argument("--seeds", type=int, nargs="+")
    return parser


def resolve_config(args) -> RunConfig:
    """Config file (or defaults) with command-line flags applied on top."""
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    get = lambda name: getattr(args, name, None)  # noqa: E731

    top = {}
    for flag, key in (("model", "model"), ("dim", "dim"), ("score_mode", "score_mode"),
                      ("threads", "threads"), ("data_dir", "data_dir"), ("input", "input_path"),
                      ("min_user", "min_user_interactions"), ("min_item", "min_item_interactions")):
        if get(flag) is not None:
            top[key] = get(flag)
    if get("seed") is not None:
        top["seeds"] = (get("seed"),)
    elif get("seeds"):
        top["seeds"] = tuple(get("seeds"))

    def sub(obj, **pairs):
        changes = {k: v for k, v in pairs.items() if v is not None}
        return dataclasses.replace(obj, **changes) if changes else obj

    augment = sub(cfg.train.augment, max_drop_probability=get("max_drop_prob"),
                  enabled=False if get("no_augment") else None)
    top["train"] = sub(cfg.train, momentum_tau=get("tau"), max_epochs=get("epochs"),
                       batch_size=get("batch_size"), early_stop_patience=get("patience"),
                       augment=augment)
    top["optim"] = sub(cfg.optim, learning_rate=get("lr"), weight_decay=get("weight_decay"))
    top["lgcn"] = sub(cfg.lgcn, num_layers=get("layers"))
    top["sampler"] = sub(cfg.sampler, strategy=get("sampler"), negatives_per_positive=get("negatives"))
    top["split"] = sub(cfg.split, train_ratio=get("beta"))
    top["eval"] = sub(cfg.eval, k_values=tuple(get("k")) if get("k") else None)
    cfg = cfg.replace(**top)
    seeds = derive_seeds(cfg.seeds[0])
    train = dataclasses.replace(cfg.train, seed=cfg.seeds[0])
    return cfg.replace(split=dataclasses.replace(cfg.split, seed=seeds["split"]), train=train)


def _out_dir(args, default=None) -> str:
    out = args.out_dir or default
    if out is None:
        raise UsageError("--out-dir is required")
    os.makedirs(out, exist_ok=True)
    return out


def _load_raw(cfg: RunConfig):
    if not cfg.input_path:
        raise UsageError("an input file is required (--input or input_path in the config)")
    data = parse_interactions(cfg.input_path)
    return filter_long_tail(data, cfg.min_user_interactions, cfg.min_item_interactions)


def _load_split(cfg: RunConfig):
    if not cfg.data_dir:
        raise UsageError("a prepared split is required (--data-dir or data_dir in the config)")
    return read_split(cfg.data_dir)


def cmd_prepare(args) -> int:
    cfg = resolve_config(args)
    data = _load_raw(cfg)
    split = split_per_user(data, cfg.split)
    out = _out_dir(args)
    write_split(split, out)
    save_config(cfg.replace(data_dir=out), os.path.join(out, CONFIG_FILE))
    n_val = sum(s.size for s in split.validation)
    n_test = sum(s.size for s in split.test)
    print(f"users={data.num_users} items={data.num_items} interactions={len(data)} "
          f"train={len(split.train)} valid={n_val} test={n_test}")
    return EXIT_OK


def train_run(cfg: RunConfig, split, seed: int, out_dir: str | None = None):
    """Train ``cfg.model`` on ``split`` from master ``seed``; optionally write
    the run directory. Returns ``(result, trainer)``."""
    model = build_model(cfg.model, split.num_users, split.num_items, cfg.dim, seed,
                        cfg.lgcn.num_layers, cfg.score_mode)
    trainer = Trainer(model, split, dataclasses.replace(cfg.train, seed=seed), cfg.optim,
                      cfg.sampler, seed=seed, threads=cfg.threads)
    log = None
    if out_dir is not None:
        log = open(os.path.join(out_dir, TRAIN_LOG), "w", encoding="utf-8")
        log.write("epoch\tloss\tval_p10\n")

    def on_epoch(rec):
        if log is not None:
            log.write(f"{rec.epoch}\t{rec.loss:.8f}\t{rec.val_p10:.6f}\n")
        _logger.info("epoch %d loss %.5f val P@10 %.4f", rec.epoch, rec.loss, rec.val_p10)

    try:
        result = trainer.fit(on_epoch)
    finally:
        if log is not None:
            log.close()
    if out_dir is not None:
        tau = cfg.train.momentum_tau
        ckpt.save_checkpoint(os.path.join(out_dir, BEST_CHECKPOINT), result.best_model, tau)
        ckpt.save_checkpoint(os.path.join(out_dir, FINAL_CHECKPOINT), result.model, tau)
        ckpt.save_optimizer_state(os.path.join(out_dir, FINAL_OPTIMIZER), trainer.state,
                                  trainer.rng_states())
    return result, trainer


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    split = _load_split(cfg)
    out = _out_dir(args)
    save_config(cfg, os.path.join(out, CONFIG_FILE))
    result, _ = train_run(cfg, split, cfg.seeds[0], out)
    last = result.history[-1] if result.history else None
    msg = f"best epoch {result.best_epoch}"
    if last is not None:
        msg += f", last epoch {last.epoch} loss {last.loss:.5f} val P@10 {last.val_p10:.4f}"
    print(msg)
    return EXIT_OK


def _check_dims(header, split, path):
    if header["num_users"] != split.num_users or header["num_items"] != split.num_items:
        raise DataError(f"{path}: checkpoint is {header['num_users']}x{header['num_items']} "
                        f"but the split has {split.num_users} users and {split.num_items} items")


def _print_report(agg) -> None:
    print("metric\tK\tmean\tstd")
    for key in agg.keys():
        print(f"{key[0]}\t{key[1]}\t{agg.mean(key):.6f}\t{agg.std(key):.6f}")


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    split = _load_split(cfg)
    adj = build_adjacency(split.train)
    labels = args.seeds or list(range(len(args.checkpoint)))
    if len(labels) != len(args.checkpoint):
        raise UsageError("--seeds needs one label per checkpoint")
    reports = []
    eval_cfg = EvalConfig(cfg.eval.k_values, "test")
    for path, seed in zip(args.checkpoint, labels):
        model, header = ckpt.load_checkpoint(path)
        _check_dims(header, split, path)
        report = evaluate_model(model, split, eval_cfg, adj=adj, threads=cfg.threads)
        report.seed = seed
        reports.append(report)
    agg = aggregate(reports)
    out = _out_dir(args, os.path.dirname(os.path.abspath(args.checkpoint[0])))
    write_report(agg, os.path.join(out, REPORT))
    _print_report(agg)
    return EXIT_OK


def cmd_recommend(args) -> int:
    cfg = resolve_config(args)
    split = _load_split(cfg)
    model, header = ckpt.load_checkpoint(args.checkpoint)
    _check_dims(header, split, args.checkpoint)
    k = cfg.eval.k_values[0]
    index = split.train.user_index()
    missing = [u for u in args.users if u not in index]
    if missing:
        raise DataError(f"unknown user id(s): {', '.join(missing)}")
    score = model.scorer(build_adjacency(split.train))
    train_items = split.train_items()
    item_vocab = split.train.item_vocab
    lines = ["user\trank\titem\tscore"]
    for raw in args.users:
        u = index[raw]
        scores = score([u])[0]
        for rank, item in enumerate(top_k(scores, k, train_items[u]), start=1):
            lines.append(f"{raw}\t{rank}\t{item_vocab[item]}\t{scores[item]:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out_dir:
        with open(os.path.join(_out_dir(args), "recommendations.tsv"), "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def _same_split(a: RunConfig, b: RunConfig) -> bool:
    keys = ("input_path", "data_dir", "min_user_interactions", "min_item_interactions")
    return (all(getattr(a, k) == getattr(b, k) for k in keys)
            and a.split.train_ratio == b.split.train_ratio
            and a.split.min_train_per_user == b.split.min_train_per_user)


def compare_runs(cfg_a: RunConfig, cfg_b: RunConfig, seeds, out_dir: str | None = None):
    """Train both configs per seed on the seed's split; return per-seed
    test reports ``(reports_a, reports_b)``."""
    if not _same_split(cfg_a, cfg_b):
        raise UsageError("both configurations must reference the same data and split settings")
    raw = _load_raw(cfg_a) if cfg_a.input_path else None
    fixed = None if raw is not None else _load_split(cfg_a)
    reports_a, reports_b = [], []
    for seed in seeds:
        if raw is not None:
            split = split_per_user(raw, dataclasses.replace(cfg_a.split, seed=derive_seeds(seed)["split"]))
        else:
            split = fixed
        for cfg, reports, tag in ((cfg_a, reports_a, "a"), (cfg_b, reports_b, "b")):
            run_dir = None
            if out_dir is not None:
                run_dir = os.path.join(out_dir, f"seed_{seed}", tag)
                os.makedirs(run_dir, exist_ok=True)
            result, trainer = train_run(cfg, split, seed, run_dir)
            eval_cfg = EvalConfig(cfg_a.eval.k_values, "test")
            report = evaluate_model(result.best_model, split, eval_cfg, adj=trainer.adj,
                                    threads=cfg.threads)
            report.seed = seed
            reports.append(report)
    return reports_a, reports_b


def write_comparison(reports_a, reports_b, path_prefix: str, names=("a", "b")) -> list[dict]:
    agg_a, agg_b = aggregate(reports_a), aggregate(reports_b)
    rows = []
    for key in agg_a.keys():
        ma, mb = agg_a.mean(key), agg_b.mean(key)
        rows.append({"metric": key[0], "K": key[1], names[0]: ma, names[1]: mb, "delta": ma - mb,
                     f"{names[0]}_per_seed": [r.values[key] for r in reports_a],
                     f"{names[1]}_per_seed": [r.values[key] for r in reports_b]})
    with open(path_prefix + ".tsv", "w", encoding="utf-8") as fh:
        fh.write(f"metric\tK\t{names[0]}\t{names[1]}\tdelta\n")
        for r in rows:
            fh.write(f"{r['metric']}\t{r['K']}\t{r[names[0]]:.6f}\t{r[names[1]]:.6f}\t{r['delta']:+.6f}\n")
    with open(path_prefix + ".json", "w", encoding="utf-8") as fh:
        json.dump({"seeds": [r.seed for r in reports_a], "rows": rows}, fh, indent=2)
        fh.write("\n")
    return rows


def cmd_compare(args) -> int:
    shared = {"seed": None, "seeds": args.seeds, "threads": args.threads, "data_dir": args.data_dir,
              "k": args.k}
    cfgs = []
    for path in (args.config_a, args.config_b):
        cfgs.append(resolve_config(argparse.Namespace(config=path, **shared)))
    seeds = args.seeds or list(cfgs[0].seeds)
    out = _out_dir(args)
    save_config(cfgs[0], os.path.join(out, "config_a.json"))
    save_config(cfgs[1], os.path.join(out, "config_b.json"))
    reports_a, reports_b = compare_runs(cfgs[0], cfgs[1], seeds, out)
    names = (cfgs[0].model, cfgs[1].model) if cfgs[0].model != cfgs[1].model else ("a", "b")
    rows = write_comparison(reports_a, reports_b, os.path.join(out, COMPARE), names)
    print(f"metric\tK\t{names[0]}\t{names[1]}\tdelta")
    for r in rows:
        print(f"{r['metric']}\t{r['K']}\t{r[names[0]]:.6f}\t{r[names[1]]:.6f}\t{r['delta']:+.6f}")
    return EXIT_OK


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "evaluate": cmd_evaluate,
            "recommend": cmd_recommend, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError) as exc:
        print(f"buir {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"buir {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"buir {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
