"""Command line entry point: ``multirep {train,evaluate,verify-game,report}``."""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from multirep import evaluation, game_lab
from multirep.config import ConfigError, TRAINERS, load_config
from multirep.data import IdxFormatError, load_idx, load_split, stratified_subset
from multirep.model import Classifier, Ensemble, load_checkpoint, save_checkpoint
from multirep.trainers import (natural_pretrain, train_greedy, train_mwu_scalable,
                               train_round_robin, train_single)

log = logging.getLogger("multirep")


def _load_run_config(args):
    cfg = load_config(args.config)
    if getattr(args, "trainer", None):
        cfg.trainer = args.trainer
    if getattr(args, "subset", None):
        cfg.subset = args.subset
    if getattr(args, "h", None):
        cfg.mwu = replace(cfg.mwu, h=args.h)
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
        cfg.eval_seeds = [args.seed]
    if getattr(args, "restarts", None):
        cfg.eval_restarts = args.restarts
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    cfg.validate()
    if cfg.train_images is None or cfg.train_labels is None:
        raise ConfigError("[data] train_images/train_labels: required")
    return cfg


def train_one(cfg, seed, split):
    arms = cfg.training_arms()
    model = Classifier(cfg.architecture, cfg.input_shape, seed=seed)
    mwu = replace(cfg.mwu, seed=seed)
    natural_pretrain(model, split, cfg.pretrain_epochs, mwu.batch_size, mwu.learning_rate, seed)
    if cfg.trainer == "mwu":
        return train_mwu_scalable(model, arms, split, mwu)
    if cfg.trainer == "greedy":
        return train_greedy(model, arms, split, mwu)
    if cfg.trainer == "round_robin":
        return train_round_robin(model, arms, split, mwu)
    return train_single(model, arms[0], split, mwu)


def cmd_train(args):
    cfg = _load_run_config(args)
    split = load_split(cfg.train_images, cfg.train_labels, subset=cfg.subset,
                       split_seed=cfg.split_seed)
    for seed in cfg.seeds:
        out = os.path.join(cfg.out_dir, f"seed{seed}")
        os.makedirs(out, exist_ok=True)
        log.info("training %s (seed %d) on %d examples", cfg.trainer, seed, len(split.train_x))
        result = train_one(cfg, seed, split)
        save_checkpoint(os.path.join(out, "model.ckpt"), result.model)
        for snap in result.snapshots[-cfg.mwu.h:]:
            save_checkpoint(os.path.join(out, f"snapshot_t{snap.step}.ckpt"),
                            result.model.with_params(snap.params))
        result.log.write(os.path.join(out, "trainlog.jsonl"))
        print(out)
    return 0


def _test_data(cfg):
    if cfg.test_images is None:
        raise ConfigError("[data] test_images/test_labels: required for evaluation")
    x, y = load_idx(cfg.test_images, cfg.test_labels)
    if cfg.test_subset:
        keep = stratified_subset(y, cfg.test_subset, cfg.split_seed)
        x, y = x[keep], y[keep]
    if cfg.test_limit:
        x, y = x[:cfg.test_limit], y[:cfg.test_limit]
    return x, y


def cmd_evaluate(args):
    cfg = _load_run_config(args)
    models = [load_checkpoint(p) for p in args.checkpoint]
    model = models[0] if len(models) == 1 else Ensemble(
        [m.snapshot() for m in models], models[0])
    x, y = _test_data(cfg)
    report = evaluation.evaluate_all(model, cfg.arms, x, y, cfg.eval_seeds, cfg.eval_restarts)
    os.makedirs(cfg.out_dir, exist_ok=True)
    report.to_json(os.path.join(cfg.out_dir, "report.json"))
    report.to_csv(os.path.join(cfg.out_dir, "report.csv"))
    print(json.dumps({m: round(report.mean(m), 2) for m in report.metrics()}))
    return 0


def cmd_verify_game(args):
    rows = game_lab.run_game_suite(n_games=args.games, eps=args.eps,
                                   deltas=tuple(args.delta), seed=args.seed)
    convex = game_lab.run_convex_suite(n_traces=args.convex_traces, seed=args.seed)
    ok = all(r["pass"] for r in rows) and all(c.passed for c in convex)
    payload = {
        "games": rows,
        "convex_ensemble": [{"margin": c.margin, "pass": c.passed} for c in convex],
        "pass": ok,
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    passed = sum(r["pass"] for r in rows)
    print(f"theorem/regret checks: {passed}/{len(rows)} passed; "
          f"convex ensemble: {sum(c.passed for c in convex)}/{len(convex)} passed")
    return 0 if ok else 1


def cmd_report(args):
    reports = [evaluation.RobustnessReport.from_json(p) for p in args.inputs]
    merged = evaluation.merge_reports(reports)
    os.makedirs(args.out, exist_ok=True)
    merged.to_json(os.path.join(args.out, "report.json"))
    merged.to_csv(os.path.join(args.out, "report.csv"))
    for m in merged.metrics():
        print(f"{m:>20s}  {merged.mean(m):6.2f} ± {merged.std(m):5.2f}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="multirep", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model from a run config")
    tr.add_argument("--config", required=True)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--subset", type=int)
    tr.add_argument("--out")
    tr.add_argument("--trainer", choices=TRAINERS)
    tr.add_argument("--h", type=int)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="robustness report for checkpoint(s); several form an ensemble")
    ev.add_argument("--config", required=True)
    ev.add_argument("--checkpoint", required=True, action="append")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--restarts", type=int)
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_evaluate)

    vg = sub.add_parser("verify-game", help="exact matrix-game checks of the MWU guarantee")
    vg.add_argument("--games", type=int, default=100)
    vg.add_argument("--eps", type=float, default=0.1)
    vg.add_argument("--delta", type=float, action="append", default=None)
    vg.add_argument("--convex-traces", type=int, default=20)
    vg.add_argument("--seed", type=int, default=0)
    vg.add_argument("--out")
    vg.set_defaults(func=cmd_verify_game)

    rp = sub.add_parser("report", help="merge per-seed JSON reports into mean ± std tables")
    rp.add_argument("inputs", nargs="+")
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "delta", 0) is None:
        args.delta = [0.0, 0.05]
    try:
        return args.func(args)
    except (ConfigError, IdxFormatError, OSError, ValueError) as exc:
        print(f"multirep {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
