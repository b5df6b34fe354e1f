"""Command-line pipeline: gen-data, pretrain, adapt, eval, gradcheck, ablate.

Every command is reproducible from (config, seed); the only
non-deterministic output field is the single ``generated_at`` key in JSON
reports.  Failures exit non-zero with one ``error: ...`` line on stderr.
"""

import argparse
import copy
import datetime
import json
import os
import sys

from tripeer import model, synthdata, training
from tripeer.clustering import save_labels_csv
from tripeer.evaluation import evaluate_protocol, extract_features, save_per_query_csv
from tripeer.gradcheck import run_all
from tripeer.training import ABLATIONS, TrainConfig, load_config


def _load_cfg(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def _timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    os.makedirs(args.out, exist_ok=True)
    source, target = synthdata.bench_v1_datasets(cfg.seed)
    synthdata.save_csv(source, os.path.join(args.out, "source.csv"))
    synthdata.save_csv(target, os.path.join(args.out, "target.csv"))
    print(f"wrote {len(source)} source and {len(target)} target samples to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    os.makedirs(args.out, exist_ok=True)
    source = synthdata.load_csv(os.path.join(args.data, "source.csv"), domain=synthdata.SOURCE)
    with open(os.path.join(args.out, "pretrain_log.jsonl"), "w", encoding="utf-8") as log:
        state = training.pretrain_source(source, cfg, log_fh=log)
    ckpt = os.path.join(args.out, "pretrained.ckpt")
    model.save_ensemble(ckpt, state.ensemble)
    print(f"pretrained ensemble written to {ckpt}")
    return 0


def _load_state(path, cfg: TrainConfig) -> training.RunState:
    ens = model.load_ensemble(path)
    adam = [
        model.init_adam(
            peer,
            cfg.lr,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            eps=cfg.adam_eps,
            weight_decay=cfg.weight_decay,
        )
        for peer in ens.students
    ]
    return training.RunState(ensemble=ens, adam=adam)


def cmd_adapt(args) -> int:
    cfg = _load_cfg(args)
    os.makedirs(args.out, exist_ok=True)
    target = synthdata.load_csv(os.path.join(args.data, "target.csv"), domain=synthdata.TARGET)
    state = _load_state(args.state, cfg)
    with open(os.path.join(args.out, "train_log.jsonl"), "w", encoding="utf-8") as log:
        training.adapt(target, state, cfg, ablation=args.ablation, log_fh=log)
    model.save_ensemble(os.path.join(args.out, "adapted.ckpt"), state.ensemble)
    kept = training.keep_final_model(state, peer=cfg.keep_peer, use_teacher=cfg.keep_teacher)
    model.save_peer(os.path.join(args.out, "final_model.ckpt"), kept)
    if state.pseudo is not None:
        save_labels_csv(state.pseudo, os.path.join(args.out, "pseudo_labels.csv"))
    print(f"adapted ensemble and final model written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    os.makedirs(args.out, exist_ok=True)
    target = synthdata.load_csv(os.path.join(args.data, "target.csv"), domain=synthdata.TARGET)
    peer = model.load_peer(args.model)
    features = extract_features(peer.encoder, target.features)
    report = evaluate_protocol(target, features)
    path = os.path.join(args.out, "eval_report.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json(generated_at=_timestamp()) + "\n")
    if args.per_query_csv:
        save_per_query_csv(report, os.path.join(args.out, "per_query_ap.csv"))
    print(f"mAP {report.map:.4f} cmc@1 {report.cmc[1]:.4f} -> {path}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_all(n_instances=args.instances)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: max relative error {r.max_rel_error:.3e} (tolerance {r.tolerance:.0e})")
        failed = failed or not r.passed
    if failed:
        raise RuntimeError("gradient check failed")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    os.makedirs(args.out, exist_ok=True)
    target = synthdata.load_csv(os.path.join(args.data, "target.csv"), domain=synthdata.TARGET)
    base = model.load_ensemble(args.state)

    rows = {}
    for mode in (None,) + ABLATIONS:
        state = _load_state(args.state, cfg)
        state.ensemble = copy.deepcopy(base)
        training.adapt(target, state, cfg, ablation=mode)
        kept = training.keep_final_model(state, peer=cfg.keep_peer, use_teacher=cfg.keep_teacher)
        features = extract_features(kept.encoder, target.features)
        report = evaluate_protocol(target, features)
        rows["full" if mode is None else mode] = {
            "mAP": report.map,
            "cmc1": report.cmc[1],
            "cmc5": report.cmc[5],
            "cmc10": report.cmc[10],
        }

    path = os.path.join(args.out, "ablation.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"results": rows, "generated_at": _timestamp()}, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"{'mode':<10} {'mAP':>8} {'top-1':>8} {'top-5':>8} {'top-10':>8}")
    for name, row in rows.items():
        print(
            f"{name:<10} {row['mAP']:>8.4f} {row['cmc1']:>8.4f} {row['cmc5']:>8.4f} {row['cmc10']:>8.4f}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripeer",
        description="Three-peer self-distillation training on a synthetic domain-shift benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="write bench-v1 source/target CSV datasets")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="supervised pretraining on the source domain")
    common(p)
    p.add_argument("--data", required=True, help="directory holding source.csv")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="adaptation on the unlabeled target domain")
    common(p)
    p.add_argument("--data", required=True, help="directory holding target.csv")
    p.add_argument("--state", required=True, help="pretrained ensemble checkpoint")
    p.add_argument("--ablation", choices=ABLATIONS, help="drop one training component")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="retrieval evaluation of a kept model")
    common(p)
    p.add_argument("--data", required=True, help="directory holding target.csv")
    p.add_argument("--model", required=True, help="final model checkpoint")
    p.add_argument("--per-query-csv", action="store_true", help="also write per-query APs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all loss gradients")
    p.add_argument("--instances", type=int, default=20, help="random instances per loss")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="rerun adaptation with each component removed")
    common(p)
    p.add_argument("--data", required=True, help="directory holding target.csv")
    p.add_argument("--state", required=True, help="pretrained ensemble checkpoint")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
