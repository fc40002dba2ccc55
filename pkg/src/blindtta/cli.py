"""Command-line interface.

Verbs:
    rig build        train and persist the desk-scale model zoo
    attack           run a configured experiment (attack -> evaluate -> estimate)
    evaluate         recompute the EvalReport from persisted artifacts
    estimate         one-off measurement on persisted artifacts
    analyze          pcc matrix / complementary-pool selection from a table
    tune             black-box parameter search for the composite transform
    report           emit figures from persisted artifacts

The artifact root defaults to ./artifacts and can be overridden with the
BLINDTTA_ARTIFACTS environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np


def _cmd_rig_build(args) -> int:
    from .harness.rig import build_desk_rig
    manifest = build_desk_rig(
        seed=args.seed, out_dir=args.out, class_count=args.classes,
        train_size=args.train_size, architectures=args.architectures,
        image_size=args.image_size, accuracy_floor=args.accuracy_floor)
    for entry in manifest.entries:
        print(f"{entry.model_id}: {entry.role}, test acc {entry.test_accuracy:.1%}")
    print(f"rig manifest hash {manifest.manifest_hash}")
    print(f"written to {args.out}")
    return 0


def _cmd_attack(args) -> int:
    from .harness.experiment import run_experiment
    out = run_experiment(args.config, out_dir=args.out)
    print(f"artifacts in {out}")
    return 0


def _cmd_evaluate(args) -> int:
    from .harness.experiment import reevaluate
    report = reevaluate(args.artifacts, args.rig)
    print(report.to_json())
    if args.out:
        Path(args.out).write_text(report.to_json())
    return 0


def _cmd_estimate(args) -> int:
    import torch

    from . import basics, estimators
    from .harness.dataset import load_dataset
    from .harness.experiment import load_attack_artifacts
    from .harness.rig import load_models, load_rig, surrogate_and_victims

    rig = load_rig(args.rig)
    handles = load_models(args.rig, rig)
    surrogate, victims = surrogate_and_victims(handles)
    manifest, x_clean = load_dataset(
        args.dataset or str(Path(args.rig) / rig.eval_manifest),
        (rig.image_size, rig.image_size), rig.class_count)
    x_adv, _ = load_attack_artifacts(args.artifacts)
    n = min(len(manifest), x_adv.shape[0])
    x_clean, x_adv = x_clean[:n], x_adv[:n]
    y_t = manifest.target_labels[:n]
    grid = basics.intensity_grid(args.intensity_points)

    if args.kind == "alignment":
        phi = estimators.extract_representations(surrogate, x_clean, "clean")
        phi_adv = estimators.extract_representations(surrogate, x_adv, "adversarial")
        k = max(1, n // 10)
        value = estimators.knn_overlap_alignment(phi_adv, phi, k)
        print(json.dumps({"self_alignment": value, "k": k}))
    elif args.kind == "self-transfer":
        scores = {kind: estimators.self_transferability(
            surrogate, kind, x_adv, x_clean, y_t, grid) for kind in basics.KINDS}
        print(json.dumps({"mean": float(np.mean(list(scores.values()))),
                          "per_kind": scores}, indent=2))
    elif args.kind == "blackbox":
        value = estimators.blackbox_transferability(victims, x_adv, x_clean, y_t)
        print(json.dumps({"blackbox_transferability": value}))
    elif args.kind == "consensus":
        from .attack import resolve_transform
        from .rng import RngState
        transform = resolve_transform("scale-composite", {})
        div = estimators.diversity_metric(surrogate, transform, x_clean,
                                          manifest.true_labels[:n], RngState(0))
        iou = float(np.mean([estimators.attention_deviation(
            surrogate, x_clean[i], basics.enumerate_variants("scaling", 0.5)[0],
            int(y_t[i])) for i in range(min(8, n))]))
        print(json.dumps({"diversity_ce": div, "attention_deviation_iou": iou}))
    return 0


def _cmd_analyze(args) -> int:
    from .analysis import STTable, pcc_matrix, select_complementary
    table = STTable.from_json(Path(args.table).read_text())
    if args.kind == "pcc":
        matrix = pcc_matrix(table)
        print(json.dumps({"labels": table.column_labels, "pcc": matrix.tolist()}, indent=2))
        if args.plot:
            from .harness.plots import plot_pcc_heatmap
            plot_pcc_heatmap(matrix, table.column_labels, args.plot)
            print(f"heatmap written to {args.plot}")
    else:  # select-aug
        matrix = pcc_matrix(table)
        ref = table.column_labels.index(args.reference)
        row = {lbl: matrix[ref, i] for i, lbl in enumerate(table.column_labels)
               if lbl != args.reference}
        selected = select_complementary(row, args.n)
        print(json.dumps({"selected": selected}))
    return 0


def _cmd_tune(args) -> int:
    from . import basics
    from .analysis import SearchSpace, bayes_tune, tuning_objective, write_trial_log
    from .attack import AttackConfig
    from .harness.dataset import load_dataset
    from .harness.rig import load_models, load_rig, surrogate_and_victims

    rig = load_rig(args.rig)
    handles = load_models(args.rig, rig)
    surrogate, _ = surrogate_and_victims(handles)
    manifest, images = load_dataset(str(Path(args.rig) / rig.tune_manifest),
                                    (rig.image_size, rig.image_size), rig.class_count)
    targets = manifest.target_labels
    budget = AttackConfig(T=args.attack_iters, kernel_size=3, ti_sigma=0.9,
                          seed=args.seed)
    grid = basics.intensity_grid(args.intensity_points)

    def objective(params):
        return tuning_objective(surrogate, images, targets, params, budget, grid)

    best, log = bayes_tune(objective, SearchSpace(), trials=args.trials,
                           init_random=args.init_random, seed=args.seed)
    write_trial_log(log, args.log)
    print(best.to_json())
    return 0


def _cmd_report(args) -> int:
    from .harness.experiment import reevaluate
    from .harness.plots import plot_tsuc_vs_time
    report = reevaluate(args.artifacts, args.rig)
    points = {v.model_id: (report.seconds_per_image, v.tsuc) for v in report.per_victim}
    out = Path(args.artifacts) / "plots"
    out.mkdir(exist_ok=True)
    plot_tsuc_vs_time(points, out / "tsuc_vs_time.png")
    print(f"report figures in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blindtta", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    rig = sub.add_parser("rig", help="model zoo management")
    rig_sub = rig.add_subparsers(dest="rig_command", required=True)
    build = rig_sub.add_parser("build", help="train and persist the desk rig")
    build.add_argument("--seed", type=int, default=7)
    build.add_argument("--out", required=True)
    build.add_argument("--classes", type=int, default=10)
    build.add_argument("--train-size", type=int, default=2400)
    build.add_argument("--image-size", type=int, default=48)
    build.add_argument("--accuracy-floor", type=float, default=0.8)
    build.add_argument("--architectures", nargs="+",
                       default=["conv-plain", "conv-maxpool", "conv-depthwise"])
    build.set_defaults(fn=_cmd_rig_build)

    atk = sub.add_parser("attack", help="run a configured experiment")
    atk.add_argument("--config", required=True)
    atk.add_argument("--out", default=None)
    atk.set_defaults(fn=_cmd_attack)

    ev = sub.add_parser("evaluate", help="recompute the EvalReport from artifacts")
    ev.add_argument("--artifacts", required=True)
    ev.add_argument("--rig", required=True)
    ev.add_argument("--out", default=None)
    ev.set_defaults(fn=_cmd_evaluate)

    est = sub.add_parser("estimate", help="one-off measurement on artifacts")
    est.add_argument("kind", choices=["alignment", "self-transfer", "blackbox", "consensus"])
    est.add_argument("--artifacts", required=True)
    est.add_argument("--rig", required=True)
    est.add_argument("--dataset", default=None)
    est.add_argument("--intensity-points", type=int, default=11)
    est.set_defaults(fn=_cmd_estimate)

    an = sub.add_parser("analyze", help="correlation analysis on a table")
    an.add_argument("kind", choices=["pcc", "select-aug"])
    an.add_argument("--table", required=True)
    an.add_argument("--reference", default="scaling")
    an.add_argument("--n", type=int, default=5)
    an.add_argument("--plot", default=None)
    an.set_defaults(fn=_cmd_analyze)

    tune = sub.add_parser("tune", help="black-box parameter search")
    tune.add_argument("--rig", required=True)
    tune.add_argument("--trials", type=int, default=100)
    tune.add_argument("--init-random", type=int, default=10)
    tune.add_argument("--seed", type=int, default=0)
    tune.add_argument("--attack-iters", type=int, default=300)
    tune.add_argument("--intensity-points", type=int, default=10)
    tune.add_argument("--log", default="tune_log.jsonl")
    tune.set_defaults(fn=_cmd_tune)

    rep = sub.add_parser("report", help="emit figures from artifacts")
    rep.add_argument("--artifacts", required=True)
    rep.add_argument("--rig", required=True)
    rep.set_defaults(fn=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
