"""Experiment orchestration: attack -> evaluate -> estimate, with artifacts.

An experiment is one declarative JSON config naming the rig, dataset,
attack recipe, and requested measurements. Stages run in order and write
into a single artifact directory; a stage failure leaves partial artifacts
plus a failure marker naming the stage.

Artifact layout (stable):

    config.json            echo of the experiment config
    adv/adv_*.png          adversarial images (8-bit lossless)
    adv_manifest.json      attack config, per-image distances, traces
    eval_report.json       tSuc/uSuc per victim
    metrics/<name>.json    estimator outputs
    plots/*.png            requested figures
    status.json            "ok" or the failed stage
"""

from __future__ import annotations

import json
import os
import time
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .. import basics, estimators
from ..attack import AttackConfig, resolve_transform, tmi_attack
from ..rng import RngState
from . import plots
from .dataset import load_dataset
from .evaluate import EvalReport, evaluate
from .persistence import load_attack_artifacts, save_attack_artifacts
from .rig import load_models, load_rig, surrogate_and_victims

ARTIFACT_ROOT_ENV = "BLINDTTA_ARTIFACTS"


def artifact_root(default: str = "artifacts") -> Path:
    return Path(os.environ.get(ARTIFACT_ROOT_ENV, default))


def _write_status(out_dir: Path, status: str, stage: Optional[str] = None,
                  error: Optional[str] = None) -> None:
    payload = {"status": status}
    if stage:
        payload["stage"] = stage
    if error:
        payload["error"] = error
    with (out_dir / "status.json").open("w") as fh:
        json.dump(payload, fh, indent=2)


def run_experiment(config_path, out_dir=None) -> Path:
    """Execute the configured stages; returns the artifact directory."""
    config_path = Path(config_path)
    with config_path.open() as fh:
        config = json.load(fh)

    name = config.get("name", config_path.stem)
    out_dir = Path(out_dir) if out_dir else artifact_root() / name
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics").mkdir(exist_ok=True)
    (out_dir / "plots").mkdir(exist_ok=True)
    with (out_dir / "config.json").open("w") as fh:
        json.dump(config, fh, indent=2)

    stage = "setup"
    try:
        rig_dir = Path(config["rig_dir"])
        if not rig_dir.is_absolute():
            rig_dir = config_path.parent / rig_dir
        rig = load_rig(rig_dir)
        handles = load_models(rig_dir, rig)
        surrogate, victims = surrogate_and_victims(handles)
        if config.get("victim_ids"):
            victims = [handles[v] for v in config["victim_ids"]]
        dataset_path = config.get("dataset") or str(rig_dir / rig.eval_manifest)
        if not Path(dataset_path).is_absolute():
            dataset_path = str((config_path.parent / dataset_path).resolve())
        image_size = (rig.image_size, rig.image_size)
        manifest, x_clean = load_dataset(dataset_path, image_size, rig.class_count)
        limit = config.get("sample_limit")
        if limit:
            manifest.entries = manifest.entries[:limit]
            x_clean = x_clean[:limit]
        y_t = manifest.target_labels

        attack_cfg = AttackConfig.from_dict(config["attack"])
        transform = resolve_transform(attack_cfg.transform_id, attack_cfg.transform_params)

        stage = "attack"
        snapshot_iters = config.get("snapshot_iters", [])
        result = tmi_attack(surrogate, x_clean, y_t, attack_cfg, transform=transform,
                            snapshot_iters=snapshot_iters)
        save_attack_artifacts(out_dir, result, x_clean, attack_cfg,
                              exact_replay=config.get("exact_replay", False))

        stage = "evaluate"
        x_adv_q, _ = load_attack_artifacts(out_dir)
        seconds_per_image = result.elapsed_seconds / x_clean.shape[0]
        report = evaluate(victims, x_adv_q, manifest, x_clean=x_clean,
                          config_echo=attack_cfg.to_dict())
        report.seconds_per_image = seconds_per_image
        with (out_dir / "eval_report.json").open("w") as fh:
            fh.write(report.to_json())

        if snapshot_iters:
            curves = {}
            for victim in victims:
                pts = []
                for it in sorted(result.snapshots):
                    snap_report = evaluate([victim], result.snapshots[it], manifest,
                                           x_clean=x_clean)
                    pts.append((it, snap_report.per_victim[0].tsuc))
                pts.append((attack_cfg.T, next(v.tsuc for v in report.per_victim
                                               if v.model_id == victim.model_id)))
                curves[victim.model_id] = pts
            plots.plot_tsuc_vs_iteration(curves, out_dir / "plots" / "tsuc_vs_iteration.png")

        stage = "estimate"
        for metric in config.get("estimators", []):
            _run_estimator(metric, out_dir, surrogate, victims, result.x_adv,
                           x_clean, y_t, manifest.true_labels, config)

        _write_status(out_dir, "ok")
        return out_dir
    except Exception as exc:  # noqa: BLE001 - partial artifacts stay on disk
        _write_status(out_dir, "failed", stage=stage, error=repr(exc))
        raise


def _run_estimator(metric: str, out_dir: Path, surrogate, victims, x_adv,
                   x_clean, y_t, y_true, config) -> None:
    grid = basics.intensity_grid(config.get("intensity_points", 11))
    out_path = out_dir / "metrics" / f"{metric.replace(':', '_')}.json"
    if metric == "alignment":
        phi = estimators.extract_representations(surrogate, x_clean, "clean")
        phi_adv = estimators.extract_representations(surrogate, x_adv, "adversarial")
        k = max(1, len(phi) // 10)
        rows = {"alignment_clean_victims": float(np.mean([
            estimators.knn_overlap_alignment(
                phi, estimators.extract_representations(v, x_clean, "clean"), k)
            for v in victims])),
            "self_alignment_adv": estimators.knn_overlap_alignment(phi_adv, phi, k),
            "k": k}
        report = estimators.MetricReport("alignment", rows["alignment_clean_victims"],
                                         provenance=rows)
    elif metric == "self-transfer":
        scores = {kind: estimators.self_transferability(surrogate, kind, x_adv,
                                                        x_clean, y_t, grid)
                  for kind in basics.KINDS}
        report = estimators.MetricReport("self-transfer",
                                         float(np.mean(list(scores.values()))),
                                         breakdown=list(scores.values()),
                                         provenance={"per_kind": scores})
        curves = {kind: [(s, estimators.self_transferability(
            surrogate, kind, x_adv, x_clean, y_t, basics.IntensityGrid((s,))))
            for s in grid] for kind in ("scaling", "rotation")}
        plots.plot_intensity_response(curves, out_dir / "plots" / "intensity_response.png")
    elif metric == "blackbox":
        value = estimators.blackbox_transferability(victims, x_adv, x_clean, y_t)
        report = estimators.MetricReport("blackbox", value,
                                         provenance={"victims": [v.model_id for v in victims]})
    elif metric == "consensus":
        transform = resolve_transform("scale-composite", config.get(
            "attack", {}).get("transform_params") or None)
        div = estimators.diversity_metric(surrogate, transform, x_clean,
                                          torch.as_tensor(y_true), RngState(0))
        iou = float(np.mean([estimators.attention_deviation(
            surrogate, x_clean[i], basics.enumerate_variants("scaling", 0.5)[0],
            int(y_t[i])) for i in range(min(8, x_clean.shape[0]))]))
        report = estimators.MetricReport("consensus", div, provenance={
            "diversity_ce": div, "attention_deviation_iou": iou})
    else:
        raise ValueError(f"unknown estimator {metric!r}")
    with out_path.open("w") as fh:
        fh.write(report.to_json())


def reevaluate(artifact_dir, rig_dir) -> EvalReport:
    """Recompute the EvalReport from persisted artifacts alone."""
    artifact_dir = Path(artifact_dir)
    rig = load_rig(rig_dir)
    handles = load_models(rig_dir, rig)
    _, victims = surrogate_and_victims(handles)
    with (artifact_dir / "config.json").open() as fh:
        config = json.load(fh)
    if config.get("victim_ids"):
        victims = [handles[v] for v in config["victim_ids"]]
    dataset_path = config.get("dataset") or str(Path(rig_dir) / rig.eval_manifest)
    manifest, x_clean = load_dataset(dataset_path, (rig.image_size, rig.image_size),
                                     rig.class_count)
    limit = config.get("sample_limit")
    if limit:
        manifest.entries = manifest.entries[:limit]
        x_clean = x_clean[:limit]
    x_adv_q, adv_manifest = load_attack_artifacts(artifact_dir)
    report = evaluate(victims, x_adv_q, manifest, x_clean=x_clean,
                      config_echo=adv_manifest["config"])
    report.seconds_per_image = adv_manifest["elapsed_seconds"] / len(manifest)
    return report
