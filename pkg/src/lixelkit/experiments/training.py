"""Deterministic training and evaluation loops.

One 64-bit seed fixes everything: dataset bytes, parameter init, batch
order. The held-out split uses a constant seed so every run of an
experiment is scored on the same samples. Metric rows carry no wall
time (that lives in the summary JSON) so reruns are byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from ..camera import recover_mesh
from ..heatmap import HeatmapKind, decode, memory_cells, render_lixel_gaussians
from ..meshgeom import LossWeights, mpjpe, pa_mpjpe
from ..network import CascadeModel, GroundTruthBatch, l1_coord_loss
from .config import ExperimentConfig
from .dataset import generate_dataset
from .report import ResultRow, fig_training_curves, write_metrics_csv, write_summary_json
from .template import forward_kinematics, make_template, params_to_pose

EVAL_SEED = 1_000_003  # held-out split, shared across training seeds


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; a diagnostic dump names the batch."""


@dataclass
class TrainOutcome:
    rows: list
    summary: dict
    model: CascadeModel
    optimizer: dc.Adam
    checkpoint_path: str = None


def _cells_kind(head_kind):
    if head_kind in ("lixel_conv", "lixel_fc"):
        return HeatmapKind.LIXEL_XYZ
    if head_kind == "pixel_lixel":
        return HeatmapKind.PIXEL_XY_PLUS_LIXEL_Z
    if head_kind == "voxel":
        return HeatmapKind.VOXEL_XYZ
    return None


def make_experiment_template(cfg: ExperimentConfig):
    template = make_template(num_joints=cfg.net.num_joints)
    if template.num_vertices != cfg.net.num_vertices:
        raise ValueError(
            f"net.num_vertices={cfg.net.num_vertices} does not match the "
            f"template ({template.num_vertices} vertices for "
            f"{cfg.net.num_joints} joints)"
        )
    if cfg.net.in_channels != cfg.net.num_joints:
        raise ValueError(
            "the dataset renders one input channel per joint; set "
            f"net.in_channels ({cfg.net.in_channels}) equal to "
            f"net.num_joints ({cfg.net.num_joints})"
        )
    return template


def build_datasets(cfg: ExperimentConfig, seed, template):
    layout = cfg.net.layout
    train = generate_dataset(template, cfg.train.train_samples, seed=seed,
                             layout=layout, input_size=cfg.net.input_size,
                             dcfg=cfg.data)
    held_out = generate_dataset(template, cfg.train.eval_samples, seed=EVAL_SEED,
                                layout=layout, input_size=cfg.net.input_size,
                                dcfg=cfg.data)
    return train, held_out


def batch_arrays(samples, idx, template):
    sel = [samples[i] for i in idx]
    images = np.stack([s.image for s in sel])
    gt = GroundTruthBatch(
        joint_cells=np.stack([s.joint_cells for s in sel]),
        joint_mask=np.stack([s.joint_mask for s in sel]),
        mesh_cells=np.stack([s.mesh_cells for s in sel]),
        mesh_mask=np.stack([s.mesh_mask for s in sel]),
        faces=template.rest_mesh.faces,
        regressor=template.regressor.weights,
    )
    params = np.stack([s.pose_params for s in sel])
    return images, gt, params


def predicted_geometry(cfg, template, result, samples, idx):
    """Decode predictions into camera-frame millimeters per sample."""
    layout = cfg.net.layout
    out = []
    if cfg.net.head_kind == "param_fc":
        params = result.mesh_coords.data
        for row, i in enumerate(idx):
            rotations, translation = params_to_pose(template, params[row])
            vertices, _ = forward_kinematics(template, rotations, translation)
            joints = template.regressor.weights @ vertices
            out.append((vertices, joints))
        return out
    cells = result.mesh_coords.data
    for row, i in enumerate(idx):
        vertices = recover_mesh(cells[row], samples[i].camera, layout)
        joints = template.regressor.weights @ vertices
        out.append((vertices, joints))
    return out


def run_training(cfg: ExperimentConfig, seed, out_dir=None, variant="",
                 resume_from=None, write_outputs=True, loss_weights=None):
    """Train one model; returns rows of held-out metrics per eval step."""
    template = make_experiment_template(cfg)
    train_set, held_out = build_datasets(cfg, seed, template)
    layout = cfg.net.layout
    model = CascadeModel(cfg.net, seed=seed)
    opt = dc.Adam(dict(model.named_parameters()), lr=cfg.train.lr,
                  beta1=cfg.train.beta1, beta2=cfg.train.beta2, eps=cfg.train.eps)
    batch_rng = np.random.default_rng(np.random.PCG64([seed, 0x5EED]))
    start_step = 0
    if resume_from is not None:
        arrays, meta = dc.load_checkpoint(resume_from)
        model.load_state_dict(arrays)
        opt.load_state_arrays(arrays, meta["adam_step"])
        batch_rng.bit_generator.state = json.loads(meta["rng_state"])
        start_step = int(meta["step"])

    kind = _cells_kind(cfg.net.head_kind)
    cells = memory_cells(cfg.net.num_vertices, cfg.net.depth, kind) if kind else 0
    param_count = model.parameter_count()
    weights = loss_weights or LossWeights()

    rows = []
    t_start = time.monotonic()

    def eval_row(step):
        metrics = _evaluate(cfg, model, template, held_out, weights)
        rows.append(ResultRow(
            seed=seed, step=step, variant=variant,
            mpjpe=metrics["mpjpe"], pa_mpjpe=metrics["pa_mpjpe"],
            loss_pose_posenet=metrics.get("loss_pose_posenet", 0.0),
            loss_pose_meshnet=metrics.get("loss_pose_meshnet", 0.0),
            loss_vertex=metrics.get("loss_vertex", 0.0),
            loss_normal=metrics.get("loss_normal", 0.0),
            loss_edge=metrics.get("loss_edge", 0.0),
            loss_total=metrics.get("loss_total", 0.0),
            param_count=param_count, heatmap_cells=cells,
            wall_time=time.monotonic() - t_start,
        ))

    if start_step == 0:
        eval_row(0)
    n_train = len(train_set)
    checkpoint_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint_path = os.path.join(out_dir, f"checkpoint_s{seed}.lxck")

    decay_step = int(round(cfg.train.steps * cfg.train.lr_decay_at))
    for step in range(start_step + 1, cfg.train.steps + 1):
        if cfg.train.lr_decay_factor != 1.0 and step == decay_step:
            opt.state.lr = cfg.train.lr * cfg.train.lr_decay_factor
        idx = batch_rng.integers(0, n_train, size=cfg.train.batch_size)
        images, gt, params = batch_arrays(train_set, idx, template)
        model.zero_grad()
        try:
            if cfg.net.head_kind == "param_fc":
                result, _ = model.forward(images, gt_joint_cells=gt.joint_cells)
                total = l1_coord_loss(
                    dc.reshape(result.mesh_coords, (len(idx), -1, 3)),
                    params.reshape(len(idx), -1, 3),
                )
            else:
                total = model.forward_full(images, gt, weights).total
            finite = bool(np.isfinite(total.data).all())
        except ValueError as err:  # codecs reject non-finite activations eagerly
            total, finite = None, False
            reason = str(err)
        else:
            reason = "non-finite loss"
        if not finite:
            dump = None
            if out_dir:
                os.makedirs(out_dir, exist_ok=True)
                dump = os.path.join(out_dir, f"diverged_s{seed}_step{step}.json")
                write_summary_json(dump, {
                    "step": step, "seed": seed, "reason": reason,
                    "batch_indices": [int(i) for i in idx],
                })
            raise TrainingDiverged(
                f"non-finite loss at step {step} (seed {seed}): {reason}"
                + (f"; batch dumped to {dump}" if dump else "")
            )
        total.backward()
        opt.step()
        if step % cfg.train.eval_every == 0 or step == cfg.train.steps:
            eval_row(step)
        if checkpoint_path and cfg.train.checkpoint_every and \
                step % cfg.train.checkpoint_every == 0:
            _save_checkpoint(checkpoint_path, model, opt, batch_rng, step, seed)

    wall = time.monotonic() - t_start
    floor = measure_noise_floor(cfg, template, held_out)
    final = rows[-1]
    summary = {
        "seed": seed,
        "variant": variant,
        "steps": cfg.train.steps,
        "wall_time_s": wall,
        "param_count": param_count,
        "heatmap_cells": cells,
        "final_mpjpe": final.mpjpe,
        "final_pa_mpjpe": final.pa_mpjpe,
        "decode_noise_floor_mpjpe": floor["mpjpe"],
        "decode_noise_floor_pa_mpjpe": floor["pa_mpjpe"],
        "mpjpe_over_floor": final.mpjpe / floor["mpjpe"] if floor["mpjpe"] > 0 else float("inf"),
    }
    if out_dir and write_outputs:
        os.makedirs(out_dir, exist_ok=True)
        write_metrics_csv(os.path.join(out_dir, f"metrics_s{seed}.csv"), rows)
        write_summary_json(os.path.join(out_dir, f"summary_s{seed}.json"), summary)
        fig_training_curves(rows, out_dir, name=f"training_curves_s{seed}.png")
    if checkpoint_path:
        _save_checkpoint(checkpoint_path, model, opt, batch_rng, cfg.train.steps, seed)
    return TrainOutcome(rows=rows, summary=summary, model=model, optimizer=opt,
                        checkpoint_path=checkpoint_path)


def _save_checkpoint(path, model, opt, batch_rng, step, seed):
    arrays = dict(model.state_dict())
    arrays.update(opt.state_arrays())
    meta = {
        "step": step,
        "seed": seed,
        "adam_step": opt.state.step,
        "rng_state": json.dumps(batch_rng.bit_generator.state),
        "net_config": dataclasses.asdict(model.cfg),
    }
    dc.save_checkpoint(path, arrays, meta)


def load_model_checkpoint(path):
    """Rebuild a CascadeModel from a training checkpoint."""
    from ..network import NetConfig

    arrays, meta = dc.load_checkpoint(path)
    cfg = NetConfig(**meta["net_config"])
    model = CascadeModel(cfg, seed=int(meta.get("seed", 0)))
    model.load_state_dict(arrays)
    return model, meta


def _evaluate(cfg, model, template, samples, weights):
    model.eval()
    bs = cfg.train.batch_size
    n = len(samples)
    err_sum, pa_sum = 0.0, 0.0
    part_sums = {}
    for start in range(0, n, bs):
        idx = list(range(start, min(start + bs, n)))
        images, gt, params = batch_arrays(samples, idx, template)
        if cfg.net.head_kind == "param_fc":
            result, _ = model.forward(images, gt_joint_cells=gt.joint_cells)
            loss_val = float(l1_coord_loss(
                dc.reshape(result.mesh_coords, (len(idx), -1, 3)),
                params.reshape(len(idx), -1, 3),
            ).item())
            parts_vals = {"loss_vertex": loss_val, "loss_total": loss_val}
        else:
            result = model.forward_full(images, gt, weights)
            parts_vals = result.parts.values()
            parts_vals["loss_total"] = float(result.total.item())
        for key, value in parts_vals.items():
            part_sums[key] = part_sums.get(key, 0.0) + value * len(idx)
        for row, (vertices, joints) in enumerate(
                predicted_geometry(cfg, template, result, samples, idx)):
            gt_joints = samples[idx[row]].joints_mm
            err_sum += mpjpe(joints, gt_joints, root_index=0)
            pa_sum += pa_mpjpe(joints, gt_joints)
    model.train()
    metrics = {key: value / n for key, value in part_sums.items()}
    metrics["mpjpe"] = err_sum / n
    metrics["pa_mpjpe"] = pa_sum / n
    return metrics


def measure_noise_floor(cfg: ExperimentConfig, template, samples):
    """Codec floor of the dataset: groundtruth cells -> per-axis Gaussian
    rendering -> soft-argmax decode -> millimeter recovery -> metric.
    Trained errors are reported against this, never against zero."""
    layout = cfg.net.layout
    err_sum, pa_sum = 0.0, 0.0
    for s in samples:
        logits = render_lixel_gaussians(s.mesh_cells, layout, cfg.net.sigma)
        cells = decode(logits)
        vertices = recover_mesh(cells, s.camera, layout)
        joints = template.regressor.weights @ vertices
        err_sum += mpjpe(joints, s.joints_mm, root_index=0)
        pa_sum += pa_mpjpe(joints, s.joints_mm)
    return {"mpjpe": err_sum / len(samples), "pa_mpjpe": pa_sum / len(samples)}
