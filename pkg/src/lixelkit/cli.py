"""Command-line interface: training, evaluation, the memory table, the
gradient verification suite, the comparison studies, and heatmap
rendering. Report paths write CSV/JSON plus PNG figures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import diffcore as dc
from .camera import recover_mesh
from .heatmap import (
    HeatmapKind,
    HeatmapLayout,
    memory_cells,
    render_gaussian_3d,
    save_heatmap_dump,
)
from .meshgeom import TriMesh, mpjpe, pa_mpjpe, write_obj
from .network import GroundTruthBatch, gradient_stop_probe, parameter_report
from .experiments import (
    ABLATIONS,
    ExperimentConfig,
    load_config,
    load_dataset,
    run_training,
    save_dataset,
)
from .experiments.dataset import generate_dataset
from .experiments.report import fig_heatmap_slices, fig_memory_table, write_summary_json
from .experiments.template import make_template
from .experiments.training import load_model_checkpoint, make_experiment_template


def _load_cfg(path):
    return load_config(path) if path else ExperimentConfig()


def cmd_train(args):
    cfg = _load_cfg(args.config)
    out_dir = args.out or cfg.out_dir
    outcome = run_training(cfg, seed=args.seed, out_dir=out_dir,
                           resume_from=args.resume)
    print(f"final held-out MPJPE {outcome.summary['final_mpjpe']:.2f} mm "
          f"(PA {outcome.summary['final_pa_mpjpe']:.2f} mm)")
    print(f"decode-noise floor {outcome.summary['decode_noise_floor_mpjpe']:.2f} mm "
          f"-> trained/floor = {outcome.summary['mpjpe_over_floor']:.2f}")
    print(f"outputs in {out_dir}")
    return 0


def cmd_dataset(args):
    cfg = _load_cfg(args.config)
    template = make_experiment_template(cfg)
    samples = generate_dataset(template, args.n or cfg.train.train_samples,
                               seed=args.seed, layout=cfg.net.layout,
                               input_size=cfg.net.input_size, dcfg=cfg.data)
    save_dataset(args.out, samples, cfg.net.layout)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_eval(args):
    model, meta = load_model_checkpoint(args.checkpoint)
    samples, layout = load_dataset(args.data)
    template = make_template(num_joints=model.cfg.num_joints)
    model.eval()
    errs, pa_errs = [], []
    for s in samples:
        result, _ = model.forward(s.image[None], gt_joint_cells=s.joint_cells[None])
        cells = result.mesh_coords.data[0]
        vertices = recover_mesh(cells, s.camera, layout)
        joints = template.regressor.weights @ vertices
        errs.append(mpjpe(joints, s.joints_mm, root_index=0))
        pa_errs.append(pa_mpjpe(joints, s.joints_mm))
    print(f"MPJPE {np.mean(errs):.2f} mm  PA MPJPE {np.mean(pa_errs):.2f} mm "
          f"over {len(samples)} samples")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_summary_json(os.path.join(args.out, "eval.json"), {
            "checkpoint": args.checkpoint, "data": args.data,
            "mpjpe": float(np.mean(errs)), "pa_mpjpe": float(np.mean(pa_errs)),
            "per_sample_mpjpe": [float(e) for e in errs],
        })
        # example mesh pair for inspection
        s = samples[0]
        result, _ = model.forward(s.image[None], gt_joint_cells=s.joint_cells[None])
        vertices = recover_mesh(result.mesh_coords.data[0], s.camera, layout)
        write_obj(os.path.join(args.out, "pred_sample0.obj"),
                  TriMesh(vertices, template.rest_mesh.faces))
        write_obj(os.path.join(args.out, "gt_sample0.obj"),
                  TriMesh(s.vertices_mm, template.rest_mesh.faces))
        print(f"wrote eval.json and OBJ pair to {args.out}")
    return 0


def cmd_memtable(args):
    rows = []
    for kind, label in ((HeatmapKind.LIXEL_XYZ, "3 x 1D lines"),
                        (HeatmapKind.PIXEL_XY_PLUS_LIXEL_Z, "2D map + 1D line"),
                        (HeatmapKind.VOXEL_XYZ, "full 3D volume")):
        rows.append({"kind": kind.value, "layout": label, "V": args.V, "D": args.D,
                     "cells": memory_cells(args.V, args.D, kind)})
    width = max(len(r["layout"]) for r in rows)
    print(f"cells per representation at V={args.V}, D={args.D}:")
    for r in rows:
        print(f"  {r['layout']:<{width}}  {r['cells']:>16,}")
    lixel = rows[0]["cells"]
    print(f"  ratios vs 1D lines: 1 : "
          f"{rows[1]['cells'] / lixel:.1f} : {rows[2]['cells'] / lixel:.1f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "memtable.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("kind,V,D,cells\n")
            for r in rows:
                fh.write(f"{r['kind']},{r['V']},{r['D']},{r['cells']}\n")
        fig_memory_table(rows, args.out)
        print(f"wrote memtable.csv and figures/ to {args.out}")
    return 0


def cmd_gradcheck(args):
    """Finite-difference and gradient-stop verification; nonzero exit on
    any failure."""
    from .heatmap import HeatmapKind as HK

    failures = 0

    def check(name, value, bound):
        nonlocal failures
        ok = value < bound
        print(f"  {'PASS' if ok else 'FAIL'}  {name}: {value:.3e} (bound {bound:g})")
        failures += 0 if ok else 1

    rng = np.random.default_rng(args.seed)
    print("primitive finite-difference suite:")
    from .diffcore import Tensor, grad_check

    w = rng.normal(size=(3, 2, 3, 3))
    conv_target = rng.normal(size=(1, 3, 3, 3))
    cases = {
        "conv2d": (lambda t: dc.tsum(dc.mul(dc.conv2d(t, w, stride=2, padding=1),
                                            conv_target)),
                   rng.normal(size=(1, 2, 5, 5))),
        "softmax_expectation": (
            lambda t: dc.tsum(dc.mul(dc.softmax(t, axis=-1), np.arange(8.0))),
            rng.normal(size=(3, 8))),
        "l2_norm": (lambda t: dc.tsum(dc.l2_norm(t, axis=1)),
                    1.0 + np.abs(rng.normal(size=(5, 3)))),
    }
    for name, (f, x) in cases.items():
        check(name, grad_check(f, Tensor(x)), 1e-4)

    print("loss and codec gradients:")
    from .meshgeom import edge_loss, normal_loss
    from .heatmap import HeatmapLayout as HL, render_gaussian_3d as rg

    verts = rng.normal(size=(8, 3)) * 2
    faces = np.array([rng.choice(8, 3, replace=False) for _ in range(6)])
    pred0 = verts + rng.normal(size=verts.shape) * 0.2
    check("normal_loss", grad_check(
        lambda t: normal_loss(t, verts, faces), Tensor(pred0)), 1e-4)
    check("edge_loss", grad_check(
        lambda t: edge_loss(t, verts, faces), Tensor(pred0)), 1e-4)
    layout = HL(HK.LIXEL_XYZ, 6, 5, 4)
    target = rng.normal(size=(2, 4, 5, 6))
    check("render_gaussian_3d", grad_check(
        lambda t: dc.tsum(dc.mul(rg(t, layout, 1.5), target)),
        Tensor(rng.uniform(1, 4, (2, 3)))), 1e-4)

    print("gradient stop (cascade):")
    from .network import CascadeModel, NetConfig

    cfg = NetConfig(num_joints=2, num_vertices=6, depth=8, feat_h=1, feat_w=1,
                    in_channels=2, early_channels=4, trunk_channels=8,
                    head_channels=4, fc_hidden=16, cascade="pose_then_mesh")
    model = CascadeModel(cfg, seed=args.seed)
    images = rng.normal(size=(2, 2) + cfg.input_size)
    gt = GroundTruthBatch(
        joint_cells=rng.uniform(1, 6, (2, 2, 3)),
        joint_mask=np.ones((2, 2, 3)),
        mesh_cells=rng.uniform(1, 6, (2, 6, 3)),
        mesh_mask=np.ones((2, 6, 3)),
        faces=np.array([[0, 1, 2], [3, 4, 5]]),
        regressor=np.full((2, 6), 1.0 / 6),
    )
    probe = gradient_stop_probe(model, images, gt)
    ok_stop = probe["pose_grad_from_mesh_losses"] == 0.0
    ok_flow = probe["pose_grad_from_pose_loss"] > 0.0
    print(f"  {'PASS' if ok_stop else 'FAIL'}  mesh losses -> pose branch: "
          f"{probe['pose_grad_from_mesh_losses']:.3e} (must be exactly 0)")
    print(f"  {'PASS' if ok_flow else 'FAIL'}  pose loss -> pose branch: "
          f"{probe['pose_grad_from_pose_loss']:.3e} (must be nonzero)")
    failures += (0 if ok_stop else 1) + (0 if ok_flow else 1)

    print(f"{'all checks passed' if failures == 0 else f'{failures} checks FAILED'}")
    return 0 if failures == 0 else 1


def cmd_ablate(args):
    cfg = _load_cfg(args.config)
    out_dir = args.out or os.path.join(cfg.out_dir, f"ablate_{args.study}")
    summary = ABLATIONS[args.study](cfg, out_dir=out_dir)
    if "mpjpe" in summary:
        print(f"{args.study}: median held-out MPJPE per variant")
        for name, stats in summary["mpjpe"].items():
            print(f"  {name:<20} {stats['median']:8.2f} mm "
                  f"(stderr {stats['stderr']:.2f})")
    print(f"outputs in {out_dir}")
    return 0


def cmd_render(args):
    with open(args.coords, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    coords = np.asarray(spec["coords"], dtype=np.float64)
    lt = spec.get("layout", {})
    layout = HeatmapLayout(
        HeatmapKind(lt.get("kind", "lixel_xyz")),
        int(lt.get("width", 64)), int(lt.get("height", 64)), int(lt.get("depth", 64)),
    )
    sigma = float(spec.get("sigma", 2.5))
    values = render_gaussian_3d(coords, layout, sigma)
    save_heatmap_dump(args.out, values, layout, sigma)
    print(f"wrote {values.shape} heatmap volume to {args.out}")
    if args.png:
        out_dir = os.path.dirname(os.path.abspath(args.out))
        path = fig_heatmap_slices(values, out_dir)
        print(f"wrote slice figure to {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lixelkit",
        description="1D-heatmap pose/mesh toolkit: train, evaluate, verify",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the cascade on synthetic data")
    p.add_argument("--config", help="key-value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default from config)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dataset", help="generate and save a dataset file")
    p.add_argument("--config", help="key-value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, help="sample count (default train_samples)")
    p.add_argument("--out", required=True, help="output .npz path")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="directory for eval.json and OBJ dumps")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("memtable", help="exact heatmap cell counts per layout")
    p.add_argument("--V", type=int, required=True, help="landmark count")
    p.add_argument("--D", type=int, required=True, help="resolution")
    p.add_argument("--out", help="directory for memtable.csv and figure")
    p.set_defaults(func=cmd_memtable)

    p = sub.add_parser("gradcheck", help="finite-difference and gradient-stop suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run one comparison study")
    p.add_argument("study", choices=sorted(ABLATIONS))
    p.add_argument("--config", help="key-value config file")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("render", help="render a Gaussian heatmap volume to a dump file")
    p.add_argument("--coords", required=True, help="JSON file with coords/layout/sigma")
    p.add_argument("--out", required=True, help="output dump path")
    p.add_argument("--png", action="store_true", help="also write slice PNGs")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
