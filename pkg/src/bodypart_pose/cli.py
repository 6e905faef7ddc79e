"""Command line entry point: ``bodypart-pose <subcommand> ...``.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import heatmap_io
from .config import load_config
from .decoder import decode
from .encoder import build_pyramid, encode_stack
from .errors import PoseError
from .loss import gradient_check
from .oks import evaluate
from .render import render_overlay
from .skeleton import default_skeleton, load_skeleton, poses_from_json, poses_to_json
from .synth import Scene, gen_scene, make_batch, run_batch

log = logging.getLogger("bodypart_pose")


def _emit(doc, out):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _skeleton(args):
    return load_skeleton(args.skeleton) if args.skeleton else default_skeleton()


def _poses_doc(doc):
    """Accept a scene document or a bare pose list."""
    if isinstance(doc, dict) and "poses" in doc:
        return Scene.from_dict(doc).poses
    return poses_from_json(doc)


def _scenes_doc(doc):
    """One list of poses per scene: a bare pose list is a single scene."""
    if isinstance(doc, dict) and "scenes" in doc:
        doc = doc["scenes"]
    if isinstance(doc, dict) and "poses" in doc:
        return [Scene.from_dict(doc).poses]
    if doc and isinstance(doc[0], list):
        return [_poses_doc(s) for s in doc]
    if doc and isinstance(doc[0], dict) and "poses" in doc[0]:
        return [Scene.from_dict(s).poses for s in doc]
    return [poses_from_json(doc)]


def cmd_gen(args, cfg):
    rng = np.random.default_rng(args.seed)
    lo, hi = cfg.synth.persons
    n = args.persons if args.persons is not None else int(rng.integers(lo, hi + 1))
    w, h = cfg.canvas
    scene = gen_scene(n, w, h, args.seed, cfg.synth.constraints, _skeleton(args), cfg.encoder.stride,
                      cfg.synth.noise)
    _emit(scene.to_dict(), args.out)


def cmd_encode(args, cfg):
    spec = _skeleton(args)
    poses = _poses_doc(_read_json(args.poses))
    stack = encode_stack(poses, spec, cfg.encoder)
    if args.scale:
        stack = build_pyramid(stack, args.scale + 1)[args.scale]
    heatmap_io.write_heatmap(args.out, stack)
    log.info("wrote %s channels %dx%d stride %g", stack.channels, stack.height, stack.width, stack.stride)


def cmd_decode(args, cfg):
    stack = heatmap_io.read_heatmap(args.heatmap)
    poses = decode(stack, _skeleton(args), cfg.decoder, top=args.top)
    _emit(poses_to_json(poses), args.out)


def cmd_loss_check(args, cfg):
    spec = _skeleton(args)
    k = spec.num_keypoints
    if args.pred and args.gt:
        pred = heatmap_io.read_heatmap(args.pred).data
        gt = heatmap_io.read_heatmap(args.gt).data
    else:
        rng = np.random.default_rng(args.seed)
        shape = (spec.num_channels, args.size, args.size)
        gt = rng.uniform(0, 1, shape)
        gt[gt < 0.5] = 0.0
        pred = rng.uniform(0, 1.2, shape)
    report = gradient_check(pred, gt, None, cfg.loss, k, step=args.step)
    _emit(report, args.out)


def cmd_roundtrip(args, cfg):
    w, h = cfg.canvas
    scenes = make_batch(args.scenes, args.seed, cfg.synth.persons, w, h, cfg.synth.constraints,
                        cfg.synth.noise, cfg.encoder.stride, _skeleton(args))
    report, _ = run_batch(scenes, _skeleton(args), cfg.encoder, cfg.decoder, cfg.oks, workers=args.workers)
    _emit(report.to_dict(include_timing=args.timing), args.out)


def cmd_eval(args, cfg):
    dets = _scenes_doc(_read_json(args.detections))
    gts = _scenes_doc(_read_json(args.ground_truth))
    _emit(evaluate(dets, gts, cfg.oks).to_dict(), args.out)


def cmd_render(args, cfg):
    spec = _skeleton(args)
    poses = []
    w, h = cfg.canvas
    if args.poses:
        doc = _read_json(args.poses)
        if isinstance(doc, dict) and "canvas" in doc:
            w, h = doc["canvas"]
        poses = _poses_doc(doc)
    stack = heatmap_io.read_heatmap(args.heatmap) if args.heatmap else None
    w = args.width or w
    h = args.height or h
    render_overlay(args.out, int(w), int(h), stack, poses, spec)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bodypart-pose", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="shared JSON config")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--skeleton", help="skeleton JSON (default: COCO 17 + 3 redundant edges)")
        p.set_defaults(func=fn)
        return p

    p = add("gen", cmd_gen, "generate a synthetic scene")
    p.add_argument("--persons", type=int)
    p.add_argument("--out")

    p = add("encode", cmd_encode, "render ground-truth heatmaps to an FHM1 file")
    p.add_argument("--poses", required=True, help="scene JSON or pose list JSON")
    p.add_argument("--scale", type=int, default=0, help="pyramid level (0 = full size)")
    p.add_argument("--out", required=True)

    p = add("decode", cmd_decode, "decode an FHM1 heatmap file into poses")
    p.add_argument("--heatmap", required=True)
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--out")

    p = add("loss-check", cmd_loss_check, "focal L2 loss and finite-difference gradient check")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--out")

    p = add("roundtrip", cmd_roundtrip, "encode/decode/evaluate a batch of synthetic scenes")
    p.add_argument("--scenes", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="include wall times (not reproducible)")
    p.add_argument("--out")

    p = add("eval", cmd_eval, "OKS-based AP/AR of detections against ground truth")
    p.add_argument("--detections", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--out")

    p = add("render", cmd_render, "write a PPM overlay of heatmaps and poses")
    p.add_argument("--poses")
    p.add_argument("--heatmap")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except OSError as exc:
        log.error("%s", exc)
        return 2
    except (PoseError, json.JSONDecodeError, KeyError, TypeError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
