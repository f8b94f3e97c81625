"""Command line entry point: ``spinereg {register,phantom,metrics,apply-rigid}``."""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import io
from .config import phantom_spec, read_config, registration_setup
from .exceptions import RegistrationError
from .field import DisplacementField, warp_labels, warp_volume
from .metrics import _round, compute_report
from .objective import PRESETS
from .optimizer import register
from .phantom import generate_pair
from .rigidity import RigidTransform
from .volume import LabelVolume, grid_coords

log = logging.getLogger("spinereg")


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def cmd_register(args):
    config = read_config(args.config) if args.config else {}
    weights, settings = registration_setup(config, args.preset, seed=args.seed, threads=args.threads)
    fixed = io.read_volume(args.fixed)
    moving = io.read_volume(args.moving)
    labels = io.read_labels(args.labels) if args.labels else None
    result = register(fixed, moving, labels, weights, settings)
    phi = result.displacement
    io.write_field(args.out_field, phi)
    if args.out_report:
        grid_labels = result.inputs[2]
        if grid_labels is not None:
            report = compute_report(grid_labels, phi, wall_seconds=result.seconds)
            payload = report.to_dict()
        else:
            payload = {"wall_seconds": result.seconds}
        payload.update(
            {
                "preset": args.preset,
                "seed": settings.seed,
                "iterations": result.iterations,
                "weights": {
                    "similarity": weights.similarity,
                    "lambda_smooth": weights.lambda_smooth,
                    "rigidity": weights.rigidity,
                    "steps": weights.steps,
                },
                "loss_history": [b.as_dict() for b in result.history],
            }
        )
        _write_json(args.out_report, _round(payload))
    log.info("registered in %d iterations, %.1f s", result.iterations, result.seconds)
    return 0


def cmd_phantom(args):
    spec = phantom_spec(read_config(args.spec) if args.spec else {})
    pair = generate_pair(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_volume(out / "fixed.mhd", pair.fixed)
    io.write_volume(out / "moving.mhd", pair.moving)
    io.write_labels(out / "labels_moving.mhd", pair.moving_labels)
    io.write_labels(out / "labels_fixed.mhd", pair.fixed_labels)
    io.write_field(out / "gt_field.mhd", pair.gt_field)
    return 0


def cmd_metrics(args):
    phi = io.read_field(args.field, kind=DisplacementField)
    moving_labels = io.read_labels(args.labels_moving)
    fixed_labels = io.read_labels(args.labels_fixed) if args.labels_fixed else None
    report = compute_report(moving_labels, phi, fixed_labels)
    _write_json(args.out, report.to_dict())
    return 0


def cmd_apply_rigid(args):
    """Resample an image (or label map) under ``x -> R (x - c) + c + t`` about the grid centre."""
    R = Rotation.from_euler("xyz", args.rotation_deg, degrees=True).as_matrix()
    if args.labels:
        img = io.read_labels(args.input)
    else:
        img = io.read_volume(args.input)
    center = (np.asarray(img.dims, dtype=float) - 1) / 2
    T = RigidTransform(R, center - R @ center + np.asarray(args.translation, dtype=float), center)
    pos = T.apply(grid_coords(img.dims))
    phi = DisplacementField(pos - grid_coords(img.dims), img.spacing, img.origin)
    if isinstance(img, LabelVolume):
        io.write_labels(args.out, warp_labels(img, phi))
    else:
        io.write_volume(args.out, warp_volume(img, phi))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="spinereg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("register", help="register a moving image onto a fixed image")
    r.add_argument("--fixed", required=True)
    r.add_argument("--moving", required=True)
    r.add_argument("--labels", help="moving-image rigid-body label map")
    r.add_argument("--preset", default="baseline", choices=sorted(PRESETS))
    r.add_argument("--config", help="key = value configuration file")
    r.add_argument("--out-field", required=True)
    r.add_argument("--out-report")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--threads", type=int, default=1)
    r.set_defaults(func=cmd_register)

    ph = sub.add_parser("phantom", help="generate a synthetic spine phantom pair")
    ph.add_argument("--spec", help="key = value phantom spec file")
    ph.add_argument("--out-dir", required=True)
    ph.set_defaults(func=cmd_phantom)

    m = sub.add_parser("metrics", help="plausibility metrics of a displacement field")
    m.add_argument("--field", required=True)
    m.add_argument("--labels-moving", required=True)
    m.add_argument("--labels-fixed")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_metrics)

    a = sub.add_parser("apply-rigid", help="resample an image under a rigid transform (pre-alignment helper)")
    a.add_argument("--input", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--rotation-deg", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar=("RX", "RY", "RZ"))
    a.add_argument("--translation", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar=("TX", "TY", "TZ"))
    a.add_argument("--labels", action="store_true", help="input is a label map")
    a.set_defaults(func=cmd_apply_rigid)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (RegistrationError, ValueError, OSError) as exc:
        print(f"spinereg {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
