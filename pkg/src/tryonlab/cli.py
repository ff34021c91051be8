"""Command-line driver: dataset generation, training, evaluation, one-shot
try-on and tweaking, and the HTTP service."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from tryonlab import dolls
from tryonlab.errors import ValidationError


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tryonlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_data = sub.add_parser("dataset", parents=[], help="generate a toy paper-doll dataset")
    p_data.add_argument("--count", type=int, required=True, help="number of samples")
    p_data.add_argument("--seed", type=int, default=0)
    p_data.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", help="run pose-transfer training")
    p_train.add_argument("--config", required=True, help="TOML training config")
    p_train.add_argument("--seed", type=int, default=None, help="override config seed")
    p_train.add_argument("--steps", type=int, default=None, help="override config steps")
    p_train.add_argument("--dataset", default=None, help="override dataset path")
    p_train.add_argument("--out-dir", default=None, help="override output directory")
    p_train.add_argument("--resume", default=None, help="checkpoint to resume from")
    p_train.add_argument("--quiet", action="store_true")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--split", choices=("val", "test"), default="val")
    p_eval.add_argument("--out", required=True, help="report directory")
    p_eval.add_argument("--max-samples", type=int, default=None)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--diagnostics", action="store_true",
                        help="also write order-variation and identity diagnostics")

    p_try = sub.add_parser("tryon", help="one-shot try-on render")
    p_try.add_argument("--model", required=True)
    p_try.add_argument("--out", required=True, help="output PNG")
    p_try.add_argument("--spec", default=None, help="doll spec JSON file (toy person)")
    p_try.add_argument("--person", default=None, help="person image PNG")
    p_try.add_argument("--pose", default=None, help="person keypoint JSON (x, y, confidence flat list)")
    p_try.add_argument("--seg", default=None, help="person label PNG")
    p_try.add_argument("--garment", default=None, help="garment image PNG")
    p_try.add_argument("--garment-seg", default=None, help="garment label PNG")
    p_try.add_argument("--garment-pose", default=None,
                       help="garment wearer keypoint JSON (defaults to the person pose)")
    p_try.add_argument("--label", type=int, default=None, help="garment label id")
    p_try.add_argument("--order", default="4,3,2",
                       help="dressing order as comma-separated labels")
    p_try.add_argument("--target-pose", default=None,
                       help="target keypoint JSON (defaults to the person pose)")
    p_try.add_argument("--pose-size", type=int, default=64,
                       help="source resolution of external keypoint files")
    p_try.add_argument("--confidence-threshold", type=float, default=0.1)
    p_try.add_argument("--label-map", default=None,
                       help="JSON file remapping external label ids to 0..4")
    p_try.add_argument("--save-session", default=None,
                       help="persist the assembled session into this directory")
    p_try.add_argument("--seed", type=int, default=0)

    p_tweak = sub.add_parser("tweak", help="apply one tweak to a persisted session")
    p_tweak.add_argument("--model", required=True)
    p_tweak.add_argument("--session", required=True,
                         help="path to a persisted session .json file")
    p_tweak.add_argument("--tweak", required=True,
                         help="tweak JSON (inline string or @file)")
    p_tweak.add_argument("--directions", default=None,
                         help="directory of attribute-direction JSON files")
    p_tweak.add_argument("--out", required=True, help="output PNG")
    p_tweak.add_argument("--discard", action="store_true",
                         help="render only; remove the tweak from the session afterwards")
    p_tweak.add_argument("--seed", type=int, default=0)

    p_serve = sub.add_parser("serve", help="run the session service")
    p_serve.add_argument("--model", default=None, help="checkpoint (or MODEL_PATH env)")
    p_serve.add_argument("--session-dir", default=None, help="or SESSION_DIR env")
    p_serve.add_argument("--directions", default=None, help="or DIRECTIONS_DIR env")
    p_serve.add_argument("--port", type=int, default=None, help="or PORT env")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--seed", type=int, default=0)

    return parser


def _cmd_dataset(args) -> int:
    from tryonlab.dataset import build_dataset

    manifest = build_dataset(args.count, args.seed, args.out)
    print(f"wrote {manifest.count} samples to {args.out} "
          f"(manifest hash {manifest.content_hash[:12]})")
    return 0


def _cmd_train(args) -> int:
    from tryonlab.model import TrainConfig
    from tryonlab.training import train

    config = TrainConfig.from_toml(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.steps is not None:
        config.steps = args.steps
    if args.dataset is not None:
        config.dataset_path = args.dataset
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    model = train(config, resume_from=args.resume, quiet=args.quiet)
    print(f"finished at step {model.step}; checkpoint {model.checkpoint_id} "
          f"in {config.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    from tryonlab.metrics import evaluate, identity_diagnostic, order_variation_report
    from tryonlab.model import ModelBundle
    from tryonlab.report import write_eval_report, write_order_variation
    from tryonlab.training import resolve_manifest

    model = ModelBundle.load(args.model)
    manifest = resolve_manifest(args.dataset)
    report = evaluate(model, args.split, manifest, max_samples=args.max_samples)
    written = write_eval_report(report, args.out)

    if args.diagnostics:
        from tryonlab.dataset import load_sample
        from tryonlab.pipeline import person_from_sample

        entries = manifest.split_entries(args.split)[:3]
        diag_lines = []
        for entry in entries:
            sample = load_sample(manifest, entry)
            person = person_from_sample(model, sample)
            if len(person.garments) >= 2:
                orders = [tuple(range(len(person.garments))),
                          tuple(reversed(range(len(person.garments))))]
                ov = order_variation_report(person, orders, model)
                written += write_order_variation(ov, args.out, prefix=f"order_{entry.sample_id}")
            ident = identity_diagnostic(sample, model)
            diag_lines.append(f"{entry.sample_id}: identity ssim overall={ident.overall:.4f} "
                              f"head={ident.head_region:.4f}")
        (Path(args.out) / "diagnostics.txt").write_text("\n".join(diag_lines) + "\n")

    print(report.text_table())
    print(f"report written to {args.out} ({len(written)} files)")
    return 0


def _load_person_inputs(args):
    from tryonlab.dataset import load_image_png
    from tryonlab.preprocess import import_external_parse, import_external_pose

    if args.spec is not None:
        spec = dolls.PaperDollSpec.from_json(json.loads(Path(args.spec).read_text()))
        sample = dolls.render_person(spec)
        return sample.image, sample.seg, sample.keypoints, spec
    if not (args.person and args.pose and args.seg):
        raise ValidationError("tryon needs either --spec or --person/--pose/--seg")
    image = load_image_png(Path(args.person))
    keypoints = import_external_pose(args.pose, source_size=args.pose_size,
                                     confidence_threshold=args.confidence_threshold)
    label_map = {i: i for i in range(5)}
    if args.label_map:
        label_map = json.loads(Path(args.label_map).read_text())
    seg = import_external_parse(args.seg, label_map)
    return image, seg, keypoints, None


def _cmd_tryon(args) -> int:
    import torch

    from tryonlab.dataset import load_image_png
    from tryonlab.model import ModelBundle
    from tryonlab.pipeline import encode_person, encode_garment, render_tryon
    from tryonlab.preprocess import import_external_parse, import_external_pose, make_heatmaps
    from tryonlab.sessions import GarmentSource, SessionStore, image_to_png_bytes

    model = ModelBundle.load(args.model)
    image, seg, keypoints, spec = _load_person_inputs(args)

    order = [int(x) for x in args.order.split(",") if x != ""]
    for label in order:
        if label not in dolls.ALL_LABELS:
            raise ValidationError(f"order label {label} outside schema {dolls.ALL_LABELS}")

    target_kps = keypoints
    if args.target_pose:
        target_kps = import_external_pose(args.target_pose, source_size=args.pose_size,
                                          confidence_threshold=args.confidence_threshold)

    external = {}
    if args.garment:
        if args.garment_seg is None or args.label is None:
            raise ValidationError("--garment needs --garment-seg and --label")
        g_image = load_image_png(Path(args.garment))
        label_map = {i: i for i in range(5)}
        if args.label_map:
            label_map = json.loads(Path(args.label_map).read_text())
        g_seg = import_external_parse(args.garment_seg, label_map)
        g_kps = keypoints
        if args.garment_pose:
            g_kps = import_external_pose(args.garment_pose, source_size=args.pose_size,
                                         confidence_threshold=args.confidence_threshold)
        external[args.label] = GarmentSource(image=g_image, seg=g_seg,
                                             keypoints=g_kps, label=args.label)

    with torch.no_grad():
        person = encode_person(model, image, seg, keypoints,
                               target_keypoints=target_kps, garment_labels=())
        target_heat = make_heatmaps(np.asarray(target_kps))
        garments = []
        sources = []
        for label in order:
            src = external.get(label, GarmentSource(image=np.asarray(image, dtype=np.float32),
                                                    seg=np.asarray(seg, dtype=np.uint8),
                                                    keypoints=np.asarray(keypoints, dtype=np.float32),
                                                    label=label))
            garments.append(encode_garment(model, src.image, src.seg, label,
                                           src.keypoints, target_heat))
            sources.append(src)
        person = person.with_garments(garments)
        render = render_tryon(model, person)

    Path(args.out).write_bytes(image_to_png_bytes(render))
    print(f"render written to {args.out}")

    if args.save_session:
        store = SessionStore(model, args.save_session)
        if spec is not None:
            record = store.create_from_spec(spec)
        else:
            record = store.create_from_arrays(image, seg, keypoints)
        for i, src in enumerate(sources):
            store.add_garment(record.session_id, src, i)
        print(f"session {record.session_id} saved under {args.save_session}")
    return 0


def _cmd_tweak(args) -> int:
    from tryonlab.model import ModelBundle
    from tryonlab.service import load_directions
    from tryonlab.sessions import SessionStore
    from tryonlab.tweaks import Tweak

    session_path = Path(args.session)
    if not session_path.exists():
        raise ValidationError(f"session file not found: {session_path}")
    session_id = session_path.stem

    raw = args.tweak
    if raw.startswith("@"):
        raw = Path(raw[1:]).read_text()
    tweak = Tweak.from_json(json.loads(raw))

    model = ModelBundle.load(args.model)
    store = SessionStore(model, session_path.parent, load_directions(args.directions))
    store.add_tweak(session_id, tweak)
    png = store.render(session_id)
    Path(args.out).write_bytes(png)
    if args.discard:
        store.pop_tweak(session_id)
    print(f"tweaked render written to {args.out}")
    return 0


def _cmd_serve(args) -> int:
    from tryonlab import service

    service.run(model_path=args.model, session_dir=args.session_dir,
                port=args.port, host=args.host)
    return 0


_COMMANDS = {
    "dataset": _cmd_dataset,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "tryon": _cmd_tryon,
    "tweak": _cmd_tweak,
    "serve": _cmd_serve,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
