"""Command-line entry point.

Subcommands: synth, train, predict, evaluate, compare, stratify, gradcheck.
All randomness flows from explicit --seed flags; file formats are documented
in docs/formats.md.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import nifti
from .backend import BACKEND
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import LesionSegError
from .gradcheck import DEFAULT_SEEDS, DEFAULT_TOL, run_gradcheck
from .inference import ensemble_predict, predict_volume
from .metrics import compute_scan_metrics
from .optim import Snapshot
from .resunet import ArchConfig, build_model
from .stats import (
    BootstrapConfig,
    GROUP_LABELS,
    METRIC_FIELDS,
    build_comparison,
    build_report,
    format_value_ci,
    verify_report,
)
from .synthdata import SynthConfig, generate_dataset
from .trainer import (
    Manifest,
    SYSTEM_LABELS,
    TrainConfig,
    run_zoom_in_out,
    train_stage,
)
from .volume import binarize


def _parse_triple(text):
    parts = [int(p) for p in str(text).split(",")]
    if len(parts) == 1:
        return (parts[0],) * 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected X,Y,Z or a single int, got {text!r}")
    return tuple(parts)


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args):
    cfg = SynthConfig(extents=args.dim, spacing=args.spacing,
                      n_lesions=(args.min_lesions, args.max_lesions),
                      lesion_volume_mm3=(args.min_volume, args.max_volume),
                      seed=args.seed)
    manifest = generate_dataset(cfg, args.train, args.dev, args.test, args.out)
    print(f"wrote {len(manifest)} scan/mask pairs and manifest.csv to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _history_digest(histories):
    payload = json.dumps(histories, sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def _ckpt_metadata(cfg, variant, stage, epoch, histories):
    return {"arch": cfg.arch.to_dict(), "variant": variant,
            "label": SYSTEM_LABELS.get(variant, variant),
            "stage": stage, "epoch": epoch, "seed": cfg.seed,
            "history_sha256": _history_digest(histories)}


def _echo_run_header(cfg):
    print(f"backend: {BACKEND}")
    print(f"arch: {cfg.arch.preset_name or 'custom'} "
          f"(levels={cfg.arch.levels}, base_channels={cfg.arch.base_channels})")
    print(f"loss: alpha={cfg.loss.alpha} smooth_eps={cfg.loss.smooth_eps} "
          f"clamp_eps={cfg.loss.clamp_eps}")
    print(f"seed: {cfg.seed}")
    for s in cfg.stages:
        px = "x".join(str(p) for p in s.patch_extents)
        print(f"stage {s.name}: patch {px}, {s.epochs} epochs, "
              f"eta_max {s.eta_max:.2E}, batch {s.batch_size}, "
              f"t0 {s.schedule.t0}, snapshots {list(s.snapshot_epochs) or '-'}")


def _cmd_train(args):
    cfg = TrainConfig.from_json(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    manifest = Manifest.load(args.manifest)
    os.makedirs(args.out, exist_ok=True)
    _echo_run_header(cfg)

    adam_kwargs = dict(beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    common = dict(normalize=cfg.normalize, adam_kwargs=adam_kwargs,
                  eval_crop=cfg.eval_crop, eval_every=cfg.eval_every,
                  threshold=cfg.threshold, log=_log_epoch)

    if args.stage == "both":
        model = build_model(cfg.arch, cfg.seed)
        out = run_zoom_in_out(model, manifest, cfg.stages, cfg.loss, cfg.seed, **common)
        _save_outputs(args.out, cfg, out)
    elif args.stage == "zoomin":
        model = build_model(cfg.arch, cfg.seed)
        _, hist, best = train_stage(model, manifest, cfg.stages[0], cfg.loss,
                                    cfg.seed, stage_ordinal=0, **common)
        histories = {"zoom_in": hist}
        save_checkpoint(os.path.join(args.out, "zoomin_final.ckpt"), model.state_dict(),
                        _ckpt_metadata(cfg, "prefinetune", "zoom_in",
                                       cfg.stages[0].epochs, histories))
        _write_json(os.path.join(args.out, "history.json"), histories)
    else:  # zoomout
        init = os.path.join(args.out, "zoomin_final.ckpt")
        if not os.path.exists(init):
            raise LesionSegError(f"--stage zoomout needs {init} from a zoomin run")
        state, meta = load_checkpoint(init)
        model = build_model(ArchConfig.from_dict(meta["arch"]), cfg.seed)
        model.load_state_dict(state)
        snaps, hist, best = train_stage(model, manifest, cfg.stages[1], cfg.loss,
                                        cfg.seed, stage_ordinal=1, **common)
        histories = {"zoom_out": hist}
        _save_stage2(args.out, cfg, model.state_dict(), snaps, best, histories)
        _write_json(os.path.join(args.out, "history.json"), histories)
    print(f"checkpoints written to {args.out}")
    return 0


def _log_epoch(stage_name, entry):
    msg = f"[{stage_name}] epoch {entry['epoch']}: lr {entry['lr']:.3E} loss {entry['train_loss']:.4f}"
    if "dev_dsc" in entry:
        msg += f" dev_dsc {entry['dev_dsc']:.4f}"
    print(msg)


def _save_stage2(out_dir, cfg, final_state, snapshots, best_dev, histories):
    save_checkpoint(os.path.join(out_dir, "final.ckpt"), final_state,
                    _ckpt_metadata(cfg, "final", "zoom_out",
                                   cfg.stages[1].epochs, histories))
    for snap in snapshots:
        save_checkpoint(os.path.join(out_dir, f"snapshot_ep{snap.epoch}.ckpt"),
                        snap.parameters,
                        _ckpt_metadata(cfg, "snapshot", "zoom_out", snap.epoch, histories))
    if best_dev is not None:
        save_checkpoint(os.path.join(out_dir, "best_dev.ckpt"), best_dev["state"],
                        _ckpt_metadata(cfg, "best_dev", "zoom_out",
                                       best_dev["epoch"], histories))


def _save_outputs(out_dir, cfg, out):
    histories = out.histories
    save_checkpoint(os.path.join(out_dir, "zoomin_final.ckpt"), out.prefinetune_state,
                    _ckpt_metadata(cfg, "prefinetune", "zoom_in",
                                   cfg.stages[0].epochs, histories))
    _save_stage2(out_dir, cfg, out.final_state, out.snapshots, out.best_dev, histories)
    _write_json(os.path.join(out_dir, "history.json"), histories)


# ---------------------------------------------------------------------------
# predict


def _load_model_from_ckpt(path):
    state, meta = load_checkpoint(path)
    model = build_model(ArchConfig.from_dict(meta["arch"]), seed=0)
    model.load_state_dict(state)
    return model, meta


def _cmd_predict(args):
    if not args.ckpt and not args.ensemble:
        raise LesionSegError("predict needs --ckpt or --ensemble")
    scan = nifti.read_volume(args.in_path)
    crop = args.crop or scan.extents

    if args.ensemble:
        first_state, meta = load_checkpoint(args.ensemble[0])
        model = build_model(ArchConfig.from_dict(meta["arch"]), seed=0)
        snapshots = []
        for p in args.ensemble:
            state, m = load_checkpoint(p)
            snapshots.append(Snapshot(epoch=m.get("epoch", 0), parameters=state))
        prob = ensemble_predict(model, snapshots, scan, crop, average=args.average)
    else:
        model, _ = _load_model_from_ckpt(args.ckpt)
        prob = predict_volume(model, scan, crop)

    nifti.write_volume(prob, args.out, datatype=16)
    print(f"wrote probabilities to {args.out}")
    if args.mask_out:
        nifti.write_mask(binarize(prob, args.threshold), args.mask_out)
        print(f"wrote mask (threshold {args.threshold}) to {args.mask_out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _find_prediction(pred_dir, subject_id):
    for pattern in (f"{subject_id}.nii.gz", f"{subject_id}.nii",
                    f"{subject_id}_prob.nii.gz", f"{subject_id}_prob.nii"):
        p = os.path.join(pred_dir, pattern)
        if os.path.exists(p):
            return p
    raise FileNotFoundError(f"no prediction for {subject_id} in {pred_dir}")


def _find_reference(ref_dir, record):
    if ref_dir is None:
        return record.mask_path
    for pattern in (f"{record.subject_id}_mask.nii.gz", f"{record.subject_id}_mask.nii",
                    f"{record.subject_id}.nii.gz", f"{record.subject_id}.nii"):
        p = os.path.join(ref_dir, pattern)
        if os.path.exists(p):
            return p
    raise FileNotFoundError(f"no reference for {record.subject_id} in {ref_dir}")


def _cmd_evaluate(args):
    if args.pred is None:
        # verify-only mode on an existing report
        if not args.verify:
            raise LesionSegError("evaluate needs --pred (or --verify with an existing --out)")
        with open(args.out) as f:
            report = json.load(f)
        return _verify_and_print(report, args.out)

    manifest = Manifest.load(args.manifest, check_paths=False)
    records = manifest.split(args.split)
    if not records:
        raise LesionSegError(f"manifest has no records in split {args.split!r}")

    cfg = BootstrapConfig(resamples=args.bootstrap, seed=args.seed)
    per_scan = []
    for r in records:
        prob = nifti.read_volume(_find_prediction(args.pred, r.subject_id))
        ref = nifti.read_mask(_find_reference(args.ref, r))
        per_scan.append(compute_scan_metrics(r.subject_id, prob, ref,
                                             threshold=args.threshold))
        print(f"{r.subject_id}: dsc {per_scan[-1].dsc:.4f}")

    report = build_report(per_scan, cfg, threshold=args.threshold)
    _write_json(args.out, report)
    print(f"report written to {args.out}")
    for f in METRIC_FIELDS:
        print(f"  {f}: {format_value_ci(report['aggregate'][f])}")
    print(f"  micro_dsc: {report['micro_dsc']:.4f}")
    if args.verify:
        with open(args.out) as fh:
            return _verify_and_print(json.load(fh), args.out)
    return 0


def _verify_and_print(report, path):
    problems = verify_report(report)
    if problems:
        for p in problems:
            print(f"verify: {p}", file=sys.stderr)
        print(f"{path}: {len(problems)} aggregate discrepancies", file=sys.stderr)
        return 1
    print(f"{path}: aggregates verified, zero discrepancy")
    return 0


# ---------------------------------------------------------------------------
# compare / stratify


def _cmd_compare(args):
    with open(args.a) as f:
        report_a = json.load(f)
    with open(args.b) as f:
        report_b = json.load(f)
    cmp = build_comparison(report_a, report_b, label_a=args.label_a, label_b=args.label_b)
    _write_json(args.out, cmp)
    print(f"comparison written to {args.out}")
    header = ["system", "microDSC"] + list(METRIC_FIELDS)
    print("\t".join(header))
    for side in ("a", "b"):
        block = cmp[side]
        row = [block["label"], f"{block['micro_dsc']:.2f}"]
        row += [format_value_ci(block["aggregate"][f]) for f in METRIC_FIELDS]
        print("\t".join(row))
    deltas = [f"{cmp['delta'][f]:+.2f}" if cmp["delta"][f] is not None else "n/a"
              for f in ("micro_dsc",) + METRIC_FIELDS]
    print("\t".join(["delta"] + deltas))
    return 0


def _cmd_stratify(args):
    with open(args.report) as f:
        report = json.load(f)
    if "stratified" not in report:
        raise LesionSegError(f"{args.report} has no stratified block (needs >= 4 scans)")
    cols = ("dsc", "hd_mm", "assd_mm", "tpr", "precision")
    print("\t".join(["lesion size percentile", "n"] + list(cols)))
    for group in report["stratified"]:
        row = [group["range"], str(group["n_scans"])]
        row += [format_value_ci(group["aggregate"][c]) for c in cols]
        print("\t".join(row))
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def _cmd_gradcheck(args):
    seeds = (args.seed,) if args.seed is not None else DEFAULT_SEEDS
    ops = [args.op] if args.op else None
    results = run_gradcheck(ops=ops, seeds=seeds, tol=args.tol)
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.op:<18} seed {r.seed}: max rel err {r.max_rel_err:.3e}  [{status}]")
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed (tol {args.tol:g})")
    return 0 if failed == 0 else 1


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="lesionseg",
                                     description="3D lesion segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--dev", type=int, required=True)
    p.add_argument("--test", type=int, required=True)
    p.add_argument("--dim", type=_parse_triple, default=(48, 48, 48))
    p.add_argument("--spacing", type=lambda s: tuple(float(x) for x in s.split(",")),
                   default=(1.0, 1.0, 1.0))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-lesions", type=int, default=1)
    p.add_argument("--max-lesions", type=int, default=3)
    p.add_argument("--min-volume", type=float, default=30.0)
    p.add_argument("--max-volume", type=float, default=2.8e5)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="run the zoom-in&out training pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage", choices=["zoomin", "zoomout", "both"], default="both")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="predict one scan with a checkpoint or ensemble")
    p.add_argument("--ckpt")
    p.add_argument("--ensemble", nargs="+")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--crop", type=_parse_triple, default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--mask-out")
    p.add_argument("--average", choices=["prob", "logit"], default="prob")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions and write a report")
    p.add_argument("--pred")
    p.add_argument("--ref")
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--bootstrap", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verify", action="store_true",
                   help="recompute aggregates from per-scan records and compare")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare", help="two-system metric comparison (ablation table)")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label-a", default="A")
    p.add_argument("--label-b", default="B")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("stratify", help="print lesion-size quartile table from a report")
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_stratify)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--op", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (LesionSegError, FileNotFoundError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
