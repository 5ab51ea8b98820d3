"""Command-line pipeline: datagen, train, infer, eval, segment, rescore, plot."""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import apps, data, evaluate, gt, infer, network, skt, synth, train, viz
from . import tensor as T
from .config import ConfigError, PRESETS, load_config
from .util import atomic_write_text, sample_seeds

log = logging.getLogger("skelex")


def _parallel_map(fn, items, threads):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _load_run_config(args, overrides=None):
    over = dict(overrides or {})
    if args.seed is not None:
        over["seed"] = args.seed
    return load_config(args.config, preset=getattr(args, "preset", None),
                       overrides=over)


# ---------------------------------------------------------------------------
# datagen

_SHAPE_CHOICES = {
    "mix": None,
    "ribbons": [1.0, 0.0, 0.0],
    "ellipses": [0.0, 1.0, 0.0],
    "polygons": [0.0, 0.0, 1.0],
}


def cmd_datagen(args):
    over = {}
    if args.shapes != "mix":
        over = {"data": {"shape_mix": _SHAPE_CHOICES[args.shapes]}}
    cfg = _load_run_config(args, over)
    dc = cfg["data"]
    out = args.out
    manifest_path = os.path.join(out, "manifest.json")
    if os.path.exists(manifest_path) and not args.force:
        log.error("refusing to overwrite %s (use --force)", manifest_path)
        return 1
    count = dc["train"] + dc["test"]
    seeds = sample_seeds(cfg["seed"], "datagen", count)

    def make(seed):
        return synth.generate_image(
            seed, size=dc["size"], shape_mix=tuple(dc["shape_mix"]),
            ribbon_width=tuple(dc["ribbon_width"]), max_scale=dc["max_scale"])

    pairs = _parallel_map(make, seeds, args.threads)
    manifest = data.write_dataset(
        out, pairs, dc["train"],
        provenance=f"synthetic seed={cfg['seed']}", force=args.force)
    data.cache_targets(out, manifest)
    atomic_write_text(os.path.join(out, "config.json"),
                      json.dumps(cfg, indent=1, sort_keys=True))
    log.info("wrote %d train / %d test samples to %s",
             dc["train"], dc["test"], out)
    return 0


# ---------------------------------------------------------------------------
# train

def cmd_train(args):
    over = {}
    if args.iterations is not None:
        over.setdefault("optimizer", {})["iterations"] = args.iterations
    if args.lam is not None:
        over["lambda"] = args.lam
    if args.model is not None:
        over["model"] = args.model
    cfg = _load_run_config(args, over)
    manifest = data.load_manifest(args.data)
    spec = T.BackboneSpec.from_config(cfg["backbone"])
    tc = train.TrainConfig.from_run_config(cfg)
    os.makedirs(args.run, exist_ok=True)
    atomic_write_text(os.path.join(args.run, "config.json"),
                      json.dumps(cfg, indent=1, sort_keys=True))
    mode = "FSDS mode" if (cfg["model"] == "fsds" or cfg["lambda"] == 0) \
        else "LMSDS mode"
    log.info("training %s: %d iterations, lr=%g", mode,
             tc.iterations, tc.lr)
    try:
        state = train.train(args.data, manifest, spec, tc, run_dir=args.run,
                            limit_train=cfg["data"]["limit_train"])
    except train.TrainingDiverged as e:
        log.error("%s", e)
        return 1
    meta = {
        "mode": mode,
        "iterations": state.iteration,
        "final_total": state.history[-1]["total"] if state.history else None,
    }
    atomic_write_text(os.path.join(args.run, "train_meta.json"),
                      json.dumps(meta, indent=1, sort_keys=True))
    log.info("checkpoint at %s", os.path.join(args.run, "checkpoint.skc"))
    return 0


# ---------------------------------------------------------------------------
# infer

def _response_tensor(resp):
    return np.stack([resp.response,
                     resp.scale,
                     resp.stage.astype(np.float32)])


def load_response(path):
    arr = skt.read_tensor(path)
    return infer.SkeletonResponse(response=arr[0], scale=arr[1],
                                  stage=arr[2].astype(np.int32))


def cmd_infer(args):
    cfg = _load_run_config(args)
    net, meta = train.load_checkpoint(args.checkpoint)
    rf = net.spec.receptive_fields()
    manifest = data.load_manifest(args.data)
    samples = manifest.split(args.split) if args.split else manifest.samples
    if args.ids:
        wanted = set(args.ids)
        samples = [s for s in samples if s.id in wanted]
    os.makedirs(args.out, exist_ok=True)

    def run(sample):
        image = data.load_image(os.path.join(args.data, sample.image))
        acts = network.forward(net, data.to_input(image))
        if net.model == "lmsds":
            resp = infer.predict(acts, rf)
        else:
            scale = apps.fsds_scale_estimate(acts.fused_probs, rf)
            stage = (np.argmax(acts.fused_probs[1:], axis=0) + 1)
            resp = infer.SkeletonResponse(
                response=(1.0 - acts.fused_probs[0]).astype(np.float32),
                stage=stage.astype(np.int32), scale=scale)
        skt.write_tensor(os.path.join(args.out, f"{sample.id}.skt"),
                         _response_tensor(resp))
        if args.png:
            from .util import atomic_write_bytes
            atomic_write_bytes(
                os.path.join(args.out, f"{sample.id}.response.png"),
                viz.response_png_bytes(resp.response))
        if args.svg:
            thinned = infer.nms_thin(resp.response,
                                     radius=cfg["eval"]["nms_radius"])
            keep = infer.threshold_binarize(thinned, 0.5)
            viz.overlay_svg(image, keep, resp.scale,
                            os.path.join(args.out, f"{sample.id}.svg"))
        return sample.id

    done = _parallel_map(run, samples, args.threads)
    log.info("inferred %d images into %s", len(done), args.out)
    return 0


# ---------------------------------------------------------------------------
# eval

def _require_responses(resp_dir, samples):
    missing = [s.id for s in samples
               if not os.path.exists(os.path.join(resp_dir, f"{s.id}.skt"))]
    if missing:
        raise FileNotFoundError(
            f"missing response tensors for ids: {', '.join(missing)}")


def cmd_eval(args):
    cfg = _load_run_config(args)
    manifest = data.load_manifest(args.data)
    samples = manifest.split(args.split) if args.split else manifest.samples
    try:
        _require_responses(args.responses, samples)
    except FileNotFoundError as e:
        log.error("%s", e)
        return 1
    os.makedirs(args.out, exist_ok=True)

    def prep(sample):
        resp = load_response(os.path.join(args.responses, f"{sample.id}.skt"))
        thinned = infer.nms_thin(resp.response,
                                 radius=cfg["eval"]["nms_radius"])
        _, _, skel, _ = data.sample_arrays(args.data, sample)
        return thinned, skel

    pairs = _parallel_map(prep, samples, args.threads)
    thresholds = evaluate.default_thresholds(cfg["eval"]["thresholds"])
    curve = evaluate.pr_curve([p[0] for p in pairs], [p[1] for p in pairs],
                              thresholds=thresholds,
                              kappa=cfg["eval"]["kappa"])
    curve_file = os.path.join(args.out, "pr.csv")
    rows = ["threshold,precision,recall,f"]
    rows += [f"{t:.6f},{p:.6f},{r:.6f},{f:.6f}"
             for t, p, r, f in curve.rows()]
    atomic_write_text(curve_file, "\n".join(rows) + "\n")
    summary = {
        "best_f": curve.best_f,
        "best_threshold": curve.best_threshold,
        "curve_file": "pr.csv",
    }
    atomic_write_text(os.path.join(args.out, "summary.json"),
                      json.dumps(summary, indent=1, sort_keys=True))
    log.info("best F = %.4f at t = %.2f", curve.best_f, curve.best_threshold)
    return 0


# ---------------------------------------------------------------------------
# segment

def cmd_segment(args):
    cfg = _load_run_config(args)
    threshold = args.threshold
    if threshold is None and args.summary:
        with open(args.summary) as fh:
            threshold = json.load(fh)["best_threshold"]
    if threshold is None:
        log.error("need --threshold or --summary")
        return 1
    manifest = data.load_manifest(args.data)
    samples = manifest.split(args.split) if args.split else manifest.samples
    try:
        _require_responses(args.responses, samples)
    except FileNotFoundError as e:
        log.error("%s", e)
        return 1
    os.makedirs(args.out, exist_ok=True)

    def run(sample):
        resp = load_response(os.path.join(args.responses, f"{sample.id}.skt"))
        thinned = infer.nms_thin(resp.response,
                                 radius=cfg["eval"]["nms_radius"])
        keep = infer.threshold_binarize(thinned, threshold)
        segs = apps.group_segments(keep, np.maximum(resp.scale, 1e-3))
        shape = resp.response.shape
        masks = [apps.reconstruct_mask(seg, shape) for seg in segs]
        viz.segment_label_png(masks, shape,
                              os.path.join(args.out, f"{sample.id}.seg.png"))
        mask = data.load_mask(os.path.join(args.data, sample.mask))
        from scipy import ndimage
        labels, n = ndimage.label(mask, structure=np.ones((3, 3)))
        gts = [labels == k for k in range(1, n + 1)]
        return masks, gts

    results = _parallel_map(run, samples, args.threads)
    score = evaluate.seg_scores([r[0] for r in results],
                                [r[1] for r in results])
    doc = {
        "f_measure": score.f_measure,
        "covering_percent": score.covering,
        "avg_num_segments": score.avg_num_segments,
        "threshold": threshold,
    }
    atomic_write_text(os.path.join(args.out, "segmentation.json"),
                      json.dumps(doc, indent=1, sort_keys=True))
    log.info("segmentation F = %.4f, covering = %.1f%%, %.2f segments/img",
             score.f_measure, score.covering, score.avg_num_segments)
    return 0


# ---------------------------------------------------------------------------
# rescore

def _read_boxes_csv(path, with_score):
    per_image = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"id", "x", "y", "w", "h"} | ({"score"} if with_score else set())
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {sorted(need)}")
        for row in reader:
            box = apps.ScoredBox(int(row["x"]), int(row["y"]),
                                 int(row["w"]), int(row["h"]),
                                 float(row["score"]) if with_score else 0.0)
            per_image.setdefault(row["id"], []).append(box)
    return per_image


def cmd_rescore(args):
    from PIL import Image

    boxes = _read_boxes_csv(args.proposals, with_score=True)
    rescored = {}
    shapes = {}
    for sid, blist in sorted(boxes.items()):
        seg_path = os.path.join(args.segments, f"{sid}.seg.png")
        if not os.path.exists(seg_path):
            log.error("missing segment masks for id %s", sid)
            return 1
        labels = np.asarray(Image.open(seg_path))
        masks = [labels == k for k in np.unique(labels) if k > 0]
        shapes[sid] = labels.shape
        rescored[sid] = apps.rescore_proposals(blist, masks, labels.shape)
    rows = ["id,x,y,w,h,score,rescored"]
    for sid, blist in sorted(rescored.items()):
        for b in blist:
            rows.append(f"{sid},{b.x},{b.y},{b.w},{b.h},"
                        f"{b.base:.6f},{b.score:.6f}")
    atomic_write_text(args.out, "\n".join(rows) + "\n")
    if args.gt_boxes:
        gtb = _read_boxes_csv(args.gt_boxes, with_score=False)
        ids = sorted(rescored)
        ns, rates = apps.detection_rate_curve(
            [rescored[i] for i in ids],
            [[(b.x, b.y, b.w, b.h) for b in gtb.get(i, [])] for i in ids])
        out2 = os.path.splitext(args.out)[0] + ".detrate.csv"
        atomic_write_text(out2, "n,rate\n" + "\n".join(
            f"{n},{r:.6f}" for n, r in zip(ns, rates)) + "\n")
        log.info("detection-rate curve in %s", out2)
    log.info("rescored %d boxes over %d images",
             sum(len(b) for b in rescored.values()), len(rescored))
    return 0


# ---------------------------------------------------------------------------
# plot

def cmd_plot(args):
    rows = []
    with open(args.pr, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append((float(row["threshold"]), float(row["precision"]),
                         float(row["recall"])))
    curve = evaluate.PRCurve(
        thresholds=np.array([r[0] for r in rows]),
        precision=np.array([r[1] for r in rows]),
        recall=np.array([r[2] for r in rows]))
    viz.pr_svg(curve, args.out)
    log.info("wrote %s", args.out)
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    top = argparse.ArgumentParser(
        prog="skelex",
        description="object skeleton extraction: synthetic data, training, "
                    "inference, evaluation, segmentation, proposal rescoring")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--threads", type=int, default=1,
                        help="per-image parallelism")
    common.add_argument("--force", action="store_true",
                        help="overwrite existing outputs")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", parents=[common],
                       help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--shapes", choices=sorted(_SHAPE_CHOICES), default="mix")
    p.set_defaults(fn=cmd_datagen)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True, help="run directory for "
                   "checkpoint and loss log")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--iterations", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--model", choices=["lmsds", "fsds"])
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", parents=[common],
                       help="run a checkpoint over dataset images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--ids", nargs="*")
    p.add_argument("--out", required=True)
    p.add_argument("--png", action="store_true",
                   help="also write response PNGs")
    p.add_argument("--svg", action="store_true",
                   help="also write scale-colored overlays")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", parents=[common],
                       help="precision/recall against groundtruth skeletons")
    p.add_argument("--responses", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("segment", parents=[common],
                       help="reconstruct object masks from skeletons")
    p.add_argument("--responses", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--summary", help="eval summary.json with best_threshold")
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("rescore", parents=[common],
                       help="rescore proposal boxes by skeleton coverage")
    p.add_argument("--proposals", required=True,
                   help="CSV with id,x,y,w,h,score")
    p.add_argument("--segments", required=True,
                   help="directory of *.seg.png from the segment command")
    p.add_argument("--out", required=True)
    p.add_argument("--gt-boxes", help="CSV with id,x,y,w,h for the "
                   "detection-rate curve")
    p.set_defaults(fn=cmd_rescore)

    p = sub.add_parser("plot", parents=[common], help="SVG plot of a PR CSV")
    p.add_argument("--pr", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)
    return top


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, FileNotFoundError, FileExistsError) as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
