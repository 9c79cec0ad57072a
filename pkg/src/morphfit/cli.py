"""``morphfit`` command-line frontend.

Exit status: 0 success, 1 processing failure (a JSON error record is written
to stderr), 2 usage error. Batch commands run on a bounded thread pool whose
size is capped by the ``MORPHFIT_THREADS`` environment variable.
"""

import argparse
import csv
import dataclasses
import io as _io
import json
import os
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import evaluation as ev
from . import io as mio
from ._container import write_atomic
from .camera import extract_pose_angles, estimate_pose_posit, posit_pose_angles
from .errors import ChartMismatchError, DimensionError, MorphfitError
from .fitting import DEFAULT_ITERATIONS, DEFAULT_LAMBDA, FitConfig, drop_missing, fit, landmark_rmse
from .landmarks import (
    HogConfig,
    LandmarkSet,
    detect_landmarks,
    load_cascade,
    normalized_error,
    save_cascade,
    train_cascade,
)
from .model import ORTHO_TOL, generate_synthetic_model, instantiate, load_model, save_model
from .texture import DEFAULT_RESOLUTION, compute_isomap, remap_texture, render_frontal

THREADS_ENV = "MORPHFIT_THREADS"


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def pool_size(jobs):
    env = os.environ.get(THREADS_ENV, "").strip()
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if cap < 1:
            raise UsageError(f"{THREADS_ENV} must be >= 1")
    return max(1, min(cap, jobs))


def run_pool(fn, items):
    """Ordered map over a bounded worker pool."""
    items = list(items)
    n = pool_size(len(items))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def error_record(exc, **context):
    if isinstance(exc, MorphfitError):
        rec = exc.to_record()
    else:
        rec = {"type": type(exc).__name__, "kind": "io" if isinstance(exc, OSError) else "error",
               "message": str(exc)}
    return {"status": "error", **context, **rec}


def emit_error(exc, **context):
    print(json.dumps(error_record(exc, **context)), file=sys.stderr)


def parse_box(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"face box must be x,y,w,h numbers, got {text!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"face box needs 4 values x,y,w,h, got {len(vals)}")
    return tuple(vals)


def write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        write_atomic(path, text.encode())


def csv_text(header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def fmt(v):
    v = float(v)
    return repr(v)


def read_manifest(path, required):
    """Rows of a CSV manifest; relative paths resolve against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(required) - set(reader.fieldnames or ())
        if missing:
            raise DimensionError(f"manifest {path} lacks columns {sorted(missing)}")
        rows = list(reader)
    for row in rows:
        for key in ("image", "landmarks"):
            if row.get(key):
                row[key] = os.path.join(base, row[key])
    return rows


def manifest_box(row):
    return tuple(float(row[k]) for k in ("x", "y", "w", "h"))


def load_chart_for(model, path):
    """Isomap chart for ``model``, read from or written to the cache file ``path`` if given."""
    if path and os.path.exists(path):
        chart = mio.load_chart(path)
        if chart.fingerprint != model.fingerprint:
            raise ChartMismatchError(f"chart cache {path} belongs to a different model")
        return chart
    chart = compute_isomap(model)
    if path:
        mio.save_chart(path, chart)
    return chart


class LazyChart:
    """Chart computed (or loaded) on first use, shared by all workers."""

    def __init__(self, model, path):
        self._args = (model, path)
        self._chart = None
        self._lock = threading.Lock()

    def get(self):
        with self._lock:
            if self._chart is None:
                self._chart = load_chart_for(*self._args)
            return self._chart


def load_model_with_mapping(path, mapping_path=None):
    model = load_model(path)
    if mapping_path:
        model = dataclasses.replace(model, landmark_map=mio.read_mapping(mapping_path))
    return model


# --------------------------------------------------------------------------
# model


def cmd_model_gen(args):
    model = generate_synthetic_model(args.seed, args.vertices, args.coeffs, colour=args.colour)
    save_model(model, args.out)
    return 0


def model_report(model):
    B = model.shape_basis
    resid = float(np.abs(B.T @ B - np.eye(B.shape[1])).max()) if B.size else 0.0
    pts = model.mean_points()
    return {
        "vertices": model.vertex_count,
        "coeffs": model.num_coeffs,
        "triangles": int(len(model.triangles)),
        "colour_coeffs": model.num_colour_coeffs,
        "orthonormality_residual": resid,
        "orthonormal": resid <= ORTHO_TOL,
        "fingerprint": model.fingerprint,
        "landmarks": [
            {"name": n, "vertex": i, "position": [float(c) for c in pts[i]]}
            for n, i in model.landmark_map.items()
        ],
    }


def cmd_model_inspect(args):
    rep = model_report(load_model(args.path))
    if args.json:
        print(json.dumps(rep))
        return 0
    print(f"vertices {rep['vertices']}")
    print(f"coeffs {rep['coeffs']}")
    print(f"triangles {rep['triangles']}")
    print(f"colour_coeffs {rep['colour_coeffs']}")
    print(f"orthonormality_residual {rep['orthonormality_residual']:.3e}")
    print(f"fingerprint {rep['fingerprint']}")
    print(f"landmarks {len(rep['landmarks'])}")
    for lm in rep["landmarks"]:
        x, y, z = lm["position"]
        print(f"  {lm['name']:>6} {lm['vertex']:>7d} {x:10.4f} {y:10.4f} {z:10.4f}")
    return 0


# --------------------------------------------------------------------------
# fit


def _fit_jobs(args):
    if args.manifest:
        if args.image or args.landmarks:
            raise UsageError("--manifest cannot be combined with an image argument or --landmarks")
        rows = read_manifest(args.manifest, ["image"])
        jobs = []
        for row in rows:
            if row.get("landmarks"):
                jobs.append((row["image"], row["landmarks"], None))
            elif all(row.get(k) for k in ("x", "y", "w", "h")):
                jobs.append((row["image"], None, manifest_box(row)))
            else:
                raise DimensionError(f"manifest row for {row['image']} needs landmarks or x,y,w,h")
        return jobs
    if not args.image:
        raise UsageError("give an image or --manifest")
    if args.landmarks is None and args.face_box is None:
        raise UsageError("landmarks come from --landmarks or from --cascade with --face-box")
    return [(args.image, args.landmarks, args.face_box)]


def _write_fit_outputs(out_dir, stem, result):
    alpha = csv_text(["index", "alpha"], [(i, fmt(a)) for i, a in enumerate(result.alpha)])
    write_atomic(os.path.join(out_dir, stem + ".alpha.csv"), alpha.encode())
    cam = csv_text(["c0", "c1", "c2", "c3"], [[fmt(v) for v in row] for row in result.camera.matrix])
    write_atomic(os.path.join(out_dir, stem + ".camera.csv"), cam.encode())


def fit_one(job, model, chart, cascade, args):
    image_path, lm_path, box = job
    stem = os.path.splitext(os.path.basename(image_path))[0]
    t0 = time.perf_counter()
    image = mio.read_image(image_path)
    t_read = time.perf_counter()
    if lm_path is not None:
        landmarks = mio.read_landmarks(lm_path)
    else:
        if cascade is None:
            raise UsageError("face-box input needs --cascade")
        landmarks = detect_landmarks(image, box, cascade)
    t_detect = time.perf_counter()
    usable = drop_missing(landmarks)
    config = FitConfig(args.lam, args.iterations, args.num_coeffs)
    result = fit(model, usable, config)
    pose = extract_pose_angles(result.camera)
    t_fit = time.perf_counter()
    outputs = {
        "alpha": os.path.join(args.out_dir, stem + ".alpha.csv"),
        "camera": os.path.join(args.out_dir, stem + ".camera.csv"),
        "frontal": os.path.join(args.out_dir, stem + ".frontal.png"),
    }
    _write_fit_outputs(args.out_dir, stem, result)
    skipped = abs(pose.yaw) < args.min_yaw
    if skipped:
        # pose already close to frontal: pass the input through unchanged
        mio.write_image(outputs["frontal"], image)
    else:
        mesh = instantiate(model, result.alpha)
        chart = chart.get()
        tex = remap_texture(image, mesh, result.camera, chart, args.isomap_resolution)
        outputs["isomap"] = os.path.join(args.out_dir, stem + ".isomap.png")
        outputs["isomap_mask"] = mio.mask_path(outputs["isomap"])
        mio.write_texture(outputs["isomap"], tex)
        mio.write_image(outputs["frontal"], render_frontal(mesh, tex, chart, args.frontal_size))
    t_end = time.perf_counter()
    return {
        "status": "ok",
        "image": image_path,
        "skipped": bool(skipped),
        "landmarks": len(usable),
        "yaw": pose.yaw,
        "pitch": pose.pitch,
        "roll": pose.roll,
        "costs": result.costs,
        "sse": [s for s, _ in result.trace],
        "regularizer": [r for _, r in result.trace],
        "landmark_rmse": landmark_rmse(model, result, usable),
        "latency_ms": {
            "read": 1e3 * (t_read - t0),
            "detect": 1e3 * (t_detect - t_read),
            "fit": 1e3 * (t_fit - t_detect),
            "texture": 1e3 * (t_end - t_fit),
            "total": 1e3 * (t_end - t0),
        },
        "outputs": outputs,
    }


def cmd_fit(args):
    jobs = _fit_jobs(args)
    model = load_model_with_mapping(args.model, args.mapping)
    cascade = load_cascade(args.cascade) if args.cascade else None
    chart = LazyChart(model, args.chart)
    os.makedirs(args.out_dir, exist_ok=True)

    def run(job):
        try:
            return fit_one(job, model, chart, cascade, args)
        except UsageError:
            raise
        except (MorphfitError, OSError, ValueError) as exc:
            return error_record(exc, image=job[0])

    records = run_pool(run, jobs)
    lines = "".join(json.dumps(r) + "\n" for r in records if r["status"] == "ok")
    for r in records:
        if r["status"] != "ok":
            print(json.dumps(r), file=sys.stderr)
    if args.records:
        write_atomic(args.records, lines.encode())
    else:
        sys.stdout.write(lines)
    return 0 if all(r["status"] == "ok" for r in records) else 1


# --------------------------------------------------------------------------
# detector


def cmd_detect(args):
    cascade = load_cascade(args.cascade)
    image = mio.read_image(args.image)
    lms = detect_landmarks(image, args.face_box, cascade)
    write_text(args.out, mio.format_landmarks(lms))
    return 0


def load_training_samples(path):
    rows = read_manifest(path, ["image", "landmarks", "x", "y", "w", "h"])

    def load(row):
        return mio.read_image(row["image"]), mio.read_landmarks(row["landmarks"]), manifest_box(row)

    return run_pool(load, rows)


def cmd_train_detector(args):
    samples = load_training_samples(args.manifest)
    hog = HogConfig(args.cell_size, args.num_cells, args.num_bins)
    cascade = train_cascade(samples, stages=args.stages, ridge=args.ridge, hog=hog,
                            perturbations=args.perturbations, seed=args.seed,
                            min_samples=args.min_samples)
    save_cascade(cascade, args.out)
    report = {"status": "ok", "samples": len(samples), "stages": cascade.num_stages,
              "training_errors": cascade.training_errors}
    if args.holdout:
        held = load_training_samples(args.holdout)

        def evaluate(sample):
            image, truth, box = sample
            truth = truth.subset(cascade.names)
            init = normalized_error(cascade.initial_points(box), truth.points, box)
            final = normalized_error(detect_landmarks(image, box, cascade).points, truth.points, box)
            return init, final

        errs = np.asarray(run_pool(evaluate, held))
        report["holdout"] = {
            "samples": len(held),
            "init_error": float(errs[:, 0].mean()),
            "final_error": float(errs[:, 1].mean()),
            "ratio": float(errs[:, 1].mean() / errs[:, 0].mean()),
        }
    print(json.dumps(report))
    return 0


# --------------------------------------------------------------------------
# synthetic corpus


def cmd_synth(args):
    from .synthetic import face_texture, random_sample

    model = load_model(args.model)
    chart = load_chart_for(model, args.chart)
    tex = face_texture(model, chart, args.texture_resolution)
    os.makedirs(args.out_dir, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    rows = []
    for i in range(args.count):
        s = random_sample(model, chart, tex, rng, size=args.size,
                          yaw=(args.yaw_min, args.yaw_max), pitch=(-args.pitch, args.pitch),
                          roll=(-args.roll, args.roll))
        stem = f"{args.prefix}{i:05d}"
        mio.write_image(os.path.join(args.out_dir, stem + ".png"), s["image"])
        mio.write_landmarks(os.path.join(args.out_dir, stem + ".landmarks.txt"),
                            LandmarkSet(s["names"], s["points"]))
        yaw, pitch, roll = s["angles"]
        rows.append([stem, stem + ".png", stem + ".landmarks.txt", *map(fmt, s["box"]),
                     fmt(yaw), fmt(pitch), fmt(roll)])
    text = csv_text(["id", "image", "landmarks", "x", "y", "w", "h", "yaw", "pitch", "roll"], rows)
    write_atomic(os.path.join(args.out_dir, "manifest.csv"), text.encode())
    return 0


# --------------------------------------------------------------------------
# evaluation


def cmd_eval_det(args):
    scores = ev.read_score_matrix(args.scores, args.labels)
    curve = ev.compute_det(scores)
    rows = [(fmt(t), fmt(a), fmt(r)) for t, a, r in zip(curve.thresholds, curve.far, curve.frr)]
    write_text(args.out, csv_text(["threshold", "far", "frr"], rows))
    print(json.dumps({"far": args.far, "frr": ev.frr_at_far(curve, args.far)}), file=sys.stderr)
    return 0


def _gallery_filter(scores, args):
    if args.gallery_yaw is None:
        return scores
    ids = ev.gallery_by_yaw(scores, args.gallery_yaw, args.gallery_half_width)
    return scores.select(gallery_ids=ids)


def cmd_eval_bins(args):
    scores = _gallery_filter(ev.read_score_matrix(args.scores, args.labels), args)
    rows = []
    for centre, (lo, hi), view in ev.bin_by_yaw(scores, args.bin_width, args.range):
        try:
            frr = ev.frr_at_far(ev.compute_det(view), args.far)
        except MorphfitError:
            frr = float("nan")
        rows.append((fmt(centre), fmt(lo), fmt(hi), len(view.probe_ids), fmt(frr)))
    write_text(args.out, csv_text(["bin_centre", "lo", "hi", "probes", "frr"], rows))
    return 0


def cmd_eval_improve(args):
    base = _gallery_filter(ev.read_score_matrix(args.baseline, args.labels), args)
    meth = _gallery_filter(ev.read_score_matrix(args.method, args.labels), args)
    curve = ev.improvement_curve(base, meth, args.far, args.bin_width, args.range)
    fb = ev.binned_frr(base, args.far, args.bin_width, args.range)
    fm = ev.binned_frr(meth.select(base.probe_ids, base.gallery_ids), args.far, args.bin_width, args.range)
    rows = [(fmt(c), fmt(b), fmt(m), fmt(d))
            for c, (_, b), (_, m), d in zip(curve.centres, fb, fm, curve.delta_frr)]
    write_text(args.out, csv_text(["bin_centre", "frr_baseline", "frr_method", "delta_frr"], rows))
    return 0


# --------------------------------------------------------------------------
# pose annotation


def annotate_one(row, model, args):
    from PIL import Image

    with Image.open(row["image"]) as im:
        width, height = im.size
    lms = drop_missing(mio.read_landmarks(row["landmarks"]))
    if args.method == "affine":
        result = fit(model, lms, FitConfig(args.lam, args.iterations, args.num_coeffs))
        pose = extract_pose_angles(result.camera)
        return pose.yaw, pose.pitch, pose.roll
    names = [n for n, _ in lms]
    pts = np.asarray([p for _, p in lms])
    X = model.mean_points()[model.landmark_vertices(names)]
    focal = args.focal if args.focal else 1.5 * width
    R, _ = estimate_pose_posit(pts, X, focal, ((width - 1) / 2.0, (height - 1) / 2.0))
    pose = posit_pose_angles(R)
    return pose.yaw, pose.pitch, pose.roll


def cmd_pose_annotate(args):
    rows = read_manifest(args.manifest, ["id", "image", "landmarks"])
    model = load_model_with_mapping(args.model, args.mapping)

    def run(row):
        try:
            return row["id"], annotate_one(row, model, args), None
        except (MorphfitError, OSError, ValueError) as exc:
            return row["id"], None, error_record(exc, id=row["id"], image=row["image"])

    out, failed = [], 0
    for ident, angles, err in run_pool(run, rows):
        if err is None:
            out.append([ident, *map(fmt, angles), "ok"])
        else:
            failed += 1
            print(json.dumps(err), file=sys.stderr)
            out.append([ident, "", "", "", "error: " + err["message"].replace("\n", " ")])
    write_text(args.out, csv_text(["id", "yaw", "pitch", "roll", "status"], out))
    return 1 if failed else 0


# --------------------------------------------------------------------------
# argument parsing


def _fit_flags(p):
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA,
                   help="shape regularization weight (sigma units, default %(default)s)")
    p.add_argument("--iterations", type=int, default=DEFAULT_ITERATIONS)
    p.add_argument("--num-coeffs", type=int, default=None)


def _bin_flags(p):
    p.add_argument("--far", type=float, default=0.01, help="operating point (default %(default)s)")
    p.add_argument("--bin-width", type=float, default=10.0)
    p.add_argument("--range", type=float, default=70.0, help="bins cover [-range, range) degrees")
    p.add_argument("--gallery-yaw", type=float, default=None,
                   help="restrict the gallery to images near this yaw")
    p.add_argument("--gallery-half-width", type=float, default=5.0)
    p.add_argument("--out", default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="morphfit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    pm = sub.add_parser("model", help="generate or inspect model files")
    msub = pm.add_subparsers(dest="action", required=True)
    g = msub.add_parser("gen", help="write a synthetic model")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--vertices", type=int, required=True)
    g.add_argument("--coeffs", type=int, required=True)
    g.add_argument("--colour", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_model_gen)
    i = msub.add_parser("inspect", help="print dimensions, landmarks and basis residual")
    i.add_argument("path")
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_model_inspect)

    f = sub.add_parser("fit", help="fit the model to an image and pose-normalize it")
    f.add_argument("image", nargs="?")
    f.add_argument("--model", required=True)
    f.add_argument("--landmarks")
    f.add_argument("--cascade")
    f.add_argument("--face-box", type=parse_box)
    f.add_argument("--manifest", help="CSV with image and landmarks (or x,y,w,h) columns")
    f.add_argument("--mapping", help="landmark name -> vertex index file overriding the model's")
    f.add_argument("--chart", help="isomap chart cache (.npz); created if missing")
    _fit_flags(f)
    f.add_argument("--isomap-resolution", type=int, default=DEFAULT_RESOLUTION)
    f.add_argument("--frontal-size", type=int, default=256)
    f.add_argument("--min-yaw", type=float, default=0.0,
                   help="skip normalization when |yaw| is below this many degrees")
    f.add_argument("--out-dir", default=".")
    f.add_argument("--records", help="write JSON-lines records here instead of stdout")
    f.set_defaults(func=cmd_fit)

    d = sub.add_parser("detect", help="run a trained cascade")
    d.add_argument("image")
    d.add_argument("--cascade", required=True)
    d.add_argument("--face-box", type=parse_box, required=True)
    d.add_argument("--out")
    d.set_defaults(func=cmd_detect)

    t = sub.add_parser("train-detector", help="train a cascade from a manifest")
    t.add_argument("--manifest", required=True, help="CSV: image,landmarks,x,y,w,h")
    t.add_argument("--holdout", help="manifest of held-out samples to evaluate")
    t.add_argument("--out", required=True)
    t.add_argument("--stages", type=int, default=4)
    t.add_argument("--ridge", type=float, default=10.0)
    t.add_argument("--perturbations", type=int, default=4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--min-samples", type=int, default=100)
    t.add_argument("--cell-size", type=int, default=8)
    t.add_argument("--num-cells", type=int, default=3)
    t.add_argument("--num-bins", type=int, default=9)
    t.set_defaults(func=cmd_train_detector)

    s = sub.add_parser("synth", help="render a synthetic annotated corpus")
    s.add_argument("--model", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--chart")
    s.add_argument("--size", type=int, default=192)
    s.add_argument("--yaw-min", type=float, default=-30.0)
    s.add_argument("--yaw-max", type=float, default=30.0)
    s.add_argument("--pitch", type=float, default=12.0)
    s.add_argument("--roll", type=float, default=12.0)
    s.add_argument("--texture-resolution", type=int, default=256)
    s.add_argument("--prefix", default="face")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="verification analytics on score matrices")
    esub = e.add_subparsers(dest="action", required=True)
    ed = esub.add_parser("det", help="DET curve CSV")
    ed.add_argument("--scores", required=True)
    ed.add_argument("--labels", required=True)
    ed.add_argument("--far", type=float, default=0.01)
    ed.add_argument("--out")
    ed.set_defaults(func=cmd_eval_det)
    eb = esub.add_parser("bins", help="FRR at the operating point per yaw bin")
    eb.add_argument("--scores", required=True)
    eb.add_argument("--labels", required=True)
    _bin_flags(eb)
    eb.set_defaults(func=cmd_eval_bins)
    ei = esub.add_parser("improve", help="per-bin FRR improvement over a baseline")
    ei.add_argument("--baseline", required=True)
    ei.add_argument("--method", required=True)
    ei.add_argument("--labels", required=True)
    _bin_flags(ei)
    ei.set_defaults(func=cmd_eval_improve)

    pa = sub.add_parser("pose-annotate", help="yaw/pitch/roll per image")
    pa.add_argument("--manifest", required=True, help="CSV: id,image,landmarks")
    pa.add_argument("--model", required=True)
    pa.add_argument("--mapping")
    pa.add_argument("--method", choices=("affine", "posit"), default="affine")
    pa.add_argument("--focal", type=float, default=None, help="POSIT focal length in pixels (default 1.5 x width)")
    _fit_flags(pa)
    pa.add_argument("--out")
    pa.set_defaults(func=cmd_pose_annotate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"morphfit: error: {exc}", file=sys.stderr)
        return 2
    except (MorphfitError, OSError, ValueError) as exc:
        emit_error(exc, command=args.command)
        return 1


if __name__ == "__main__":
    sys.exit(main())
