"""Command-line front end: render, dolly, sample, eval, fit.

Data goes to files under ``--out``; diagnostics go to stderr. Exit status is 0
on success, 1 on input/processing errors and 2 on usage errors.
"""

from __future__ import annotations

import argparse
from concurrent.futures import ThreadPoolExecutor
import csv
import datetime as _dt
import logging
import math
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__
from . import io as fio
from .body import build_default_body, default_pose, pose_body, regress_joints
from .errors import DistortkitError
from .fit import fit_pipeline
from .geometry import DEPTH_EPS, CameraIntrinsics, CropBox, Translation, camera_depth
from .metrics import PDHUMAN_THRESHOLDS, REAL_THRESHOLDS, aggregate, evaluate_sample
from .raster import empty_buffers, max_distortion_scale, render_body
from .synth import DOLLY_SWEEP, CameraSampleConfig, dolly_sweep, generate_dataset

logger = logging.getLogger("distortkit")

MANIFEST = "run_manifest.json"
RESERVED_JSON = {MANIFEST, "index.json", "summary.json", "protocols.json"}
THRESHOLDS = {"pdhuman": PDHUMAN_THRESHOLDS, "real": REAL_THRESHOLDS}
CSV_COLUMNS = ("id", "mpjpe", "pa_mpjpe", "pve", "miou", "p_miou", "tau", "protocol")


class CliError(Exception):
    pass


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{float(x):.6g}"


def write_manifest(out_dir, command, config, inputs, outputs, seed, started) -> None:
    """One manifest per output directory; the only file that records wall-clock time."""
    fio.write_json(Path(out_dir) / MANIFEST, {
        "command": command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": sorted(str(p) for p in outputs),
        "seed": seed,
        "tool_version": __version__,
        "started_at": _dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
        "wall_clock_seconds": round(time.time() - started, 3),
    })


def _load_body(path):
    if path in (None, "default"):
        body = build_default_body()
        return body, pose_body(body, default_pose())
    body = fio.read_body(path)
    return body, body.vertices


def _load_config(path) -> dict:
    return {} if path is None else fio.read_json(path)


def _parse_camera(path):
    cam = fio.read_json(path)
    where = str(path)
    intr = fio.require(cam, "intrinsics", where)
    for key in ("f", "cx", "cy", "width", "height"):
        fio.require(intr, key, where + ":intrinsics")
    trans = fio.require(cam, "translation", where)
    for key in ("Tx", "Ty", "Tz"):
        fio.require(trans, key, where + ":translation")
    try:
        k = CameraIntrinsics.from_dict(intr)
    except (TypeError, ValueError) as exc:
        raise fio.FormatError(f"{where}: invalid intrinsics: {exc}") from exc
    T = np.array([float(trans["Tx"]), float(trans["Ty"]), float(trans["Tz"])])
    if not T[2] > 0:
        raise fio.FormatError(f"{where}:translation: Tz must be positive, got {T[2]}")
    return k, T


def cmd_render(args) -> int:
    started = time.time()
    out = Path(args.out)
    body, verts = _load_body(args.mesh)
    k, T = _parse_camera(args.camera)
    depth = camera_depth(verts, T)
    out.mkdir(parents=True, exist_ok=True)
    if np.all(depth <= DEPTH_EPS):
        logger.info("body is entirely behind the camera; writing an empty raster")
        buffers = empty_buffers(k.height, k.width, T[2], k)
    else:
        t = Translation.from_array(T) if 0 < T[2] <= 10 else T
        buffers = render_body(body, verts, t, k)
    fio.write_buffers(out, buffers)
    meta = fio.buffers_header(buffers)
    meta["translation"] = {"Tx": T[0], "Ty": T[1], "Tz": T[2]}
    meta["tau"] = None if buffers.empty else max_distortion_scale(buffers)
    fio.write_json(out / "meta.json", meta)
    if args.figures and not buffers.empty:
        from .plotting import plot_distortion
        plot_distortion(buffers, out / "distortion_preview.png")
    outputs = [*fio.BUFFER_FILES, "meta.json"] + (["distortion_preview.png"] if args.figures and not buffers.empty else [])
    write_manifest(out, "render", {"figures": args.figures}, [args.mesh, args.camera], outputs, None, started)
    return 0


def cmd_dolly(args) -> int:
    started = time.time()
    tz_values = args.tz or list(DOLLY_SWEEP)
    bad = [t for t in tz_values if not t > 0]
    if bad:
        raise CliError(f"Tz values must be positive, got {bad}")
    body, verts = _load_body(args.body)
    joints = regress_joints(body.regressor, verts)
    rows = dolly_sweep(joints, tz_values, args.height)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Tz", "tau", "error_px"])
        for r in rows:
            w.writerow([fmt(r.Tz), fmt(r.tau), fmt(r.error_px)])
    outputs = [out.name]
    if args.figures:
        from .plotting import plot_dolly
        fig = out.with_suffix(".png")
        plot_dolly(rows, fig)
        outputs.append(fig.name)
    write_manifest(out.parent, "dolly", {"tz": tz_values, "height": args.height}, [args.body or "default"],
                   outputs, None, started)
    return 0


def cmd_sample(args) -> int:
    started = time.time()
    cfg = _load_config(args.config)
    sampler = dict(cfg.get("sampler", {k: v for k, v in cfg.items() if k != "n"}))
    if args.seed is not None:
        sampler["seed"] = args.seed
    config = CameraSampleConfig.from_dict(sampler)
    n = args.n if args.n is not None else int(cfg.get("n", 10))
    out = Path(args.out)
    index = generate_dataset(config, n, out, threads=args.threads)
    outputs = ["index.json"] + [f"scenes/{e['id']}" for e in index["scenes"]]
    if args.figures:
        from .plotting import plot_tau_histogram
        plot_tau_histogram([e["tau"] for e in index["scenes"]], PDHUMAN_THRESHOLDS, out / "tau_hist.png")
        outputs.append("tau_hist.png")
    write_manifest(out, "sample", {"sampler": config.to_dict(), "n": n}, [args.config or "<defaults>"],
                   outputs, config.seed, started)
    return 0


def _sample_dirs(root: Path) -> dict:
    base = root / "scenes" if (root / "scenes").is_dir() else root
    found = {}
    for entry in sorted(base.iterdir()):
        if entry.is_dir() and (entry / "meta.json").exists():
            found[entry.name] = entry / "meta.json"
        elif entry.suffix == ".json" and entry.name not in RESERVED_JSON:
            found[entry.stem] = entry
    return found


def _load_sample(meta_path: Path) -> dict:
    meta = fio.read_json(meta_path)
    sample = {"joints3d": fio.require(meta, "joints3d", str(meta_path))}
    if "vertices" in meta:
        sample["vertices"] = meta["vertices"]
    if meta.get("tau") is not None:
        sample["tau"] = meta["tau"]
    png_path = meta_path.parent / "iuv.png"
    if meta_path.name == "meta.json" and png_path.exists():
        sample["part"], _ = fio.read_iuv_png(png_path)
    return sample


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cmd_eval(args) -> int:
    started = time.time()
    pred_root, gt_root = Path(args.pred), Path(args.gt)
    pred, gt = _sample_dirs(pred_root), _sample_dirs(gt_root)
    missing_pred = sorted(set(gt) - set(pred))
    missing_gt = sorted(set(pred) - set(gt))
    if missing_pred or missing_gt:
        lines = [f"missing prediction for sample {i}" for i in missing_pred]
        lines += [f"no ground truth for predicted sample {i}" for i in missing_gt]
        raise CliError("sample id mismatch:\n  " + "\n  ".join(lines))
    thresholds = THRESHOLDS[args.thresholds]
    ids = sorted(gt)

    def one(sid):
        return evaluate_sample(sid, _load_sample(pred[sid]), _load_sample(gt[sid]), thresholds)

    reports = _map(one, ids, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerow([r.sample_id] + [fmt(getattr(r, c)) for c in CSV_COLUMNS[1:]])
    agg = aggregate(reports, thresholds)
    fio.write_json(out / "protocols.json", {"thresholds": list(thresholds), "protocols": agg})
    outputs = ["metrics.csv", "protocols.json"]
    if args.figures and reports:
        from .plotting import plot_protocol_metrics
        plot_protocol_metrics(agg, out / "protocols.png")
        outputs.append("protocols.png")
    write_manifest(out, "eval", {"thresholds": args.thresholds}, [pred_root, gt_root], outputs, None, started)
    return 0


def cmd_fit(args) -> int:
    started = time.time()
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    noise = float(cfg.get("init_noise_m", 0.0))
    crop_res = int(cfg.get("crop_resolution", 224))
    max_iter = int(cfg.get("max_iter", 2000))
    data = Path(args.dataset)
    samples = _sample_dirs(data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(item):
        idx, sid = item
        meta_path = samples[sid]
        meta = fio.read_json(meta_path)
        where = str(meta_path)
        k = CameraIntrinsics.from_dict(fio.require(meta, "intrinsics", where))
        buffers = fio.read_buffers(meta_path.parent, fio.require(meta, "translation", where)["Tz"], k)
        joints3d = np.asarray(fio.require(meta, "joints3d", where), float)
        joints2d = np.asarray(fio.require(meta, "joints2d", where), float)
        if noise > 0:
            rng = np.random.default_rng([seed, idx])
            joints3d = joints3d + np.column_stack([rng.normal(0.0, noise, (len(joints3d), 2)),
                                                   np.zeros(len(joints3d))])
        box = CropBox.from_dict(meta["bbox"]) if "bbox" in meta else None
        state = fit_pipeline(buffers, joints2d, joints3d, k, box, crop_res, max_iter)
        result = state.to_dict()
        fio.write_json(out / f"{sid}.json", result)
        return sid, result, meta["translation"]["Tz"], k.f

    results = _map(one, list(enumerate(sorted(samples))), args.threads)
    tz_err = [abs(r["Tz"] - tz) / tz for _, r, tz, _ in results]
    f_err = [abs(r["f_pixels"] - f) / f for _, r, _, f in results]
    summary = {
        "count": len(results),
        "median_tz_rel_error": float(np.median(tz_err)) if results else None,
        "median_f_rel_error": float(np.median(f_err)) if results else None,
        "converged": sum(bool(r["converged"]) for _, r, _, _ in results),
        "samples": {sid: {"tz_rel_error": te, "f_rel_error": fe}
                    for (sid, *_), te, fe in zip(results, tz_err, f_err)},
    }
    fio.write_json(out / "summary.json", summary)
    outputs = [f"{sid}.json" for sid, *_ in results] + ["summary.json"]
    if args.figures and results:
        from .plotting import plot_fit_summary
        plot_fit_summary([tz for *_, tz, _ in results], [r["Tz"] for _, r, _, _ in results],
                         [f for *_, f in results], [r["f_pixels"] for _, r, _, _ in results],
                         out / "fit_summary.png")
        outputs.append("fit_summary.png")
    write_manifest(out, "fit", {"init_noise_m": noise, "crop_resolution": crop_res, "max_iter": max_iter},
                   [data], outputs, seed, started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distortkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="{render,dolly,sample,eval,fit}")

    def common(sp, config=True, seed=False, threads=False):
        sp.add_argument("--out", required=True, help="output directory (or CSV path for dolly)")
        if config:
            sp.add_argument("--config", help="JSON configuration file")
        if seed:
            sp.add_argument("--seed", type=int)
        if threads:
            sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--no-figures", dest="figures", action="store_false", help="skip matplotlib figures")

    sp = sub.add_parser("render", help="rasterize a body into depth/IUV/distortion images")
    sp.add_argument("mesh", help="OBJ path with a JSON sidecar, or 'default'")
    sp.add_argument("camera", help="camera JSON with 'intrinsics' and 'translation'")
    common(sp, config=False)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("dolly", help="weak vs. perspective error over a distance sweep")
    sp.add_argument("body", nargs="?", default="default", help="OBJ path or 'default'")
    sp.add_argument("--tz", type=float, nargs="+", help="distances in meters")
    sp.add_argument("--height", type=int, default=224, help="image height in pixels")
    common(sp, config=False)
    sp.set_defaults(func=cmd_dolly)

    sp = sub.add_parser("sample", help="generate a synthetic perspective-distorted dataset")
    sp.add_argument("--n", type=int, help="number of scenes")
    common(sp, seed=True, threads=True)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="metrics of predictions against ground truth")
    sp.add_argument("pred")
    sp.add_argument("gt")
    sp.add_argument("--thresholds", choices=sorted(THRESHOLDS), default="pdhuman")
    common(sp, config=False, threads=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("fit", help="recover Tz, weak camera, focal and joints per scene")
    sp.add_argument("dataset", help="directory written by 'sample'")
    common(sp, seed=True, threads=True)
    sp.set_defaults(func=cmd_fit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CliError, fio.FormatError, DistortkitError, OSError, ValueError) as exc:
        print(f"distortkit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
