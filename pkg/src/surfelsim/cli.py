"""Command-line entry point: ``surfelsim <command> ...``.

Successful commands print ``key=value`` lines on stdout and exit 0. Failures
print one line ``error=<Type> message=<json string>`` on stderr and exit 2.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_items, load_config
from .errors import ConfigError, FormatError, SurfelSimError
from .evaluation import gt_point_cloud, range_reports, report_items, evaluate_frames
from .fileio import (format_key_values, output_lock, read_planes, read_scene, write_json,
                     write_planes, write_ply, write_png, write_scene, atomic_write)
from .lidar import RangeImage, extract_point_cloud, render_lidar
from .manifest import load_frames, read_manifest
from .optimizer import FitConfig, fit
from .rasterizer import rasterize
from .scene_graph import NodeKind, flatten
from .synthetic import RECIPES, default_rig, generate_synthetic


def _emit(items):
    sys.stdout.write(format_key_values(items))


def _shape(text, name):
    try:
        a, b = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--{name} expects ROWSxCOLS, got {text!r}") from None
    return a, b


def _frame(frames, index):
    if not 0 <= index < len(frames):
        raise ConfigError(f"frame index {index} outside 0..{len(frames) - 1}")
    return frames[index]


def cmd_synth(args):
    rig_kw = {}
    if args.camera:
        rig_kw["camera_height"], rig_kw["camera_width"] = _shape(args.camera, "camera")
    if args.lidar:
        rig_kw["lidar_channels"], rig_kw["lidar_steps"] = _shape(args.lidar, "lidar")
    rig = default_rig(args.recipe, **rig_kw)
    with output_lock(args.out):
        ds = generate_synthetic(args.recipe, args.seed, rig=rig, n_frames=args.frames,
                                spacing=args.spacing)
        from .manifest import write_dataset
        path = write_dataset(ds, args.out)
    _emit(dict(manifest=str(path), recipe=args.recipe, seed=args.seed, frames=len(ds.frames),
               train=len(ds.split("train")), test=len(ds.split("test")),
               primitives=len(ds.truth)))


def cmd_fit(args):
    cfg = load_config(args.config) if args.config else FitConfig()
    if args.iterations is not None:
        cfg.iterations = args.iterations
    if args.seed is not None:
        cfg.seed = args.seed
    manifest = Path(args.manifest)
    init = args.init or manifest.parent / read_manifest(manifest)["init"]
    graph = read_scene(init)
    frames = load_frames(manifest)
    out = Path(args.out)
    with output_lock(out):
        ckpt = None
        if cfg.checkpoint_every:
            def ckpt(g, it):
                write_scene(out / "checkpoints" / f"iter_{it:06d}.scene", g)
        fitted, log = fit(graph, frames, cfg, checkpoint=ckpt)
        write_scene(out / "fitted.scene", fitted)
        atomic_write(out / "loss_log.tsv", "\n".join(log.to_lines()) + "\n")
        write_json(out / "densify_log.json", log.densify_events)
        atomic_write(out / "config.txt", format_key_values(config_items(cfg)))
        from .plotting import plot_loss_curves
        plot_loss_curves(log, out / "loss.png")
    final = log.records[-1] if log.records else {}
    _emit(dict(scene=str(out / "fitted.scene"), iterations=cfg.iterations,
               primitives=len(fitted), final_loss=float(final.get("total", float("nan")))))


def cmd_render_camera(args):
    graph = read_scene(args.scene)
    frame = _frame(load_frames(args.manifest), args.frame)
    if not frame.cameras:
        raise ConfigError(f"frame {args.frame} has no camera")
    obs = frame.cameras[args.camera]
    world = flatten(graph, frame.timestamp).gaussians
    fb = rasterize(world, obs.camera, background=args.background)
    out = Path(args.out)
    with output_lock(out):
        write_png(out / "color.png", fb.color)
        write_planes(out / "depth.rimg", dict(Z=fb.depth, A=fb.alpha))
    _emit(dict(color=str(out / "color.png"), depth=str(out / "depth.rimg"),
               coverage=float(fb.alpha.mean())))


def cmd_render_lidar(args):
    graph = read_scene(args.scene)
    frame = _frame(load_frames(args.manifest), args.frame)
    if frame.lidar is None:
        raise ConfigError(f"frame {args.frame} has no LiDAR sweep")
    lid = frame.lidar.lidar
    world = flatten(graph, frame.timestamp).gaussians
    ri = render_lidar(world, lid, frame.timestamp, args.k)
    pts, inten = extract_point_cloud(ri, lid)
    out = Path(args.out)
    with output_lock(out):
        write_planes(out / "range.rimg", dict(D=ri.depth, I=ri.intensity, R=ri.raydrop,
                                              A=ri.alpha))
        write_ply(out / "cloud.ply", pts, inten)
    _emit(dict(range_image=str(out / "range.rimg"), cloud=str(out / "cloud.ply"),
               points=len(pts)))


def cmd_eval(args):
    frames = load_frames(args.manifest)
    out = Path(args.out) if args.out else None
    figures = []
    if args.range_image:
        frame = _frame(frames, args.frame)
        if frame.lidar is None:
            raise ConfigError(f"frame {args.frame} has no LiDAR sweep")
        p = read_planes(args.range_image)
        missing = sorted(set("DIRA") - set(p))
        if missing:
            raise FormatError(f"range image lacks plane(s) {''.join(missing)}")
        ri = RangeImage(p["D"], p["I"], p["R"], p["A"], timestamp=frame.timestamp)
        if ri.shape != frame.lidar.lidar.shape:
            raise FormatError(f"range image {ri.shape} does not match scan {frame.lidar.lidar.shape}")
        depth, inten = range_reports(ri, frame.lidar, frame.timestamp)
        groups = dict(depth=depth, intensity=inten)
        evaluated = 1
        if out is not None:
            from .plotting import plot_point_clouds, plot_range_comparison
            figures.append(plot_range_comparison(ri.depth, frame.lidar.depth, frame.lidar.valid,
                                                 out / "range_depth.png"))
            figures.append(plot_point_clouds(extract_point_cloud(ri, frame.lidar.lidar)[0],
                                             gt_point_cloud(frame.lidar, frame.timestamp),
                                             out / "clouds.png"))
    else:
        if not args.scene:
            raise ConfigError("eval needs --scene or --range-image")
        graph = read_scene(args.scene)
        chosen = [f for f in frames if args.split == "all" or f.split == args.split]
        if not chosen:
            raise ConfigError(f"no frames in split {args.split!r}")
        groups, _ = evaluate_frames(graph, chosen, args.k)
        evaluated = len(chosen)
        if out is not None:
            figures += _eval_figures(graph, chosen[0], out, args.k)
    items = dict(frames=evaluated, **report_items(groups))
    if out is not None:
        with output_lock(out):
            atomic_write(out / "report.txt", format_key_values(items))
            write_json(out / "report.json", {k: (v if np.isfinite(v) else str(v))
                                             if isinstance(v, float) else v
                                             for k, v in items.items()})
        items["figures"] = ",".join(str(f) for f in figures)
    _emit(items)


def _eval_figures(graph, batch, out, k):
    from .optimizer import render_batch
    from .plotting import plot_images, plot_point_clouds, plot_range_comparison
    world = flatten(graph, batch.timestamp).gaussians
    r = render_batch(world, batch, k)
    figs = []
    if batch.lidar is not None:
        figs.append(plot_range_comparison(r.lidar.depth, batch.lidar.depth, batch.lidar.valid,
                                          out / "range_depth.png"))
        figs.append(plot_point_clouds(extract_point_cloud(r.lidar, batch.lidar.lidar)[0],
                                      gt_point_cloud(batch.lidar, batch.timestamp),
                                      out / "clouds.png"))
    for i, (fb, obs) in enumerate(zip(r.cameras, batch.cameras)):
        figs.append(plot_images(fb.color, obs.image, out / f"camera{i}.png"))
    return figs


def cmd_inspect(args):
    graph = read_scene(args.scene)
    items = dict(primitives=len(graph), background=len(graph.background),
                 nodes=len(graph.nodes), keyframes=len(graph.keyframes))
    items.update({f"degree.{k}": v for k, v in graph.degrees.items()})
    if len(graph.keyframes):
        items["time_min"] = float(graph.keyframes[0])
        items["time_max"] = float(graph.keyframes[-1])
    for k, node in enumerate(graph.nodes):
        items[f"node{k}.name"] = node.name
        items[f"node{k}.kind"] = node.kind.value
        items[f"node{k}.primitives"] = len(node.gaussians)
    t0 = float(graph.keyframes[0]) if len(graph.keyframes) else 0.0
    world = flatten(graph, t0).gaussians
    if len(world):
        lo, hi = world.center.min(axis=0), world.center.max(axis=0)
        items["bounds_min"] = " ".join(f"{x:.6g}" for x in lo)
        items["bounds_max"] = " ".join(f"{x:.6g}" for x in hi)
        items["opacity_mean"] = float(world.opacity.mean())
    _emit(items)


class UsageError(SurfelSimError):
    """Bad command-line arguments."""


class _Parser(argparse.ArgumentParser):
    # keep argument errors on the single-line error channel instead of usage text
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="surfelsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--recipe", required=True, choices=RECIPES)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=12)
    s.add_argument("--spacing", type=float, default=0.2, help="primitive grid spacing [m]")
    s.add_argument("--camera", help="image size ROWSxCOLS (default 320x480)")
    s.add_argument("--lidar", help="scan size CHANNELSxSTEPS (default 32x512)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit", help="optimise a scene against a dataset")
    s.add_argument("--manifest", required=True)
    s.add_argument("--init", help="starting scene (default: the manifest's init scene)")
    s.add_argument("--config", help="key=value config file")
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("render-camera", help="render one camera view")
    s.add_argument("--scene", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--camera", type=int, default=0)
    s.add_argument("--background", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render_camera)

    s = sub.add_parser("render-lidar", help="ray-trace one LiDAR sweep")
    s.add_argument("--scene", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--k", type=int, default=16)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render_lidar)

    s = sub.add_parser("eval", help="metric report against ground truth")
    s.add_argument("--manifest", required=True)
    s.add_argument("--scene", help="scene to render at the evaluated frames")
    s.add_argument("--range-image", help="pre-rendered range image to score instead")
    s.add_argument("--frame", type=int, default=0, help="frame for --range-image")
    s.add_argument("--split", default="test", choices=("train", "test", "all"))
    s.add_argument("--k", type=int, default=16)
    s.add_argument("--out", help="directory for report files and figures")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect", help="summarise a scene file")
    s.add_argument("--scene", required=True)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except (SurfelSimError, OSError) as exc:
        sys.stderr.write(f"error={type(exc).__name__} message={json.dumps(str(exc))}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
