"""Metric reports comparing renders against ground-truth frames."""

import numpy as np

from .lidar import extract_point_cloud, generate_rays
from .metrics import MetricReport, chamfer_distance, f_score, medae, psnr, rmse, ssim
from .optimizer import render_batch
from .scene_graph import flatten

GROUPS = ("depth", "intensity", "camera")


def gt_point_cloud(obs, t=None):
    rays = generate_rays(obs.lidar, t)
    keep = obs.valid.ravel()
    return rays.origins[keep] + obs.depth.ravel()[keep, None] * rays.directions[keep]


def range_reports(ri, obs, t=None):
    """Depth and intensity reports for one predicted range image.

    Image metrics are taken over cells with a valid ground-truth return; for
    SSIM/PSNR the other cells are zeroed in both images and depth uses the
    largest ground-truth range as the peak.
    """
    v = obs.valid
    depth = MetricReport()
    inten = MetricReport()
    if v.any():
        pred_pts = extract_point_cloud(ri, obs.lidar, t=t)[0]
        gt_pts = gt_point_cloud(obs, t)
        if len(pred_pts):
            depth.cd = chamfer_distance(pred_pts, gt_pts)
            depth.f_score = f_score(pred_pts, gt_pts)
        else:
            depth.f_score = 0.0
        depth.rmse = rmse(ri.depth, obs.depth, v)
        depth.medae = medae(ri.depth, obs.depth, v)
        peak = float(obs.depth[v].max())
        pd, gd = np.where(v, ri.depth, 0.0), np.where(v, obs.depth, 0.0)
        depth.ssim = ssim(pd / peak, gd / peak)
        depth.psnr = psnr(np.clip(pd, 0, peak), gd, peak=peak)
        inten.rmse = rmse(ri.intensity, obs.intensity, v)
        inten.medae = medae(ri.intensity, obs.intensity, v)
        pi, gi = np.where(v, ri.intensity, 0.0), np.where(v, obs.intensity, 0.0)
        inten.ssim = ssim(pi, gi)
        inten.psnr = psnr(np.clip(pi, 0, 1), gi)
    return depth, inten


def camera_report(color, image):
    return MetricReport(rmse=rmse(color, image), medae=medae(color, image),
                        ssim=ssim(color, image), psnr=psnr(np.clip(color, 0, 1), image))


def evaluate_frames(graph, frames, k_buffer=16, background=0.0):
    """Per-frame reports plus their mean for every metric group.

    Returns ``(mean, per_frame)`` where ``mean`` maps group -> MetricReport.
    """
    per_frame = []
    for batch in frames:
        world = flatten(graph, batch.timestamp).gaussians
        r = render_batch(world, batch, k_buffer, background)
        rep = {}
        if batch.lidar is not None:
            rep["depth"], rep["intensity"] = range_reports(r.lidar, batch.lidar, batch.timestamp)
        if batch.cameras:
            cams = [camera_report(fb.color, obs.image) for fb, obs in zip(r.cameras, batch.cameras)]
            rep["camera"] = mean_report(cams)
        per_frame.append(rep)
    return mean_reports(per_frame), per_frame


def mean_report(reports):
    out = MetricReport()
    for key in out.as_dict():
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        if vals:
            setattr(out, key, float(np.mean(vals)))
    return out


def mean_reports(per_frame):
    return {g: mean_report([f[g] for f in per_frame if g in f])
            for g in GROUPS if any(g in f for f in per_frame)}


def report_items(groups):
    """Flat ``group.metric -> value`` mapping; infinite PSNR is written as ``inf``."""
    items = {}
    for g, rep in groups.items():
        for k, v in rep.as_dict().items():
            if v is not None:
                items[f"{g}.{k}"] = float(v)
        if rep.psnr is not None:
            items[f"{g}.psnr_infinite"] = rep.psnr_infinite()
    return items
