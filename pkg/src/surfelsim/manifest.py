"""Dataset manifests: JSON frame lists pointing at images and range images.

Layout written by :func:`write_dataset`::

    manifest.json        frames, sensor models, relative file paths
    truth.scene          ground-truth scene graph
    init.scene           jittered starting scene
    images/fNNN_camK.png
    lidar/fNNN.rimg      planes D (depth), I (intensity), R (drop 0/1), A (valid 0/1)
"""

from pathlib import Path

import numpy as np

from .camera import CameraModel
from .data import CameraObservation, LidarObservation, TrainBatch
from .errors import FormatError
from .fileio import read_json, read_planes, read_png, write_json, write_planes, write_png, write_scene
from .lidar import LidarModel
from .transforms import RigidPose

MANIFEST_VERSION = 1


def camera_to_dict(cam):
    return dict(fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy, width=cam.width, height=cam.height,
                rotation=np.asarray(cam.rotation).tolist(),
                translation=np.asarray(cam.translation).tolist())


def camera_from_dict(d):
    return CameraModel(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]),
                       np.array(d["rotation"], dtype=np.float64),
                       np.array(d["translation"], dtype=np.float64))


def pose_to_dict(p):
    return dict(rotation=p.rotation.tolist(), translation=p.translation.tolist(),
                timestamp=p.timestamp)


def pose_from_dict(d):
    return RigidPose(d["rotation"], d["translation"], d.get("timestamp"))


def lidar_to_dict(lid):
    return dict(elevations=lid.elevations.tolist(), azimuth_steps=lid.azimuth_steps,
                azimuth_min=lid.azimuth_min, azimuth_max=lid.azimuth_max,
                max_range=lid.max_range, poses=[pose_to_dict(p) for p in lid.poses])


def lidar_from_dict(d):
    return LidarModel(np.array(d["elevations"], dtype=np.float64), int(d["azimuth_steps"]),
                      tuple(pose_from_dict(p) for p in d["poses"]), d["max_range"],
                      d["azimuth_min"], d["azimuth_max"])


def write_dataset(ds, outdir):
    """Write a :class:`~surfelsim.synthetic.SyntheticDataset` under ``outdir``."""
    out = Path(outdir)
    frames = []
    for f, batch in enumerate(ds.frames):
        entry = dict(timestamp=batch.timestamp, split=batch.split, cameras=[])
        for obs in batch.cameras:
            rel = f"images/f{f:03d}_{obs.name}.png"
            write_png(out / rel, obs.image)
            entry["cameras"].append(dict(name=obs.name, image=rel, **camera_to_dict(obs.camera)))
        if batch.lidar is not None:
            rel = f"lidar/f{f:03d}.rimg"
            lo = batch.lidar
            write_planes(out / rel, dict(D=lo.depth, I=lo.intensity, R=lo.raydrop,
                                         A=lo.valid.astype(np.float64)))
            entry["lidar"] = dict(range_image=rel, **lidar_to_dict(lo.lidar))
        frames.append(entry)
    write_scene(out / "truth.scene", ds.truth)
    write_scene(out / "init.scene", ds.init)
    write_json(out / "manifest.json", dict(version=MANIFEST_VERSION, recipe=ds.recipe,
                                           seed=ds.seed, truth="truth.scene",
                                           init="init.scene", frames=frames))
    return out / "manifest.json"


def read_manifest(path):
    """Parsed manifest dict; checks version and timestamp order."""
    m = read_json(path)
    if m.get("version") != MANIFEST_VERSION:
        raise FormatError(f"manifest version {m.get('version')} unsupported "
                          f"(expected {MANIFEST_VERSION})")
    ts = [f["timestamp"] for f in m.get("frames", [])]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise FormatError("manifest timestamps are not sorted")
    return m


def load_frames(path, split=None):
    """TrainBatch list for every (or one split's) frame of a manifest."""
    path = Path(path)
    root = path.parent
    out = []
    for entry in read_manifest(path)["frames"]:
        if split is not None and entry["split"] != split:
            continue
        cams = [CameraObservation(camera_from_dict(c), read_png(root / c["image"]), c["name"])
                for c in entry.get("cameras", [])]
        lid = None
        if entry.get("lidar"):
            le = entry["lidar"]
            planes = read_planes(root / le["range_image"])
            valid = planes["R"] < 0.5
            lid = LidarObservation(lidar_from_dict(le), np.where(valid, planes["D"], 0.0),
                                   np.where(valid, planes["I"], 0.0), valid)
        out.append(TrainBatch(float(entry["timestamp"]), cams, lid, entry["split"]))
    return out
