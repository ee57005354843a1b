"""On-disk formats: scene files, range-image planes, PLY, PNG, manifests, configs.

All multi-byte numbers are little-endian. Writes go to a temporary file in the
target directory followed by an atomic rename.
"""

import json
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, SurfelSimError
from .gaussians import PARAM_GROUPS, GaussianSet
from .scene_graph import NodeKind, SceneGraph, SceneNode
from .transforms import RigidPose

SCENE_MAGIC = b"SURFSCN\0"
SCENE_VERSION = 1
RANGE_MAGIC = "SURFRIMG"
RANGE_VERSION = 1
RANGE_HEADER = 64
LOCK_NAME = ".surfelsim.lock"


class LockError(SurfelSimError):
    """Another process holds the output directory."""


def atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data if isinstance(data, bytes) else data.encode("utf-8"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@contextmanager
def output_lock(directory):
    """Exclusive lock file in ``directory`` for the duration of a command."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"output directory {directory} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield lock
    finally:
        if lock.exists():
            lock.unlink()


def _read(path):
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise FormatError(f"file not found: {path}") from None


# scene files ---------------------------------------------------------------
#
# magic (8) | version u32 | header length u32 | JSON header | float64 body
# The header lists every array as {"name", "shape", "offset"} (offset in
# float64 elements into the body).

def _gaussian_arrays(prefix, g):
    return [(f"{prefix}.{name}", arr) for name, arr in g.items()]


def serialize_scene(graph):
    arrays = [("keyframes", graph.keyframes)]
    arrays += _gaussian_arrays("background", graph.background)
    nodes = []
    for k, node in enumerate(graph.nodes):
        arrays += _gaussian_arrays(f"node{k}", node.gaussians)
        poses = np.array([np.concatenate([p.rotation, p.translation]) for p in node.poses])
        arrays.append((f"node{k}.poses", poses.reshape(-1, 7)))
        if node.kind is NodeKind.DEFORMABLE:
            arrays.append((f"node{k}.offsets", node.offsets))
            arrays.append((f"node{k}.local_rotations", node.local_rotations))
        nodes.append(dict(kind=node.kind.value, name=node.name, count=len(node.gaussians)))
    blocks, offset = [], 0
    for name, arr in arrays:
        blocks.append(dict(name=name, shape=list(arr.shape), offset=offset))
        offset += arr.size
    header = dict(version=SCENE_VERSION, degrees=graph.degrees,
                  counts=graph.sizes(), nodes=nodes, blocks=blocks)
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in arrays)
    return SCENE_MAGIC + struct.pack("<II", SCENE_VERSION, len(hb)) + hb + body


def parse_scene(data):
    if len(data) < 16 or data[:8] != SCENE_MAGIC:
        raise FormatError("not a scene file (bad magic)")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != SCENE_VERSION:
        raise FormatError(f"scene file version {version} unsupported (expected {SCENE_VERSION})")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt scene header: {exc}") from None
    try:
        return _scene_from(header, data[16 + hlen:])
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"inconsistent scene file: {exc!r}") from None


def _scene_from(header, body):
    if len(body) % 8:
        raise FormatError("scene body is not a whole number of float64 values")
    flat = np.frombuffer(body, dtype="<f8")
    arrays = {}
    for blk in header["blocks"]:
        n = int(np.prod(blk["shape"], dtype=np.int64))
        if blk["offset"] + n > flat.size:
            raise FormatError(f"scene file truncated inside block {blk['name']!r}")
        arrays[blk["name"]] = flat[blk["offset"]:blk["offset"] + n].reshape(blk["shape"]).astype(np.float64)
    if sum(int(np.prod(b["shape"], dtype=np.int64)) for b in header["blocks"]) != flat.size:
        raise FormatError("scene body size does not match its header")

    def gset(prefix):
        return GaussianSet(*(arrays[f"{prefix}.{name}"] for name in PARAM_GROUPS))

    keyframes = arrays["keyframes"]
    nodes = []
    for k, meta in enumerate(header["nodes"]):
        kind = NodeKind(meta["kind"])
        poses = [RigidPose(row[:4], row[4:], float(t))
                 for row, t in zip(arrays[f"node{k}.poses"], keyframes)]
        node = SceneNode(kind, gset(f"node{k}"), poses, name=meta["name"])
        if kind is NodeKind.DEFORMABLE:
            node.offsets = arrays[f"node{k}.offsets"]
            node.local_rotations = arrays[f"node{k}.local_rotations"]
        nodes.append(node)
    return SceneGraph(gset("background"), nodes, keyframes)


def write_scene(path, graph):
    atomic_write(path, serialize_scene(graph))


def read_scene(path):
    return parse_scene(_read(path))


# range images --------------------------------------------------------------
#
# 64-byte ASCII header "SURFRIMG <version> <rows> <cols> <planes>" padded with
# spaces and terminated by "\n", then one little-endian float32 plane per
# letter in row-major order. Planes: D depth, I intensity, R ray-drop,
# A alpha, Z camera depth.

def serialize_planes(planes):
    names = "".join(planes)
    shapes = {np.shape(p) for p in planes.values()}
    if len(shapes) != 1 or len(next(iter(shapes))) != 2:
        raise FormatError("planes must share one 2D shape")
    rows, cols = next(iter(shapes))
    head = f"{RANGE_MAGIC} {RANGE_VERSION} {rows} {cols} {names}"
    if len(head) > RANGE_HEADER - 1:
        raise FormatError("too many planes for the fixed header")
    hb = (head.ljust(RANGE_HEADER - 1) + "\n").encode("ascii")
    return hb + b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in planes.values())


def parse_planes(data):
    if len(data) < RANGE_HEADER:
        raise FormatError("range image truncated in header")
    try:
        parts = data[:RANGE_HEADER].decode("ascii").split()
        magic, version, rows, cols, names = parts[0], int(parts[1]), int(parts[2]), int(parts[3]), parts[4]
    except (UnicodeDecodeError, ValueError, IndexError):
        raise FormatError("corrupt range image header") from None
    if magic != RANGE_MAGIC:
        raise FormatError("not a range image (bad magic)")
    if version != RANGE_VERSION:
        raise FormatError(f"range image version {version} unsupported")
    n = rows * cols
    if len(data) != RANGE_HEADER + 4 * n * len(names):
        raise FormatError("range image body size does not match its header")
    flat = np.frombuffer(data, dtype="<f4", offset=RANGE_HEADER)
    return {c: flat[i * n:(i + 1) * n].reshape(rows, cols).astype(np.float64)
            for i, c in enumerate(names)}


def write_planes(path, planes):
    atomic_write(path, serialize_planes(planes))


def read_planes(path):
    return parse_planes(_read(path))


def range_image_planes(ri):
    return dict(D=ri.depth, I=ri.intensity, R=ri.raydrop, A=ri.alpha)


# point clouds and images -----------------------------------------------------

def serialize_ply(points, intensity=None):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inten = np.zeros(len(pts)) if intensity is None else np.asarray(intensity).ravel()
    head = ("ply\nformat binary_little_endian 1.0\n"
            f"element vertex {len(pts)}\n"
            "property float x\nproperty float y\nproperty float z\n"
            "property float intensity\nend_header\n").encode("ascii")
    body = np.concatenate([pts, inten[:, None]], axis=1).astype("<f4").tobytes()
    return head + body


def parse_ply(data):
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise FormatError("not a binary PLY file")
    n = None
    try:
        for line in data[:end].decode("ascii").splitlines():
            if line.startswith("element vertex"):
                n = int(line.split()[2])
    except (UnicodeDecodeError, ValueError, IndexError):
        raise FormatError("corrupt PLY header") from None
    body = data[end + len(b"end_header\n"):]
    if n is None or len(body) != 16 * n:
        raise FormatError("PLY vertex count does not match its body")
    v = np.frombuffer(body, dtype="<f4").reshape(n, 4).astype(np.float64)
    return v[:, :3], v[:, 3]


def write_ply(path, points, intensity=None):
    atomic_write(path, serialize_ply(points, intensity))


def read_ply(path):
    return parse_ply(_read(path))


def to_uint8(image):
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, image):
    from io import BytesIO

    from PIL import Image
    buf = BytesIO()
    Image.fromarray(to_uint8(image)).save(buf, format="PNG")
    atomic_write(path, buf.getvalue())


def read_png(path):
    from PIL import Image
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise FormatError(f"file not found: {path}") from None
    except OSError as exc:
        raise FormatError(f"unreadable image {path}: {exc}") from None


# key=value text ------------------------------------------------------------

def parse_key_values(text, source="config"):
    """``section.key = value`` lines; ``#`` starts a comment."""
    out = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{no}: empty key")
        out[key] = value
    return out


def format_key_values(items):
    lines = []
    for k, v in items.items():
        if isinstance(v, float):
            v = repr(v)
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def read_json(path):
    try:
        return json.loads(_read(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt JSON in {path}: {exc}") from None
