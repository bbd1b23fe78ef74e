"""File formats: point clouds, depth/normal rasters, JSON records, bundles.

Writers are byte-deterministic: floats serialize with repr (shortest
round-trip form), JSON uses sorted keys and a fixed indent, and binary
rasters are little-endian float32 behind a one-line ASCII header. A
scene bundle is a directory holding cloud.ply, depth.bin,
intrinsics.json, gt_pose.json, and gt_corrs.csv.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import BundleError
from .geometry import CameraIntrinsics, F64, RigidTransform, as_points
from .graph import PARAM_LAYOUT, GraphAttentionParams
from .matching import CorrespondenceSet, PatchPair
from .normals import DepthMap, NormalField
from .pose import PoseEstimate
from .synth import SyntheticScene

__all__ = [
    "write_ply",
    "read_ply",
    "write_xyz",
    "read_xyz",
    "write_depth",
    "read_depth",
    "write_normals",
    "read_normals",
    "write_json",
    "read_json",
    "write_intrinsics",
    "read_intrinsics",
    "write_pose_estimate",
    "read_pose",
    "write_correspondences",
    "read_correspondences",
    "write_patches",
    "read_patches",
    "write_attention_params",
    "read_attention_params",
    "save_scene_bundle",
    "load_scene_bundle",
    "BUNDLE_FILES",
]

BUNDLE_FILES = ("cloud.ply", "depth.bin", "intrinsics.json", "gt_pose.json", "gt_corrs.csv")


# --------------------------------------------------------------------------- #
#  Point clouds
# --------------------------------------------------------------------------- #


def write_ply(path, points) -> None:
    pts = as_points(points, name="points")
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    lines.extend(f"{x!r} {y!r} {z!r}" for x, y, z in pts.tolist())
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> F64:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise BundleError(f"{path}: not a PLY file")
    count = None
    body_at = None
    for i, line in enumerate(lines[1:], start=1):
        tokens = line.split()
        if tokens[:2] == ["element", "vertex"]:
            count = int(tokens[2])
        elif tokens[:1] == ["end_header"]:
            body_at = i + 1
            break
    if count is None or body_at is None:
        raise BundleError(f"{path}: PLY header missing vertex element")
    rows = lines[body_at : body_at + count]
    if len(rows) != count:
        raise BundleError(f"{path}: expected {count} vertices, found {len(rows)}")
    if count == 0:
        return np.zeros((0, 3))
    return np.array([[float(t) for t in row.split()[:3]] for row in rows])


def write_xyz(path, points) -> None:
    pts = as_points(points, name="points")
    Path(path).write_text(
        "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist())
    )


def read_xyz(path) -> F64:
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows:
        return np.zeros((0, 3))
    return np.array([[float(t) for t in row[:3]] for row in rows])


# --------------------------------------------------------------------------- #
#  Rasters: one ASCII header line, then little-endian float32
# --------------------------------------------------------------------------- #


def _write_raster(path, magic: str, width: int, height: int, data: np.ndarray) -> None:
    header = f"{magic} {width} {height}\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_raster(path, magic: str) -> tuple[int, int, np.ndarray]:
    blob = Path(path).read_bytes()
    nl = blob.find(b"\n")
    if nl < 0:
        raise BundleError(f"{path}: missing raster header")
    tokens = blob[:nl].decode("ascii", errors="replace").split()
    if len(tokens) != 3 or tokens[0] != magic:
        raise BundleError(f"{path}: expected '{magic} <w> <h>' header, got {tokens}")
    width, height = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(blob[nl + 1 :], dtype="<f4")
    return width, height, data


def write_depth(path, depth: DepthMap) -> None:
    h, w = depth.shape
    _write_raster(path, "DEPTH", w, h, np.where(depth.valid, depth.values, np.nan))


def read_depth(path) -> DepthMap:
    width, height, data = _read_raster(path, "DEPTH")
    if data.size != width * height:
        raise BundleError(f"{path}: depth payload size mismatch")
    return DepthMap.from_values(data.astype(np.float64).reshape(height, width))


def write_normals(path, field: NormalField) -> None:
    arr = np.where(field.valid[..., None], field.normals, np.nan)
    if arr.ndim == 2:
        _write_raster(path, "NORMAL", arr.shape[0], 1, arr)
    else:
        _write_raster(path, "NORMAL", arr.shape[1], arr.shape[0], arr)


def read_normals(path) -> NormalField:
    width, height, data = _read_raster(path, "NORMAL")
    if data.size != width * height * 3:
        raise BundleError(f"{path}: normal payload size mismatch")
    arr = data.astype(np.float64).reshape(height, width, 3)
    if height == 1:
        arr = arr[0]
    valid = np.all(np.isfinite(arr), axis=-1)
    # Re-normalize to absorb float32 quantization of unit vectors.
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    arr = np.where(valid[..., None], arr / np.where(norms > 0, norms, 1.0), 0.0)
    return NormalField(arr, valid)


# --------------------------------------------------------------------------- #
#  JSON records
# --------------------------------------------------------------------------- #


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_intrinsics(path, intrinsics: CameraIntrinsics) -> None:
    write_json(
        path,
        {
            "fx": intrinsics.fx,
            "fy": intrinsics.fy,
            "cx": intrinsics.cx,
            "cy": intrinsics.cy,
            "width": intrinsics.width,
            "height": intrinsics.height,
        },
    )


def read_intrinsics(path) -> CameraIntrinsics:
    raw = read_json(path)
    try:
        return CameraIntrinsics(
            fx=float(raw["fx"]),
            fy=float(raw["fy"]),
            cx=float(raw["cx"]),
            cy=float(raw["cy"]),
            width=int(raw["width"]),
            height=int(raw["height"]),
        )
    except (KeyError, TypeError) as exc:
        raise BundleError(f"{path}: bad intrinsics record: {exc}") from exc


def _transform_payload(transform: RigidTransform) -> dict:
    return {
        "rotation": [float(x) for x in transform.rotation.ravel()],
        "translation": [float(x) for x in transform.translation],
    }


def _transform_from_payload(raw, where: str) -> RigidTransform:
    try:
        rot = np.array(raw["rotation"], dtype=np.float64).reshape(3, 3)
        tra = np.array(raw["translation"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"{where}: bad pose record: {exc}") from exc
    return RigidTransform(rot, tra)


def write_pose_estimate(path, estimate: PoseEstimate) -> None:
    payload = _transform_payload(estimate.transform)
    payload["inliers"] = int(estimate.inlier_count)
    payload["mean_reproj_px"] = float(estimate.mean_reprojection_px)
    write_json(path, payload)


def read_pose(path) -> RigidTransform:
    """Read the transform from a pose record (gt or estimated); extras ignored."""
    return _transform_from_payload(read_json(path), str(path))


def write_correspondences(path, corrs: CorrespondenceSet) -> None:
    lines = ["u,v,point_index,score"]
    lines.extend(
        f"{c.pixel[0]!r},{c.pixel[1]!r},{c.point_index},{c.score!r}" for c in corrs
    )
    Path(path).write_text("\n".join(lines) + "\n")


def read_correspondences(path) -> CorrespondenceSet:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "u,v,point_index,score":
        raise BundleError(f"{path}: bad correspondence CSV header")
    pixels, indices, scores = [], [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        u, v, idx, score = line.split(",")
        pixels.append((float(u), float(v)))
        indices.append(int(idx))
        scores.append(float(score))
    return CorrespondenceSet(
        np.array(pixels, dtype=np.float64).reshape(-1, 2),
        np.array(indices, dtype=np.int64),
        np.array(scores, dtype=np.float64),
    )


_PATCH_HEADER = "img_patch_id,cloud_patch_id,overlap_2d,overlap_3d"


def write_patches(path, patches) -> None:
    lines = [_PATCH_HEADER]
    lines.extend(
        f"{p.img_patch_id},{p.cloud_patch_id},{p.overlap_2d!r},{p.overlap_3d!r}"
        for p in patches
    )
    Path(path).write_text("\n".join(lines) + "\n")


def read_patches(path) -> tuple[PatchPair, ...]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _PATCH_HEADER:
        raise BundleError(f"{path}: bad patch CSV header")
    out = []
    for line in lines[1:]:
        if not line.strip():
            continue
        img_id, cloud_id, o2, o3 = line.split(",")
        out.append(PatchPair(int(img_id), int(cloud_id), float(o2), float(o3)))
    return tuple(out)


# --------------------------------------------------------------------------- #
#  Attention parameters: float32 blob + JSON sidecar
# --------------------------------------------------------------------------- #


def write_attention_params(path, params: GraphAttentionParams) -> None:
    path = Path(path)
    parts = [np.asarray(getattr(params, name), dtype="<f4").ravel() for name, _ in PARAM_LAYOUT]
    path.write_bytes(np.concatenate(parts).tobytes())
    sidecar = {
        "channels": params.channels,
        "dtype": "<f4",
        "seed": params.seed,
        "shapes": {name: list(np.asarray(getattr(params, name)).shape) for name, _ in PARAM_LAYOUT},
    }
    write_json(path.with_suffix(path.suffix + ".json"), sidecar)


def read_attention_params(path) -> GraphAttentionParams:
    path = Path(path)
    sidecar = read_json(path.with_suffix(path.suffix + ".json"))
    data = np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64)
    fields = {}
    offset = 0
    for name, _ in PARAM_LAYOUT:
        shape = tuple(sidecar["shapes"][name])
        size = int(np.prod(shape))
        fields[name] = data[offset : offset + size].reshape(shape)
        offset += size
    if offset != data.size:
        raise BundleError(f"{path}: parameter blob size mismatch")
    return GraphAttentionParams(
        channels=int(sidecar["channels"]), seed=int(sidecar["seed"]), **fields
    )


# --------------------------------------------------------------------------- #
#  Scene bundles
# --------------------------------------------------------------------------- #


def save_scene_bundle(directory, scene: SyntheticScene) -> None:
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise BundleError(f"cannot create bundle directory {out}: {exc}") from exc
    if not out.is_dir():
        raise BundleError(f"bundle path {out} is not a directory")
    write_ply(out / "cloud.ply", scene.cloud)
    write_depth(out / "depth.bin", scene.depth)
    write_intrinsics(out / "intrinsics.json", scene.intrinsics)
    pose_payload = _transform_payload(scene.gt_transform)
    pose_payload["seed"] = int(scene.seed)
    write_json(out / "gt_pose.json", pose_payload)
    write_correspondences(out / "gt_corrs.csv", scene.gt_correspondences)


def load_scene_bundle(directory) -> SyntheticScene:
    src = Path(directory)
    missing = [name for name in BUNDLE_FILES if not (src / name).is_file()]
    if missing:
        raise BundleError(f"bundle {src} is missing {missing}")
    cloud = read_ply(src / "cloud.ply")
    depth = read_depth(src / "depth.bin")
    intrinsics = read_intrinsics(src / "intrinsics.json")
    pose_raw = read_json(src / "gt_pose.json")
    transform = _transform_from_payload(pose_raw, str(src / "gt_pose.json"))
    seed = int(pose_raw.get("seed", 0))
    corrs = read_correspondences(src / "gt_corrs.csv")
    if depth.shape != (intrinsics.height, intrinsics.width):
        raise BundleError(f"bundle {src}: depth shape does not match intrinsics")
    return SyntheticScene(cloud, depth, intrinsics, transform, corrs, seed)
