"""End-to-end registration: corruption, features, refinement, matching, pose.

The register flow mirrors a trained system at desk scale. Depth
corruption lowers a normal-agreement score (k-NN covariance normals of
the backprojected live depth against the clean ones), which injects
guidance noise into the image features; both feature sets then carry
weighted normal channels, pass through the shared graph-attention
refinement blended in by the warm-up weight, and meet in coarse
tile/cell matching, per-patch fine matching, and PnP-RANSAC.

With zero corruption every stage is exact: agreement is 1, guidance
noise vanishes, both sides of a ground-truth pair carry identical rows,
and the emitted correspondences reproduce the ground truth.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .errors import (
    ConfigError,
    DegenerateNeighborhoodError,
    EmptyCorrespondencesError,
    InsufficientPointsError,
    LengthMismatchError,
    NoConsensusError,
)
from .geometry import CameraIntrinsics, F64, RigidTransform, backproject_pixels
from .graph import (
    GraphAttentionParams,
    build_knn_graph,
    gated_fusion,
    light_gat_forward,
)
from .losses import LossWeights, WarmupSchedule, warmup_weight
from .matching import (
    CorrespondenceSet,
    PatchPair,
    coarse_match,
    cosine_score_map,
    fine_match,
    patch_overlap,
)
from .metrics import (
    SceneEvaluation,
    feature_matching_recall,
    inlier_ratio,
    patch_inlier_ratio,
    registration_recall,
    registration_rmse,
    relative_rotation_error,
    relative_translation_error,
)
from .normals import (
    DepthMap,
    NormalField,
    estimate_point_normals,
    estimate_point_normals_adaptive,
    normal_agreement,
)
from .pose import PoseEstimate, RansacConfig, pnp_ransac
from .synth import (
    CorruptionConfig,
    SceneSpec,
    SyntheticScene,
    corrupt_depth,
    generate_scene,
    synthesize_features,
)

_GUIDANCE_STREAM = 7
_SWAP_STREAM = 8
_SWAP_CANDIDATES = 16

SWEEP_NAMES = ("gaussian_sigma", "mask_ratio", "k", "warmup")

SWEEP_DEFAULTS: dict[str, tuple] = {
    "gaussian_sigma": (0.0, 0.005, 0.01, 0.015),
    "mask_ratio": (0.0, 0.1, 0.2, 0.3, 0.4),
    "k": (2, 4, 8, 16),
    "warmup": (0, 5, 15, 25),
}

__all__ = [
    "PipelineConfig",
    "RegistrationResult",
    "SWEEP_NAMES",
    "SWEEP_DEFAULTS",
    "lifted_pixel_normals",
    "register_scene",
    "evaluate_scene",
    "evaluation_report",
    "apply_sweep_setting",
    "ablation_rows",
]


# --------------------------------------------------------------------------- #
#  Configuration
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the end-to-end flow, flat and strictly validated."""

    k_neighbors: int = 8
    adaptive_k: bool = False
    channels: int = 64
    top_k_coarse: int = 3
    min_fine_score: float = 0.75
    tile_rows: int = 6
    tile_cols: int = 8
    voxel_size: float = 0.4
    normal_channel_weight: float = 0.5
    guidance_noise_scale: float = 0.2
    guidance_swap_scale: float = 0.25
    warmup_start: int = 10
    warmup_end: int = 20
    epoch: int = 0
    lambda_match: float = 1.0
    lambda_normal: float = 1.0
    lambda_gdc: float = 0.5
    ransac_iterations: int = 1000
    ransac_threshold_px: float = 8.0
    ransac_confidence: float = 0.999
    ransac_min_sample: int = 6
    tau1_m: float = 0.05
    tau2_ratio: float = 0.1
    tau3_m: float = 0.1
    gaussian_sigma_m: float = 0.0
    mask_ratio: float = 0.0
    feature_noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    noise_seed: int = 0
    param_seed: int = 0
    scene_count: int = 20
    base_seed: int = 0
    point_count: int = 2000
    max_rotation_deg: float = 30.0
    max_translation_m: float = 0.5

    def __post_init__(self) -> None:
        if self.k_neighbors < 2:
            raise ConfigError(f"k_neighbors must be >= 2, got {self.k_neighbors}")
        if self.channels < 4:
            raise ConfigError(f"channels must be >= 4, got {self.channels}")
        if self.top_k_coarse < 1:
            raise ConfigError("top_k_coarse must be >= 1")
        if not -1.0 <= self.min_fine_score <= 1.0:
            raise ConfigError("min_fine_score must lie in [-1, 1]")
        if self.tile_rows < 1 or self.tile_cols < 1:
            raise ConfigError("tile grid must be at least 1x1")
        if self.voxel_size <= 0.0:
            raise ConfigError("voxel_size must be positive")
        if (
            self.normal_channel_weight < 0.0
            or self.guidance_noise_scale < 0.0
            or self.guidance_swap_scale < 0.0
        ):
            raise ConfigError("feature weights must be >= 0")
        if min(self.lambda_match, self.lambda_normal, self.lambda_gdc) < 0.0:
            raise ConfigError("loss weights must be >= 0")
        if self.tau1_m <= 0.0 or self.tau3_m <= 0.0 or not 0.0 <= self.tau2_ratio <= 1.0:
            raise ConfigError("metric thresholds out of range")
        if self.epoch < 0:
            raise ConfigError("epoch must be >= 0")
        if self.scene_count < 1:
            raise ConfigError("scene_count must be >= 1")
        # Constituent configs re-check their own invariants; surface those
        # failures as config errors too.
        try:
            self.corruption()
            self.ransac(seed=0)
            self.warmup()
            self.scene_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "PipelineConfig":
        known = {f.name: f.default for f in fields(cls)}
        unknown = sorted(set(mapping) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        coerced = {}
        for key, raw in mapping.items():
            default = known[key]
            if isinstance(default, bool):
                if not isinstance(raw, bool):
                    raise ConfigError(f"{key} expects true/false, got {raw!r}")
                coerced[key] = raw
            elif isinstance(default, int):
                if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                    raise ConfigError(f"{key} expects an integer, got {raw!r}")
                if float(raw) != int(raw):
                    raise ConfigError(f"{key} expects an integer, got {raw!r}")
                coerced[key] = int(raw)
            else:
                if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                    raise ConfigError(f"{key} expects a number, got {raw!r}")
                coerced[key] = float(raw)
        return cls(**coerced)

    def replace(self, **updates) -> "PipelineConfig":
        return dataclasses.replace(self, **updates)

    def corruption(self) -> CorruptionConfig:
        return CorruptionConfig(
            gaussian_sigma_m=self.gaussian_sigma_m,
            mask_ratio=self.mask_ratio,
            feature_noise_sigma=self.feature_noise_sigma,
            outlier_fraction=self.outlier_fraction,
            seed=self.noise_seed,
        )

    def ransac(self, seed: int) -> RansacConfig:
        return RansacConfig(
            max_iterations=self.ransac_iterations,
            inlier_threshold_px=self.ransac_threshold_px,
            confidence=self.ransac_confidence,
            min_sample=self.ransac_min_sample,
            seed=seed,
        )

    def warmup(self) -> WarmupSchedule:
        return WarmupSchedule(self.warmup_start, self.warmup_end)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_match, self.lambda_normal, self.lambda_gdc)

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(
            point_count=self.point_count,
            max_rotation_deg=self.max_rotation_deg,
            max_translation_m=self.max_translation_m,
        )


# --------------------------------------------------------------------------- #
#  Geometry-aware feature construction
# --------------------------------------------------------------------------- #


def _unit_rows(rows: F64) -> F64:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / np.where(norms > 0.0, norms, 1.0)


def lifted_pixel_normals(
    depth: DepthMap, intrinsics: CameraIntrinsics, k: int, adaptive: bool = False
) -> NormalField:
    """Per-pixel camera-frame normals from the backprojected valid-pixel set.

    Splatted depth maps are too sparse for stencil gradients, so each
    valid pixel is lifted to 3D and gets a covariance normal over its k
    nearest lifted neighbors. The normal-estimation k is floored at 3
    (its own precondition) even when the graph k is swept lower.
    """
    h, w = depth.shape
    grid = np.zeros((h, w, 3))
    mask = np.zeros((h, w), dtype=bool)
    vs, us = np.nonzero(depth.valid)
    k_norm = max(k, 3)
    if us.size > k_norm:
        uv = np.column_stack([us, vs]).astype(np.float64)
        pts = backproject_pixels(intrinsics, uv, depth.values[vs, us])
        if adaptive:
            estimated = estimate_point_normals_adaptive(pts, k0=k_norm, k_sparse=k_norm + 4)
        else:
            estimated = estimate_point_normals(pts, k_norm)
        grid[vs, us] = np.where(estimated.valid[:, None], estimated.normals, 0.0)
        mask[vs, us] = estimated.valid
    return NormalField(grid, mask)


def _tile_ids(pixels: F64, intrinsics: CameraIntrinsics, rows: int, cols: int) -> np.ndarray:
    tile_w = intrinsics.width / cols
    tile_h = intrinsics.height / rows
    cu = np.minimum((pixels[:, 0] // tile_w).astype(np.int64), cols - 1)
    cv = np.minimum((pixels[:, 1] // tile_h).astype(np.int64), rows - 1)
    return cv * cols + cu


def _voxel_ids(points: F64, size: float) -> tuple[np.ndarray, int]:
    cells = np.floor(points / size).astype(np.int64)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    return inverse.reshape(-1), uniq.shape[0]


def _group_means(features: F64, ids: np.ndarray, group_count: int) -> tuple[F64, np.ndarray]:
    """Mean feature per nonempty group; returns (means, group ids present)."""
    sums = np.zeros((group_count, features.shape[1]))
    np.add.at(sums, ids, features)
    counts = np.bincount(ids, minlength=group_count).astype(np.float64)
    present = np.flatnonzero(counts > 0)
    return sums[present] / counts[present, None], present


# --------------------------------------------------------------------------- #
#  Registration
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class RegistrationResult:
    """Everything register produces for one scene."""

    estimate: PoseEstimate
    correspondences: CorrespondenceSet
    patches: tuple[PatchPair, ...]
    agreement: float
    blend: float


def register_scene(scene: SyntheticScene, config: PipelineConfig) -> RegistrationResult:
    corruption = config.corruption()
    live_depth = corrupt_depth(scene.depth, corruption)
    clean_normals = lifted_pixel_normals(
        scene.depth, scene.intrinsics, config.k_neighbors, config.adaptive_k
    )
    live_normals = lifted_pixel_normals(
        live_depth, scene.intrinsics, config.k_neighbors, config.adaptive_k
    )
    try:
        agreement = normal_agreement(clean_normals, live_normals)
    except DegenerateNeighborhoodError:
        agreement = 0.0

    pixels = scene.gt_correspondences.pixels
    gt_idx = scene.gt_correspondences.point_indices
    us = pixels[:, 0].astype(np.int64)
    vs = pixels[:, 1].astype(np.int64)

    f_img, f_cloud = synthesize_features(scene, config.channels, corruption)
    f_img = _corrupt_guidance(f_img, f_cloud, scene, gt_idx, agreement, config)
    img_n = np.where(
        live_normals.valid[vs, us][:, None], live_normals.normals[vs, us], 0.0
    )
    cloud_n = np.zeros((scene.cloud.shape[0], 3))
    cloud_n[gt_idx] = np.where(
        clean_normals.valid[vs, us][:, None], clean_normals.normals[vs, us], 0.0
    )
    weight = config.normal_channel_weight
    f_img_aug = _unit_rows(np.hstack([f_img, weight * img_n]))
    f_cloud_aug = _unit_rows(np.hstack([f_cloud, weight * cloud_n]))

    params = GraphAttentionParams.initialize(config.channels + 3, config.param_seed)
    blend = warmup_weight(config.epoch, config.warmup())
    f_img_final = _refine(pixels, f_img_aug, params, config.k_neighbors, blend)
    f_cloud_final = _refine(scene.cloud, f_cloud_aug, params, config.k_neighbors, blend)

    tiles = _tile_ids(pixels, scene.intrinsics, config.tile_rows, config.tile_cols)
    cells, cell_count = _voxel_ids(scene.cloud, config.voxel_size)
    tile_desc, tiles_present = _group_means(
        f_img_final, tiles, config.tile_rows * config.tile_cols
    )
    cell_desc, cells_present = _group_means(f_cloud_final, cells, cell_count)
    coarse = coarse_match(cosine_score_map(tile_desc, cell_desc), config.top_k_coarse)

    tile_members = [np.flatnonzero(tiles == t) for t in tiles_present]
    cell_members = [np.flatnonzero(cells == c) for c in cells_present]
    depth_at = scene.depth.values[vs, us]

    best: dict[int, tuple[float, int]] = {}
    patches = []
    for t_row, c_row, _score in coarse:
        members_i = tile_members[t_row]
        members_j = cell_members[c_row]
        sub = fine_match(
            f_img_final[members_i],
            f_cloud_final[members_j],
            pixels[members_i],
            members_j,
            config.min_fine_score,
        )
        for k_row in range(len(sub)):
            u, v = sub.pixels[k_row]
            pixel_row = int(members_i[np.flatnonzero(
                (pixels[members_i, 0] == u) & (pixels[members_i, 1] == v)
            )[0]])
            score = float(sub.scores[k_row])
            point = int(sub.point_indices[k_row])
            kept = best.get(pixel_row)
            if kept is None or score > kept[0]:
                best[pixel_row] = (score, point)
        patches.append(
            patch_overlap(
                int(tiles_present[t_row]),
                int(cells_present[c_row]),
                pixels[members_i],
                depth_at[members_i],
                scene.cloud[members_j],
                scene.intrinsics,
                scene.gt_transform,
            )
        )

    order = sorted(best, key=lambda row: (vs[row], us[row]))
    corrs = CorrespondenceSet(
        pixels[order],
        np.array([best[row][1] for row in order], dtype=np.int64),
        np.array([best[row][0] for row in order]),
    )
    estimate = pnp_ransac(
        corrs, scene.cloud, scene.intrinsics, config.ransac(seed=scene.seed)
    )
    return RegistrationResult(estimate, corrs, tuple(patches), agreement, blend)


def _corrupt_guidance(
    f_img: F64,
    f_cloud: F64,
    scene: SyntheticScene,
    gt_idx: np.ndarray,
    agreement: float,
    config: PipelineConfig,
) -> F64:
    """Degrade image features in proportion to the lost depth agreement.

    Two effects, both vanishing exactly when agreement == 1: isotropic
    noise that weakens correct pair scores, and a row swap that points a
    fraction of pixels at the feature of a far-away cloud point (farther
    than 3 * tau1, so an emitted swap counts as an outlier downstream).
    Swapped rows bypass the noise, keeping their wrong-pair scores flat
    across corruption levels. Draw counts are fixed by the row count, so
    sweeping corruption upward only grows the affected sets.
    """
    sigma_sup = config.guidance_noise_scale * (1.0 - agreement)
    if sigma_sup > 0.0:
        rng = np.random.default_rng(
            np.random.SeedSequence((scene.seed, config.noise_seed, _GUIDANCE_STREAM))
        )
        f_img = _unit_rows(f_img + rng.normal(0.0, sigma_sup, f_img.shape))

    swap_p = min(1.0, config.guidance_swap_scale * (1.0 - agreement))
    if swap_p > 0.0:
        rng = np.random.default_rng(
            np.random.SeedSequence((scene.seed, config.noise_seed, _SWAP_STREAM))
        )
        m = f_img.shape[0]
        gate = rng.uniform(size=m)
        cand = rng.integers(0, scene.cloud.shape[0], size=(m, _SWAP_CANDIDATES))
        rows = np.flatnonzero(gate < swap_p)
        if rows.size:
            gaps = np.linalg.norm(
                scene.cloud[cand[rows]] - scene.cloud[gt_idx[rows]][:, None, :], axis=2
            )
            far = gaps > 3.0 * config.tau1_m
            pick = np.where(far.any(axis=1), np.argmax(far, axis=1), np.argmax(gaps, axis=1))
            f_img = f_img.copy()
            f_img[rows] = f_cloud[cand[rows, pick]]
    return f_img


def _refine(
    positions, features: F64, params: GraphAttentionParams, k: int, blend: float
) -> F64:
    if features.shape[0] < 2:
        return features
    graph = build_knn_graph(positions, k)
    refined = gated_fusion(features, light_gat_forward(graph, features, params), params)
    return (1.0 - blend) * features + blend * refined


# --------------------------------------------------------------------------- #
#  Evaluation and ablation
# --------------------------------------------------------------------------- #


def evaluate_scene(
    scene: SyntheticScene,
    corrs: CorrespondenceSet,
    est_transform: RigidTransform,
    patches,
    config: PipelineConfig,
) -> SceneEvaluation:
    """Score one scene's registration against its stored ground truth."""
    ir = inlier_ratio(
        corrs, scene.cloud, scene.depth, scene.intrinsics, scene.gt_transform,
        config.tau1_m,
    )
    rmse = registration_rmse(scene.cloud, est_transform, scene.gt_transform)
    pir = patch_inlier_ratio(patches) if len(patches) else 0.0
    rre = relative_rotation_error(scene.gt_transform.rotation, est_transform.rotation)
    rte = relative_translation_error(
        scene.gt_transform.translation, est_transform.translation
    )
    return SceneEvaluation(
        inlier_ratio=ir,
        fmr_flag=ir > config.tau2_ratio,
        rmse_m=rmse,
        rr_flag=rmse < config.tau3_m,
        pir=pir,
        rre_deg=rre,
        rte_m=rte,
    )


_NUMERIC_FIELDS = ("inlier_ratio", "rmse_m", "pir", "rre_deg", "rte_m")


def evaluation_report(evaluations: list[SceneEvaluation]) -> dict:
    """Per-scene rows plus mean/median aggregates, ready for JSON."""
    if not evaluations:
        raise LengthMismatchError("no scenes to aggregate")
    scenes = [
        {f.name: getattr(ev, f.name) for f in fields(SceneEvaluation)}
        for ev in evaluations
    ]
    mean = {
        name: float(np.mean([getattr(ev, name) for ev in evaluations]))
        for name in _NUMERIC_FIELDS
    }
    mean["feature_matching_recall"] = float(
        np.mean([ev.fmr_flag for ev in evaluations])
    )
    mean["registration_recall"] = float(np.mean([ev.rr_flag for ev in evaluations]))
    median = {
        name: float(np.median([getattr(ev, name) for ev in evaluations]))
        for name in _NUMERIC_FIELDS
    }
    return {"scenes": scenes, "mean": mean, "median": median}


def apply_sweep_setting(config: PipelineConfig, sweep: str, value) -> PipelineConfig:
    if sweep == "gaussian_sigma":
        return config.replace(gaussian_sigma_m=float(value))
    if sweep == "mask_ratio":
        return config.replace(mask_ratio=float(value))
    if sweep == "k":
        return config.replace(k_neighbors=int(value))
    if sweep == "warmup":
        return config.replace(epoch=int(value))
    raise ConfigError(f"unknown sweep '{sweep}', expected one of {SWEEP_NAMES}")


def _run_batch_setting(args) -> tuple[float, float, float]:
    config, sweep, value = args
    tuned = apply_sweep_setting(config, sweep, value)
    irs = []
    rmses = []
    for i in range(tuned.scene_count):
        scene = generate_scene(tuned.scene_spec(), seed=tuned.base_seed + i)
        # A setting harsh enough to break pose recovery still yields a row:
        # the scene scores zero inliers and an unbounded RMSE (a recall miss).
        try:
            result = register_scene(scene, tuned)
            ev = evaluate_scene(
                scene, result.correspondences, result.estimate.transform,
                result.patches, tuned,
            )
            irs.append(ev.inlier_ratio)
            rmses.append(ev.rmse_m)
        except (InsufficientPointsError, NoConsensusError, EmptyCorrespondencesError):
            irs.append(0.0)
            rmses.append(np.inf)
    return (
        float(np.mean(irs)),
        feature_matching_recall(irs, tuned.tau2_ratio),
        registration_recall(rmses, tuned.tau3_m),
    )


def ablation_rows(
    config: PipelineConfig, sweep: str, values, jobs: int = 1
) -> list[tuple[float, float, float, float]]:
    """One (setting, mean IR, FMR, RR) row per sweep value."""
    values = list(values)
    if not values:
        raise ConfigError("ablation sweep needs at least one value")
    tasks = [(config, sweep, v) for v in values]
    if jobs > 1:
        from multiprocessing import get_context

        with get_context("fork").Pool(processes=jobs) as pool:
            stats = pool.map(_run_batch_setting, tasks)
    else:
        stats = [_run_batch_setting(t) for t in tasks]
    return [
        (float(value), ir, fmr, rr)
        for value, (ir, fmr, rr) in zip(values, stats)
    ]
