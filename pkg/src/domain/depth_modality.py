"""深度モダリティ - 射影的な対応点探索・点と平面の確率と遮蔽判定"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.domain.geometry import CameraIntrinsics, PoseSE3, Vec3, as_vec3
from src.domain.mesh import DepthImage
from src.domain.viewpoint_model import SurfacePoint, SurfacePointSet


@dataclass(frozen=True)
class OcclusionConfig:
    """遮蔽判定の設定（長さはメートル）"""

    region_extent: float = 0.02
    sample_count: int = 25
    threshold: float = 0.03

    def __post_init__(self) -> None:
        if self.region_extent <= 0 or self.threshold <= 0 or self.sample_count <= 0:
            raise ValueError("遮蔽判定の設定値は正の値である必要があります")
        side = math.isqrt(self.sample_count)
        if side * side != self.sample_count:
            raise ValueError(f"sample_countは平方数である必要があります: {self.sample_count}")

    @property
    def grid_side(self) -> int:
        return math.isqrt(self.sample_count)


@dataclass(frozen=True)
class CorrespondencePoint:
    """
    深度対応点

    Attributes:
        model_point: モデル座標の表面点 X
        model_normal: モデル座標の単位法線 N
        measured_point: 計測点 P（構築時の姿勢でのモデル座標）
        depth_point: 計測点 P（深度カメラ座標）
        depth: 深度カメラでのPの奥行き d_Z
    """

    model_point: Vec3
    model_normal: Vec3
    measured_point: Vec3
    depth_point: Vec3
    depth: float

    def __post_init__(self) -> None:
        if self.depth <= 0:
            raise ValueError("対応点の奥行きは正である必要があります")

    def expressed_in(self, pose_depth_to_model: PoseSE3) -> "CorrespondencePoint":
        """計測点を新しい姿勢 D_T_M のモデル座標で表し直す"""
        rotation = pose_depth_to_model.rotation
        measured = rotation.T @ (self.depth_point - pose_depth_to_model.translation)
        return CorrespondencePoint(
            model_point=self.model_point,
            model_normal=self.model_normal,
            measured_point=as_vec3(measured),
            depth_point=self.depth_point,
            depth=self.depth,
        )


def _grid_pixels(
    projected: np.ndarray,
    depths: np.ndarray,
    intr: CameraIntrinsics,
    metric_offsets: np.ndarray,
) -> np.ndarray:
    """投影点の周りに、メートル単位の格子オフセットを奥行きで画素換算した画素番号（N, K, 2）"""
    grid_x, grid_y = np.meshgrid(metric_offsets, metric_offsets)
    offsets = np.stack([grid_x.reshape(-1), grid_y.reshape(-1)], axis=1)
    scale = np.stack([intr.fx / depths, intr.fy / depths], axis=1)
    positions = projected[:, None, :] + offsets[None, :, :] * scale[:, None, :]
    return np.floor(positions).astype(np.int64)


def _project_checked(points: np.ndarray, intr: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    z = points[:, 2]
    in_front = z > 0
    safe_z = np.where(in_front, z, 1.0)
    projected = np.stack(
        [points[:, 0] / safe_z * intr.fx + intr.px, points[:, 1] / safe_z * intr.fy + intr.py],
        axis=1,
    )
    return projected, in_front & intr.contains(projected)


def _sample_depths(depth: DepthImage, pixels: np.ndarray) -> np.ndarray:
    """画素番号（..., 2）の奥行きを返す（画像外は0）"""
    inside = (
        (pixels[..., 0] >= 0)
        & (pixels[..., 0] < depth.width)
        & (pixels[..., 1] >= 0)
        & (pixels[..., 1] < depth.height)
    )
    u = np.clip(pixels[..., 0], 0, depth.width - 1)
    v = np.clip(pixels[..., 1], 0, depth.height - 1)
    return np.where(inside, depth.values[v, u], 0.0)


def find_correspondences(
    depth: DepthImage,
    surface_points: SurfacePointSet,
    pose_depth_to_model: PoseSE3,
    intr: CameraIntrinsics,
    radius: float,
    stride: float,
) -> List[Optional[CorrespondencePoint]]:
    """
    表面点ごとに深度画像の対応点を探索する

    予測点を深度画像へ投影し、その奥行きでストライドと半径をピクセルへ換算した
    正方格子上の画素を復元する。予測点に最も近い（3次元ユークリッド距離）復元点が
    半径以内ならば対応点とする。

    Args:
        depth: 深度画像（メートル）
        surface_points: 最近傍視点の表面点
        pose_depth_to_model: D_T_M
        intr: 深度カメラ内部パラメータ
        radius: 対応点の閾値 r_t（メートル）
        stride: 格子のストライド（メートル）

    Returns:
        List[Optional[CorrespondencePoint]]: 入力と同順。対応なしはNone

    Raises:
        ValueError: radiusまたはstrideが正でない場合
    """
    if radius <= 0 or stride <= 0:
        raise ValueError("対応点探索の半径とストライドは正の値である必要があります")
    count = len(surface_points)
    results: List[Optional[CorrespondencePoint]] = [None] * count
    if count == 0:
        return results

    predicted = pose_depth_to_model.transform_points(surface_points.points)
    projected, valid = _project_checked(predicted, intr)
    if not valid.any():
        return results

    steps = math.floor(radius / stride + 1e-9)
    metric_offsets = np.arange(-steps, steps + 1) * stride
    indices = np.flatnonzero(valid)
    pixels = _grid_pixels(projected[indices], predicted[indices, 2], intr, metric_offsets)
    depths = _sample_depths(depth, pixels)

    # 画素中心で復元
    centers = pixels + 0.5
    candidates = np.stack(
        [
            (centers[..., 0] - intr.px) / intr.fx * depths,
            (centers[..., 1] - intr.py) / intr.fy * depths,
            depths,
        ],
        axis=-1,
    )
    distances = np.linalg.norm(candidates - predicted[indices, None, :], axis=-1)
    distances = np.where(depths > 0, distances, np.inf)
    best = np.argmin(distances, axis=1)
    rows = np.arange(len(indices))
    best_distance = distances[rows, best]

    rotation = pose_depth_to_model.rotation
    translation = pose_depth_to_model.translation
    for row, index in enumerate(indices):
        if not best_distance[row] <= radius:
            continue
        depth_point = candidates[row, best[row]]
        results[index] = CorrespondencePoint(
            model_point=as_vec3(surface_points.points[index]),
            model_normal=as_vec3(surface_points.normals[index]),
            measured_point=as_vec3(rotation.T @ (depth_point - translation)),
            depth_point=as_vec3(depth_point),
            depth=float(depth_point[2]),
        )
    return results


def find_correspondence(
    depth: DepthImage,
    surface_point: SurfacePoint,
    pose_depth_to_model: PoseSE3,
    intr: CameraIntrinsics,
    radius: float,
    stride: float,
) -> Optional[CorrespondencePoint]:
    """1つの表面点の対応点を探索する（見つからない場合はNone）"""
    point_set = SurfacePointSet(
        points=surface_point.point[None, :],
        normals=surface_point.normal[None, :],
        occlusion_offsets=np.array([surface_point.occlusion_offset]),
    )
    return find_correspondences(depth, point_set, pose_depth_to_model, intr, radius, stride)[0]


def depth_grad_hess_batch(
    points: List[CorrespondencePoint],
    sigma_d: float,
    pose_depth_to_model: Optional[PoseSE3] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    対応点ごとの勾配（N, 6）とヘッセ行列（N, 6, 6）をまとめて計算する

    σ_d はミリメートルで与え、有効標準偏差 d_Z·σ_d / 1000（メートル）を使う。

    Args:
        points: 対応点
        sigma_d: 深度モダリティの標準偏差（ミリメートル）
        pose_depth_to_model: 指定時は計測点をこの D_T_M のモデル座標で表し直す

    Raises:
        ValueError: sigma_dが正でない場合
    """
    if sigma_d <= 0:
        raise ValueError(f"σ_dは正の値である必要があります: {sigma_d}")
    if not points:
        return np.zeros((0, 6)), np.zeros((0, 6, 6))

    model_points = np.stack([cp.model_point for cp in points])
    normals = np.stack([cp.model_normal for cp in points])
    depths = np.array([cp.depth for cp in points])
    if pose_depth_to_model is None:
        measured = np.stack([cp.measured_point for cp in points])
    else:
        depth_points = np.stack([cp.depth_point for cp in points])
        measured = (depth_points - pose_depth_to_model.translation) @ pose_depth_to_model.rotation

    jacobian = np.concatenate([np.cross(measured, normals), normals], axis=1)
    residual = ((model_points - measured) * normals).sum(axis=1)
    precision = 1.0 / (depths * sigma_d / 1000.0) ** 2
    gradients = -(precision * residual)[:, None] * jacobian
    hessians = -precision[:, None, None] * jacobian[:, :, None] * jacobian[:, None, :]
    return gradients, hessians


def depth_grad_hess(cp: CorrespondencePoint, sigma_d: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    点と平面の対数確率の勾配 g（6）とヘッセ行列 H（6x6）を計算する

    Args:
        cp: 対応点
        sigma_d: 深度モダリティの標準偏差（ミリメートル、1 mあたり）

    Returns:
        Tuple[np.ndarray, np.ndarray]: J = [P×N; N] に対し
            g = -Nᵀ(X - P)·J / σ², H = -J·Jᵀ / σ²
    """
    gradients, hessians = depth_grad_hess_batch([cp], sigma_d)
    return gradients[0], hessians[0]


def min_depths_in_region(
    depth: DepthImage,
    points: np.ndarray,
    intr: CameraIntrinsics,
    cfg: OcclusionConfig,
) -> np.ndarray:
    """
    各点の周りの region_extent 四方の格子から有効な最小奥行きを求める

    Args:
        depth: 深度画像
        points: 深度カメラ座標の点（N, 3）
        intr: 深度カメラ内部パラメータ
        cfg: 遮蔽判定の設定

    Returns:
        np.ndarray: 最小奥行き（N,）。有効な値がない点や投影できない点はNaN
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    result = np.full(len(points), np.nan)
    if len(points) == 0:
        return result
    z = points[:, 2]
    in_front = z > 0
    safe_z = np.where(in_front, z, 1.0)
    projected = np.stack(
        [points[:, 0] / safe_z * intr.fx + intr.px, points[:, 1] / safe_z * intr.fy + intr.py],
        axis=1,
    )
    half = cfg.region_extent / 2.0
    metric_offsets = np.linspace(-half, half, cfg.grid_side)
    samples = _sample_depths(depth, _grid_pixels(projected, safe_z, intr, metric_offsets))
    samples = np.where(samples > 0, samples, np.inf)
    minimum = samples.min(axis=1)
    found = in_front & np.isfinite(minimum)
    result[found] = minimum[found]
    return result


def occluded_mask(
    depth: DepthImage,
    points: np.ndarray,
    occlusion_offsets: np.ndarray,
    intr: CameraIntrinsics,
    cfg: OcclusionConfig,
) -> np.ndarray:
    """
    各点が外部の物体に遮蔽されているかを判定する

    点の奥行き - オフセット - 閾値 が計測最小奥行きより大きい場合に遮蔽とする。
    格子内に有効な奥行きがない場合は遮蔽としない。
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    minimum = min_depths_in_region(depth, points, intr, cfg)
    margin = points[:, 2] - np.asarray(occlusion_offsets, dtype=np.float64) - cfg.threshold
    return np.isfinite(minimum) & (margin > np.nan_to_num(minimum, nan=np.inf))


def is_occluded(
    depth: DepthImage,
    point: Vec3,
    occlusion_offset: float,
    intr: CameraIntrinsics,
    cfg: OcclusionConfig,
) -> bool:
    """
    深度カメラ座標の1点が遮蔽されているかを判定する

    Raises:
        ValueError: 点の奥行きが正でない場合
    """
    point = np.asarray(point, dtype=np.float64)
    if point[2] <= 0:
        raise ValueError("遮蔽判定する点の奥行きは正である必要があります")
    return bool(
        occluded_mask(depth, point[None, :], np.array([occlusion_offset]), intr, cfg)[0]
    )
