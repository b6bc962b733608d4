"""GenerateModelUseCase - 測地グリッド上の仮想カメラから疎視点モデルを生成する"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter, sobel

from src.adapter.software_rasterizer import RasterResult, SoftwareRasterizer
from src.domain.depth_modality import OcclusionConfig, min_depths_in_region
from src.domain.geometry import (
    CameraIntrinsics,
    PoseSE3,
    as_vec3,
    look_at_pose,
    pixel_centers,
    reconstruct_points,
)
from src.domain.mesh import TriangleMesh
from src.domain.viewpoint_model import (
    ContourPointSet,
    ModelGenerationConfig,
    SparseViewpointModel,
    SurfacePointSet,
    Viewpoint,
    geodesic_grid,
)

# バウンディング球が画像短辺に占める割合
_IMAGE_FILL = 0.8
# 輪郭法線を推定する前のシルエット平滑化
_NORMAL_SMOOTHING_SIGMA = 1.5


def virtual_camera(mesh: TriangleMesh, config: ModelGenerationConfig) -> CameraIntrinsics:
    """
    バウンディング球全体が写る仮想カメラの内部パラメータを求める

    Raises:
        ValueError: カメラ距離がバウンディング球の内側になる場合
    """
    radius = mesh.bounding_radius
    distance = config.sphere_radius
    if distance <= radius:
        raise ValueError(
            f"仮想カメラの距離({distance} m)がモデルの外接球半径({radius:.4f} m)以下です"
        )
    half_extent = min(config.render_width, config.render_height) / 2.0
    focal = _IMAGE_FILL * half_extent * np.sqrt(distance**2 - radius**2) / radius
    return CameraIntrinsics(
        fx=focal,
        fy=focal,
        px=config.render_width / 2.0,
        py=config.render_height / 2.0,
        width=config.render_width,
        height=config.render_height,
    )


class GenerateModelUseCase:
    """疎視点モデル生成のユースケース"""

    def __init__(self, rasterizer: Optional[SoftwareRasterizer] = None) -> None:
        """
        GenerateModelUseCaseを初期化する

        Args:
            rasterizer: 描画に使うラスタライザ（Noneの場合は既定設定）
        """
        self._rasterizer = rasterizer or SoftwareRasterizer()
        self._logger = logging.getLogger(__name__)

    def execute(
        self, mesh: TriangleMesh, config: ModelGenerationConfig, workers: int = 1
    ) -> SparseViewpointModel:
        """
        全視点を描画して疎視点モデルを生成する

        Args:
            mesh: 対象メッシュ
            config: 生成設定
            workers: 視点の並列処理数（結果は視点番号順で決定的）

        Returns:
            SparseViewpointModel: 生成したモデル

        Raises:
            ValueError: 全視点で物体が見えない場合
        """
        directions = geodesic_grid(config.subdivision_level)
        intr = virtual_camera(mesh, config)
        self._logger.info(
            f"🚀 視点モデル生成開始: {len(directions)}視点, "
            f"{config.render_width}x{config.render_height}, f={intr.fx:.1f}px"
        )
        start_time = time.time()

        def build(view_index: int) -> Viewpoint:
            return self._build_view(mesh, config, intr, directions[view_index], view_index)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                views = list(executor.map(build, range(len(directions))))
        else:
            views = [build(i) for i in range(len(directions))]

        empty = sum(1 for view in views if view.is_empty)
        if empty == len(views):
            raise ValueError("すべての視点で物体が描画されませんでした")
        if empty:
            self._logger.warning(f"⚠️ 物体が見えない視点: {empty}/{len(views)}")

        self._logger.info(f"✅ 視点モデル生成完了: {time.time() - start_time:.2f}秒")
        return SparseViewpointModel(views=tuple(views), config=config)

    def _build_view(
        self,
        mesh: TriangleMesh,
        config: ModelGenerationConfig,
        intr: CameraIntrinsics,
        direction: np.ndarray,
        view_index: int,
    ) -> Viewpoint:
        pose = look_at_pose(config.sphere_radius * direction, np.zeros(3))
        orientation = as_vec3(-direction)
        raster = self._rasterizer.rasterize(mesh, pose, intr)

        if raster.silhouette.area == 0:
            self._logger.debug(f"視点{view_index}: シルエットが空です")
            return Viewpoint(orientation, ContourPointSet.empty(), SurfacePointSet.empty())

        rng = np.random.default_rng(np.random.SeedSequence([config.seed, view_index]))
        contour = self._sample_contour(raster, pose, intr, config, rng)
        surface = self._sample_surface(mesh, raster, pose, intr, config, rng)
        return Viewpoint(orientation, contour, surface)

    def _sample_contour(
        self,
        raster: RasterResult,
        pose: PoseSE3,
        intr: CameraIntrinsics,
        config: ModelGenerationConfig,
        rng: np.random.Generator,
    ) -> ContourPointSet:
        """
        シルエット輪郭から輪郭点を抽出する

        法線は最寄り三角形の法線ではなく、平滑化したシルエットのSobel勾配から求めた
        画像面内の向き（カメラ座標で z = 0）を使う。稜線上の点でも視線に直交する。
        """
        mask = raster.silhouette.values
        smoothed = gaussian_filter(mask.astype(np.float64), _NORMAL_SMOOTHING_SIGMA)
        gradient_x = sobel(smoothed, axis=1)
        gradient_y = sobel(smoothed, axis=0)

        rows, cols = np.nonzero(raster.silhouette.contour())
        # 外向き法線 = シルエット勾配の逆向き
        normals_2d = -np.stack([gradient_x[rows, cols], gradient_y[rows, cols]], axis=1)
        norms = np.linalg.norm(normals_2d, axis=1)
        usable = norms > 1e-9
        rows, cols = rows[usable], cols[usable]
        normals_2d = normals_2d[usable] / norms[usable, None]
        if len(rows) == 0:
            return ContourPointSet.empty()

        chosen = rng.choice(len(rows), size=min(config.n_contour_points, len(rows)), replace=False)
        rows, cols, normals_2d = rows[chosen], cols[chosen], normals_2d[chosen]

        depths = raster.depth.values[rows, cols]
        pixels = pixel_centers(np.stack([cols, rows], axis=1))
        camera_points = reconstruct_points(intr, pixels, depths)
        camera_normals = np.concatenate([normals_2d, np.zeros((len(rows), 1))], axis=1)

        focal = intr.mean_focal_length
        max_steps = config.max_free_length * focal / depths
        fg_pixels = free_run_length(mask, pixels, -normals_2d, max_steps)
        bg_pixels = free_run_length(~mask, pixels, normals_2d, max_steps, leading=mask)
        fg_lengths = np.minimum(fg_pixels * depths / focal, config.max_free_length)
        bg_lengths = np.minimum(bg_pixels * depths / focal, config.max_free_length)

        return ContourPointSet(
            points=_to_model(pose, camera_points),
            normals=camera_normals @ pose.rotation,
            fg_free_lens=fg_lengths,
            bg_free_lens=bg_lengths,
        )

    def _sample_surface(
        self,
        mesh: TriangleMesh,
        raster: RasterResult,
        pose: PoseSE3,
        intr: CameraIntrinsics,
        config: ModelGenerationConfig,
        rng: np.random.Generator,
    ) -> SurfacePointSet:
        rows, cols = np.nonzero(raster.silhouette.values)
        chosen = rng.choice(len(rows), size=min(config.n_surface_points, len(rows)), replace=False)
        rows, cols = rows[chosen], cols[chosen]

        depths = raster.depth.values[rows, cols]
        pixels = pixel_centers(np.stack([cols, rows], axis=1))
        camera_points = reconstruct_points(intr, pixels, depths)

        camera_normals = mesh.triangle_normals[raster.triangle_ids[rows, cols]] @ pose.rotation.T
        # カメラ側を向くように反転
        facing_away = (camera_normals * camera_points).sum(axis=1) > 0
        camera_normals[facing_away] *= -1.0

        occlusion = OcclusionConfig(region_extent=config.occlusion_region)
        minimum = min_depths_in_region(raster.depth, camera_points, intr, occlusion)
        offsets = np.where(np.isfinite(minimum), np.maximum(depths - minimum, 0.0), 0.0)

        return SurfacePointSet(
            points=_to_model(pose, camera_points),
            normals=camera_normals @ pose.rotation,
            occlusion_offsets=offsets,
        )


def _to_model(pose: PoseSE3, camera_points: np.ndarray) -> np.ndarray:
    """カメラ座標の点群をモデル座標に戻す"""
    return (camera_points - pose.translation) @ pose.rotation


def free_run_length(
    mask: np.ndarray,
    starts: np.ndarray,
    directions: np.ndarray,
    max_steps: np.ndarray,
    leading: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    始点から方向へ1画素ずつ進み、maskがTrueのまま続く画素数を返す

    leading を渡した場合は、leading がTrueの画素を抜けた位置から数え始める
    （背景側の連続長を輪郭画素の前景部分を除いて数える）。
    画像外はmask = Falseとして扱い、max_steps で打ち切る。

    Args:
        mask: 数える領域（H, W）
        starts: 始点の画素座標（N, 2）
        directions: 進む方向の単位ベクトル（N, 2）
        max_steps: 始点ごとの上限（画素）
        leading: 数え始める前に読み飛ばす領域（H, W）

    Returns:
        np.ndarray: 始点ごとの連続長（画素）
    """
    height, width = mask.shape
    limit = int(np.ceil(max_steps.max())) + 1
    steps = np.arange(1, limit + 1, dtype=np.float64)
    positions = starts[:, None, :] + steps[None, :, None] * directions[:, None, :]
    pixels = np.floor(positions).astype(np.int64)
    inside = (
        (pixels[..., 0] >= 0)
        & (pixels[..., 0] < width)
        & (pixels[..., 1] >= 0)
        & (pixels[..., 1] < height)
    )

    def sample(image: np.ndarray) -> np.ndarray:
        values = np.zeros(inside.shape, dtype=bool)
        values[inside] = image[pixels[..., 1][inside], pixels[..., 0][inside]]
        return values

    values = sample(mask)
    skipped = sample(leading) if leading is not None else np.zeros_like(values)

    lengths = np.empty(len(starts))
    for i, (row, skip) in enumerate(zip(values, skipped)):
        left = np.flatnonzero(~skip)
        if len(left) == 0:
            lengths[i] = 0.0
            continue
        first = left[0]
        breaks = np.flatnonzero(~row[first:])
        run = breaks[0] if len(breaks) else len(row) - first
        lengths[i] = min(float(run), max_steps[i])
    return lengths


def generate_model(
    mesh: TriangleMesh, config: Optional[ModelGenerationConfig] = None, workers: int = 1
) -> SparseViewpointModel:
    """既定のラスタライザで疎視点モデルを生成する"""
    return GenerateModelUseCase().execute(mesh, config or ModelGenerationConfig(), workers)
