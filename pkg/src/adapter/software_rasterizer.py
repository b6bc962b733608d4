"""SoftwareRasterizer - Zバッファによる奥行き・シルエット描画"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.domain.geometry import CameraIntrinsics, PoseSE3
from src.domain.mesh import DepthImage, SilhouetteMask, TriangleMesh


@dataclass(frozen=True)
class RasterResult:
    """ラスタライズ結果"""

    depth: DepthImage
    silhouette: SilhouetteMask
    # 各ピクセルで最も手前の三角形番号（背景は-1）
    triangle_ids: np.ndarray


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _is_top_left(ax: float, ay: float, bx: float, by: float) -> bool:
    # 正の符号付き面積を持つ向き（y軸下向き）での上辺・左辺
    return (ay == by and bx > ax) or by < ay


class SoftwareRasterizer:
    """決定的な三角形ラスタライザ（テクスチャ・シェーディングなし）"""

    def __init__(self, near_plane: float = 1e-3) -> None:
        """
        SoftwareRasterizerを初期化する

        Args:
            near_plane: ニアクリップ面の奥行き（メートル）

        Raises:
            ValueError: near_planeが正でない場合
        """
        if near_plane <= 0:
            raise ValueError("near_planeは正の値である必要があります")
        self._near_plane = near_plane
        self._logger = logging.getLogger(__name__)

    def render_depth(
        self, mesh: TriangleMesh, camera_pose: PoseSE3, intr: CameraIntrinsics
    ) -> Tuple[DepthImage, SilhouetteMask]:
        """
        メッシュを奥行き画像とシルエットに描画する

        Args:
            mesh: 描画するメッシュ
            camera_pose: C_T_M
            intr: カメラ内部パラメータ

        Returns:
            Tuple[DepthImage, SilhouetteMask]: 奥行き（メートル、0 = 背景）とシルエット
        """
        result = self.rasterize(mesh, camera_pose, intr)
        return result.depth, result.silhouette

    def rasterize(
        self, mesh: TriangleMesh, camera_pose: PoseSE3, intr: CameraIntrinsics
    ) -> RasterResult:
        """
        Zバッファでメッシュを描画し、三角形番号バッファも返す

        背面カリングは行わない。画素 (u, v) は (u + 0.5, v + 0.5) でサンプルし、
        共有辺はトップレフトルールで1つの三角形にのみ割り当てる。
        """
        vertices_camera = camera_pose.transform_points(mesh.vertices)
        z_buffer = np.full((intr.height, intr.width), np.inf)
        triangle_ids = np.full((intr.height, intr.width), -1, dtype=np.int64)

        clipped = 0
        for triangle_index, triangle in enumerate(mesh.triangles):
            polygon = vertices_camera[triangle]
            if np.all(polygon[:, 2] < self._near_plane):
                clipped += 1
                continue
            if np.any(polygon[:, 2] < self._near_plane):
                polygon = self._clip_near(polygon)
            for k in range(1, len(polygon) - 1):
                self._raster_triangle(
                    polygon[[0, k, k + 1]], triangle_index, z_buffer, triangle_ids, intr
                )

        if clipped:
            self._logger.debug(f"🔪 カメラ後方の三角形を除外: {clipped}個")

        covered = triangle_ids >= 0
        depth = np.where(covered, z_buffer, 0.0)
        return RasterResult(
            depth=DepthImage(depth),
            silhouette=SilhouetteMask(covered),
            triangle_ids=triangle_ids,
        )

    def _clip_near(self, polygon: np.ndarray) -> np.ndarray:
        """ニア面 z >= near でポリゴンをクリップする（Sutherland-Hodgman）"""
        near = self._near_plane
        output = []
        count = len(polygon)
        for i in range(count):
            current = polygon[i]
            following = polygon[(i + 1) % count]
            current_inside = current[2] >= near
            following_inside = following[2] >= near
            if current_inside:
                output.append(current)
            if current_inside != following_inside:
                t = (near - current[2]) / (following[2] - current[2])
                output.append(current + t * (following - current))
        return np.array(output)

    def _raster_triangle(
        self,
        triangle: np.ndarray,
        triangle_index: int,
        z_buffer: np.ndarray,
        triangle_ids: np.ndarray,
        intr: CameraIntrinsics,
    ) -> None:
        z = triangle[:, 2]
        sx = triangle[:, 0] / z * intr.fx + intr.px
        sy = triangle[:, 1] / z * intr.fy + intr.py

        area = _edge(sx[0], sy[0], sx[1], sy[1], sx[2], sy[2])
        if abs(area) < 1e-12:
            return
        if area < 0:
            order = [0, 2, 1]
            sx, sy, z = sx[order], sy[order], z[order]
            area = -area

        u_min = max(0, int(np.floor(sx.min() - 0.5)))
        u_max = min(intr.width - 1, int(np.ceil(sx.max() - 0.5)))
        v_min = max(0, int(np.floor(sy.min() - 0.5)))
        v_max = min(intr.height - 1, int(np.ceil(sy.max() - 0.5)))
        if u_min > u_max or v_min > v_max:
            return

        px, py = np.meshgrid(
            np.arange(u_min, u_max + 1) + 0.5, np.arange(v_min, v_max + 1) + 0.5
        )
        weights = []
        inside = np.ones(px.shape, dtype=bool)
        for a, b in ((1, 2), (2, 0), (0, 1)):
            w = _edge(sx[a], sy[a], sx[b], sy[b], px, py)
            if _is_top_left(sx[a], sy[a], sx[b], sy[b]):
                inside &= w >= 0
            else:
                inside &= w > 0
            weights.append(w / area)
        if not inside.any():
            return

        inverse_depth = weights[0] / z[0] + weights[1] / z[1] + weights[2] / z[2]
        with np.errstate(divide="ignore"):
            depth = 1.0 / inverse_depth

        region = (slice(v_min, v_max + 1), slice(u_min, u_max + 1))
        closer = inside & (depth < z_buffer[region])
        z_buffer[region] = np.where(closer, depth, z_buffer[region])
        triangle_ids[region] = np.where(closer, triangle_index, triangle_ids[region])


def render_depth(
    mesh: TriangleMesh, camera_pose: PoseSE3, intr: CameraIntrinsics
) -> Tuple[DepthImage, SilhouetteMask]:
    """既定設定のラスタライザで描画する"""
    return SoftwareRasterizer().render_depth(mesh, camera_pose, intr)
