"""RenderOverlayUseCase - 推定姿勢のモデル輪郭をカラーフレームに重ねて描画する"""

import logging
from pathlib import Path
from typing import List

import cv2
import numpy as np

from src.adapter.logging_utils import tracking_context
from src.adapter.netpbm_frame_store import NetpbmFrameStore, write_color_image
from src.domain.geometry import CameraIntrinsics, PoseSE3, project_points
from src.domain.pose_metrics import PoseSequence
from src.domain.viewpoint_model import SparseViewpointModel, closest_view

OVERLAY_PATTERN = "overlay_{:06d}.ppm"
CONTOUR_COLOR = (255, 255, 0)
NORMAL_COLOR = (0, 255, 0)
# 法線を描く長さ（ピクセル）
NORMAL_LENGTH = 6.0


class RenderOverlayUseCase:
    """輪郭オーバーレイ描画のユースケース"""

    def __init__(self, intrinsics: CameraIntrinsics, draw_normals: bool = False) -> None:
        """
        Args:
            intrinsics: カラーカメラ内部パラメータ
            draw_normals: 輪郭点の2D法線も描画する
        """
        self._intrinsics = intrinsics
        self._draw_normals = draw_normals
        self._logger = logging.getLogger(__name__)

    def draw(self, color: np.ndarray, model: SparseViewpointModel, pose: PoseSE3) -> np.ndarray:
        """
        最近傍視点の輪郭点を投影して描画した画像を返す（入力は変更しない）

        Args:
            color: RGB画像
            model: 疎視点モデル
            pose: C_T_M

        Returns:
            np.ndarray: 描画後のRGB画像
        """
        canvas = np.ascontiguousarray(color, dtype=np.uint8).copy()
        view = closest_view(model, pose)
        if len(view.contour_points) == 0:
            return canvas

        camera_points = pose.transform_points(view.contour_points.points)
        in_front = camera_points[:, 2] > 0
        pixels = project_points(self._intrinsics, camera_points[in_front])
        normals = view.contour_points.normals[in_front] @ pose.rotation.T

        for (x, y), normal in zip(pixels, normals):
            center = (int(np.floor(x)), int(np.floor(y)))
            if self._draw_normals:
                direction = normal[:2]
                norm = np.linalg.norm(direction)
                if norm > 0:
                    tip = np.array([x, y]) + NORMAL_LENGTH * direction / norm
                    end = (int(np.floor(tip[0])), int(np.floor(tip[1])))
                    cv2.line(canvas, center, end, NORMAL_COLOR, 1)
            cv2.circle(canvas, center, 1, CONTOUR_COLOR, -1)
        return canvas

    def execute(
        self,
        store: NetpbmFrameStore,
        model: SparseViewpointModel,
        trajectory: PoseSequence,
        output_dir: Path,
    ) -> List[Path]:
        """
        軌跡の各フレームにオーバーレイを描画してPPMで保存する

        Args:
            store: カラーフレームを読むフレームストア
            model: 疎視点モデル
            trajectory: 描画する姿勢列
            output_dir: 出力ディレクトリ

        Returns:
            List[Path]: 書き出したファイル

        Raises:
            FileNotFoundError: カラーフレームが存在しない場合
        """
        self._logger.info(f"🚀 オーバーレイ描画開始: {len(trajectory)}フレーム")
        written: List[Path] = []
        for index, pose in zip(trajectory.indices, trajectory.poses):
            with tracking_context(frame=index):
                canvas = self.draw(store.read_color(index), model, pose)
            path = Path(output_dir) / OVERLAY_PATTERN.format(index)
            write_color_image(path, canvas)
            written.append(path)
        self._logger.info(f"✅ オーバーレイ描画完了: {output_dir}")
        return written
