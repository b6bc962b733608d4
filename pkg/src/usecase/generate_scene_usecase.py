"""GenerateSceneUseCase - 正解姿勢付きの合成RGB-Dシーケンスを生成する"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from src.adapter.netpbm_frame_store import NetpbmFrameStore
from src.adapter.software_rasterizer import SoftwareRasterizer
from src.adapter.trajectory_file import write_trajectory
from src.domain.geometry import CameraIntrinsics, PoseSE3, project_points, rotation_exp
from src.domain.mesh import DepthImage, TriangleMesh
from src.domain.pose_metrics import PoseSequence

GROUND_TRUTH_FILE = "ground_truth.txt"
RGB = Tuple[int, int, int]


@dataclass(frozen=True)
class OccluderConfig:
    """
    カメラ座標系に固定した長方形の遮蔽物

    Attributes:
        center: 長方形の中心（カメラ座標、メートル）
        width: 幅（メートル）
        height: 高さ（メートル）
        start_frame: 出現するフレーム番号
        end_frame: 消えるフレーム番号（このフレームは含まない。Noneなら最後まで）
        color: RGB色
    """

    center: Tuple[float, float, float]
    width: float
    height: float
    start_frame: int = 0
    end_frame: Optional[int] = None
    color: RGB = (60, 160, 60)

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("遮蔽物の大きさは正の値である必要があります")
        if self.center[2] <= 0:
            raise ValueError("遮蔽物はカメラの前方に置く必要があります")

    def active(self, frame_index: int) -> bool:
        if frame_index < self.start_frame:
            return False
        return self.end_frame is None or frame_index < self.end_frame

    def mesh(self) -> TriangleMesh:
        """カメラ座標系の長方形メッシュ（2三角形）"""
        cx, cy, cz = self.center
        hw, hh = self.width / 2.0, self.height / 2.0
        vertices = [
            [cx - hw, cy - hh, cz],
            [cx + hw, cy - hh, cz],
            [cx + hw, cy + hh, cz],
            [cx - hw, cy + hh, cz],
        ]
        return TriangleMesh(vertices, [[0, 1, 2], [0, 2, 3]])


@dataclass(frozen=True)
class SyntheticSceneConfig:
    """
    合成シーンの設定

    Attributes:
        mesh: 物体メッシュ
        intrinsics: カメラ内部パラメータ（カラー・深度共通）
        initial_pose: 最初のフレームの C_T_M
        n_frames: フレーム数
        seed: 乱数シード
        translation_step: フレームあたりの並進量（メートル）
        rotation_step_deg: フレームあたりの回転量（度）
        mean_reversion: 初期位置へ戻す強さ（0で純粋なランダムウォーク）
        constant_velocity: 指定時はランダムウォークの代わりにカメラ座標で等速並進
        foreground_color: 物体のRGB色
        background_color: 背景のRGB色
        color_noise: 色ノイズの標準偏差（8bit階調）
        depth_noise_mm: 1 mあたりの深度ノイズ標準偏差（ミリメートル）
        textured_background: 背景をブロックノイズ模様にする
        texture_block: 模様のブロックサイズ（ピクセル）
        background_depth: 背景の壁までの距離（Noneなら深度なし）
        occluder: 遮蔽物
    """

    mesh: TriangleMesh
    intrinsics: CameraIntrinsics
    initial_pose: PoseSE3
    n_frames: int
    seed: int = 0
    translation_step: float = 0.005
    rotation_step_deg: float = 3.0
    mean_reversion: float = 0.2
    constant_velocity: Optional[Tuple[float, float, float]] = None
    foreground_color: RGB = (200, 60, 40)
    background_color: RGB = (40, 60, 200)
    color_noise: float = 8.0
    depth_noise_mm: float = 2.0
    textured_background: bool = False
    texture_block: int = 16
    background_depth: Optional[float] = None
    occluder: Optional[OccluderConfig] = None

    def __post_init__(self) -> None:
        if self.n_frames < 1:
            raise ValueError("フレーム数は1以上である必要があります")
        if self.color_noise < 0 or self.depth_noise_mm < 0:
            raise ValueError("ノイズの標準偏差は0以上である必要があります")
        if self.translation_step < 0 or self.rotation_step_deg < 0:
            raise ValueError("フレームあたりの移動量は0以上である必要があります")
        if not 0.0 <= self.mean_reversion <= 1.0:
            raise ValueError("mean_reversionは0以上1以下である必要があります")
        if self.texture_block < 1:
            raise ValueError("texture_blockは1以上である必要があります")
        if self.background_depth is not None and self.background_depth <= 0:
            raise ValueError("背景の距離は正の値である必要があります")


@dataclass
class SyntheticSequence:
    """生成したシーケンス"""

    colors: List[np.ndarray]
    depths: List[DepthImage]
    ground_truth: PoseSequence
    intrinsics: CameraIntrinsics
    clean_depths: List[DepthImage] = field(default_factory=list)


class GenerateSceneUseCase:
    """合成シーケンス生成のユースケース"""

    def __init__(self, rasterizer: Optional[SoftwareRasterizer] = None) -> None:
        self._rasterizer = rasterizer or SoftwareRasterizer()
        self._logger = logging.getLogger(__name__)

    def execute(self, cfg: SyntheticSceneConfig, workers: int = 1) -> SyntheticSequence:
        """
        正解軌跡を生成し、各フレームを描画する

        Args:
            cfg: シーン設定
            workers: フレーム描画の並列数（結果はフレーム順で決定的）

        Returns:
            SyntheticSequence: カラー・深度フレームと正解軌跡

        Raises:
            ValueError: 物体が視錐台から外れたフレームがある場合
        """
        self._logger.info(f"🚀 合成シーン生成開始: {cfg.n_frames}フレーム, seed={cfg.seed}")
        start_time = time.time()

        poses = self.ground_truth_poses(cfg)
        for index, pose in enumerate(poses):
            self._check_frustum(cfg, pose, index)
        background = self._background(cfg)

        def render(index: int):
            return self._render_frame(cfg, poses[index], index, background)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                frames = list(executor.map(render, range(cfg.n_frames)))
        else:
            frames = [render(i) for i in range(cfg.n_frames)]

        self._logger.info(f"✅ 合成シーン生成完了: {time.time() - start_time:.2f}秒")
        return SyntheticSequence(
            colors=[color for color, _, _ in frames],
            depths=[depth for _, depth, _ in frames],
            ground_truth=PoseSequence(tuple(range(cfg.n_frames)), tuple(poses)),
            intrinsics=cfg.intrinsics,
            clean_depths=[clean for _, _, clean in frames],
        )

    def save(self, sequence: SyntheticSequence, directory: Path) -> Path:
        """フレームと正解軌跡をディレクトリへ書き出す"""
        store = NetpbmFrameStore(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for index, (color, depth) in enumerate(zip(sequence.colors, sequence.depths)):
            store.write_color(index, color)
            store.write_depth(index, depth)
        path = write_trajectory(directory / GROUND_TRUTH_FILE, sequence.ground_truth)
        self._logger.info(f"💾 合成シーンを保存: {directory} ({len(sequence.colors)}フレーム)")
        return path

    def ground_truth_poses(self, cfg: SyntheticSceneConfig) -> List[PoseSE3]:
        """シードに従って正解軌跡を生成する"""
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
        poses = [cfg.initial_pose]
        origin = cfg.initial_pose.translation
        rotation_step = np.radians(cfg.rotation_step_deg)

        for _ in range(1, cfg.n_frames):
            previous = poses[-1]
            if cfg.constant_velocity is not None:
                velocity = np.asarray(cfg.constant_velocity, dtype=np.float64)
                poses.append(PoseSE3(previous.rotation, previous.translation + velocity))
                continue

            direction = _random_unit(rng)
            if cfg.translation_step > 0:
                # 初期位置へ引き戻す方向に偏らせる（大きさは translation_step のまま）
                drift = (previous.translation - origin) / cfg.translation_step
                direction = direction - cfg.mean_reversion * drift
                norm = np.linalg.norm(direction)
                direction = direction / norm if norm > 0 else _random_unit(rng)
            axis = _random_unit(rng)
            rotation = rotation_exp(axis * rotation_step) @ previous.rotation
            translation = previous.translation + cfg.translation_step * direction
            poses.append(PoseSE3(rotation, translation))
        return poses

    def _check_frustum(self, cfg: SyntheticSceneConfig, pose: PoseSE3, index: int) -> None:
        points = pose.transform_points(cfg.mesh.vertices)
        if np.any(points[:, 2] <= 0):
            raise ValueError(f"フレーム{index}: 物体がカメラの後方にあります")
        pixels = project_points(cfg.intrinsics, points)
        if not np.all(cfg.intrinsics.contains(pixels)):
            raise ValueError(f"フレーム{index}: 物体が画像の外にはみ出しています")

    def _background(self, cfg: SyntheticSceneConfig) -> np.ndarray:
        intr = cfg.intrinsics
        background = np.empty((intr.height, intr.width, 3), dtype=np.float64)
        background[:] = cfg.background_color
        if cfg.textured_background:
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
            blocks_y = -(-intr.height // cfg.texture_block)
            blocks_x = -(-intr.width // cfg.texture_block)
            palette = rng.integers(0, 256, size=(blocks_y, blocks_x, 3))
            texture = np.repeat(
                np.repeat(palette, cfg.texture_block, axis=0), cfg.texture_block, axis=1
            )
            background = texture[: intr.height, : intr.width].astype(np.float64)
        return background

    def _render_frame(
        self,
        cfg: SyntheticSceneConfig,
        pose: PoseSE3,
        index: int,
        background: np.ndarray,
    ) -> Tuple[np.ndarray, DepthImage, DepthImage]:
        intr = cfg.intrinsics
        object_depth, silhouette = self._rasterizer.render_depth(cfg.mesh, pose, intr)

        depth = object_depth.values.copy()
        color = background.copy()
        color[silhouette.values] = cfg.foreground_color

        if cfg.occluder is not None and cfg.occluder.active(index):
            occluder_depth, occluder_mask = self._rasterizer.render_depth(
                cfg.occluder.mesh(), PoseSE3.identity(), intr
            )
            front = occluder_mask.values & ((depth == 0) | (occluder_depth.values < depth))
            depth[front] = occluder_depth.values[front]
            color[front] = cfg.occluder.color

        if cfg.background_depth is not None:
            depth[depth == 0] = cfg.background_depth
        clean = DepthImage(np.round(depth * 1000.0) / 1000.0)

        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, index]))
        if cfg.color_noise > 0:
            color = color + rng.normal(0.0, cfg.color_noise, size=color.shape)
        color = np.clip(np.round(color), 0, 255).astype(np.uint8)

        if cfg.depth_noise_mm > 0:
            valid = depth > 0
            noise = rng.normal(0.0, 1.0, size=depth.shape) * cfg.depth_noise_mm / 1000.0 * depth
            depth = np.where(valid, np.maximum(depth + noise, 1e-3), 0.0)
        return color, DepthImage(np.round(depth * 1000.0) / 1000.0), clean


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    vector = rng.normal(size=3)
    return vector / np.linalg.norm(vector)


def generate_sequence(cfg: SyntheticSceneConfig, workers: int = 1) -> SyntheticSequence:
    """既定のラスタライザで合成シーケンスを生成する"""
    return GenerateSceneUseCase().execute(cfg, workers)
