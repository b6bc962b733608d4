"""姿勢誤差の評価指標 - ADD / ADD-S / AUC / RMS / RBOT成功率"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from src.domain.geometry import PoseSE3, pose_inverse

RBOT_TRANSLATION_THRESHOLD = 0.05
RBOT_ROTATION_THRESHOLD_DEG = 5.0
# 閾値ちょうどを失敗とするための余裕
_STRICT_SLACK = 1e-9
GIMBAL_PITCH_LIMIT_DEG = 89.0
_BRUTE_FORCE_CHUNK = 256


@dataclass(frozen=True)
class PoseSequence:
    """フレーム番号付きの姿勢列"""

    indices: Tuple[int, ...]
    poses: Tuple[PoseSE3, ...]

    def __post_init__(self) -> None:
        if len(self.indices) != len(self.poses):
            raise ValueError("フレーム番号と姿勢の数が一致しません")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError("フレーム番号は狭義単調増加である必要があります")

    def __len__(self) -> int:
        return len(self.poses)


@dataclass(frozen=True)
class PoseTrajectory:
    """推定姿勢列と正解姿勢列の組（どちらも C_T_M）"""

    indices: Tuple[int, ...]
    estimated: Tuple[PoseSE3, ...]
    ground_truth: Tuple[PoseSE3, ...]

    def __post_init__(self) -> None:
        if not (len(self.indices) == len(self.estimated) == len(self.ground_truth)):
            raise ValueError("推定と正解の姿勢数が一致しません")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError("フレーム番号は狭義単調増加である必要があります")

    @classmethod
    def from_sequences(cls, estimated: PoseSequence, ground_truth: PoseSequence) -> "PoseTrajectory":
        """
        同じフレーム番号を持つ2つの姿勢列から作成する

        Raises:
            ValueError: フレーム番号が一致しない場合
        """
        if estimated.indices != ground_truth.indices:
            raise ValueError("推定と正解のフレーム番号が一致しません")
        return cls(estimated.indices, estimated.poses, ground_truth.poses)

    def relative_poses(self) -> Tuple[PoseSE3, ...]:
        """各フレームの M_T_Mgt = (C_T_M)⁻¹ ∘ C_T_Mgt"""
        return tuple(
            pose_inverse(est) @ gt for est, gt in zip(self.estimated, self.ground_truth)
        )

    def __len__(self) -> int:
        return len(self.indices)


def add_error(vertices: np.ndarray, relative_pose: PoseSE3) -> float:
    """
    ADD: 頂点ごとの ‖X - T·X‖ の平均

    Raises:
        ValueError: 頂点が空の場合
    """
    vertices = _check_vertices(vertices)
    moved = relative_pose.transform_points(vertices)
    return float(np.linalg.norm(vertices - moved, axis=1).mean())


def adds_error(vertices: np.ndarray, relative_pose: PoseSE3, use_kdtree: bool = False) -> float:
    """
    ADD-S: 各頂点から変換後の最近傍頂点までの距離の平均

    Args:
        vertices: モデル頂点（N, 3）
        relative_pose: 推定と正解の相対姿勢
        use_kdtree: cKDTreeで最近傍を探索する（結果は総当たりと一致する）

    Raises:
        ValueError: 頂点が空の場合
    """
    vertices = _check_vertices(vertices)
    moved = relative_pose.transform_points(vertices)
    if use_kdtree:
        distances, _ = cKDTree(moved).query(vertices, k=1)
        return float(distances.mean())

    nearest = np.empty(len(vertices))
    for start in range(0, len(vertices), _BRUTE_FORCE_CHUNK):
        chunk = vertices[start : start + _BRUTE_FORCE_CHUNK]
        distances = np.linalg.norm(chunk[:, None, :] - moved[None, :, :], axis=2)
        nearest[start : start + len(chunk)] = distances.min(axis=1)
    return float(nearest.mean())


def _check_vertices(vertices: np.ndarray) -> np.ndarray:
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(vertices) == 0:
        raise ValueError("評価に使う頂点が空です")
    return vertices


def auc_score(errors: Sequence[float], threshold: float, scale: float = 1.0) -> float:
    """
    AUCスコア: (1/m)·Σ max(1 - e_j / e_t, 0) に scale を掛けた値

    Raises:
        ValueError: 誤差が空、または閾値が正でない場合
    """
    if threshold <= 0:
        raise ValueError(f"AUCの閾値は正の値である必要があります: {threshold}")
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("AUCを計算する誤差が空です")
    return float(scale * np.maximum(1.0 - errors / threshold, 0.0).mean())


def opt_auc_score(errors: Sequence[float], diameter: float) -> float:
    """OPT形式のAUC（閾値は直径の0.2倍、0〜20にスケール）"""
    return auc_score(errors, 0.2 * diameter, scale=20.0)


def fraction_below(errors: Sequence[float], threshold: float) -> float:
    """誤差が閾値未満のフレームの割合"""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("誤差が空です")
    return float(np.mean(errors < threshold))


@dataclass(frozen=True)
class RmsErrors:
    """並進（mm）と回転（度）のRMS誤差"""

    x: float
    y: float
    z: float
    roll: float
    pitch: float
    yaw: float
    excluded_frames: int = 0

    def as_tuple(self) -> Tuple[float, float, float, float, float, float]:
        return (self.x, self.y, self.z, self.roll, self.pitch, self.yaw)


def _wrap_degrees(angles: np.ndarray) -> np.ndarray:
    """角度差を (-180, 180] に折り返す"""
    wrapped = np.mod(angles + 180.0, 360.0) - 180.0
    return np.where(wrapped == -180.0, 180.0, wrapped)


def rms_errors(trajectory: PoseTrajectory) -> RmsErrors:
    """
    x, y, z（mm）とロール・ピッチ・ヨー（度、内因性ZYX）のRMS誤差を計算する

    正解のピッチが±89°を超えるフレームはジンバルロック付近のため除外し、
    除外数を excluded_frames に記録する。

    Raises:
        ValueError: 軌跡が空、または全フレームが除外された場合
    """
    if len(trajectory) == 0:
        raise ValueError("RMS誤差を計算する軌跡が空です")

    est_t = np.stack([pose.translation for pose in trajectory.estimated]) * 1000.0
    gt_t = np.stack([pose.translation for pose in trajectory.ground_truth]) * 1000.0
    # as_euler("ZYX") は [yaw, pitch, roll]
    est_euler = Rotation.from_matrix(
        np.stack([pose.rotation for pose in trajectory.estimated])
    ).as_euler("ZYX", degrees=True)
    gt_euler = Rotation.from_matrix(
        np.stack([pose.rotation for pose in trajectory.ground_truth])
    ).as_euler("ZYX", degrees=True)

    keep = np.abs(gt_euler[:, 1]) <= GIMBAL_PITCH_LIMIT_DEG
    if not keep.any():
        raise ValueError("全フレームがジンバルロック付近のため除外されました")

    translation = np.sqrt(np.mean((est_t[keep] - gt_t[keep]) ** 2, axis=0))
    angles = np.sqrt(np.mean(_wrap_degrees(est_euler[keep] - gt_euler[keep]) ** 2, axis=0))
    return RmsErrors(
        x=float(translation[0]),
        y=float(translation[1]),
        z=float(translation[2]),
        roll=float(angles[2]),
        pitch=float(angles[1]),
        yaw=float(angles[0]),
        excluded_frames=int((~keep).sum()),
    )


def rotation_error_deg(estimated: PoseSE3, ground_truth: PoseSE3) -> float:
    """回転誤差 cos⁻¹((trace(R_est·R_gtᵀ) - 1) / 2)（度）"""
    trace = np.trace(estimated.rotation @ ground_truth.rotation.T)
    return float(np.degrees(np.arccos(np.clip(0.5 * (trace - 1.0), -1.0, 1.0))))


def rbot_success(trajectory: PoseTrajectory) -> float:
    """
    並進誤差 < 5 cm かつ回転誤差 < 5° のフレームの割合（閾値ちょうどは失敗）

    Raises:
        ValueError: 軌跡が空の場合
    """
    if len(trajectory) == 0:
        raise ValueError("成功率を計算する軌跡が空です")
    passed = 0
    for est, gt in zip(trajectory.estimated, trajectory.ground_truth):
        translation_error = float(np.linalg.norm(est.translation - gt.translation))
        rotation_error = rotation_error_deg(est, gt)
        if (
            translation_error < RBOT_TRANSLATION_THRESHOLD - _STRICT_SLACK
            and rotation_error < RBOT_ROTATION_THRESHOLD_DEG - _STRICT_SLACK
        ):
            passed += 1
    return passed / len(trajectory)
