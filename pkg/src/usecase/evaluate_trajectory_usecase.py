"""EvaluateTrajectoryUseCase - 推定軌跡を正解軌跡と比較して評価指標を計算する"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from src.domain.mesh import TriangleMesh
from src.domain.pose_metrics import (
    PoseSequence,
    PoseTrajectory,
    RmsErrors,
    add_error,
    adds_error,
    auc_score,
    fraction_below,
    opt_auc_score,
    rbot_success,
    rms_errors,
)

# YCB形式のAUC閾値（メートル）
YCB_AUC_THRESHOLD = 0.1
DEFAULT_ADD_THRESHOLD = 0.01
METRICS = ("all", "add", "adds", "auc", "rms", "rbot")


@dataclass
class EvaluationReport:
    """評価結果"""

    frames: int
    add_mean: float
    adds_mean: float
    add_auc: float
    adds_auc: float
    opt_add_auc: float
    rms: Optional[RmsErrors]
    rbot_success: float
    add_threshold: float
    add_below_threshold: float
    per_frame_add: Tuple[float, ...] = ()
    per_frame_adds: Tuple[float, ...] = ()

    def items(self, metric: str = "all") -> List[Tuple[str, float]]:
        """
        固定順の key=value 項目を返す

        Args:
            metric: all, add, adds, auc, rms, rbot のいずれか

        Raises:
            ValueError: 未知の指標名の場合
        """
        if metric not in METRICS:
            raise ValueError(f"未知の評価指標です: {metric}（{', '.join(METRICS)}）")
        items: List[Tuple[str, float]] = [("frames", self.frames)]
        if metric in ("all", "add"):
            items += [
                ("add_mean_m", self.add_mean),
                (f"add_below_{self.add_threshold:g}m", self.add_below_threshold),
            ]
        if metric in ("all", "adds"):
            items.append(("adds_mean_m", self.adds_mean))
        if metric in ("all", "auc"):
            items += [
                ("add_auc", self.add_auc),
                ("adds_auc", self.adds_auc),
                ("opt_add_auc", self.opt_add_auc),
            ]
        if metric in ("all", "rms") and self.rms is not None:
            names = ("x_mm", "y_mm", "z_mm", "roll_deg", "pitch_deg", "yaw_deg")
            items += [(f"rms_{name}", value) for name, value in zip(names, self.rms.as_tuple())]
            items.append(("rms_excluded_frames", self.rms.excluded_frames))
        if metric in ("all", "rbot"):
            items.append(("rbot_success", self.rbot_success))
        return items

    def format(self, metric: str = "all") -> str:
        """key=value 形式のテキスト（1行1項目）"""
        lines = []
        for key, value in self.items(metric):
            text = str(value) if isinstance(value, int) else f"{value:.6f}"
            lines.append(f"{key}={text}")
        return "\n".join(lines) + "\n"


class EvaluateTrajectoryUseCase:
    """軌跡評価のユースケース"""

    def __init__(self, use_kdtree: bool = False) -> None:
        """
        EvaluateTrajectoryUseCaseを初期化する

        Args:
            use_kdtree: ADD-Sの最近傍探索にcKDTreeを使う
        """
        self._use_kdtree = use_kdtree
        self._logger = logging.getLogger(__name__)

    def execute(
        self,
        mesh: TriangleMesh,
        estimated: PoseSequence,
        ground_truth: PoseSequence,
        add_threshold: float = DEFAULT_ADD_THRESHOLD,
    ) -> EvaluationReport:
        """
        推定軌跡を評価する

        Args:
            mesh: 評価に使うメッシュ（頂点と直径）
            estimated: 推定軌跡
            ground_truth: 正解軌跡
            add_threshold: 成功とみなすADDの閾値（メートル）

        Returns:
            EvaluationReport: 評価結果

        Raises:
            ValueError: フレーム番号が一致しない、または軌跡が空の場合
        """
        trajectory = PoseTrajectory.from_sequences(estimated, ground_truth)
        if len(trajectory) == 0:
            raise ValueError("評価する軌跡が空です")
        self._logger.info(f"🚀 評価開始: {len(trajectory)}フレーム, 頂点数={len(mesh.vertices)}")

        relative = trajectory.relative_poses()
        add = [add_error(mesh.vertices, pose) for pose in relative]
        adds = [adds_error(mesh.vertices, pose, self._use_kdtree) for pose in relative]

        rms: Optional[RmsErrors]
        try:
            rms = rms_errors(trajectory)
        except ValueError as e:
            self._logger.warning(f"⚠️ RMS誤差を計算できません: {e}")
            rms = None
        if rms is not None and rms.excluded_frames:
            self._logger.warning(
                f"⚠️ ジンバルロック付近のためRMS誤差から除外: {rms.excluded_frames}フレーム"
            )

        report = EvaluationReport(
            frames=len(trajectory),
            add_mean=float(np.mean(add)),
            adds_mean=float(np.mean(adds)),
            add_auc=auc_score(add, YCB_AUC_THRESHOLD),
            adds_auc=auc_score(adds, YCB_AUC_THRESHOLD),
            opt_add_auc=opt_auc_score(add, mesh.diameter),
            rms=rms,
            rbot_success=rbot_success(trajectory),
            add_threshold=add_threshold,
            add_below_threshold=fraction_below(add, add_threshold),
            per_frame_add=tuple(add),
            per_frame_adds=tuple(adds),
        )
        self._logger.info(
            f"✅ 評価完了: ADD={report.add_mean * 1000:.3f}mm, "
            f"ADD-S={report.adds_mean * 1000:.3f}mm, AUC={report.add_auc:.4f}"
        )
        return report


def write_report_csv(file_path: Path, report: EvaluationReport, indices: Tuple[int, ...]) -> Path:
    """フレームごとのADD/ADD-SをCSVに書き出す"""
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "add_m", "adds_m"])
        for index, add, adds in zip(indices, report.per_frame_add, report.per_frame_adds):
            writer.writerow([index, f"{add:.9f}", f"{adds:.9f}"])
    return path
