"""TrackObjectUseCase - 領域・深度モダリティを統合したフレームごとの姿勢追跡"""

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from src.adapter.logging_utils import tracking_context
from src.adapter.netpbm_frame_store import NetpbmFrameStore
from src.domain.depth_modality import (
    CorrespondencePoint,
    depth_grad_hess_batch,
    find_correspondences,
    occluded_mask,
)
from src.domain.geometry import CameraIntrinsics, PoseSE3, PoseVariation, exp_update
from src.domain.mesh import DepthImage
from src.domain.optimization import (
    ScheduleEntry,
    TrackerState,
    TrackingMode,
    assemble,
    newton_step,
)
from src.domain.pose_metrics import PoseSequence
from src.domain.region_modality import (
    ColorHistogramPair,
    CorrespondenceLine,
    RegionMode,
    StepFunctionTable,
    build_lines,
    region_grad_hess_batch,
    step_values,
    update_histograms,
)
from src.domain.viewpoint_model import Viewpoint, closest_view

# これを下回る対応数でトラッキング喪失とする
MIN_CORRESPONDENCES = 10

TIMING_COLUMNS = [
    "frame",
    "correspondence_line_ms",
    "correspondence_point_ms",
    "derivative_ms",
    "histogram_ms",
    "other_ms",
    "total_ms",
]


@dataclass
class PhaseTimings:
    """フレームあたりの処理時間（秒）"""

    correspondence_line: float = 0.0
    correspondence_point: float = 0.0
    derivative: float = 0.0
    histogram: float = 0.0
    total: float = 0.0

    @property
    def other(self) -> float:
        measured = (
            self.correspondence_line
            + self.correspondence_point
            + self.derivative
            + self.histogram
        )
        return max(self.total - measured, 0.0)


@dataclass
class FrameResult:
    """1フレームの追跡結果"""

    pose: PoseSE3
    tracking_lost: bool
    n_lines: int
    n_points: int
    timings: PhaseTimings
    # 対応付け反復ごとの姿勢（record_trace指定時のみ）
    trace: List[PoseSE3] = field(default_factory=list)
    skipped_updates: int = 0


@dataclass
class TrackingRun:
    """シーケンス全体の追跡結果"""

    trajectory: PoseSequence
    results: List[FrameResult]

    @property
    def lost_frames(self) -> int:
        return sum(1 for result in self.results if result.tracking_lost)


class TrackObjectUseCase:
    """物体追跡のユースケース"""

    def __init__(
        self,
        color_intrinsics: CameraIntrinsics,
        depth_intrinsics: Optional[CameraIntrinsics] = None,
        record_trace: bool = False,
    ) -> None:
        """
        TrackObjectUseCaseを初期化する

        Args:
            color_intrinsics: カラーカメラ内部パラメータ
            depth_intrinsics: 深度カメラ内部パラメータ（Noneの場合はカラーと同じ）
            record_trace: 対応付け反復ごとの姿勢を記録する
        """
        self._color_intrinsics = color_intrinsics
        self._depth_intrinsics = depth_intrinsics or color_intrinsics
        self._record_trace = record_trace
        self._logger = logging.getLogger(__name__)

    def initialize_histograms(self, state: TrackerState, color: np.ndarray) -> None:
        """
        初期姿勢から色ヒストグラムを学習率1で作り直す

        Args:
            state: トラッキング状態（histogramsを更新する）
            color: RGB画像
        """
        view = closest_view(state.model, state.pose)
        scale = state.schedule.entry(state.schedule.n_corr_iterations - 1).scale
        lines = self._histogram_lines(state, view, color, None, ColorHistogramPair.uniform(), scale)
        if not lines:
            with tracking_context(modality="histogram"):
                self._logger.warning("⚠️ ヒストグラム初期化に使える対応線がありません")
            state.histograms = ColorHistogramPair.uniform()
            return
        state.histograms = update_histograms(ColorHistogramPair.uniform(), color, lines, 1.0)

    def track_frame(
        self, state: TrackerState, color: np.ndarray, depth: DepthImage
    ) -> FrameResult:
        """
        1フレーム分の姿勢を推定する

        対応付け反復ごとに最近傍視点から対応線と対応点を作り、1回目の更新は大域モード、
        2回目以降は局所モードの領域項でニュートン更新する。最後にヒストグラムを更新する。

        Args:
            state: トラッキング状態（pose, histograms, tracking_lost を更新する）
            color: RGB画像（H, W, 3, uint8）
            depth: 深度画像

        Returns:
            FrameResult: 推定姿勢と診断情報
        """
        started = time.perf_counter()
        timings = PhaseTimings()
        result = self._optimize(state, color, depth, timings, rebuild_histograms=False)

        if not result.tracking_lost and state.use_region:
            tick = time.perf_counter()
            view = closest_view(state.model, state.pose)
            scale = state.schedule.entry(state.schedule.n_corr_iterations - 1).scale
            lines = self._histogram_lines(state, view, color, depth, state.histograms, scale)
            if lines:
                state.histograms = update_histograms(
                    state.histograms, color, lines, state.histogram_learning_rate
                )
            timings.histogram += time.perf_counter() - tick

        timings.total = time.perf_counter() - started
        return result

    def refine_pose(
        self,
        state: TrackerState,
        color: np.ndarray,
        depth: DepthImage,
        initial_pose: PoseSE3,
    ) -> FrameResult:
        """
        外部から与えた初期姿勢を精密化する

        対応付け反復のたびにヒストグラムを学習率1で作り直す。

        Args:
            state: トラッキング状態（refinementスケジュールを想定）
            color: RGB画像
            depth: 深度画像
            initial_pose: 初期姿勢 C_T_M

        Returns:
            FrameResult: 精密化した姿勢と診断情報
        """
        started = time.perf_counter()
        state.pose = initial_pose
        state.mode = TrackingMode.REFINEMENT
        timings = PhaseTimings()
        result = self._optimize(state, color, depth, timings, rebuild_histograms=True)
        timings.total = time.perf_counter() - started
        return result

    def run(
        self,
        state: TrackerState,
        store: NetpbmFrameStore,
        indices: Optional[Iterable[int]] = None,
    ) -> TrackingRun:
        """
        フレームストアのシーケンスを順に追跡する

        Args:
            state: 初期姿勢を設定したトラッキング状態
            store: フレームストア
            indices: 追跡するフレーム番号（Noneなら全フレーム）

        Returns:
            TrackingRun: 推定軌跡とフレームごとの結果

        Raises:
            ValueError: フレームが1つもない場合
        """
        frame_indices = list(indices) if indices is not None else store.frame_indices()
        if not frame_indices:
            raise ValueError(f"追跡するフレームがありません: {store.directory}")

        self._logger.info(f"🚀 追跡開始: {len(frame_indices)}フレーム (mode={state.mode.value})")
        results: List[FrameResult] = []
        for position, index in enumerate(frame_indices):
            with tracking_context(frame=index):
                color = store.read_color(index)
                depth = store.read_depth(index)
                if position == 0 and state.mode == TrackingMode.TRACKING and state.use_region:
                    self.initialize_histograms(state, color)

                if state.mode == TrackingMode.REFINEMENT:
                    result = self.refine_pose(state, color, depth, state.pose)
                else:
                    result = self.track_frame(state, color, depth)
                results.append(result)
                self._logger.debug(
                    f"⏱️ {result.timings.total * 1000:.2f}ms "
                    f"(lines={result.n_lines}, points={result.n_points})"
                )

        trajectory = PoseSequence(tuple(frame_indices), tuple(r.pose for r in results))
        run = TrackingRun(trajectory=trajectory, results=results)
        self._logger.info(
            f"✅ 追跡完了: {len(results)}フレーム, 喪失={run.lost_frames}, "
            f"中央値={np.median([r.timings.total for r in results]) * 1000:.2f}ms"
        )
        return run

    def _optimize(
        self,
        state: TrackerState,
        color: np.ndarray,
        depth: DepthImage,
        timings: PhaseTimings,
        rebuild_histograms: bool,
    ) -> FrameResult:
        start_pose = state.pose
        table = step_values(state.slope, state.amplitude)
        lambda_r, lambda_t = state.effective_regularization()
        schedule = state.schedule
        trace: List[PoseSE3] = []
        skipped = 0
        n_lines = n_points = 0

        for iteration in range(schedule.n_corr_iterations):
            with tracking_context(iteration=iteration, modality=_modality_label(state)):
                entry = schedule.entry(iteration)
                view = closest_view(state.model, state.pose)

                if rebuild_histograms and state.use_region:
                    tick = time.perf_counter()
                    self._rebuild_histograms(state, view, color, depth, entry.scale)
                    timings.histogram += time.perf_counter() - tick

                tick = time.perf_counter()
                lines = []
                if state.use_region:
                    with tracking_context(modality="region"):
                        lines = self._region_lines(
                            state, view, color, depth, state.histograms, entry.scale, table
                        )
                timings.correspondence_line += time.perf_counter() - tick

                tick = time.perf_counter()
                points = []
                if state.use_depth:
                    with tracking_context(modality="depth"):
                        points = self._depth_points(state, view, depth, entry.radius, schedule.stride)
                timings.correspondence_point += time.perf_counter() - tick

                n_lines, n_points = len(lines), len(points)
                if n_lines + n_points < MIN_CORRESPONDENCES:
                    state.pose = start_pose
                    state.tracking_lost = True
                    self._logger.warning(
                        f"⚠️ トラッキング喪失: 対応数 {n_lines + n_points} < {MIN_CORRESPONDENCES}"
                    )
                    return FrameResult(start_pose, True, n_lines, n_points, timings, trace, skipped)

                tick = time.perf_counter()
                for update in range(schedule.n_update_iterations):
                    mode = RegionMode.GLOBAL if update == 0 else RegionMode.LOCAL
                    theta = self._solve(state, lines, points, table, mode, entry, lambda_r, lambda_t)
                    if theta is None:
                        skipped += 1
                        continue
                    state.pose = exp_update(state.pose, theta)
                timings.derivative += time.perf_counter() - tick

                if self._record_trace:
                    trace.append(state.pose)

        state.tracking_lost = False
        return FrameResult(state.pose, False, n_lines, n_points, timings, trace, skipped)

    def _solve(
        self,
        state: TrackerState,
        lines: List[CorrespondenceLine],
        points: List[CorrespondencePoint],
        table: StepFunctionTable,
        mode: RegionMode,
        entry: ScheduleEntry,
        lambda_r: np.ndarray,
        lambda_t: float,
    ) -> Optional[PoseVariation]:
        try:
            region_g, region_h, _ = region_grad_hess_batch(
                lines,
                state.pose,
                self._color_intrinsics,
                table,
                mode,
                entry.sigma_r,
                state.local_learning_rate,
            )
        except ValueError as e:
            with tracking_context(modality="region"):
                self._logger.warning(f"⚠️ 領域項を計算できないため更新をスキップ: {e}")
            return None
        depth_g, depth_h = depth_grad_hess_batch(points, entry.sigma_d, state.depth_pose)

        gradient, hessian = assemble(
            list(zip(region_g, region_h)) + list(zip(depth_g, depth_h))
        )
        theta = newton_step(gradient, hessian, lambda_r, lambda_t)
        if theta is None:
            self._logger.warning(
                f"⚠️ ニュートン更新をスキップ: 連立方程式を解けません "
                f"(|g|={np.linalg.norm(gradient):.3e})"
            )
        return theta

    def _region_lines(
        self,
        state: TrackerState,
        view: Viewpoint,
        color: np.ndarray,
        depth: Optional[DepthImage],
        histograms: ColorHistogramPair,
        scale: int,
        table: StepFunctionTable,
    ) -> List[CorrespondenceLine]:
        lines = build_lines(
            view.contour_points, state.pose, self._color_intrinsics, color, histograms, scale, table
        )
        keep = np.array([line is not None for line in lines], dtype=bool)
        if state.use_occlusion_handling and depth is not None and keep.any():
            depth_points = state.depth_pose.transform_points(view.contour_points.points)
            in_front = depth_points[:, 2] > 0
            occluded = np.zeros(len(lines), dtype=bool)
            occluded[in_front] = occluded_mask(
                depth,
                depth_points[in_front],
                np.zeros(int(in_front.sum())),
                self._depth_intrinsics,
                state.occlusion,
            )
            keep &= ~occluded
        return [line for line, kept in zip(lines, keep) if kept]

    def _histogram_lines(
        self,
        state: TrackerState,
        view: Viewpoint,
        color: np.ndarray,
        depth: Optional[DepthImage],
        histograms: ColorHistogramPair,
        scale: int,
    ) -> List[CorrespondenceLine]:
        table = step_values(state.slope, state.amplitude)
        with tracking_context(modality="histogram"):
            return self._region_lines(state, view, color, depth, histograms, scale, table)

    def _rebuild_histograms(
        self,
        state: TrackerState,
        view: Viewpoint,
        color: np.ndarray,
        depth: Optional[DepthImage],
        scale: int,
    ) -> None:
        lines = self._histogram_lines(state, view, color, depth, ColorHistogramPair.uniform(), scale)
        if lines:
            state.histograms = update_histograms(ColorHistogramPair.uniform(), color, lines, 1.0)

    def _depth_points(
        self,
        state: TrackerState,
        view: Viewpoint,
        depth: DepthImage,
        radius_mm: float,
        stride_mm: float,
    ) -> List[CorrespondencePoint]:
        surface = view.surface_points
        pose = state.depth_pose
        found = find_correspondences(
            depth, surface, pose, self._depth_intrinsics, radius_mm / 1000.0, stride_mm / 1000.0
        )
        keep = np.array([cp is not None for cp in found], dtype=bool)
        if state.use_occlusion_handling and keep.any():
            predicted = pose.transform_points(surface.points)
            in_front = predicted[:, 2] > 0
            occluded = np.zeros(len(found), dtype=bool)
            occluded[in_front] = occluded_mask(
                depth,
                predicted[in_front],
                surface.occlusion_offsets[in_front],
                self._depth_intrinsics,
                state.occlusion,
            )
            keep &= ~occluded
        return [cp for cp, kept in zip(found, keep) if kept]


def write_timings_csv(file_path: Path, run: TrackingRun) -> Path:
    """フレームごとの処理時間をCSVに書き出す"""
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TIMING_COLUMNS)
        for index, result in zip(run.trajectory.indices, run.results):
            t = result.timings
            writer.writerow(
                [index]
                + [
                    f"{value * 1000:.4f}"
                    for value in (
                        t.correspondence_line,
                        t.correspondence_point,
                        t.derivative,
                        t.histogram,
                        t.other,
                        t.total,
                    )
                ]
            )
    return path


def pose_change(before: PoseSE3, after: PoseSE3) -> Tuple[float, float]:
    """2つの姿勢間の並進（メートル）と回転（ラジアン）の差"""
    translation = float(np.linalg.norm(after.translation - before.translation))
    trace = np.trace(after.rotation @ before.rotation.T)
    rotation = float(np.arccos(np.clip(0.5 * (trace - 1.0), -1.0, 1.0)))
    return translation, rotation


def _modality_label(state: TrackerState) -> str:
    """ログに出す有効なモダリティの組み合わせ"""
    if state.use_region and state.use_depth:
        return "region+depth"
    return "region" if state.use_region else "depth"
