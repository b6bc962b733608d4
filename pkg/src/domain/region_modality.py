"""領域モダリティ - 色ヒストグラム・対応線・輪郭距離分布とその微分"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.domain.geometry import CameraIntrinsics, PoseSE3, PoseVariation, variate_point
from src.domain.viewpoint_model import ContourPoint, ContourPointSet

# 16^3 RGBビン
HISTOGRAM_BINS = 4096
HISTOGRAM_FLOOR = 1e-9
# ヒストグラムに使う線中心からのピクセル数
HISTOGRAM_SAMPLES_PER_SIDE = 20

# 段差関数のサンプル位置 x ∈ {-3.5, ..., 3.5}
STEP_ABSCISSAE = np.arange(8) - 3.5
# 離散距離 d_s ∈ {-5.5, ..., 5.5}
DISTRIBUTION_DISTANCES = np.arange(12) - 5.5
# セグメント中心 r_s ∈ {-9, ..., 9}
SEGMENT_POSITIONS = np.arange(19) - 9

MIN_FREE_SEGMENTS = 3.0
DISTRIBUTION_VARIANCE_FLOOR = 1e-3
_LOCAL_PROBABILITY_FLOOR = 1e-12


class RegionMode(str, Enum):
    """領域モダリティの最適化モード"""

    GLOBAL = "global"
    LOCAL = "local"


@dataclass(frozen=True)
class StepFunctionTable:
    """平滑化段差関数 h_f を x ∈ {-3.5, ..., 3.5} で事前計算したテーブル"""

    slope: float
    amplitude: float
    foreground: np.ndarray

    @property
    def background(self) -> np.ndarray:
        return 1.0 - self.foreground


def step_values(slope: float, amplitude: float) -> StepFunctionTable:
    """
    平滑化段差関数の値を事前計算する

    Args:
        slope: 傾きパラメータ s_h
        amplitude: 振幅パラメータ α_h

    Returns:
        StepFunctionTable: h_f(x) = 1/2 - α_h·tanh(x / (2·s_h)) の8値

    Raises:
        ValueError: パラメータが範囲外の場合
    """
    if slope <= 0:
        raise ValueError(f"s_hは正の値である必要があります: {slope}")
    if not 0.0 <= amplitude <= 0.5:
        raise ValueError(f"α_hは0以上0.5以下である必要があります: {amplitude}")
    foreground = 0.5 - amplitude * np.tanh(STEP_ABSCISSAE / (2.0 * slope))
    foreground.flags.writeable = False
    return StepFunctionTable(slope=float(slope), amplitude=float(amplitude), foreground=foreground)


class ColorHistogramPair:
    """前景・背景の正規化色ヒストグラム（4096ビン）を表す値オブジェクト"""

    def __init__(self, foreground: np.ndarray, background: np.ndarray, initialized: bool) -> None:
        """
        Raises:
            ValueError: ビン数が4096でない場合
        """
        foreground = np.array(foreground, dtype=np.float64)
        background = np.array(background, dtype=np.float64)
        if foreground.shape != (HISTOGRAM_BINS,) or background.shape != (HISTOGRAM_BINS,):
            raise ValueError(f"ヒストグラムは{HISTOGRAM_BINS}ビンである必要があります")
        foreground.flags.writeable = False
        background.flags.writeable = False
        self._foreground = foreground
        self._background = background
        self._initialized = bool(initialized)

    @classmethod
    def uniform(cls) -> "ColorHistogramPair":
        """未学習の一様ヒストグラムを作成する"""
        values = np.full(HISTOGRAM_BINS, 1.0 / HISTOGRAM_BINS)
        return cls(values, values, initialized=False)

    @property
    def foreground(self) -> np.ndarray:
        return self._foreground

    @property
    def background(self) -> np.ndarray:
        return self._background

    @property
    def initialized(self) -> bool:
        """一度でも画像から学習したか"""
        return self._initialized

    def __eq__(self, other: object) -> bool:
        """等価性判定"""
        if not isinstance(other, ColorHistogramPair):
            return False
        return (
            np.array_equal(self._foreground, other._foreground)
            and np.array_equal(self._background, other._background)
            and self._initialized == other._initialized
        )

    def __hash__(self) -> int:
        return hash((self._foreground.tobytes(), self._background.tobytes(), self._initialized))

    def __repr__(self) -> str:
        return f"ColorHistogramPair(initialized={self._initialized})"


def color_bins(colors: np.ndarray) -> np.ndarray:
    """RGB値（..., 3, uint8）を上位4ビットでビン番号に変換する"""
    colors = np.asarray(colors, dtype=np.int64)
    return (colors[..., 0] >> 4) * 256 + (colors[..., 1] >> 4) * 16 + (colors[..., 2] >> 4)


@dataclass(frozen=True)
class CorrespondenceLine:
    """スケール空間の対応線（中心・法線・セグメント事後確率・距離分布）"""

    center: np.ndarray
    normal: np.ndarray
    n_bar: float
    delta_r: float
    scale: int
    contour_point: ContourPoint
    # (19, 2): r_s = -9..9 ごとの (p_sf, p_sb)
    segment_posteriors: np.ndarray
    # (12,): d_s = -5.5..5.5 の正規化分布
    distribution: np.ndarray
    mean: float
    variance: float


def _line_geometry(
    points: np.ndarray,
    normals: np.ndarray,
    fg_free_lens: np.ndarray,
    bg_free_lens: np.ndarray,
    pose: PoseSE3,
    intr: CameraIntrinsics,
    scale: int,
) -> Tuple[np.ndarray, ...]:
    """対応線の中心・法線・n̄・Δr・セグメント画素位置と有効フラグを一括計算する"""
    count = len(points)
    camera_points = pose.transform_points(points)
    camera_normals = np.asarray(normals, dtype=np.float64) @ pose.rotation.T

    z = camera_points[:, 2]
    valid = z > 0
    safe_z = np.where(valid, z, 1.0)
    x, y = camera_points[:, 0], camera_points[:, 1]
    center = np.stack([x / safe_z * intr.fx + intr.px, y / safe_z * intr.fy + intr.py], axis=1)

    # 投影のヤコビアンを法線に適用した画像上の方向
    nx, ny, nz = camera_normals[:, 0], camera_normals[:, 1], camera_normals[:, 2]
    image_normal = np.stack(
        [intr.fx * (nx * safe_z - x * nz), intr.fy * (ny * safe_z - y * nz)], axis=1
    ) / (safe_z**2)[:, None]
    norm = np.linalg.norm(image_normal, axis=1)
    valid &= norm > 1e-12
    normal = image_normal / np.where(norm > 1e-12, norm, 1.0)[:, None]

    abs_normal = np.abs(normal)
    n_bar = np.maximum(abs_normal.max(axis=1), 1e-12)
    axis = np.argmax(abs_normal, axis=1)
    rows = np.arange(count)
    sign = np.where(normal[rows, axis] < 0, -1.0, 1.0)
    # サンプルは支配軸方向の画素中心に乗り、セグメント r_s = -1 と 0 の境界は
    # 中心に最も近い画素境界に来る（輪郭位置の量子化誤差を 0.5 画素以内に抑える）
    shift = sign * (0.5 - center[rows, axis]) - 0.5
    delta_r = (scale / 2.0 + shift - np.round(shift)) / n_bar

    focal = intr.mean_focal_length
    to_segments = focal / safe_z * n_bar / scale
    free_segments = np.minimum(fg_free_lens, bg_free_lens) * to_segments
    valid &= free_segments >= MIN_FREE_SEGMENTS

    offsets = SEGMENT_POSITIONS[:, None] * scale + np.arange(scale)[None, :] - (scale - 1) / 2.0
    line_coords = delta_r[:, None, None] + offsets[None, :, :] / n_bar[:, None, None]
    positions = center[:, None, None, :] + line_coords[..., None] * normal[:, None, None, :]
    pixels = np.floor(positions).astype(np.int64)
    inside = (
        (pixels[..., 0] >= 0)
        & (pixels[..., 0] < intr.width)
        & (pixels[..., 1] >= 0)
        & (pixels[..., 1] < intr.height)
    )
    valid &= inside.reshape(count, -1).all(axis=1)
    return center, normal, n_bar, delta_r, pixels, valid


def segment_posteriors(
    image: np.ndarray, pixels: np.ndarray, hist: ColorHistogramPair
) -> np.ndarray:
    """
    セグメントごとの前景事後確率 p_sf を計算する

    Args:
        image: RGB画像（H, W, 3）
        pixels: セグメントの画素番号（..., s, 2）
        hist: 色ヒストグラム

    Returns:
        np.ndarray: p_sf（...）。p_sb = 1 - p_sf
    """
    bins = color_bins(image[pixels[..., 1], pixels[..., 0]])
    log_fg = np.log(hist.foreground[bins]).sum(axis=-1)
    log_bg = np.log(hist.background[bins]).sum(axis=-1)
    return expit(log_fg - log_bg)


def distribution_from_posteriors(
    foreground_posteriors: np.ndarray, table: StepFunctionTable
) -> np.ndarray:
    """
    19セグメントの事後確率から12値の輪郭距離分布を計算する

    Args:
        foreground_posteriors: p_sf（N, 19）
        table: 平滑化段差関数

    Returns:
        np.ndarray: 正規化分布（N, 12）。全て0の場合は一様分布
    """
    p_f = np.atleast_2d(foreground_posteriors)
    p_b = 1.0 - p_f
    index = np.arange(12)[:, None] + np.arange(8)[None, :]
    factors = table.foreground * p_f[:, index] + table.background * p_b[:, index]
    with np.errstate(divide="ignore"):
        log_values = np.log(factors).sum(axis=-1)
    peak = log_values.max(axis=1, keepdims=True)
    degenerate = ~np.isfinite(peak[:, 0])
    values = np.exp(log_values - np.where(degenerate[:, None], 0.0, peak))
    values[degenerate] = 1.0
    return values / values.sum(axis=1, keepdims=True)


def distribution_moments(distribution: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """分布（N, 12）の平均と分散（下限付き）を返す"""
    mean = distribution @ DISTRIBUTION_DISTANCES
    variance = ((DISTRIBUTION_DISTANCES[None, :] - mean[:, None]) ** 2 * distribution).sum(axis=1)
    return mean, np.maximum(variance, DISTRIBUTION_VARIANCE_FLOOR)


def build_lines(
    contour_points: ContourPointSet,
    pose: PoseSE3,
    intr: CameraIntrinsics,
    image: np.ndarray,
    hist: ColorHistogramPair,
    scale: int,
    table: StepFunctionTable,
) -> List[Optional[CorrespondenceLine]]:
    """
    輪郭点ごとに対応線を構築する

    Args:
        contour_points: 最近傍視点の輪郭点
        pose: C_T_M
        intr: カラーカメラ内部パラメータ
        image: RGB画像（H, W, 3, uint8）
        hist: 色ヒストグラム
        scale: セグメントあたりの画素数 s
        table: 平滑化段差関数

    Returns:
        List[Optional[CorrespondenceLine]]: 入力と同順。棄却された線はNone

    Raises:
        ValueError: scaleが1未満の場合
    """
    if scale < 1:
        raise ValueError(f"スケールは1以上である必要があります: {scale}")
    if len(contour_points) == 0:
        return []

    center, normal, n_bar, delta_r, pixels, valid = _line_geometry(
        contour_points.points,
        contour_points.normals,
        contour_points.fg_free_lens,
        contour_points.bg_free_lens,
        pose,
        intr,
        scale,
    )
    lines: List[Optional[CorrespondenceLine]] = [None] * len(contour_points)
    accepted = np.flatnonzero(valid)
    if len(accepted) == 0:
        return lines

    p_f = segment_posteriors(image, pixels[accepted], hist)
    distribution = distribution_from_posteriors(p_f, table)
    mean, variance = distribution_moments(distribution)

    for row, index in enumerate(accepted):
        lines[index] = CorrespondenceLine(
            center=center[index],
            normal=normal[index],
            n_bar=float(n_bar[index]),
            delta_r=float(delta_r[index]),
            scale=scale,
            contour_point=contour_points[index],
            segment_posteriors=np.stack([p_f[row], 1.0 - p_f[row]], axis=1),
            distribution=distribution[row],
            mean=float(mean[row]),
            variance=float(variance[row]),
        )
    return lines


def build_line(
    contour_point: ContourPoint,
    pose: PoseSE3,
    intr: CameraIntrinsics,
    image: np.ndarray,
    hist: ColorHistogramPair,
    scale: int,
    table: StepFunctionTable,
) -> Optional[CorrespondenceLine]:
    """1つの輪郭点から対応線を構築する（棄却時はNone）"""
    point_set = ContourPointSet(
        points=contour_point.point[None, :],
        normals=contour_point.normal[None, :],
        fg_free_lens=np.array([contour_point.fg_free_len]),
        bg_free_lens=np.array([contour_point.bg_free_len]),
    )
    return build_lines(point_set, pose, intr, image, hist, scale, table)[0]


def line_distribution(line: CorrespondenceLine, table: StepFunctionTable) -> np.ndarray:
    """対応線のセグメント事後確率から12値の輪郭距離分布を計算する"""
    return distribution_from_posteriors(line.segment_posteriors[:, 0][None, :], table)[0]


def update_histograms(
    hist: ColorHistogramPair,
    image: np.ndarray,
    lines: Sequence[CorrespondenceLine],
    learning_rate: float,
) -> ColorHistogramPair:
    """
    対応線に沿った画素で色ヒストグラムを更新する

    線中心から1画素離れた位置から、-n 方向へ20画素を前景、+n 方向へ20画素を背景として
    集計し、h ← (1 - α)·h + α·h_frame で混合する。未学習の場合は α = 1 とする。

    Args:
        hist: 現在のヒストグラム
        image: RGB画像（H, W, 3, uint8）
        lines: 対応線
        learning_rate: 学習率 α

    Returns:
        ColorHistogramPair: 更新後のヒストグラム

    Raises:
        ValueError: 学習率が範囲外、または対応線が空の場合
    """
    if not 0.0 <= learning_rate <= 1.0:
        raise ValueError(f"学習率は0以上1以下である必要があります: {learning_rate}")
    if len(lines) == 0:
        raise ValueError("ヒストグラム更新には1本以上の対応線が必要です")

    alpha = 1.0 if not hist.initialized else learning_rate
    centers = np.stack([line.center for line in lines])
    normals = np.stack([line.normal for line in lines])
    steps = np.arange(1, HISTOGRAM_SAMPLES_PER_SIDE + 1, dtype=np.float64)

    updated = []
    for direction, previous in ((-1.0, hist.foreground), (1.0, hist.background)):
        positions = centers[:, None, :] + direction * steps[None, :, None] * normals[:, None, :]
        pixels = np.floor(positions).reshape(-1, 2).astype(np.int64)
        height, width = image.shape[:2]
        inside = (
            (pixels[:, 0] >= 0)
            & (pixels[:, 0] < width)
            & (pixels[:, 1] >= 0)
            & (pixels[:, 1] < height)
        )
        pixels = pixels[inside]
        counts = np.bincount(
            color_bins(image[pixels[:, 1], pixels[:, 0]]), minlength=HISTOGRAM_BINS
        ).astype(np.float64)
        if counts.sum() == 0:
            updated.append(None)
            continue
        frame = counts + HISTOGRAM_FLOOR
        frame /= frame.sum()
        updated.append((1.0 - alpha) * previous + alpha * frame)

    foreground, background = updated
    if foreground is None or background is None:
        return ColorHistogramPair(
            hist.foreground if foreground is None else foreground,
            hist.background if background is None else background,
            initialized=hist.initialized,
        )
    return ColorHistogramPair(foreground, background, initialized=True)


def _scaled_distances(
    model_points: np.ndarray,
    centers: np.ndarray,
    normals: np.ndarray,
    n_bars: np.ndarray,
    delta_rs: np.ndarray,
    scales: np.ndarray,
    pose: PoseSE3,
    intr: CameraIntrinsics,
) -> Tuple[np.ndarray, np.ndarray]:
    camera_points = pose.transform_points(model_points)
    z = camera_points[:, 2]
    if np.any(z <= 0):
        raise ValueError("輪郭点がカメラの後方にあります")
    projected = np.stack(
        [
            camera_points[:, 0] / z * intr.fx + intr.px,
            camera_points[:, 1] / z * intr.fy + intr.py,
        ],
        axis=1,
    )
    along = ((projected - centers) * normals).sum(axis=1)
    return (along - delta_rs) * n_bars / scales, camera_points


def scaled_distance(
    line: CorrespondenceLine,
    theta: PoseVariation,
    pose: PoseSE3,
    intr: CameraIntrinsics,
) -> float:
    """
    変分 θ を適用した輪郭点のスケール空間距離 d_s を計算する

    Raises:
        ValueError: 変分後の点がカメラ後方にある場合
    """
    point = variate_point(theta, line.contour_point.point)
    distances, _ = _scaled_distances(
        point[None, :],
        line.center[None, :],
        line.normal[None, :],
        np.array([line.n_bar]),
        np.array([line.delta_r]),
        np.array([float(line.scale)]),
        pose,
        intr,
    )
    return float(distances[0])


def region_grad_hess_batch(
    lines: Sequence[CorrespondenceLine],
    pose: PoseSE3,
    intr: CameraIntrinsics,
    table: StepFunctionTable,
    mode: RegionMode,
    sigma_r: float,
    learning_rate: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    対応線ごとの勾配・ヘッセ行列をまとめて計算する

    Args:
        lines: 対応線
        pose: 現在の C_T_M
        intr: カラーカメラ内部パラメータ
        table: 平滑化段差関数（s_h）
        mode: 大域（正規分布近似）または局所（隣接2値）モード
        sigma_r: 領域モダリティの標準偏差（ピクセル）
        learning_rate: 局所モードの学習率 α_s

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: 勾配（N, 6）、ヘッセ行列（N, 6, 6）、
            窓外で低信頼とした線のフラグ（N,）

    Raises:
        ValueError: sigma_rが正でない場合
    """
    if sigma_r <= 0:
        raise ValueError(f"σ_rは正の値である必要があります: {sigma_r}")
    count = len(lines)
    if count == 0:
        return np.zeros((0, 6)), np.zeros((0, 6, 6)), np.zeros(0, dtype=bool)

    model_points = np.stack([line.contour_point.point for line in lines])
    n_bars = np.array([line.n_bar for line in lines])
    scales = np.array([float(line.scale) for line in lines])
    normals = np.stack([line.normal for line in lines])
    distributions = np.stack([line.distribution for line in lines])
    means = np.array([line.mean for line in lines])
    variances = np.array([line.variance for line in lines])

    distances, camera_points = _scaled_distances(
        model_points,
        np.stack([line.center for line in lines]),
        normals,
        n_bars,
        np.array([line.delta_r for line in lines]),
        scales,
        pose,
        intr,
    )

    x, y, z = camera_points[:, 0], camera_points[:, 1], camera_points[:, 2]
    nx, ny = normals[:, 0], normals[:, 1]
    d_distance_d_camera = (n_bars / scales / z**2)[:, None] * np.stack(
        [nx * intr.fx * z, ny * intr.fy * z, -nx * intr.fx * x - ny * intr.fy * y], axis=1
    )
    # ∂d/∂θ = ∂d/∂CX · R [-[X]x, I] = [X × a, a]（a = ∂d/∂CX · R）
    a = d_distance_d_camera @ pose.rotation
    jacobian = np.concatenate([np.cross(model_points, a), a], axis=1)

    low_confidence = np.zeros(count, dtype=bool)
    if mode == RegionMode.GLOBAL:
        d_log = -(distances - means) / variances
    else:
        position = distances - DISTRIBUTION_DISTANCES[0]
        low_confidence = (position < 0) | (position > len(DISTRIBUTION_DISTANCES) - 1)
        lower = np.clip(np.floor(position).astype(np.int64), 0, len(DISTRIBUTION_DISTANCES) - 2)
        rows = np.arange(count)
        p_lower = np.maximum(distributions[rows, lower], _LOCAL_PROBABILITY_FLOOR)
        p_upper = np.maximum(distributions[rows, lower + 1], _LOCAL_PROBABILITY_FLOOR)
        d_log = learning_rate / variances * np.log(p_upper / p_lower)

    weight = table.slope * scales**2 / (sigma_r**2 * n_bars**2)
    gradients = (weight * d_log)[:, None] * jacobian
    curvature = np.where(low_confidence, 0.0, weight / variances)
    hessians = -curvature[:, None, None] * jacobian[:, :, None] * jacobian[:, None, :]
    return gradients, hessians, low_confidence


def region_grad_hess(
    line: CorrespondenceLine,
    pose: PoseSE3,
    intr: CameraIntrinsics,
    table: StepFunctionTable,
    mode: RegionMode,
    sigma_r: float,
    learning_rate: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    1本の対応線の勾配 g（6）とヘッセ行列 H（6x6）を計算する

    g, H は s_h·s² / (σ_r²·n̄²) でスケールされ、H は負の半正定値となる。
    """
    gradients, hessians, _ = region_grad_hess_batch(
        [line], pose, intr, table, mode, sigma_r, learning_rate
    )
    return gradients[0], hessians[0]
