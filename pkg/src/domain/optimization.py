"""正則化ニュートン法 - 勾配・ヘッセ行列の集約と反復スケジュール"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from src.domain.depth_modality import OcclusionConfig
from src.domain.geometry import PoseSE3, PoseVariation
from src.domain.region_modality import ColorHistogramPair
from src.domain.viewpoint_model import SparseViewpointModel

# 正則化を無効にしたときも連立方程式を定義するための値
REGULARIZATION_JITTER = 1e-9


def assemble(contributions: Iterable[Tuple[np.ndarray, np.ndarray]]) -> Tuple[np.ndarray, np.ndarray]:
    """
    各対応の勾配とヘッセ行列を与えられた順に加算する

    Args:
        contributions: (g: 6, H: 6x6) の列

    Returns:
        Tuple[np.ndarray, np.ndarray]: 合計の勾配とヘッセ行列（空なら0）
    """
    gradient = np.zeros(6)
    hessian = np.zeros((6, 6))
    for g, h in contributions:
        gradient = gradient + g
        hessian = hessian + h
    return gradient, hessian


def newton_step(
    gradient: np.ndarray,
    hessian: np.ndarray,
    lambda_r: Union[float, np.ndarray],
    lambda_t: float,
) -> Optional[PoseVariation]:
    """
    Tikhonov正則化付きニュートン法の1ステップ θ = (-H + diag(λ_r, λ_t))⁻¹ g を解く

    Args:
        gradient: 勾配（6）
        hessian: ヘッセ行列（6x6、負の半正定値）
        lambda_r: 回転の正則化（スカラーまたは軸ごとの3要素）
        lambda_t: 並進の正則化

    Returns:
        Optional[PoseVariation]: 変分。非有限値などで解けない場合はNone
    """
    gradient = np.asarray(gradient, dtype=np.float64)
    hessian = np.asarray(hessian, dtype=np.float64)
    rotation_weights = np.broadcast_to(np.asarray(lambda_r, dtype=np.float64), 3)
    diagonal = np.concatenate([rotation_weights, np.full(3, float(lambda_t))])
    system = -hessian + np.diag(diagonal)
    if not (np.all(np.isfinite(system)) and np.all(np.isfinite(gradient))):
        return None
    try:
        theta = cho_solve(cho_factor(system), gradient)
    except LinAlgError:
        return None
    if not np.all(np.isfinite(theta)):
        return None
    return PoseVariation.from_vector(theta)


@dataclass(frozen=True)
class ScheduleEntry:
    """1回の対応付け反復で使うパラメータ（σ_d, r_t はミリメートル）"""

    sigma_r: float
    sigma_d: float
    scale: int
    radius: float


@dataclass(frozen=True)
class IterationSchedule:
    """
    対応付け反復ごとのパラメータスケジュール

    Attributes:
        sigma_r: 領域モダリティの標準偏差（ピクセル）
        sigma_d: 深度モダリティの標準偏差（ミリメートル）
        scales: 対応線のスケール（ピクセル/セグメント）
        radii: 対応点の閾値 r_t（ミリメートル）
        n_corr_iterations: 対応付け反復回数
        n_update_iterations: 対応付け1回あたりの更新回数
        stride: 対応点探索のストライド（ミリメートル）
    """

    sigma_r: Tuple[float, ...]
    sigma_d: Tuple[float, ...]
    scales: Tuple[int, ...]
    radii: Tuple[float, ...]
    n_corr_iterations: int = 4
    n_update_iterations: int = 2
    stride: float = 5.0

    def __post_init__(self) -> None:
        for name in ("sigma_r", "sigma_d", "scales", "radii"):
            values = getattr(self, name)
            if len(values) == 0:
                raise ValueError(f"{name}は1つ以上の値が必要です")
            if any(v <= 0 for v in values):
                raise ValueError(f"{name}は正の値である必要があります: {values}")
        if any(int(s) != s for s in self.scales):
            raise ValueError(f"scalesは整数である必要があります: {self.scales}")
        if self.n_corr_iterations < 1 or self.n_update_iterations < 1:
            raise ValueError("反復回数は1以上である必要があります")
        if self.stride <= 0:
            raise ValueError("strideは正の値である必要があります")

    def entry(self, iteration: int) -> ScheduleEntry:
        """反復番号のパラメータを返す（指定数を超えた反復は最後の値を使う）"""

        def pick(values: tuple):
            return values[min(iteration, len(values) - 1)]

        return ScheduleEntry(
            sigma_r=float(pick(self.sigma_r)),
            sigma_d=float(pick(self.sigma_d)),
            scale=int(pick(self.scales)),
            radius=float(pick(self.radii)),
        )

    @classmethod
    def preset(cls, name: str) -> "IterationSchedule":
        """
        名前付きプリセットを返す

        Raises:
            ValueError: 未知のプリセット名の場合
        """
        if name not in SCHEDULE_PRESETS:
            raise ValueError(
                f"未知のプリセットです: {name}（{', '.join(sorted(SCHEDULE_PRESETS))}）"
            )
        return SCHEDULE_PRESETS[name]


_YCB = IterationSchedule(
    sigma_r=(25.0, 15.0, 10.0),
    sigma_d=(50.0, 30.0, 20.0),
    scales=(7, 4, 2),
    radii=(70.0, 50.0, 40.0),
)

SCHEDULE_PRESETS = {
    "ycb": _YCB,
    "opt": IterationSchedule(
        sigma_r=(15.0, 5.0, 1.5),
        sigma_d=(35.0, 35.0, 25.0),
        scales=(6, 4, 1),
        radii=(50.0, 20.0, 10.0),
    ),
    "choi": IterationSchedule(
        sigma_r=(5.0,),
        sigma_d=(10.0, 1.0),
        scales=(2, 1),
        radii=(10.0,),
    ),
    "rbot": replace(_YCB, sigma_r=(15.0, 5.0, 3.5, 1.5)),
    "refinement": replace(
        _YCB,
        sigma_d=(100.0, 50.0, 20.0),
        radii=(300.0, 250.0, 100.0),
        n_corr_iterations=7,
        stride=10.0,
    ),
}


@dataclass(frozen=True)
class Regularization:
    """Tikhonov正則化パラメータ（λ_r は軸ごと）"""

    lambda_r: Tuple[float, float, float] = (1000.0, 1000.0, 1000.0)
    lambda_t: float = 30000.0

    def __post_init__(self) -> None:
        if len(self.lambda_r) != 3:
            raise ValueError("λ_rは3軸分の値が必要です")
        if any(v < 0 for v in self.lambda_r) or self.lambda_t < 0:
            raise ValueError("正則化パラメータは0以上である必要があります")

    @property
    def rotation(self) -> np.ndarray:
        return np.array(self.lambda_r, dtype=np.float64)


def symmetry_constraint(
    lambda_r_axis: float,
    axis: Optional[int] = None,
    base: Optional[Regularization] = None,
) -> Regularization:
    """
    回転対称な物体向けに回転の正則化を上書きする

    Args:
        lambda_r_axis: 新しい λ_r
        axis: 上書きするモデル座標軸（0, 1, 2）。Noneなら3軸すべて
        base: 元の正則化（省略時は既定値）

    Returns:
        Regularization: 上書き後の正則化

    Raises:
        ValueError: λが負、または軸番号が不正な場合
    """
    if lambda_r_axis < 0:
        raise ValueError(f"λ_rは0以上である必要があります: {lambda_r_axis}")
    base = base or Regularization()
    if axis is None:
        return replace(base, lambda_r=(float(lambda_r_axis),) * 3)
    if axis not in (0, 1, 2):
        raise ValueError(f"軸番号は0, 1, 2のいずれかです: {axis}")
    values = list(base.lambda_r)
    values[axis] = float(lambda_r_axis)
    return replace(base, lambda_r=tuple(values))


class TrackingMode(str, Enum):
    """トラッカーの動作モード"""

    TRACKING = "tracking"
    REFINEMENT = "refinement"


@dataclass
class TrackerState:
    """1物体分のトラッキング状態（1つのタスクが所有する）"""

    pose: PoseSE3
    model: SparseViewpointModel
    schedule: IterationSchedule = field(default_factory=lambda: SCHEDULE_PRESETS["ycb"])
    extrinsics: PoseSE3 = field(default_factory=PoseSE3.identity)
    histograms: ColorHistogramPair = field(default_factory=ColorHistogramPair.uniform)
    regularization: Regularization = field(default_factory=Regularization)
    mode: TrackingMode = TrackingMode.TRACKING
    slope: float = 0.5
    amplitude: float = 0.43
    local_learning_rate: float = 1.3
    histogram_learning_rate: float = 0.2
    occlusion: OcclusionConfig = field(default_factory=OcclusionConfig)
    use_region: bool = True
    use_depth: bool = True
    use_occlusion_handling: bool = True
    use_regularization: bool = True
    tracking_lost: bool = False

    def __post_init__(self) -> None:
        if not (self.use_region or self.use_depth):
            raise ValueError("領域・深度モダリティの少なくとも一方を有効にする必要があります")
        if not 0.0 <= self.histogram_learning_rate <= 1.0:
            raise ValueError("ヒストグラムの学習率は0以上1以下である必要があります")
        if self.local_learning_rate <= 0:
            raise ValueError("α_sは正の値である必要があります")

    @property
    def depth_pose(self) -> PoseSE3:
        """深度カメラに対する姿勢 D_T_M = D_T_C ∘ C_T_M"""
        return self.extrinsics @ self.pose

    def effective_regularization(self) -> Tuple[np.ndarray, float]:
        """正則化の有効・無効を反映した (λ_r, λ_t)"""
        if not self.use_regularization:
            return np.full(3, REGULARIZATION_JITTER), REGULARIZATION_JITTER
        return self.regularization.rotation, self.regularization.lambda_t
