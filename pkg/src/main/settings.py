"""アプリケーション設定 - INI形式の実行設定と環境変数"""

import configparser
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any, Dict, Literal, Optional, Tuple

import numpy as np
from dotenv import load_dotenv
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)
from scipy.spatial.transform import Rotation

from src.domain.depth_modality import OcclusionConfig
from src.domain.geometry import CameraIntrinsics, PoseSE3
from src.domain.mesh import TriangleMesh
from src.domain.optimization import (
    SCHEDULE_PRESETS,
    IterationSchedule,
    Regularization,
    TrackerState,
    TrackingMode,
    symmetry_constraint,
)
from src.domain.viewpoint_model import ModelGenerationConfig, SparseViewpointModel
from src.usecase.evaluate_trajectory_usecase import DEFAULT_ADD_THRESHOLD, METRICS
from src.usecase.generate_scene_usecase import OccluderConfig, SyntheticSceneConfig

SECTIONS = ("camera_color", "camera_depth", "tracker", "model", "io", "scene", "evaluation", "overlay")

PositiveList = Annotated[Tuple[PositiveFloat, ...], Field(min_length=1)]
PositiveIntList = Annotated[Tuple[PositiveInt, ...], Field(min_length=1)]
Vector3 = Annotated[Tuple[float, ...], Field(min_length=3, max_length=3)]
Matrix4 = Annotated[Tuple[float, ...], Field(min_length=16, max_length=16)]
Color = Annotated[Tuple[Annotated[int, Field(ge=0, le=255)], ...], Field(min_length=3, max_length=3)]


def _split(value: Any) -> Any:
    """カンマ区切りの文字列をタプルに分割する"""
    if isinstance(value, str):
        return tuple(item.strip() for item in value.split(",") if item.strip())
    return value


def _pose_from_values(values: Tuple[float, ...]) -> PoseSE3:
    return PoseSE3.from_matrix(np.asarray(values, dtype=np.float64).reshape(4, 4))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CameraSection(_Section):
    """カメラ内部パラメータ"""

    fx: PositiveFloat = Field(description="x方向焦点距離（ピクセル）")
    fy: PositiveFloat = Field(description="y方向焦点距離（ピクセル）")
    px: float = Field(description="主点x座標（ピクセル）")
    py: float = Field(description="主点y座標（ピクセル）")
    width: PositiveInt = Field(description="画像幅（ピクセル）")
    height: PositiveInt = Field(description="画像高さ（ピクセル）")

    @model_validator(mode="after")
    def _check_intrinsics(self) -> "CameraSection":
        self.intrinsics()
        return self

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.px, self.py, self.width, self.height)


class DepthCameraSection(CameraSection):
    """深度カメラ内部パラメータと外部パラメータ D_T_C"""

    extrinsics: Optional[Matrix4] = Field(default=None, description="D_T_C（4x4行優先16値）")

    @field_validator("extrinsics", mode="before")
    @classmethod
    def _split_values(cls, value: Any) -> Any:
        return _split(value)

    @field_validator("extrinsics")
    @classmethod
    def _check_extrinsics(cls, value: Optional[Tuple[float, ...]]) -> Optional[Tuple[float, ...]]:
        if value is not None:
            _pose_from_values(value)
        return value


class TrackerSection(_Section):
    """トラッカー設定（省略したスケジュール値はプリセットから補完する）"""

    preset: Literal["ycb", "opt", "choi", "rbot", "refinement"] = "ycb"
    mode: Optional[Literal["tracking", "refinement"]] = None
    sigma_r: Optional[PositiveList] = None
    sigma_d: Optional[PositiveList] = None
    scales: Optional[PositiveIntList] = None
    radii: Optional[PositiveList] = None
    n_corr_iterations: Optional[PositiveInt] = None
    n_update_iterations: Optional[PositiveInt] = None
    stride: Optional[PositiveFloat] = Field(default=None, description="対応点探索のストライド（mm）")
    lambda_r: Optional[Annotated[Tuple[NonNegativeFloat, ...], Field(min_length=1)]] = None
    lambda_t: Optional[NonNegativeFloat] = None
    symmetry_lambda_r: Optional[NonNegativeFloat] = None
    symmetry_axis: Optional[Annotated[int, Field(ge=0, le=2)]] = None
    slope: PositiveFloat = Field(default=0.5, description="段差関数の傾き s_h")
    amplitude: float = Field(default=0.43, ge=0.0, le=0.5, description="段差関数の振幅 α_h")
    local_learning_rate: PositiveFloat = Field(default=1.3, description="局所最適化の学習率 α_s")
    histogram_learning_rate: float = Field(default=0.2, ge=0.0, le=1.0)
    use_region: bool = True
    use_depth: Optional[bool] = None
    use_occlusion_handling: bool = True
    use_regularization: bool = True
    occlusion_threshold_mm: PositiveFloat = 30.0
    occlusion_region_mm: PositiveFloat = 20.0
    occlusion_samples: PositiveInt = 25

    @field_validator("sigma_r", "sigma_d", "scales", "radii", "lambda_r", mode="before")
    @classmethod
    def _split_lists(cls, value: Any) -> Any:
        return _split(value)

    @field_validator("lambda_r")
    @classmethod
    def _check_lambda_r(cls, value: Optional[Tuple[float, ...]]) -> Optional[Tuple[float, ...]]:
        if value is not None and len(value) not in (1, 3):
            raise ValueError("1個または3軸分の値が必要です")
        return value

    @field_validator("occlusion_samples")
    @classmethod
    def _check_samples(cls, value: int) -> int:
        OcclusionConfig(sample_count=value)
        return value

    def resolved(self) -> "TrackerSection":
        """
        プリセットで未指定の値を補完した設定を返す

        Raises:
            ValueError: 両モダリティが無効な場合
        """
        preset = SCHEDULE_PRESETS[self.preset]
        updates: Dict[str, Any] = {
            "sigma_r": self.sigma_r or preset.sigma_r,
            "sigma_d": self.sigma_d or preset.sigma_d,
            "scales": self.scales or preset.scales,
            "radii": self.radii or preset.radii,
            "n_corr_iterations": self.n_corr_iterations or preset.n_corr_iterations,
            "n_update_iterations": self.n_update_iterations or preset.n_update_iterations,
            "stride": self.stride or preset.stride,
            "lambda_r": self.lambda_r or Regularization().lambda_r,
            "lambda_t": self.lambda_t
            if self.lambda_t is not None
            else (100.0 if self.preset == "refinement" else Regularization().lambda_t),
            "use_depth": self.use_depth if self.use_depth is not None else self.preset != "rbot",
            "mode": self.mode or ("refinement" if self.preset == "refinement" else "tracking"),
        }
        if len(updates["lambda_r"]) == 1:
            updates["lambda_r"] = tuple(updates["lambda_r"]) * 3
        resolved = self.model_copy(update=updates)
        if not (resolved.use_region or resolved.use_depth):
            raise ValueError("[tracker] use_region, use_depth: 少なくとも一方を有効にしてください")
        return resolved

    def schedule(self) -> IterationSchedule:
        section = self.resolved()
        return IterationSchedule(
            sigma_r=tuple(section.sigma_r),
            sigma_d=tuple(section.sigma_d),
            scales=tuple(section.scales),
            radii=tuple(section.radii),
            n_corr_iterations=section.n_corr_iterations,
            n_update_iterations=section.n_update_iterations,
            stride=section.stride,
        )

    def regularization(self) -> Regularization:
        section = self.resolved()
        base = Regularization(lambda_r=tuple(section.lambda_r), lambda_t=section.lambda_t)
        if section.symmetry_lambda_r is None:
            return base
        return symmetry_constraint(section.symmetry_lambda_r, section.symmetry_axis, base)

    def occlusion(self) -> OcclusionConfig:
        return OcclusionConfig(
            region_extent=self.occlusion_region_mm / 1000.0,
            sample_count=self.occlusion_samples,
            threshold=self.occlusion_threshold_mm / 1000.0,
        )

    def tracker_state(
        self,
        pose: PoseSE3,
        model: SparseViewpointModel,
        extrinsics: Optional[PoseSE3] = None,
    ) -> TrackerState:
        """設定からトラッキング状態を作成する"""
        section = self.resolved()
        return TrackerState(
            pose=pose,
            model=model,
            schedule=section.schedule(),
            extrinsics=extrinsics or PoseSE3.identity(),
            regularization=section.regularization(),
            mode=TrackingMode(section.mode),
            slope=section.slope,
            amplitude=section.amplitude,
            local_learning_rate=section.local_learning_rate,
            histogram_learning_rate=section.histogram_learning_rate,
            occlusion=section.occlusion(),
            use_region=section.use_region,
            use_depth=bool(section.use_depth),
            use_occlusion_handling=section.use_occlusion_handling,
            use_regularization=section.use_regularization,
        )


class ModelSection(_Section):
    """疎視点モデルの生成設定"""

    subdivision_level: NonNegativeInt = 4
    sphere_radius: PositiveFloat = 0.8
    n_contour_points: PositiveInt = 200
    n_surface_points: PositiveInt = 200
    render_width: PositiveInt = 640
    render_height: PositiveInt = 480
    seed: NonNegativeInt = 0
    max_free_length: PositiveFloat = 0.1
    occlusion_region: PositiveFloat = 0.02

    def generation_config(self) -> ModelGenerationConfig:
        return ModelGenerationConfig(**self.model_dump())


class IoSection(_Section):
    """入出力パス"""

    mesh: Optional[str] = None
    model: Optional[str] = None
    frames: Optional[str] = None
    output: Optional[str] = None
    ground_truth: Optional[str] = None
    estimated: Optional[str] = Field(default=None, description="評価する推定軌跡（evaluate）")
    trajectory: Optional[str] = Field(default=None, description="描画する軌跡（overlay）")
    initial_trajectory: Optional[str] = Field(
        default=None, description="フレームごとの初期姿勢を持つ軌跡（refine）"
    )
    errors_csv: Optional[str] = Field(default=None, description="フレームごとの誤差CSV（evaluate）")
    initial_pose: Optional[Matrix4] = Field(default=None, description="初期 C_T_M（4x4行優先16値）")

    @field_validator("initial_pose", mode="before")
    @classmethod
    def _split_values(cls, value: Any) -> Any:
        return _split(value)

    @field_validator("initial_pose")
    @classmethod
    def _check_pose(cls, value: Optional[Tuple[float, ...]]) -> Optional[Tuple[float, ...]]:
        if value is not None:
            _pose_from_values(value)
        return value

    def path(self, key: str) -> Path:
        """
        設定されたパスを返す

        Raises:
            ValueError: 未設定の場合
        """
        value = getattr(self, key)
        if not value:
            raise ValueError(f"[io] {key}: 値が設定されていません")
        return Path(value)

    def pose(self) -> Optional[PoseSE3]:
        return _pose_from_values(self.initial_pose) if self.initial_pose is not None else None


class EvaluationSection(_Section):
    """軌跡評価の設定"""

    metric: str = "all"
    threshold: PositiveFloat = Field(default=DEFAULT_ADD_THRESHOLD, description="ADD閾値（m）")
    kdtree: bool = False

    @field_validator("metric")
    @classmethod
    def _check_metric(cls, value: str) -> str:
        if value not in METRICS:
            raise ValueError(f"未知の指標です: {value}（{', '.join(METRICS)}）")
        return value


class OverlaySection(_Section):
    """オーバーレイ描画の設定"""

    normals: bool = False


class SceneSection(_Section):
    """合成シーンの設定"""

    n_frames: PositiveInt = 300
    seed: NonNegativeInt = 0
    distance: PositiveFloat = Field(default=0.6, description="初期姿勢のカメラからの距離（m）")
    initial_rotation_deg: Vector3 = (20.0, -30.0, 0.0)
    translation_step: NonNegativeFloat = 0.005
    rotation_step_deg: NonNegativeFloat = 3.0
    mean_reversion: float = Field(default=0.2, ge=0.0, le=1.0)
    foreground_color: Color = (200, 60, 40)
    background_color: Color = (40, 60, 200)
    color_noise: NonNegativeFloat = 8.0
    depth_noise_mm: NonNegativeFloat = 2.0
    textured_background: bool = False
    texture_block: PositiveInt = 16
    background_depth: Optional[PositiveFloat] = None
    occluder_center: Optional[Vector3] = None
    occluder_width: PositiveFloat = 0.1
    occluder_height: PositiveFloat = 0.1
    occluder_start: NonNegativeInt = 0
    occluder_end: Optional[NonNegativeInt] = None

    @field_validator(
        "initial_rotation_deg",
        "foreground_color",
        "background_color",
        "occluder_center",
        mode="before",
    )
    @classmethod
    def _split_lists(cls, value: Any) -> Any:
        return _split(value)

    def initial_pose(self) -> PoseSE3:
        """xyz外因性オイラー角と距離から初期 C_T_M を作る"""
        rotation = Rotation.from_euler("xyz", self.initial_rotation_deg, degrees=True).as_matrix()
        return PoseSE3(rotation, (0.0, 0.0, self.distance))

    def scene_config(self, mesh: TriangleMesh, intrinsics: CameraIntrinsics) -> SyntheticSceneConfig:
        occluder = None
        if self.occluder_center is not None:
            occluder = OccluderConfig(
                center=tuple(self.occluder_center),
                width=self.occluder_width,
                height=self.occluder_height,
                start_frame=self.occluder_start,
                end_frame=self.occluder_end,
            )
        return SyntheticSceneConfig(
            mesh=mesh,
            intrinsics=intrinsics,
            initial_pose=self.initial_pose(),
            n_frames=self.n_frames,
            seed=self.seed,
            translation_step=self.translation_step,
            rotation_step_deg=self.rotation_step_deg,
            mean_reversion=self.mean_reversion,
            foreground_color=tuple(self.foreground_color),
            background_color=tuple(self.background_color),
            color_noise=self.color_noise,
            depth_noise_mm=self.depth_noise_mm,
            textured_background=self.textured_background,
            texture_block=self.texture_block,
            background_depth=self.background_depth,
            occluder=occluder,
        )


class RunConfig(BaseModel):
    """実行設定"""

    model_config = ConfigDict(frozen=True)

    camera_color: Optional[CameraSection] = None
    camera_depth: Optional[DepthCameraSection] = None
    tracker: TrackerSection = Field(default_factory=TrackerSection)
    model: ModelSection = Field(default_factory=ModelSection)
    io: IoSection = Field(default_factory=IoSection)
    scene: SceneSection = Field(default_factory=SceneSection)
    evaluation: EvaluationSection = Field(default_factory=EvaluationSection)
    overlay: OverlaySection = Field(default_factory=OverlaySection)

    def color_intrinsics(self) -> CameraIntrinsics:
        """
        Raises:
            ValueError: [camera_color] がない場合
        """
        if self.camera_color is None:
            raise ValueError("[camera_color] セクションが必要です")
        return self.camera_color.intrinsics()

    def depth_intrinsics(self) -> CameraIntrinsics:
        """深度カメラ内部パラメータ（未指定ならカラーと同じ）"""
        if self.camera_depth is None:
            return self.color_intrinsics()
        return self.camera_depth.intrinsics()

    def extrinsics(self) -> PoseSE3:
        """D_T_C（未指定なら単位変換）"""
        if self.camera_depth is None or self.camera_depth.extrinsics is None:
            return PoseSE3.identity()
        return _pose_from_values(self.camera_depth.extrinsics)

    def with_seed(self, seed: int) -> "RunConfig":
        """モデル生成とシーン生成のシードを上書きした設定を返す"""
        return self.model_copy(
            update={
                "model": self.model.model_copy(update={"seed": seed}),
                "scene": self.scene.model_copy(update={"seed": seed}),
            }
        )


_SECTION_MODELS = {
    "camera_color": CameraSection,
    "camera_depth": DepthCameraSection,
    "tracker": TrackerSection,
    "model": ModelSection,
    "io": IoSection,
    "scene": SceneSection,
    "evaluation": EvaluationSection,
    "overlay": OverlaySection,
}


def _format_validation_error(section: str, error: ValidationError) -> str:
    messages = []
    for detail in error.errors():
        key = detail["loc"][0] if detail["loc"] else ""
        messages.append(f"[{section}] {key}: {detail['msg']}" if key else f"[{section}] {detail['msg']}")
    return "; ".join(messages)


def parse_config(text: str) -> RunConfig:
    """
    INI形式のテキストから実行設定を作成する

    Args:
        text: `[camera_color] [camera_depth] [tracker] [model] [io] [scene] [evaluation] [overlay]`
            セクションを持つINIテキスト

    Returns:
        RunConfig: 既定値とプリセットを補完した設定

    Raises:
        ValueError: 構文エラー、未知のセクション・キー、不正な値の場合（[section] key を含む）
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ValueError(f"設定ファイルを解析できません: {e}")

    unknown = [name for name in parser.sections() if name not in _SECTION_MODELS]
    if unknown:
        raise ValueError(f"未知のセクションです: {', '.join(f'[{name}]' for name in unknown)}")

    sections: Dict[str, Any] = {}
    for name, model_class in _SECTION_MODELS.items():
        if not parser.has_section(name):
            continue
        try:
            sections[name] = model_class(**dict(parser[name]))
        except ValidationError as e:
            raise ValueError(_format_validation_error(name, e))

    if "tracker" in sections:
        sections["tracker"] = sections["tracker"].resolved()
    else:
        sections["tracker"] = TrackerSection().resolved()
    return RunConfig(**sections)


def load_run_config(file_path: Optional[Path]) -> RunConfig:
    """
    設定ファイルを読み込む（Noneなら既定値のみ）

    Raises:
        FileNotFoundError: ファイルが存在しない場合
        ValueError: 設定が不正な場合
    """
    if file_path is None:
        return parse_config("")
    path = Path(file_path)
    if not path.exists():
        raise FileNotFoundError(f"設定ファイルが見つかりません: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(item) for item in value)
    return str(value)


def resolved_config_text(config: RunConfig) -> str:
    """設定を再読込可能なINIテキストに変換する（run_manifest用）"""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in SECTIONS:
        section = getattr(config, name)
        if section is None:
            continue
        parser.add_section(name)
        for key, value in section.model_dump().items():
            if value is not None:
                parser.set(name, key, _format_value(value))
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


@dataclass
class EnvironmentConfig:
    """環境変数から読む実行環境設定"""

    threads: int = 1
    log_level: str = "INFO"


def load_environment() -> EnvironmentConfig:
    """
    環境変数（.env を含む）から実行環境設定を読み込む

    Returns:
        EnvironmentConfig: ICG_THREADS（既定1）と LOG_LEVEL（既定INFO）

    Raises:
        ValueError: ICG_THREADS が正の整数でない場合
    """
    load_dotenv()
    raw_threads = os.getenv("ICG_THREADS", "1")
    try:
        threads = int(raw_threads)
    except ValueError:
        raise ValueError(f"ICG_THREADSは整数である必要があります: {raw_threads}")
    if threads < 1:
        raise ValueError(f"ICG_THREADSは1以上である必要があります: {threads}")
    return EnvironmentConfig(threads=threads, log_level=os.getenv("LOG_LEVEL", "INFO").upper())
