"""疎視点モデル - 視点ごとの輪郭点・表面点と測地グリッド"""

from dataclasses import dataclass, field
from typing import Iterator, Tuple

import numpy as np

from src.domain.geometry import PoseSE3, Vec3, as_vec3

_GOLDEN_RATIO = (1.0 + np.sqrt(5.0)) / 2.0

_ICOSAHEDRON_VERTICES = [
    [-1.0, _GOLDEN_RATIO, 0.0],
    [1.0, _GOLDEN_RATIO, 0.0],
    [-1.0, -_GOLDEN_RATIO, 0.0],
    [1.0, -_GOLDEN_RATIO, 0.0],
    [0.0, -1.0, _GOLDEN_RATIO],
    [0.0, 1.0, _GOLDEN_RATIO],
    [0.0, -1.0, -_GOLDEN_RATIO],
    [0.0, 1.0, -_GOLDEN_RATIO],
    [_GOLDEN_RATIO, 0.0, -1.0],
    [_GOLDEN_RATIO, 0.0, 1.0],
    [-_GOLDEN_RATIO, 0.0, -1.0],
    [-_GOLDEN_RATIO, 0.0, 1.0],
]

_ICOSAHEDRON_FACES = [
    [0, 11, 5],
    [0, 5, 1],
    [0, 1, 7],
    [0, 7, 10],
    [0, 10, 11],
    [1, 5, 9],
    [5, 11, 4],
    [11, 10, 2],
    [10, 7, 6],
    [7, 1, 8],
    [3, 9, 4],
    [3, 4, 2],
    [3, 2, 6],
    [3, 6, 8],
    [3, 8, 9],
    [4, 9, 5],
    [2, 4, 11],
    [6, 2, 10],
    [8, 6, 7],
    [9, 8, 1],
]


def geodesic_grid(subdivision_level: int) -> np.ndarray:
    """
    正二十面体を分割した測地グリッドの頂点を返す

    Args:
        subdivision_level: 分割回数（0以上）

    Returns:
        np.ndarray: 単位球上の頂点（10·4^level + 2, 3）。順序は決定的

    Raises:
        ValueError: 分割回数が負の場合
    """
    if subdivision_level < 0:
        raise ValueError("分割回数は0以上である必要があります")

    vertices = [np.array(v) / np.linalg.norm(v) for v in _ICOSAHEDRON_VERTICES]
    faces = [tuple(f) for f in _ICOSAHEDRON_FACES]

    for _ in range(subdivision_level):
        # 辺の中点を共有するためのキャッシュ
        midpoint_cache: dict = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoint_cache:
                m = vertices[a] + vertices[b]
                vertices.append(m / np.linalg.norm(m))
                midpoint_cache[key] = len(vertices) - 1
            return midpoint_cache[key]

        subdivided = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            subdivided.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = subdivided

    return np.array(vertices)


@dataclass(frozen=True)
class ContourPoint:
    """輪郭点: モデル座標の点と法線、法線方向の前景/背景の連続長"""

    point: Vec3
    normal: Vec3
    fg_free_len: float
    bg_free_len: float


@dataclass(frozen=True)
class SurfacePoint:
    """表面点: モデル座標の点と法線、遮蔽判定用の奥行きオフセット"""

    point: Vec3
    normal: Vec3
    occlusion_offset: float


@dataclass(frozen=True)
class ContourPointSet:
    """輪郭点の配列表現（points/normals: (N, 3), 連続長: (N,)）"""

    points: np.ndarray
    normals: np.ndarray
    fg_free_lens: np.ndarray
    bg_free_lens: np.ndarray

    @classmethod
    def empty(cls) -> "ContourPointSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros(0))

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, index: int) -> ContourPoint:
        return ContourPoint(
            point=as_vec3(self.points[index]),
            normal=as_vec3(self.normals[index]),
            fg_free_len=float(self.fg_free_lens[index]),
            bg_free_len=float(self.bg_free_lens[index]),
        )

    def __iter__(self) -> Iterator[ContourPoint]:
        return (self[i] for i in range(len(self)))


@dataclass(frozen=True)
class SurfacePointSet:
    """表面点の配列表現（points/normals: (N, 3), オフセット: (N,)）"""

    points: np.ndarray
    normals: np.ndarray
    occlusion_offsets: np.ndarray

    @classmethod
    def empty(cls) -> "SurfacePointSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, index: int) -> SurfacePoint:
        return SurfacePoint(
            point=as_vec3(self.points[index]),
            normal=as_vec3(self.normals[index]),
            occlusion_offset=float(self.occlusion_offsets[index]),
        )

    def __iter__(self) -> Iterator[SurfacePoint]:
        return (self[i] for i in range(len(self)))


@dataclass(frozen=True)
class Viewpoint:
    """1視点分のデータ（orientation はカメラからモデル中心への単位方向）"""

    orientation: Vec3
    contour_points: ContourPointSet
    surface_points: SurfacePointSet

    @property
    def is_empty(self) -> bool:
        return len(self.contour_points) == 0 or len(self.surface_points) == 0


@dataclass(frozen=True)
class ModelGenerationConfig:
    """疎視点モデルの生成設定"""

    subdivision_level: int = 4
    sphere_radius: float = 0.8
    n_contour_points: int = 200
    n_surface_points: int = 200
    render_width: int = 640
    render_height: int = 480
    seed: int = 0
    max_free_length: float = 0.1
    occlusion_region: float = 0.02

    def __post_init__(self) -> None:
        if self.subdivision_level < 0:
            raise ValueError("subdivision_levelは0以上である必要があります")
        if self.sphere_radius <= 0:
            raise ValueError("sphere_radiusは正の値である必要があります")
        if self.n_contour_points <= 0 or self.n_surface_points <= 0:
            raise ValueError("視点あたりの点数は正の値である必要があります")
        if self.render_width <= 0 or self.render_height <= 0:
            raise ValueError("描画解像度は正の値である必要があります")
        if self.max_free_length <= 0 or self.occlusion_region <= 0:
            raise ValueError("連続長の上限と遮蔽領域は正の値である必要があります")


@dataclass(frozen=True)
class SparseViewpointModel:
    """測地グリッド上の視点データの集合"""

    views: Tuple[Viewpoint, ...]
    config: ModelGenerationConfig = field(default_factory=ModelGenerationConfig)

    def __post_init__(self) -> None:
        if not self.views:
            raise ValueError("疎視点モデルには1つ以上の視点が必要です")

    @property
    def orientations(self) -> np.ndarray:
        """全視点の向き（V, 3）"""
        return np.stack([view.orientation for view in self.views])

    def __len__(self) -> int:
        return len(self.views)


def view_direction(pose_cam_to_model: PoseSE3) -> Vec3:
    """
    C_T_M から、モデル座標系でのカメラ→モデル中心方向を求める

    Raises:
        ValueError: カメラがモデル中心と一致する場合
    """
    # モデル座標でのカメラ位置は -Rᵀt、中心は原点
    direction = pose_cam_to_model.rotation.T @ pose_cam_to_model.translation
    norm = np.linalg.norm(direction)
    if norm == 0:
        raise ValueError("カメラがモデル中心と一致しています")
    return direction / norm


def closest_view_index(model: SparseViewpointModel, pose_cam_to_model: PoseSE3) -> int:
    """向きの内積が最大の視点番号を返す（同値は小さい番号を優先）"""
    scores = model.orientations @ view_direction(pose_cam_to_model)
    return int(np.argmax(scores))


def closest_view(model: SparseViewpointModel, pose_cam_to_model: PoseSE3) -> Viewpoint:
    """
    現在の姿勢に最も近い視点を返す

    Args:
        model: 疎視点モデル
        pose_cam_to_model: C_T_M

    Returns:
        Viewpoint: 向きベクトルとの内積が最大の視点
    """
    return model.views[closest_view_index(model, pose_cam_to_model)]
