"""三角形メッシュと描画結果の値オブジェクト"""

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

# 縮退三角形とみなす面積（平方メートル）
DEGENERATE_AREA = 1e-12


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """各三角形の面積を返す"""
    v0, v1, v2 = (vertices[triangles[:, i]] for i in range(3))
    return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)


class TriangleMesh:
    """モデル座標系（メートル）の三角形メッシュを表す値オブジェクト"""

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray) -> None:
        """
        TriangleMeshを作成する

        Args:
            vertices: 頂点座標（N, 3）
            triangles: 頂点インデックスの3つ組（M, 3）

        Raises:
            ValueError: メッシュが空、インデックスが範囲外、
                       または縮退三角形を含む場合
        """
        vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)

        if len(vertices) == 0 or len(triangles) == 0:
            raise ValueError("メッシュは空にできません")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise ValueError("三角形の頂点インデックスが範囲外です")
        if np.any(triangle_areas(vertices, triangles) <= DEGENERATE_AREA):
            raise ValueError("面積が0の縮退三角形が含まれています")

        vertices.flags.writeable = False
        triangles.flags.writeable = False
        self._vertices = vertices
        self._triangles = triangles

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    @property
    def triangles(self) -> np.ndarray:
        return self._triangles

    @property
    def triangle_normals(self) -> np.ndarray:
        """反時計回りを外向きとした三角形ごとの単位法線（M, 3）"""
        v0, v1, v2 = (self._vertices[self._triangles[:, i]] for i in range(3))
        normals = np.cross(v1 - v0, v2 - v0)
        return normals / np.linalg.norm(normals, axis=1, keepdims=True)

    @property
    def bounding_radius(self) -> float:
        """モデル原点から最も遠い頂点までの距離"""
        return float(np.max(np.linalg.norm(self._vertices, axis=1)))

    @property
    def diameter(self) -> float:
        """頂点間の最大距離（凸包頂点上で計算する）"""
        candidates = self._vertices
        if len(candidates) > 4:
            try:
                candidates = candidates[ConvexHull(candidates).vertices]
            except QhullError:
                # 平面メッシュなどは全頂点で計算
                pass
        if len(candidates) < 2:
            return 0.0
        return float(pdist(candidates).max())

    def __len__(self) -> int:
        return len(self._triangles)

    def __repr__(self) -> str:
        """開発者向け文字列表現"""
        return f"TriangleMesh(vertices={len(self._vertices)}, triangles={len(self._triangles)})"


class DepthImage:
    """メートル単位の奥行き画像（0 = 計測なし）を表す値オブジェクト"""

    def __init__(self, values: np.ndarray) -> None:
        """
        DepthImageを作成する

        Args:
            values: 行優先の奥行き値（H, W）

        Raises:
            ValueError: 2次元でない、または負の値を含む場合
        """
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"奥行き画像は2次元である必要があります: shape={values.shape}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("奥行き値は0以上の有限値である必要があります")
        values.flags.writeable = False
        self._values = values

    @classmethod
    def empty(cls, width: int, height: int) -> "DepthImage":
        return cls(np.zeros((height, width)))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def width(self) -> int:
        return self._values.shape[1]

    @property
    def height(self) -> int:
        return self._values.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return self._values > 0

    def __eq__(self, other: object) -> bool:
        """等価性判定"""
        if not isinstance(other, DepthImage):
            return False
        return np.array_equal(self._values, other._values)

    def __hash__(self) -> int:
        return hash(self._values.tobytes())

    def __repr__(self) -> str:
        return f"DepthImage(width={self.width}, height={self.height})"


class SilhouetteMask:
    """前景/背景の二値シルエットを表す値オブジェクト"""

    def __init__(self, values: np.ndarray) -> None:
        """
        Raises:
            ValueError: 2次元でない場合
        """
        values = np.array(values, dtype=bool)
        if values.ndim != 2:
            raise ValueError(f"シルエットは2次元である必要があります: shape={values.shape}")
        values.flags.writeable = False
        self._values = values

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def width(self) -> int:
        return self._values.shape[1]

    @property
    def height(self) -> int:
        return self._values.shape[0]

    @property
    def area(self) -> int:
        return int(self._values.sum())

    def contour(self) -> np.ndarray:
        """4近傍に背景（画像外を含む）を持つ前景ピクセルのマスク"""
        padded = np.pad(self._values, 1, constant_values=False)
        interior = (
            padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
        )
        return self._values & ~interior

    def __eq__(self, other: object) -> bool:
        """等価性判定"""
        if not isinstance(other, SilhouetteMask):
            return False
        return np.array_equal(self._values, other._values)

    def __hash__(self) -> int:
        return hash(self._values.tobytes())

    def __repr__(self) -> str:
        return f"SilhouetteMask(width={self.width}, height={self.height}, area={self.area})"
