"""幾何値オブジェクト - SE(3)姿勢・ピンホール投影・姿勢変分"""

from typing import Iterable

import numpy as np
from scipy.linalg import polar

# 3次元ベクトル（メートル、または方向ベクトルでは無次元）
Vec3 = np.ndarray

# 回転行列の直交性チェック用の許容誤差
_ORTHONORMAL_REPAIR_TOL = 1e-9
_ORTHONORMAL_REJECT_TOL = 1e-6

# Rodrigues式でテイラー展開に切り替える回転角
_SMALL_ANGLE = 1e-8


def as_vec3(value: Iterable[float]) -> Vec3:
    """
    任意の3要素シーケンスを読み取り専用のfloat64ベクトルに変換する

    Raises:
        ValueError: 要素数が3でない、または有限でない場合
    """
    vector = np.array(value, dtype=np.float64).reshape(-1)
    if vector.shape != (3,):
        raise ValueError(f"3次元ベクトルが必要です: shape={vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise ValueError("ベクトルに有限でない値が含まれています")
    vector.flags.writeable = False
    return vector


def skew(vector: Iterable[float]) -> np.ndarray:
    """ベクトルの歪対称行列 [v]x を返す"""
    x, y, z = np.asarray(vector, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


class CameraIntrinsics:
    """歪みのないピンホールカメラの内部パラメータを表す値オブジェクト"""

    def __init__(
        self,
        fx: float,
        fy: float,
        px: float,
        py: float,
        width: int,
        height: int,
    ) -> None:
        """
        CameraIntrinsicsを作成する

        Args:
            fx: x方向焦点距離（ピクセル）
            fy: y方向焦点距離（ピクセル）
            px: 主点x座標（ピクセル）
            py: 主点y座標（ピクセル）
            width: 画像幅（ピクセル）
            height: 画像高さ（ピクセル）

        Raises:
            ValueError: 焦点距離が正でない、画像サイズが正でない、
                       または主点が画像外の場合
        """
        if fx <= 0 or fy <= 0:
            raise ValueError("焦点距離は正の値である必要があります")
        if int(width) <= 0 or int(height) <= 0:
            raise ValueError("画像サイズは正の整数である必要があります")
        if not (0 <= px < width and 0 <= py < height):
            raise ValueError("主点は画像内にある必要があります")

        self._fx = float(fx)
        self._fy = float(fy)
        self._px = float(px)
        self._py = float(py)
        self._width = int(width)
        self._height = int(height)

    @property
    def fx(self) -> float:
        return self._fx

    @property
    def fy(self) -> float:
        return self._fy

    @property
    def px(self) -> float:
        return self._px

    @property
    def py(self) -> float:
        return self._py

    @property
    def width(self) -> int:
        return self._width

    @property
    def height(self) -> int:
        return self._height

    @property
    def mean_focal_length(self) -> float:
        """メートル→ピクセル換算に使う平均焦点距離"""
        return 0.5 * (self._fx + self._fy)

    def contains(self, pixel: np.ndarray) -> np.ndarray:
        """連続ピクセル座標（..., 2）が画像内にあるかを判定する"""
        pixel = np.asarray(pixel, dtype=np.float64)
        return (
            (pixel[..., 0] >= 0)
            & (pixel[..., 0] < self._width)
            & (pixel[..., 1] >= 0)
            & (pixel[..., 1] < self._height)
        )

    def __eq__(self, other: object) -> bool:
        """等価性判定"""
        if not isinstance(other, CameraIntrinsics):
            return False
        return self._key() == other._key()

    def __hash__(self) -> int:
        """ハッシュ値計算"""
        return hash(self._key())

    def _key(self) -> tuple:
        return (self._fx, self._fy, self._px, self._py, self._width, self._height)

    def __repr__(self) -> str:
        """開発者向け文字列表現"""
        return (
            f"CameraIntrinsics(fx={self._fx}, fy={self._fy}, px={self._px}, "
            f"py={self._py}, width={self._width}, height={self._height})"
        )


class PoseSE3:
    """剛体変換 A_T_B（回転行列 + 並進ベクトル）を表す値オブジェクト"""

    def __init__(self, rotation: np.ndarray, translation: Iterable[float]) -> None:
        """
        PoseSE3を作成する

        Args:
            rotation: 3x3回転行列
            translation: 並進ベクトル（メートル）

        Raises:
            ValueError: 回転行列が直交でない、または行列式が+1でない場合
        """
        rotation = np.array(rotation, dtype=np.float64)
        if rotation.shape != (3, 3):
            raise ValueError(f"回転行列は3x3である必要があります: shape={rotation.shape}")
        if not np.all(np.isfinite(rotation)):
            raise ValueError("回転行列に有限でない値が含まれています")

        drift = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
        if drift > _ORTHONORMAL_REJECT_TOL:
            raise ValueError(f"回転行列が直交していません: drift={drift:.3e}")
        if drift > _ORTHONORMAL_REPAIR_TOL:
            # 極分解で最も近い直交行列に戻す
            rotation, _ = polar(rotation)
        if np.linalg.det(rotation) <= 0:
            raise ValueError("回転行列の行列式は+1である必要があります")

        rotation.flags.writeable = False
        self._rotation = rotation
        self._translation = as_vec3(translation)

    @classmethod
    def identity(cls) -> "PoseSE3":
        """恒等変換を作成する"""
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "PoseSE3":
        """
        4x4同次変換行列からPoseSE3を作成する

        Raises:
            ValueError: 行列形状や最終行が不正な場合
        """
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise ValueError(f"同次変換行列は4x4である必要があります: shape={matrix.shape}")
        if not np.allclose(matrix[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise ValueError("同次変換行列の最終行は [0, 0, 0, 1] である必要があります")
        return cls(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_translation(cls, translation: Iterable[float]) -> "PoseSE3":
        """純粋な並進からPoseSE3を作成する"""
        return cls(np.eye(3), translation)

    @property
    def rotation(self) -> np.ndarray:
        """回転行列を取得する"""
        return self._rotation

    @property
    def translation(self) -> Vec3:
        """並進ベクトルを取得する"""
        return self._translation

    @property
    def matrix(self) -> np.ndarray:
        """4x4同次変換行列を取得する"""
        matrix = np.eye(4)
        matrix[:3, :3] = self._rotation
        matrix[:3, 3] = self._translation
        return matrix

    def transform_points(self, points: np.ndarray) -> np.ndarray:
        """点群（N, 3）を変換する"""
        points = np.asarray(points, dtype=np.float64)
        return points @ self._rotation.T + self._translation

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        """姿勢の合成 self ∘ other"""
        if not isinstance(other, PoseSE3):
            return NotImplemented
        return PoseSE3(
            self._rotation @ other._rotation,
            self._rotation @ other._translation + self._translation,
        )

    def __eq__(self, other: object) -> bool:
        """等価性判定"""
        if not isinstance(other, PoseSE3):
            return False
        return np.array_equal(self._rotation, other._rotation) and np.array_equal(
            self._translation, other._translation
        )

    def __hash__(self) -> int:
        """ハッシュ値計算"""
        return hash((self._rotation.tobytes(), self._translation.tobytes()))

    def __repr__(self) -> str:
        """開発者向け文字列表現"""
        return (
            f"PoseSE3(rotation={self._rotation.tolist()}, "
            f"translation={self._translation.tolist()})"
        )


class PoseVariation:
    """モデル座標系での微小姿勢変分 θ = [θ_r, θ_t] を表す値オブジェクト"""

    def __init__(self, theta_r: Iterable[float], theta_t: Iterable[float]) -> None:
        """
        PoseVariationを作成する

        Args:
            theta_r: 回転成分（軸角ベクトル、ラジアン）
            theta_t: 並進成分（メートル）

        Raises:
            ValueError: 有限でない成分を含む場合
        """
        self._theta_r = as_vec3(theta_r)
        self._theta_t = as_vec3(theta_t)

    @classmethod
    def zero(cls) -> "PoseVariation":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, vector: Iterable[float]) -> "PoseVariation":
        """6要素ベクトル [θ_r, θ_t] から作成する"""
        vector = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vector.shape != (6,):
            raise ValueError(f"姿勢変分は6要素である必要があります: shape={vector.shape}")
        return cls(vector[:3], vector[3:])

    @property
    def theta_r(self) -> Vec3:
        return self._theta_r

    @property
    def theta_t(self) -> Vec3:
        return self._theta_t

    @property
    def vector(self) -> np.ndarray:
        """6要素ベクトル [θ_r, θ_t] を取得する"""
        return np.concatenate([self._theta_r, self._theta_t])

    def __neg__(self) -> "PoseVariation":
        return PoseVariation(-self._theta_r, -self._theta_t)

    def __eq__(self, other: object) -> bool:
        """等価性判定"""
        if not isinstance(other, PoseVariation):
            return False
        return np.array_equal(self.vector, other.vector)

    def __hash__(self) -> int:
        """ハッシュ値計算"""
        return hash(self.vector.tobytes())

    def __repr__(self) -> str:
        """開発者向け文字列表現"""
        return f"PoseVariation(theta_r={self._theta_r.tolist()}, theta_t={self._theta_t.tolist()})"


def project(intr: CameraIntrinsics, point: Iterable[float]) -> np.ndarray:
    """
    3次元点を歪みのない画像へ投影する

    Args:
        intr: カメラ内部パラメータ
        point: カメラ座標系の3次元点

    Returns:
        np.ndarray: 連続ピクセル座標 (x, y)。画像外の場合もある

    Raises:
        ValueError: Zが正でない場合
    """
    return project_points(intr, np.asarray(point, dtype=np.float64).reshape(1, 3))[0]


def project_points(intr: CameraIntrinsics, points: np.ndarray) -> np.ndarray:
    """
    点群（N, 3）をまとめて投影する

    Raises:
        ValueError: Zが正でない点を含む場合
    """
    points = np.asarray(points, dtype=np.float64)
    z = points[:, 2]
    if np.any(z <= 0):
        raise ValueError("投影する点の奥行きは正である必要があります")
    x = points[:, 0] / z * intr.fx + intr.px
    y = points[:, 1] / z * intr.fy + intr.py
    return np.stack([x, y], axis=1)


def reconstruct_point(
    intr: CameraIntrinsics, pixel: Iterable[float], depth: float
) -> Vec3:
    """
    ピクセル座標と奥行きから3次元点を復元する（投影の逆変換）

    Raises:
        ValueError: 奥行きが正でない場合
    """
    if depth <= 0:
        raise ValueError("復元する奥行きは正である必要があります")
    pixel = np.asarray(pixel, dtype=np.float64).reshape(1, 2)
    return reconstruct_points(intr, pixel, np.array([depth], dtype=np.float64))[0]


def reconstruct_points(
    intr: CameraIntrinsics, pixels: np.ndarray, depths: np.ndarray
) -> np.ndarray:
    """ピクセル座標（N, 2）と奥行き（N,）から点群（N, 3）を復元する"""
    pixels = np.asarray(pixels, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    x = (pixels[:, 0] - intr.px) / intr.fx * depths
    y = (pixels[:, 1] - intr.py) / intr.fy * depths
    return np.stack([x, y, depths], axis=1)


def pixel_centers(indices: np.ndarray) -> np.ndarray:
    """整数ピクセル番号 (u, v) の画素中心の連続座標を返す"""
    return np.asarray(indices, dtype=np.float64) + 0.5


def transform_point(pose: PoseSE3, point: Iterable[float]) -> Vec3:
    """R·point + t を返す"""
    return pose.rotation @ np.asarray(point, dtype=np.float64) + pose.translation


def variate_point(theta: PoseVariation, point: Iterable[float]) -> Vec3:
    """線形化した変分 (I + [θ_r]x)·point + θ_t を返す（厳密な回転ではない）"""
    point = np.asarray(point, dtype=np.float64)
    return point + np.cross(theta.theta_r, point) + theta.theta_t


def rotation_exp(theta_r: Iterable[float]) -> np.ndarray:
    """軸角ベクトルの指数写像 exp([θ_r]x) をRodrigues式で計算する"""
    theta_r = np.asarray(theta_r, dtype=np.float64)
    angle = float(np.linalg.norm(theta_r))
    k = skew(theta_r)
    if angle < _SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    return (
        np.eye(3)
        + (np.sin(angle) / angle) * k
        + ((1.0 - np.cos(angle)) / (angle * angle)) * (k @ k)
    )


def exp_update(pose: PoseSE3, theta: PoseVariation) -> PoseSE3:
    """
    姿勢を右から [exp([θ_r]x), θ_t; 0, 1] で更新する

    Args:
        pose: 更新前の姿勢 A_T_M
        theta: モデル座標系での変分

    Returns:
        PoseSE3: 更新後の姿勢
    """
    delta = PoseSE3(rotation_exp(theta.theta_r), theta.theta_t)
    return pose @ delta


def pose_inverse(pose: PoseSE3) -> PoseSE3:
    """逆変換を返す"""
    rotation_t = pose.rotation.T
    return PoseSE3(rotation_t, -rotation_t @ pose.translation)


def look_at_pose(camera_position: Iterable[float], target: Iterable[float]) -> PoseSE3:
    """
    指定位置から注視点を向くカメラの姿勢 C_T_M を作成する

    上方向はワールドz軸を視線方向に直交化したもので、極付近ではx軸を使う。
    カメラ座標系は x:右, y:下, z:視線方向。

    Raises:
        ValueError: カメラ位置と注視点が一致する場合
    """
    position = np.asarray(camera_position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValueError("カメラ位置と注視点が一致しています")
    forward = forward / norm

    up = np.array([0.0, 0.0, 1.0])
    if abs(float(forward @ up)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    up = up - (up @ forward) * forward
    up = up / np.linalg.norm(up)

    y_axis = -up
    x_axis = np.cross(y_axis, forward)
    rotation_model_camera = np.stack([x_axis, y_axis, forward], axis=1)
    rotation = rotation_model_camera.T
    return PoseSE3(rotation, -rotation @ position)
