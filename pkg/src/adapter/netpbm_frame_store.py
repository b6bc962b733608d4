"""NetpbmFrameStore - カラー（PPM）・深度（16bit PGM）フレームの読み書き"""

import logging
import re
from pathlib import Path
from typing import List, Union

import cv2
import numpy as np

from src.domain.mesh import DepthImage, SilhouetteMask

COLOR_PATTERN = "color_{:06d}.ppm"
DEPTH_PATTERN = "depth_{:06d}.pgm"
_COLOR_NAME = re.compile(r"^color_(\d{6})\.ppm$")
_MAX_DEPTH_MM = 65535


class NetpbmFrameStore:
    """ディレクトリ内の `color_%06d.ppm` / `depth_%06d.pgm` を扱うフレームストア"""

    def __init__(self, directory: Union[str, Path]) -> None:
        """
        Args:
            directory: フレームを格納するディレクトリ
        """
        self._directory = Path(directory)
        self._logger = logging.getLogger(__name__)

    @property
    def directory(self) -> Path:
        return self._directory

    def color_path(self, index: int) -> Path:
        return self._directory / COLOR_PATTERN.format(index)

    def depth_path(self, index: int) -> Path:
        return self._directory / DEPTH_PATTERN.format(index)

    def frame_indices(self) -> List[int]:
        """
        カラーと深度の両方が揃っているフレーム番号を昇順で返す

        Raises:
            FileNotFoundError: ディレクトリが存在しない場合
        """
        if not self._directory.is_dir():
            raise FileNotFoundError(f"フレームディレクトリが見つかりません: {self._directory}")
        indices = []
        for path in sorted(self._directory.iterdir()):
            match = _COLOR_NAME.match(path.name)
            if not match:
                continue
            index = int(match.group(1))
            if self.depth_path(index).exists():
                indices.append(index)
            else:
                self._logger.warning(f"⚠️ 深度フレームがないためスキップ: {path.name}")
        return indices

    def read_color(self, index: int) -> np.ndarray:
        """
        カラーフレームをRGB（H, W, 3, uint8）で読み込む

        Raises:
            FileNotFoundError: ファイルが存在しない場合
            ValueError: 画像として読めない場合
        """
        path = self.color_path(index)
        image = self._read(path, cv2.IMREAD_COLOR)
        return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)

    def read_depth(self, index: int) -> DepthImage:
        """
        16bit PGM（ミリメートル、0 = 無効）を読み込みメートルに変換する

        Raises:
            FileNotFoundError: ファイルが存在しない場合
            ValueError: 16bit単チャンネルでない場合
        """
        path = self.depth_path(index)
        image = self._read(path, cv2.IMREAD_UNCHANGED)
        if image.ndim != 2 or image.dtype != np.uint16:
            raise ValueError(f"深度画像は16bit単チャンネルである必要があります: {path}")
        return DepthImage(image.astype(np.float64) / 1000.0)

    def write_color(self, index: int, image: np.ndarray) -> Path:
        """RGB画像をPPMとして保存する"""
        path = self.color_path(index)
        write_color_image(path, image)
        return path

    def write_depth(self, index: int, depth: DepthImage) -> Path:
        """深度画像をミリメートル単位の16bit PGMとして保存する"""
        path = self.depth_path(index)
        write_depth_image(path, depth)
        return path

    def _read(self, path: Path, flags: int) -> np.ndarray:
        if not path.exists():
            raise FileNotFoundError(f"フレームファイルが見つかりません: {path}")
        image = cv2.imread(str(path), flags)
        if image is None:
            raise ValueError(f"画像を読み込めません: {path}")
        return image


def write_color_image(path: Path, image: np.ndarray) -> None:
    """
    RGB画像（H, W, 3, uint8）を書き出す（形式は拡張子で決まる）

    Raises:
        ValueError: 形状が不正、または書き込みに失敗した場合
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"カラー画像は (H, W, 3) である必要があります: shape={image.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    bgr = cv2.cvtColor(image.astype(np.uint8), cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), bgr):
        raise ValueError(f"画像を書き込めません: {path}")


def write_depth_image(path: Path, depth: DepthImage) -> None:
    """
    深度画像を16bit PGM（ミリメートル）で書き出す

    Raises:
        ValueError: 書き込みに失敗した場合
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    millimeters = np.clip(np.round(depth.values * 1000.0), 0, _MAX_DEPTH_MM).astype(np.uint16)
    if not cv2.imwrite(str(path), millimeters):
        raise ValueError(f"深度画像を書き込めません: {path}")


def write_silhouette_image(path: Path, silhouette: SilhouetteMask) -> None:
    """
    シルエットを8bit PGM（0/255）で書き出す

    Raises:
        ValueError: 書き込みに失敗した場合
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), silhouette.values.astype(np.uint8) * 255):
        raise ValueError(f"シルエット画像を書き込めません: {path}")
