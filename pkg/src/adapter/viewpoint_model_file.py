"""ViewpointModelFile - 疎視点モデルのバイナリ形式での保存と読み込み

形式（すべてリトルエンディアン）:

    header:  magic "ICGM" | u32 version | u32 n_views
             | u32 subdivision_level | f64 sphere_radius
             | u32 n_contour_points | u32 n_surface_points
             | u32 render_width | u32 render_height | u64 seed
             | f64 max_free_length | f64 occlusion_region
    view:    f64[3] orientation | u32 n_contour | u32 n_surface
             | n_contour x (f64[3] point, f64[3] normal, f64 fg_free_len, f64 bg_free_len)
             | n_surface x (f64[3] point, f64[3] normal, f64 occlusion_offset)
"""

import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from src.domain.geometry import as_vec3
from src.domain.viewpoint_model import (
    ContourPointSet,
    ModelGenerationConfig,
    SparseViewpointModel,
    SurfacePointSet,
    Viewpoint,
)

MAGIC = b"ICGM"
FORMAT_VERSION = 1

_HEADER = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u4"),
        ("n_views", "<u4"),
        ("subdivision_level", "<u4"),
        ("sphere_radius", "<f8"),
        ("n_contour_points", "<u4"),
        ("n_surface_points", "<u4"),
        ("render_width", "<u4"),
        ("render_height", "<u4"),
        ("seed", "<u8"),
        ("max_free_length", "<f8"),
        ("occlusion_region", "<f8"),
    ]
)
_VIEW_HEADER = np.dtype([("orientation", "<f8", (3,)), ("n_contour", "<u4"), ("n_surface", "<u4")])
_CONTOUR_RECORD = np.dtype(
    [("point", "<f8", (3,)), ("normal", "<f8", (3,)), ("fg_free_len", "<f8"), ("bg_free_len", "<f8")]
)
_SURFACE_RECORD = np.dtype(
    [("point", "<f8", (3,)), ("normal", "<f8", (3,)), ("occlusion_offset", "<f8")]
)


class ViewpointModelFile:
    """疎視点モデルファイルの読み書きを行うアダプター"""

    def __init__(self) -> None:
        self._logger = logging.getLogger(__name__)

    def write(self, model: SparseViewpointModel, file_path: Union[str, Path]) -> Path:
        """
        モデルをファイルへ書き出す

        Args:
            model: 疎視点モデル
            file_path: 出力先

        Returns:
            Path: 書き出したファイル
        """
        path = Path(file_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.encode(model))
        self._logger.info(f"💾 視点モデルを保存: {path} ({len(model)}視点)")
        return path

    def read(self, file_path: Union[str, Path]) -> SparseViewpointModel:
        """
        モデルファイルを読み込む

        Raises:
            FileNotFoundError: ファイルが存在しない場合
            ValueError: 形式が不正な場合
        """
        path = Path(file_path)
        if not path.exists():
            raise FileNotFoundError(f"視点モデルファイルが見つかりません: {path}")
        return self.decode(path.read_bytes())

    def encode(self, model: SparseViewpointModel) -> bytes:
        """モデルをバイト列に変換する"""
        config = model.config
        header = np.zeros(1, dtype=_HEADER)
        header["magic"] = MAGIC
        header["version"] = FORMAT_VERSION
        header["n_views"] = len(model)
        header["subdivision_level"] = config.subdivision_level
        header["sphere_radius"] = config.sphere_radius
        header["n_contour_points"] = config.n_contour_points
        header["n_surface_points"] = config.n_surface_points
        header["render_width"] = config.render_width
        header["render_height"] = config.render_height
        header["seed"] = config.seed
        header["max_free_length"] = config.max_free_length
        header["occlusion_region"] = config.occlusion_region

        chunks: List[bytes] = [header.tobytes()]
        for view in model.views:
            view_header = np.zeros(1, dtype=_VIEW_HEADER)
            view_header["orientation"] = view.orientation
            view_header["n_contour"] = len(view.contour_points)
            view_header["n_surface"] = len(view.surface_points)

            contour = np.zeros(len(view.contour_points), dtype=_CONTOUR_RECORD)
            contour["point"] = view.contour_points.points
            contour["normal"] = view.contour_points.normals
            contour["fg_free_len"] = view.contour_points.fg_free_lens
            contour["bg_free_len"] = view.contour_points.bg_free_lens

            surface = np.zeros(len(view.surface_points), dtype=_SURFACE_RECORD)
            surface["point"] = view.surface_points.points
            surface["normal"] = view.surface_points.normals
            surface["occlusion_offset"] = view.surface_points.occlusion_offsets

            chunks.extend([view_header.tobytes(), contour.tobytes(), surface.tobytes()])
        return b"".join(chunks)

    def decode(self, data: bytes) -> SparseViewpointModel:
        """
        バイト列からモデルを復元する

        Raises:
            ValueError: マジック・バージョンが不正、またはデータが途中で切れている場合
        """
        header, offset = _take(data, 0, _HEADER, 1, "ヘッダー")
        if header["magic"][0] != MAGIC:
            raise ValueError("視点モデルファイルのマジックが不正です")
        version = int(header["version"][0])
        if version != FORMAT_VERSION:
            raise ValueError(f"未対応の視点モデル形式バージョンです: {version}")

        config = ModelGenerationConfig(
            subdivision_level=int(header["subdivision_level"][0]),
            sphere_radius=float(header["sphere_radius"][0]),
            n_contour_points=int(header["n_contour_points"][0]),
            n_surface_points=int(header["n_surface_points"][0]),
            render_width=int(header["render_width"][0]),
            render_height=int(header["render_height"][0]),
            seed=int(header["seed"][0]),
            max_free_length=float(header["max_free_length"][0]),
            occlusion_region=float(header["occlusion_region"][0]),
        )

        views = []
        for view_index in range(int(header["n_views"][0])):
            label = f"視点{view_index}"
            view_header, offset = _take(data, offset, _VIEW_HEADER, 1, label)
            contour, offset = _take(
                data, offset, _CONTOUR_RECORD, int(view_header["n_contour"][0]), label
            )
            surface, offset = _take(
                data, offset, _SURFACE_RECORD, int(view_header["n_surface"][0]), label
            )
            views.append(
                Viewpoint(
                    orientation=as_vec3(view_header["orientation"][0]),
                    contour_points=ContourPointSet(
                        points=contour["point"].copy(),
                        normals=contour["normal"].copy(),
                        fg_free_lens=contour["fg_free_len"].copy(),
                        bg_free_lens=contour["bg_free_len"].copy(),
                    ),
                    surface_points=SurfacePointSet(
                        points=surface["point"].copy(),
                        normals=surface["normal"].copy(),
                        occlusion_offsets=surface["occlusion_offset"].copy(),
                    ),
                )
            )
        if offset != len(data):
            raise ValueError(f"視点モデルファイルの末尾に余分なデータがあります: {len(data) - offset}バイト")

        self._logger.debug(f"📂 視点モデルを読み込み: {len(views)}視点")
        return SparseViewpointModel(views=tuple(views), config=config)


def _take(data: bytes, offset: int, dtype: np.dtype, count: int, label: str) -> Tuple[np.ndarray, int]:
    end = offset + dtype.itemsize * count
    if end > len(data):
        raise ValueError(f"視点モデルファイルが途中で切れています（{label}）")
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset), end
