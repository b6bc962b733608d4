"""ObjMeshLoader - OBJサブセット（v / f レコード）の読み込み"""

import logging
from pathlib import Path
from typing import List

import numpy as np

from src.domain.mesh import DEGENERATE_AREA, TriangleMesh, triangle_areas


class ObjMeshLoader:
    """ASCII OBJファイルから三角形メッシュを読み込むローダー"""

    def __init__(self) -> None:
        self._logger = logging.getLogger(__name__)

    def load_file(self, file_path: str) -> TriangleMesh:
        """
        OBJファイルを読み込む

        Raises:
            FileNotFoundError: ファイルが存在しない場合
            ValueError: 形式が不正な場合
        """
        path = Path(file_path)
        if not path.exists():
            raise FileNotFoundError(f"メッシュファイルが見つかりません: {file_path}")
        return self.load_mesh(path.read_bytes())

    def load_mesh(self, data: bytes) -> TriangleMesh:
        """
        OBJのバイト列を解析してメッシュを作成する

        `v x y z` と `f i j k ...` のみを解釈し、多角形の面は扇形に三角形分割する。
        `vt` / `vn` などその他のレコードと `#` コメントは無視する。

        Args:
            data: OBJファイルの内容

        Returns:
            TriangleMesh: 読み込んだメッシュ（単位はメートル）

        Raises:
            ValueError: レコード不正・インデックス範囲外・空メッシュの場合（行番号付き）
        """
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ValueError(f"OBJファイルをUTF-8として読めません: {e}")

        vertices: List[List[float]] = []
        faces: List[tuple] = []

        for line_number, raw_line in enumerate(text.splitlines(), start=1):
            line = raw_line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            record = tokens[0]

            if record == "v":
                if len(tokens) < 4:
                    raise ValueError(f"{line_number}行目: 頂点レコードには3つの座標が必要です")
                try:
                    vertices.append([float(t) for t in tokens[1:4]])
                except ValueError:
                    raise ValueError(f"{line_number}行目: 頂点座標が数値ではありません")

            elif record == "f":
                if len(tokens) < 4:
                    raise ValueError(f"{line_number}行目: 面レコードには3つ以上の頂点が必要です")
                indices = [self._parse_index(t, line_number) for t in tokens[1:]]
                # 扇形分割
                for k in range(1, len(indices) - 1):
                    faces.append((indices[0], indices[k], indices[k + 1], line_number))

        if not vertices:
            raise ValueError("OBJファイルに頂点がありません")
        if not faces:
            raise ValueError("OBJファイルに面がありません")

        for a, b, c, line_number in faces:
            for index in (a, b, c):
                if index >= len(vertices):
                    raise ValueError(
                        f"{line_number}行目: 頂点インデックス{index + 1}が範囲外です"
                        f"（頂点数: {len(vertices)}）"
                    )

        vertex_array = np.array(vertices, dtype=np.float64)
        triangles = np.array([face[:3] for face in faces], dtype=np.int64)

        areas = triangle_areas(vertex_array, triangles)
        degenerate = areas <= DEGENERATE_AREA
        if degenerate.any():
            self._logger.warning(
                f"⚠️ 縮退三角形を除外: {int(degenerate.sum())}個 "
                f"(行: {[faces[i][3] for i in np.flatnonzero(degenerate)][:10]})"
            )
            triangles = triangles[~degenerate]
        if len(triangles) == 0:
            raise ValueError("OBJファイルに有効な三角形がありません")

        self._logger.debug(
            f"📐 メッシュ読み込み完了 - 頂点数: {len(vertex_array)}, 三角形数: {len(triangles)}"
        )
        return TriangleMesh(vertex_array, triangles)

    def _parse_index(self, token: str, line_number: int) -> int:
        # "i", "i/t", "i//n", "i/t/n" の先頭のみを使う
        head = token.split("/", 1)[0]
        try:
            index = int(head)
        except ValueError:
            raise ValueError(f"{line_number}行目: 面の頂点インデックスが整数ではありません: {token}")
        if index == 0:
            raise ValueError(f"{line_number}行目: OBJの頂点インデックスは1始まりです")
        if index < 0:
            raise ValueError(f"{line_number}行目: 負の頂点インデックスはサポートしていません")
        return index - 1


def load_mesh(data: bytes) -> TriangleMesh:
    """OBJのバイト列からメッシュを作成する"""
    return ObjMeshLoader().load_mesh(data)
