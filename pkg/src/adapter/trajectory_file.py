"""TrajectoryFile - 姿勢列のテキスト形式（フレーム番号 + 4x4行列16値）"""

from pathlib import Path
from typing import List, Union

import numpy as np

from src.domain.geometry import PoseSE3
from src.domain.pose_metrics import PoseSequence


def format_trajectory(sequence: PoseSequence) -> str:
    """姿勢列を1行1フレームのテキストに変換する"""
    lines: List[str] = []
    for index, pose in zip(sequence.indices, sequence.poses):
        values = " ".join(f"{value:.17g}" for value in pose.matrix.reshape(-1))
        lines.append(f"{index} {values}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_trajectory(text: str) -> PoseSequence:
    """
    テキストから姿勢列を復元する

    空行と `#` で始まる行は無視する。

    Raises:
        ValueError: 値の数・数値形式・姿勢が不正な場合（行番号付き）
    """
    indices: List[int] = []
    poses: List[PoseSE3] = []
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) != 17:
            raise ValueError(
                f"{line_number}行目: フレーム番号と16個の値が必要です（{len(tokens)}個）"
            )
        try:
            index = int(tokens[0])
            matrix = np.array([float(t) for t in tokens[1:]]).reshape(4, 4)
        except ValueError:
            raise ValueError(f"{line_number}行目: 数値として読めない値があります")
        try:
            poses.append(PoseSE3.from_matrix(matrix))
        except ValueError as e:
            raise ValueError(f"{line_number}行目: {e}")
        indices.append(index)
    try:
        return PoseSequence(tuple(indices), tuple(poses))
    except ValueError as e:
        raise ValueError(f"軌跡ファイルが不正です: {e}")


def write_trajectory(file_path: Union[str, Path], sequence: PoseSequence) -> Path:
    """姿勢列をファイルへ書き出す"""
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_trajectory(sequence), encoding="utf-8")
    return path


def read_trajectory(file_path: Union[str, Path]) -> PoseSequence:
    """
    軌跡ファイルを読み込む

    Raises:
        FileNotFoundError: ファイルが存在しない場合
        ValueError: 形式が不正な場合
    """
    path = Path(file_path)
    if not path.exists():
        raise FileNotFoundError(f"軌跡ファイルが見つかりません: {path}")
    return parse_trajectory(path.read_text(encoding="utf-8"))
