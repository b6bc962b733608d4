"""軌跡ファイルのテスト"""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.adapter.trajectory_file import (
    format_trajectory,
    parse_trajectory,
    read_trajectory,
    write_trajectory,
)
from src.domain.geometry import PoseSE3
from src.domain.pose_metrics import PoseSequence


def _pose(seed: int) -> PoseSE3:
    rng = np.random.default_rng(seed)
    rotation = Rotation.from_rotvec(rng.normal(size=3) * 0.3).as_matrix()
    return PoseSE3(rotation, rng.normal(size=3) * 0.1 + [0.0, 0.0, 0.6])


class TestTrajectoryFile:
    """軌跡ファイルの読み書きのテストクラス"""

    def test_write_trajectory_書き出した軌跡の場合_ビット単位で同じ姿勢が読めること(self, tmp_path):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        sequence = PoseSequence((0, 1, 5), (_pose(0), _pose(1), _pose(2)))

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        path = write_trajectory(tmp_path / "out" / "trajectory.txt", sequence)
        loaded = read_trajectory(path)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert loaded.indices == (0, 1, 5)
        for original, restored in zip(sequence.poses, loaded.poses):
            np.testing.assert_array_equal(restored.matrix, original.matrix)

    def test_format_trajectory_1行の形式_フレーム番号と16値が並ぶこと(self):
        text = format_trajectory(PoseSequence((4,), (PoseSE3.identity(),)))
        assert text == "4 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n"

    def test_parse_trajectory_コメントと空行の場合_無視されること(self):
        text = "# frame matrix\n\n0 1 0 0 0 0 1 0 0 0 0 1 0.5 0 0 0 1\n"
        sequence = parse_trajectory(text)
        assert sequence.indices == (0,)
        assert sequence.poses[0].translation[2] == 0.5

    def test_parse_trajectory_値の数が不足する場合_行番号付きの例外が発生すること(self):
        with pytest.raises(ValueError, match="1行目: フレーム番号と16個の値が必要です"):
            parse_trajectory("0 1 0 0\n")

    def test_parse_trajectory_数値でない値の場合_例外が発生すること(self):
        with pytest.raises(ValueError, match="2行目: 数値として読めない値"):
            parse_trajectory(
                "0 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n1 a 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n"
            )

    def test_parse_trajectory_回転が直交でない場合_例外が発生すること(self):
        with pytest.raises(ValueError, match="1行目: 回転行列が直交していません"):
            parse_trajectory("0 2 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n")

    def test_parse_trajectory_フレーム番号が減少する場合_例外が発生すること(self):
        identity = "1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1"
        with pytest.raises(ValueError, match="狭義単調増加"):
            parse_trajectory(f"3 {identity}\n2 {identity}\n")

    def test_read_trajectory_ファイルが存在しない場合_FileNotFoundErrorが発生すること(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="軌跡ファイルが見つかりません"):
            read_trajectory(tmp_path / "missing.txt")
