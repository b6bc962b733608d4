"""EvaluateTrajectoryUseCaseのテスト"""

import csv
import logging

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.domain.geometry import PoseSE3
from src.domain.pose_metrics import PoseSequence
from src.usecase.evaluate_trajectory_usecase import (
    EvaluateTrajectoryUseCase,
    write_report_csv,
)
from tests.mesh_factory import box_mesh

LOGGER = "src.usecase.evaluate_trajectory_usecase"


def _ground_truth() -> PoseSequence:
    poses = tuple(PoseSE3.from_translation([0.0, 0.01 * i, 0.6]) for i in range(3))
    return PoseSequence((0, 1, 2), poses)


def _shifted(sequence: PoseSequence, offset) -> PoseSequence:
    poses = tuple(PoseSE3(p.rotation, p.translation + np.asarray(offset)) for p in sequence.poses)
    return PoseSequence(sequence.indices, poses)


class TestEvaluateTrajectoryUseCase:
    """EvaluateTrajectoryUseCaseのテストクラス"""

    def test_execute_推定が正解と一致する場合_誤差0で満点になること(self):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        ground_truth = _ground_truth()

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        report = EvaluateTrajectoryUseCase().execute(box_mesh(), ground_truth, ground_truth)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert report.frames == 3
        assert report.add_mean == 0.0
        assert report.adds_mean == 0.0
        assert report.add_auc == 1.0
        assert report.opt_add_auc == 20.0
        assert report.rbot_success == 1.0
        assert report.add_below_threshold == 1.0
        assert report.rms.as_tuple() == (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def test_execute_1mmずれた場合_ADDとRMSに反映されること(self):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        ground_truth = _ground_truth()
        estimated = _shifted(ground_truth, [0.001, 0.0, 0.0])

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        report = EvaluateTrajectoryUseCase(use_kdtree=True).execute(
            box_mesh(), estimated, ground_truth
        )

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert report.add_mean == pytest.approx(0.001, abs=1e-12)
        assert report.adds_mean <= report.add_mean + 1e-15
        assert report.add_auc == pytest.approx(0.99, abs=1e-9)
        assert report.rms.x == pytest.approx(1.0, abs=1e-9)
        assert report.per_frame_add == pytest.approx((0.001,) * 3, abs=1e-12)

    def test_execute_フレーム番号が異なる場合_例外が発生すること(self):
        ground_truth = _ground_truth()
        estimated = PoseSequence((0, 1, 3), ground_truth.poses)
        with pytest.raises(ValueError, match="フレーム番号が一致しません"):
            EvaluateTrajectoryUseCase().execute(box_mesh(), estimated, ground_truth)

    def test_execute_軌跡が空の場合_例外が発生すること(self):
        empty = PoseSequence((), ())
        with pytest.raises(ValueError, match="空"):
            EvaluateTrajectoryUseCase().execute(box_mesh(), empty, empty)

    def test_execute_ジンバルロック付近のフレームがある場合_警告を出すこと(self, caplog):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        gimbal = Rotation.from_euler("ZYX", [0.0, 89.5, 0.0], degrees=True).as_matrix()
        ground_truth = PoseSequence(
            (0, 1), (PoseSE3.from_translation([0.0, 0.0, 0.6]), PoseSE3(gimbal, [0.0, 0.0, 0.6]))
        )

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        with caplog.at_level(logging.WARNING, logger=LOGGER):
            report = EvaluateTrajectoryUseCase().execute(box_mesh(), ground_truth, ground_truth)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert report.rms.excluded_frames == 1
        assert "ジンバルロック" in caplog.text


class TestEvaluationReport:
    """EvaluationReportの出力のテストクラス"""

    def test_format_all_固定順のkey_value行になること(self):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        ground_truth = _ground_truth()
        report = EvaluateTrajectoryUseCase().execute(box_mesh(), ground_truth, ground_truth)

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        text = report.format()

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        keys = [line.split("=")[0] for line in text.splitlines()]
        assert keys == [
            "frames",
            "add_mean_m",
            "add_below_0.01m",
            "adds_mean_m",
            "add_auc",
            "adds_auc",
            "opt_add_auc",
            "rms_x_mm",
            "rms_y_mm",
            "rms_z_mm",
            "rms_roll_deg",
            "rms_pitch_deg",
            "rms_yaw_deg",
            "rms_excluded_frames",
            "rbot_success",
        ]
        assert text.startswith("frames=3\nadd_mean_m=0.000000\n")
        assert text.endswith("rbot_success=1.000000\n")

    def test_format_指標を絞った場合_その項目だけになること(self):
        ground_truth = _ground_truth()
        report = EvaluateTrajectoryUseCase().execute(box_mesh(), ground_truth, ground_truth)
        assert report.format("rbot") == "frames=3\nrbot_success=1.000000\n"

    def test_items_未知の指標の場合_例外が発生すること(self):
        ground_truth = _ground_truth()
        report = EvaluateTrajectoryUseCase().execute(box_mesh(), ground_truth, ground_truth)
        with pytest.raises(ValueError, match="未知の評価指標"):
            report.items("median")

    def test_write_report_csv_フレームごとの誤差が書き出されること(self, tmp_path):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        ground_truth = _ground_truth()
        estimated = _shifted(ground_truth, [0.0, 0.002, 0.0])
        report = EvaluateTrajectoryUseCase().execute(box_mesh(), estimated, ground_truth)

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        path = write_report_csv(tmp_path / "report" / "errors.csv", report, ground_truth.indices)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        with path.open(encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["frame", "add_m", "adds_m"]
        assert [row[0] for row in rows[1:]] == ["0", "1", "2"]
        assert rows[1][1] == "0.002000000"
