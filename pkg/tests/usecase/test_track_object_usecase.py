"""TrackObjectUseCaseのテスト"""

import csv
import logging

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.adapter.logging_utils import TrackingContextFilter, current_frame, tracking_context
from src.adapter.netpbm_frame_store import NetpbmFrameStore
from src.domain.geometry import PoseSE3
from src.domain.mesh import DepthImage
from src.domain.optimization import IterationSchedule, TrackerState, TrackingMode
from src.domain.region_modality import color_bins
from src.domain.viewpoint_model import ModelGenerationConfig
from src.usecase.generate_model_usecase import generate_model
from src.usecase.generate_scene_usecase import (
    GenerateSceneUseCase,
    SyntheticSceneConfig,
    generate_sequence,
)
from src.usecase.track_object_usecase import (
    TIMING_COLUMNS,
    TrackObjectUseCase,
    pose_change,
    write_timings_csv,
)
from tests.mesh_factory import box_mesh, camera

LOGGER = "src.usecase.track_object_usecase"
# 3面が見える斜めからの姿勢
GROUND_TRUTH = PoseSE3(
    Rotation.from_euler("xy", [35.0, 45.0], degrees=True).as_matrix(), [0.0, 0.0, 0.5]
)


@pytest.fixture(scope="module")
def box():
    return box_mesh(0.05)


@pytest.fixture(scope="module")
def model(box):
    config = ModelGenerationConfig(subdivision_level=1, n_contour_points=100, n_surface_points=100)
    return generate_model(box, config)


@pytest.fixture(scope="module")
def frame(box):
    config = SyntheticSceneConfig(
        mesh=box, intrinsics=camera(), initial_pose=GROUND_TRUTH, n_frames=1, seed=1, color_noise=0.0
    )
    sequence = generate_sequence(config)
    return sequence.colors[0], sequence.depths[0]


def _shifted(offset) -> PoseSE3:
    return PoseSE3(GROUND_TRUTH.rotation, GROUND_TRUTH.translation + np.asarray(offset))


def _error(pose: PoseSE3):
    translation, rotation = pose_change(GROUND_TRUTH, pose)
    return translation, np.degrees(rotation)


class TestTrackFrame:
    """track_frame / initialize_histogramsのテストクラス"""

    def test_initialize_histograms_物体色と背景色のビンが学習されること(self, model, frame):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        color, _ = frame
        state = TrackerState(pose=GROUND_TRUTH, model=model)
        use_case = TrackObjectUseCase(camera())

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        use_case.initialize_histograms(state, color)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert state.histograms.initialized
        foreground_bin = int(color_bins(np.array([200, 60, 40])))
        background_bin = int(color_bins(np.array([40, 60, 200])))
        assert state.histograms.foreground.argmax() == foreground_bin
        assert state.histograms.background.argmax() == background_bin

    def test_track_frame_正しい姿勢から始めた場合_姿勢がほぼ変わらないこと(self, model, frame):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        color, depth = frame
        state = TrackerState(pose=GROUND_TRUTH, model=model)
        use_case = TrackObjectUseCase(camera())
        use_case.initialize_histograms(state, color)

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        result = use_case.track_frame(state, color, depth)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        translation, rotation = _error(result.pose)
        assert not result.tracking_lost
        assert result.n_lines >= 10 and result.n_points >= 10
        assert translation < 1e-3
        assert rotation < 1.0
        assert state.pose is result.pose

    def test_track_frame_深度だけで5mmずれた姿勢から始めた場合_1mm以内に戻ること(self, model, frame):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        color, depth = frame
        state = TrackerState(pose=_shifted([0.005, 0.0, 0.0]), model=model, use_region=False)
        use_case = TrackObjectUseCase(camera())

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        result = use_case.track_frame(state, color, depth)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        translation, rotation = _error(result.pose)
        assert result.n_lines == 0
        assert translation < 1e-3
        assert rotation < 1.0

    def test_track_frame_両モダリティで5mmずれた姿勢から始めた場合_1mm以内に戻ること(self, model, frame):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        color, depth = frame
        state = TrackerState(pose=GROUND_TRUTH, model=model)
        use_case = TrackObjectUseCase(camera(), record_trace=True)
        use_case.initialize_histograms(state, color)
        state.pose = _shifted([0.005, 0.0, 0.0])

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        result = use_case.track_frame(state, color, depth)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        translation, _ = _error(result.pose)
        assert translation < 1e-3
        assert len(result.trace) == state.schedule.n_corr_iterations
        assert result.trace[-1] is result.pose

    def test_track_frame_対応が不足する場合_喪失として姿勢を保つこと(self, model, frame, caplog):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        color, _ = frame
        start = _shifted([0.002, 0.0, 0.0])
        state = TrackerState(pose=start, model=model, use_region=False)
        empty = DepthImage(np.zeros((480, 640)))
        use_case = TrackObjectUseCase(camera())

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        with caplog.at_level(logging.WARNING, logger=LOGGER):
            result = use_case.track_frame(state, color, empty)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert result.tracking_lost
        assert state.tracking_lost
        assert result.n_points == 0
        np.testing.assert_array_equal(result.pose.matrix, start.matrix)
        assert "トラッキング喪失" in caplog.text

    def test_track_frame_喪失した場合_警告にフレームと反復とモダリティが付くこと(self, model, frame, caplog):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        color, _ = frame
        state = TrackerState(pose=_shifted([0.002, 0.0, 0.0]), model=model, use_region=False)
        empty = DepthImage(np.zeros((480, 640)))
        use_case = TrackObjectUseCase(camera())
        caplog.handler.addFilter(TrackingContextFilter())

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        with caplog.at_level(logging.WARNING, logger=LOGGER), tracking_context(frame=7):
            use_case.track_frame(state, color, empty)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        lost = [r for r in caplog.records if "トラッキング喪失" in r.getMessage()]
        assert [r.tracking_context for r in lost] == ["[F000007|i0|depth]"]


class TestRefinePose:
    """refine_poseのテストクラス"""

    def test_refine_pose_1cmずれた初期姿勢の場合_正解付近に収束すること(self, model, frame):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        color, depth = frame
        state = TrackerState(
            pose=PoseSE3.identity(), model=model, schedule=IterationSchedule.preset("refinement")
        )
        use_case = TrackObjectUseCase(camera())

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        result = use_case.refine_pose(state, color, depth, _shifted([0.006, 0.0, 0.008]))

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        translation, rotation = _error(result.pose)
        assert state.mode == TrackingMode.REFINEMENT
        assert state.histograms.initialized
        assert translation < 2e-3
        assert rotation < 2.0


@pytest.mark.slow
class TestRun:
    """runとタイミング出力のテストクラス"""

    def test_run_等速で動くシーケンスの場合_全フレームを追跡できること(self, box, model, tmp_path):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        scene = GenerateSceneUseCase()
        config = SyntheticSceneConfig(
            mesh=box,
            intrinsics=camera(),
            initial_pose=GROUND_TRUTH,
            n_frames=4,
            seed=2,
            constant_velocity=(0.002, 0.0, 0.0),
        )
        sequence = scene.execute(config)
        scene.save(sequence, tmp_path)
        state = TrackerState(pose=GROUND_TRUTH, model=model)

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        run = TrackObjectUseCase(camera()).run(state, NetpbmFrameStore(tmp_path))

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert run.trajectory.indices == (0, 1, 2, 3)
        assert run.lost_frames == 0
        assert current_frame.get() is None
        for estimated, truth in zip(run.trajectory.poses, sequence.ground_truth.poses):
            translation, _ = pose_change(truth, estimated)
            assert translation < 3e-3

        path = write_timings_csv(tmp_path / "out" / "timings.csv", run)
        with path.open(encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == TIMING_COLUMNS
        assert [row[0] for row in rows[1:]] == ["0", "1", "2", "3"]
        assert all(float(value) >= 0 for row in rows[1:] for value in row[1:])

    def test_run_フレームがない場合_例外が発生すること(self, model, tmp_path):
        state = TrackerState(pose=GROUND_TRUTH, model=model)
        with pytest.raises(ValueError, match="フレームがありません"):
            TrackObjectUseCase(camera()).run(state, NetpbmFrameStore(tmp_path))


class TestPoseChange:
    """pose_changeのテストクラス"""

    def test_pose_change_並進と回転の差を返すこと(self):
        after = PoseSE3(Rotation.from_euler("z", 10.0, degrees=True).as_matrix(), [0.0, 0.003, 0.004])
        translation, rotation = pose_change(PoseSE3.identity(), after)
        assert translation == pytest.approx(0.005)
        assert rotation == pytest.approx(np.radians(10.0))
