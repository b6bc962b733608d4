"""CLIのテスト"""

import os
from unittest.mock import patch

import pytest

from src.adapter.netpbm_frame_store import NetpbmFrameStore
from src.adapter.trajectory_file import read_trajectory
from src.adapter.viewpoint_model_file import ViewpointModelFile
from src.main.cli import (
    EVALUATION_MANIFEST_FILE,
    MANIFEST_FILE,
    TIMINGS_FILE,
    TRAJECTORY_FILE,
    build_parser,
    dispatch,
)
from src.main.settings import load_run_config, parse_config
from tests.mesh_factory import CUBE_OBJ

CONFIG = """
[camera_color]
fx = 300
fy = 300
px = 160
py = 120
width = 320
height = 240

[model]
subdivision_level = 0
n_contour_points = 60
n_surface_points = 60
render_width = 160
render_height = 120

[scene]
n_frames = 2
translation_step = 0.002
rotation_step_deg = 1.0
"""

ENV = {"ICG_THREADS": "1", "LOG_LEVEL": "WARNING"}


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "box.obj").write_text(CUBE_OBJ, encoding="utf-8")
    (tmp_path / "run.ini").write_text(CONFIG, encoding="utf-8")
    return tmp_path


def _dispatch(argv):
    with patch.dict(os.environ, ENV, clear=True):
        with patch("src.main.settings.load_dotenv"), patch("src.main.cli.setup_logging"):
            return dispatch(argv)


def _prepare(workspace):
    """視点モデルと2フレームの合成シーンを生成する"""
    config = str(workspace / "run.ini")
    mesh = str(workspace / "box.obj")
    model_path = workspace / "model" / "box.icgm"
    frames = workspace / "frames"
    assert _dispatch(["generate-model", "--config", config, "--mesh", mesh, "--output", str(model_path)]) == 0
    assert _dispatch(["generate-scene", "--config", config, "--mesh", mesh, "--output", str(frames)]) == 0
    return model_path, frames


class TestBuildParser:
    """build_parserのテストクラス"""

    def test_build_parser_refineの場合_初期姿勢ファイルを受け付けること(self):
        args = build_parser().parse_args(["refine", "--initial", "poses.txt"])
        assert args.command == "refine"
        assert args.initial_trajectory == "poses.txt"

    def test_build_parser_evaluateで指標と閾値を省略した場合_設定の既定値に委ねること(self):
        args = build_parser().parse_args(
            ["evaluate", "--mesh", "m.obj", "--estimated", "e.txt", "--ground-truth", "g.txt"]
        )
        assert args.metric is None
        assert args.threshold is None
        assert not args.kdtree
        evaluation = parse_config("").evaluation
        assert (evaluation.metric, evaluation.threshold, evaluation.kdtree) == ("all", 0.01, False)


class TestDispatch:
    """dispatchのテストクラス"""

    def test_dispatch_未知のサブコマンドの場合_終了コード2になること(self, capsys):
        assert _dispatch(["unknown"]) == 2

    def test_dispatch_メッシュが存在しない場合_終了コード1になること(self, workspace, capsys):
        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        exit_code = _dispatch(
            [
                "generate-model",
                "--config",
                str(workspace / "run.ini"),
                "--mesh",
                str(workspace / "missing.obj"),
                "--output",
                str(workspace / "model.icgm"),
            ]
        )

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert exit_code == 1
        assert "ファイルが見つかりません" in capsys.readouterr().out

    def test_dispatch_カメラ設定がない場合_設定エラーで終了コード1になること(self, workspace, capsys):
        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        exit_code = _dispatch(
            [
                "generate-scene",
                "--mesh",
                str(workspace / "box.obj"),
                "--output",
                str(workspace / "frames"),
            ]
        )

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert exit_code == 1
        assert "[camera_color]" in capsys.readouterr().out

    def test_dispatch_設定ファイルが不正な場合_キーを含むエラーになること(self, workspace, capsys):
        (workspace / "bad.ini").write_text("[tracker]\nsigma_r = abc\n", encoding="utf-8")
        exit_code = _dispatch(["track", "--config", str(workspace / "bad.ini")])
        assert exit_code == 1
        assert "[tracker] sigma_r" in capsys.readouterr().out

    def test_dispatch_初期姿勢がない場合_終了コード1になること(self, workspace, capsys):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        model_path = workspace / "model" / "box.icgm"
        assert (
            _dispatch(
                [
                    "generate-model",
                    "--config",
                    str(workspace / "run.ini"),
                    "--mesh",
                    str(workspace / "box.obj"),
                    "--output",
                    str(model_path),
                ]
            )
            == 0
        )
        (workspace / "frames").mkdir()

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        exit_code = _dispatch(
            [
                "track",
                "--config",
                str(workspace / "run.ini"),
                "--model",
                str(model_path),
                "--frames",
                str(workspace / "frames"),
                "--output",
                str(workspace / "out"),
            ]
        )

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert exit_code == 1
        assert "initial_pose" in capsys.readouterr().out


@pytest.mark.slow
class TestPipeline:
    """生成から評価までのパイプラインのテストクラス"""

    def test_dispatch_生成_追跡_評価_描画を順に実行できること(self, workspace, capsys):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        config = str(workspace / "run.ini")
        mesh = str(workspace / "box.obj")
        model_path = workspace / "model" / "box.icgm"
        frames = workspace / "frames"
        output = workspace / "out"

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        generate_model = _dispatch(
            ["generate-model", "--config", config, "--mesh", mesh, "--output", str(model_path), "--seed", "5"]
        )
        generate_scene = _dispatch(
            ["generate-scene", "--config", config, "--mesh", mesh, "--output", str(frames)]
        )
        track = _dispatch(
            [
                "track",
                "--config",
                config,
                "--model",
                str(model_path),
                "--frames",
                str(frames),
                "--output",
                str(output),
                "--ground-truth",
                str(frames / "ground_truth.txt"),
            ]
        )
        capsys.readouterr()
        evaluate = _dispatch(
            [
                "evaluate",
                "--mesh",
                mesh,
                "--estimated",
                str(output / TRAJECTORY_FILE),
                "--ground-truth",
                str(frames / "ground_truth.txt"),
                "--metric",
                "rbot",
                "--csv",
                str(output / "errors.csv"),
            ]
        )
        report = capsys.readouterr().out
        overlay = _dispatch(
            [
                "overlay",
                "--config",
                config,
                "--model",
                str(model_path),
                "--frames",
                str(frames),
                "--trajectory",
                str(output / TRAJECTORY_FILE),
                "--output",
                str(workspace / "overlay"),
            ]
        )

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert (generate_model, generate_scene, track, evaluate, overlay) == (0, 0, 0, 0, 0)

        model = ViewpointModelFile().read(model_path)
        assert len(model) == 12
        assert model.config.seed == 5
        assert load_run_config(model_path.parent / MANIFEST_FILE).model.seed == 5

        assert NetpbmFrameStore(frames).frame_indices() == [0, 1]
        assert read_trajectory(output / TRAJECTORY_FILE).indices == (0, 1)
        assert (output / TIMINGS_FILE).exists()
        manifest = output / MANIFEST_FILE
        assert manifest.read_text(encoding="utf-8").startswith("# command: track\n")
        assert load_run_config(manifest).io.frames == str(frames)

        assert report.startswith("frames=2\nrbot_success=")
        assert (output / "errors.csv").exists()
        evaluation = load_run_config(output / EVALUATION_MANIFEST_FILE)
        assert evaluation.evaluation.metric == "rbot"
        assert evaluation.io.estimated == str(output / TRAJECTORY_FILE)
        assert evaluation.io.errors_csv == str(output / "errors.csv")
        assert sorted(path.name for path in (workspace / "overlay").iterdir()) == [
            "overlay_000000.ppm",
            "overlay_000001.ppm",
            MANIFEST_FILE,
        ]
        overlay_manifest = workspace / "overlay" / MANIFEST_FILE
        assert overlay_manifest.read_text(encoding="utf-8").startswith("# command: overlay\n")
        assert load_run_config(overlay_manifest).io.trajectory == str(output / TRAJECTORY_FILE)

    def test_dispatch_refineの場合_初期姿勢ファイルのパスがマニフェストに残ること(self, workspace):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        model_path, frames = _prepare(workspace)
        initial = frames / "ground_truth.txt"
        output = workspace / "refined"

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        exit_code = _dispatch(
            [
                "refine",
                "--config",
                str(workspace / "run.ini"),
                "--model",
                str(model_path),
                "--frames",
                str(frames),
                "--output",
                str(output),
                "--initial",
                str(initial),
            ]
        )

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert exit_code == 0
        assert read_trajectory(output / TRAJECTORY_FILE).indices == (0, 1)
        manifest = load_run_config(output / MANIFEST_FILE)
        assert manifest.io.initial_trajectory == str(initial)


class TestDeterminism:
    """再現性のテストクラス"""

    def test_dispatch_同じシードでモデルを2回生成した場合_バイト単位で一致すること(self, workspace):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        paths = [workspace / "a" / "box.icgm", workspace / "b" / "box.icgm"]

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        for path in paths:
            exit_code = _dispatch(
                [
                    "generate-model",
                    "--config",
                    str(workspace / "run.ini"),
                    "--mesh",
                    str(workspace / "box.obj"),
                    "--output",
                    str(path),
                    "--seed",
                    "7",
                ]
            )
            assert exit_code == 0

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_dispatch_マニフェストから再実行した場合_同じシーンになること(self, workspace):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        first = workspace / "first"
        mesh = str(workspace / "box.obj")
        assert (
            _dispatch(["generate-scene", "--config", str(workspace / "run.ini"), "--mesh", mesh, "--output", str(first)])
            == 0
        )
        second = workspace / "second"

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        exit_code = _dispatch(
            ["generate-scene", "--config", str(first / MANIFEST_FILE), "--output", str(second)]
        )

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert exit_code == 0
        for name in ("color_000000.ppm", "depth_000001.pgm", "ground_truth.txt"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_dispatch_追跡をマニフェストから再実行した場合_軌跡がバイト単位で一致すること(self, workspace):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        model_path, frames = _prepare(workspace)
        output = workspace / "out"
        assert (
            _dispatch(
                [
                    "track",
                    "--config",
                    str(workspace / "run.ini"),
                    "--model",
                    str(model_path),
                    "--frames",
                    str(frames),
                    "--output",
                    str(output),
                    "--ground-truth",
                    str(frames / "ground_truth.txt"),
                ]
            )
            == 0
        )
        manifest = output / MANIFEST_FILE
        first_trajectory = (output / TRAJECTORY_FILE).read_bytes()
        first_manifest = manifest.read_bytes()

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        exit_code = _dispatch(["track", "--config", str(manifest)])

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert exit_code == 0
        assert (output / TRAJECTORY_FILE).read_bytes() == first_trajectory
        assert manifest.read_bytes() == first_manifest
