"""cli.py - 視点モデル生成・合成シーン生成・追跡・評価のCLIエントリーポイント"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from src.adapter.logging_utils import setup_logging
from src.adapter.netpbm_frame_store import NetpbmFrameStore
from src.adapter.obj_mesh_loader import ObjMeshLoader
from src.adapter.trajectory_file import read_trajectory, write_trajectory
from src.adapter.viewpoint_model_file import ViewpointModelFile
from src.domain.geometry import PoseSE3
from src.domain.pose_metrics import PoseSequence
from src.main.settings import (
    EnvironmentConfig,
    RunConfig,
    load_environment,
    load_run_config,
    resolved_config_text,
)
from src.usecase.evaluate_trajectory_usecase import (
    DEFAULT_ADD_THRESHOLD,
    METRICS,
    EvaluateTrajectoryUseCase,
    write_report_csv,
)
from src.usecase.generate_model_usecase import GenerateModelUseCase
from src.usecase.generate_scene_usecase import GenerateSceneUseCase
from src.usecase.render_overlay_usecase import RenderOverlayUseCase
from src.usecase.track_object_usecase import (
    FrameResult,
    TrackingRun,
    TrackObjectUseCase,
    write_timings_csv,
)

MANIFEST_FILE = "run_manifest.ini"
# 評価は推定軌跡の隣にも書くため、追跡のマニフェストと別名にする
EVALUATION_MANIFEST_FILE = "evaluation_manifest.ini"
TRAJECTORY_FILE = "trajectory.txt"
TIMINGS_FILE = "timings.csv"

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """
    サブコマンド付きの引数パーサーを作成する

    Returns:
        argparse.ArgumentParser: パーサー
    """
    parser = argparse.ArgumentParser(
        prog="icg-tracker",
        description="テクスチャのない物体の領域・深度統合トラッカー",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_config(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", type=Path, help="INI形式の設定ファイル（run_manifest.ini も可）")

    sub = subparsers.add_parser("generate-model", help="メッシュから疎視点モデルを生成する")
    add_config(sub)
    sub.add_argument("--mesh", help="OBJメッシュ")
    sub.add_argument("--output", help="出力する視点モデルファイル")
    sub.add_argument("--seed", type=int, help="乱数シード")

    sub = subparsers.add_parser("generate-scene", help="正解付きの合成RGB-Dシーケンスを生成する")
    add_config(sub)
    sub.add_argument("--mesh", help="OBJメッシュ")
    sub.add_argument("--output", help="出力ディレクトリ")
    sub.add_argument("--seed", type=int, help="乱数シード")
    sub.add_argument("--frames", type=int, dest="n_frames", help="フレーム数")

    for name, description in (
        ("track", "フレーム列の物体姿勢を追跡する"),
        ("refine", "与えた初期姿勢を精密化する"),
    ):
        sub = subparsers.add_parser(name, help=description)
        add_config(sub)
        sub.add_argument("--model", help="視点モデルファイル")
        sub.add_argument("--frames", help="color_%%06d.ppm / depth_%%06d.pgm のディレクトリ")
        sub.add_argument("--output", help="出力ディレクトリ")
        sub.add_argument(
            "--ground-truth",
            dest="ground_truth",
            help="初期姿勢を取る正解軌跡（[io] initial_pose がない場合に先頭姿勢を使う）",
        )
    sub.add_argument(
        "--initial", dest="initial_trajectory", help="フレームごとの初期姿勢を持つ軌跡ファイル"
    )

    sub = subparsers.add_parser("evaluate", help="推定軌跡を正解軌跡と比較する")
    add_config(sub)
    sub.add_argument("--mesh", help="評価に使うOBJメッシュ")
    sub.add_argument("--estimated", help="推定軌跡")
    sub.add_argument("--ground-truth", dest="ground_truth", help="正解軌跡")
    sub.add_argument("--output", help="evaluation_manifest.ini を書き出すディレクトリ（省略時は推定軌跡の隣）")
    sub.add_argument("--metric", choices=METRICS, help="出力する指標（既定: all）")
    sub.add_argument("--threshold", type=float, help=f"ADD閾値（m、既定: {DEFAULT_ADD_THRESHOLD}）")
    sub.add_argument("--csv", dest="errors_csv", help="フレームごとの誤差を書き出すCSV")
    sub.add_argument("--kdtree", action="store_true", help="ADD-SにcKDTreeを使う")

    sub = subparsers.add_parser("overlay", help="推定姿勢のモデル輪郭をフレームに重ねる")
    add_config(sub)
    sub.add_argument("--model", help="視点モデルファイル")
    sub.add_argument("--frames", help="フレームディレクトリ")
    sub.add_argument("--trajectory", help="描画する軌跡")
    sub.add_argument("--output", help="出力ディレクトリ")
    sub.add_argument("--normals", action="store_true", help="輪郭法線も描画する")
    return parser


def _merge_io(config: RunConfig, args: argparse.Namespace, keys: List[str]) -> RunConfig:
    """コマンドライン引数で [io] を上書きする"""
    updates = {key: str(getattr(args, key)) for key in keys if getattr(args, key, None) is not None}
    if not updates:
        return config
    return config.model_copy(update={"io": config.io.model_copy(update=updates)})


def _write_manifest(
    directory: Path, command: str, config: RunConfig, file_name: str = MANIFEST_FILE
) -> Path:
    path = directory / file_name
    directory.mkdir(parents=True, exist_ok=True)
    path.write_text(f"# command: {command}\n" + resolved_config_text(config), encoding="utf-8")
    return path


def run_generate_model(args: argparse.Namespace, config: RunConfig, env: EnvironmentConfig) -> int:
    config = _merge_io(config, args, ["mesh"])
    if args.output is not None:
        config = config.model_copy(update={"io": config.io.model_copy(update={"model": args.output})})
    if args.seed is not None:
        config = config.with_seed(args.seed)

    mesh = ObjMeshLoader().load_file(str(config.io.path("mesh")))
    model = GenerateModelUseCase().execute(mesh, config.model.generation_config(), env.threads)
    output = ViewpointModelFile().write(model, config.io.path("model"))
    _write_manifest(output.parent, "generate-model", config)
    print(f"視点モデルを生成しました: {output}（{len(model)}視点）")
    return 0


def run_generate_scene(args: argparse.Namespace, config: RunConfig, env: EnvironmentConfig) -> int:
    config = _merge_io(config, args, ["mesh"])
    if args.output is not None:
        config = config.model_copy(update={"io": config.io.model_copy(update={"frames": args.output})})
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.n_frames is not None:
        config = config.model_copy(
            update={"scene": config.scene.model_copy(update={"n_frames": args.n_frames})}
        )

    mesh = ObjMeshLoader().load_file(str(config.io.path("mesh")))
    scene = config.scene.scene_config(mesh, config.color_intrinsics())
    usecase = GenerateSceneUseCase()
    sequence = usecase.execute(scene, env.threads)
    directory = config.io.path("frames")
    usecase.save(sequence, directory)
    _write_manifest(directory, "generate-scene", config)
    print(f"合成シーンを生成しました: {directory}（{len(sequence.colors)}フレーム）")
    return 0


def _initial_pose(config: RunConfig) -> PoseSE3:
    pose = config.io.pose()
    if pose is not None:
        return pose
    if config.io.ground_truth:
        ground_truth = read_trajectory(config.io.path("ground_truth"))
        if len(ground_truth) == 0:
            raise ValueError(f"正解軌跡が空です: {config.io.ground_truth}")
        return ground_truth.poses[0]
    raise ValueError("[io] initial_pose または ground_truth が必要です")


def _save_run(directory: Path, command: str, config: RunConfig, run: TrackingRun) -> Path:
    trajectory = write_trajectory(directory / TRAJECTORY_FILE, run.trajectory)
    write_timings_csv(directory / TIMINGS_FILE, run)
    _write_manifest(directory, command, config)
    return trajectory


def run_track(args: argparse.Namespace, config: RunConfig, env: EnvironmentConfig) -> int:
    config = _merge_io(config, args, ["model", "frames", "output", "ground_truth"])
    model = ViewpointModelFile().read(config.io.path("model"))
    store = NetpbmFrameStore(config.io.path("frames"))
    state = config.tracker.tracker_state(_initial_pose(config), model, config.extrinsics())

    usecase = TrackObjectUseCase(config.color_intrinsics(), config.depth_intrinsics())
    run = usecase.run(state, store)
    trajectory = _save_run(config.io.path("output"), "track", config, run)
    print(f"追跡が完了しました: {trajectory}（{len(run.results)}フレーム, 喪失 {run.lost_frames}）")
    return 0


def run_refine(args: argparse.Namespace, config: RunConfig, env: EnvironmentConfig) -> int:
    config = _merge_io(
        config, args, ["model", "frames", "output", "ground_truth", "initial_trajectory"]
    )
    if config.tracker.preset != "refinement":
        logger.info("ℹ️ refine では [tracker] preset = refinement を推奨します")
    model = ViewpointModelFile().read(config.io.path("model"))
    store = NetpbmFrameStore(config.io.path("frames"))
    usecase = TrackObjectUseCase(config.color_intrinsics(), config.depth_intrinsics())

    if config.io.initial_trajectory:
        initial = read_trajectory(config.io.path("initial_trajectory"))
    else:
        indices = store.frame_indices()
        pose = _initial_pose(config)
        initial = PoseSequence(tuple(indices), tuple(pose for _ in indices))
    if len(initial) == 0:
        raise ValueError("精密化するフレームがありません")

    results: List[FrameResult] = []
    for index, pose in zip(initial.indices, initial.poses):
        state = config.tracker.tracker_state(pose, model, config.extrinsics())
        results.append(
            usecase.refine_pose(state, store.read_color(index), store.read_depth(index), pose)
        )
    run = TrackingRun(
        trajectory=PoseSequence(initial.indices, tuple(r.pose for r in results)),
        results=results,
    )
    trajectory = _save_run(config.io.path("output"), "refine", config, run)
    print(f"精密化が完了しました: {trajectory}（{len(results)}フレーム）")
    return 0


def run_evaluate(args: argparse.Namespace, config: RunConfig, env: EnvironmentConfig) -> int:
    config = _merge_io(config, args, ["mesh", "estimated", "ground_truth", "output", "errors_csv"])
    updates = {
        key: getattr(args, key) for key in ("metric", "threshold") if getattr(args, key) is not None
    }
    if args.kdtree:
        updates["kdtree"] = True
    if updates:
        config = config.model_copy(
            update={"evaluation": config.evaluation.model_copy(update=updates)}
        )
    evaluation = config.evaluation

    mesh = ObjMeshLoader().load_file(str(config.io.path("mesh")))
    estimated_path = config.io.path("estimated")
    estimated = read_trajectory(estimated_path)
    ground_truth = read_trajectory(config.io.path("ground_truth"))
    report = EvaluateTrajectoryUseCase(use_kdtree=evaluation.kdtree).execute(
        mesh, estimated, ground_truth, evaluation.threshold
    )
    sys.stdout.write(report.format(evaluation.metric))
    if config.io.errors_csv:
        write_report_csv(config.io.path("errors_csv"), report, estimated.indices)
    directory = config.io.path("output") if config.io.output else estimated_path.parent
    _write_manifest(directory, "evaluate", config, EVALUATION_MANIFEST_FILE)
    return 0


def run_overlay(args: argparse.Namespace, config: RunConfig, env: EnvironmentConfig) -> int:
    config = _merge_io(config, args, ["model", "frames", "output", "trajectory"])
    if args.normals:
        config = config.model_copy(update={"overlay": config.overlay.model_copy(update={"normals": True})})
    model = ViewpointModelFile().read(config.io.path("model"))
    store = NetpbmFrameStore(config.io.path("frames"))
    trajectory = read_trajectory(config.io.path("trajectory"))
    output = config.io.path("output")
    written = RenderOverlayUseCase(config.color_intrinsics(), config.overlay.normals).execute(
        store, model, trajectory, output
    )
    _write_manifest(output, "overlay", config)
    print(f"オーバーレイを書き出しました: {config.io.output}（{len(written)}枚）")
    return 0


def dispatch(argv: Optional[List[str]] = None) -> int:
    """
    サブコマンドを実行する

    Args:
        argv: コマンドライン引数（Noneなら sys.argv）

    Returns:
        int: 終了コード（0: 成功、1: 失敗、2: 使い方の誤り）
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        env = load_environment()
        setup_logging(env.log_level)

        config = load_run_config(args.config)
        handlers = {
            "generate-model": run_generate_model,
            "generate-scene": run_generate_scene,
            "track": run_track,
            "refine": run_refine,
            "evaluate": run_evaluate,
            "overlay": run_overlay,
        }
        return handlers[args.command](args, config, env)

    except FileNotFoundError as e:
        print(f"エラー: ファイルが見つかりません - {e}")
        return 1
    except ValueError as e:
        print(f"エラー: 入力または設定が不正です - {e}")
        return 1
    except Exception as e:
        logger.exception("❌ 予期しないエラー")
        print(f"予期しないエラーが発生しました: {e}")
        return 1


def main() -> int:
    """メイン処理"""
    return dispatch()


if __name__ == "__main__":
    sys.exit(main())
