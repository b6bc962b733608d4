"""ロギングユーティリティ - フレーム・対応付け反復・モダリティのコンテキスト管理"""

import logging
import threading
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Iterator, Optional

# コンテキスト変数：現在処理中のフレーム番号・対応付け反復・モダリティ
current_frame: ContextVar[Optional[int]] = ContextVar("current_frame", default=None)
current_iteration: ContextVar[Optional[int]] = ContextVar("current_iteration", default=None)
current_modality: ContextVar[Optional[str]] = ContextVar("current_modality", default=None)


@contextmanager
def tracking_context(
    frame: Optional[int] = None,
    iteration: Optional[int] = None,
    modality: Optional[str] = None,
) -> Iterator[None]:
    """
    ブロック内のログにフレーム番号・反復番号・モダリティを付与する

    Noneを渡した項目は外側のコンテキストを引き継ぐ。

    Args:
        frame: フレーム番号
        iteration: 対応付け反復の番号（0始まり）
        modality: モダリティ名（region, depth, histogram など）
    """
    tokens = []
    for variable, value in (
        (current_frame, frame),
        (current_iteration, iteration),
        (current_modality, modality),
    ):
        if value is not None:
            tokens.append((variable, variable.set(value)))
    try:
        yield
    finally:
        for variable, token in reversed(tokens):
            variable.reset(token)


def format_tracking_context() -> str:
    """現在のコンテキストをログ用の接頭辞にする（例: [F000042|i2|region]）"""
    frame_index = current_frame.get()
    iteration = current_iteration.get()
    modality = current_modality.get()
    frame_part = f"F{frame_index:06d}" if frame_index is not None else "F------"
    iteration_part = f"i{iteration}" if iteration is not None else "i-"
    return f"[{frame_part}|{iteration_part}|{modality or '-'}]"


class TrackingContextFilter(logging.Filter):
    """追跡コンテキストとスレッド名をログレコードに追加するフィルター"""

    def filter(self, record: logging.LogRecord) -> bool:
        """
        ログレコードに追跡コンテキストを追加する

        Args:
            record: ログレコード

        Returns:
            bool: 常にTrue（フィルタリングはしない）
        """
        record.tracking_context = format_tracking_context()

        thread_id = threading.current_thread().ident
        if thread_id:
            record.thread_name = f"[T{thread_id % 1000:03d}]"
        else:
            record.thread_name = "[T---]"

        return True


def setup_logging(log_level: str = "INFO") -> None:
    """
    ルートロガーを初期化する

    Args:
        log_level: ログレベル（DEBUG, INFO, WARNING, ERROR）
    """
    root_logger = logging.getLogger()

    # 既存のハンドラーをクリア
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    handler = logging.StreamHandler()
    handler.addFilter(TrackingContextFilter())
    formatter = logging.Formatter(
        "%(asctime)s %(thread_name)s%(tracking_context)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%H:%M:%S",
    )
    handler.setFormatter(formatter)
    root_logger.addHandler(handler)

    numeric_level = getattr(logging, log_level.upper(), logging.INFO)
    root_logger.setLevel(numeric_level)
