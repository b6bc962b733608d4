"""ロギングユーティリティのテスト"""

import logging

import pytest

from src.adapter.logging_utils import (
    TrackingContextFilter,
    current_frame,
    current_iteration,
    current_modality,
    setup_logging,
    tracking_context,
)


@pytest.fixture
def restore_root_logger():
    root_logger = logging.getLogger()
    handlers = root_logger.handlers[:]
    level = root_logger.level
    yield root_logger
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
    for handler in handlers:
        root_logger.addHandler(handler)
    root_logger.setLevel(level)


def _record() -> logging.LogRecord:
    return logging.LogRecord("test", logging.INFO, __file__, 1, "message", None, None)


class TestTrackingContextFilter:
    """TrackingContextFilterのテストクラス"""

    def test_filter_フレーム処理中の場合_フレーム番号と反復とモダリティが付与されること(self):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        record = _record()

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        with tracking_context(frame=42, iteration=2, modality="region"):
            passed = TrackingContextFilter().filter(record)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert passed is True
        assert record.tracking_context == "[F000042|i2|region]"
        assert record.thread_name.startswith("[T")

    def test_filter_フレーム外の場合_プレースホルダーが付与されること(self):
        record = _record()
        TrackingContextFilter().filter(record)
        assert record.tracking_context == "[F------|i-|-]"


class TestTrackingContext:
    """tracking_contextのテストクラス"""

    def test_tracking_context_入れ子の場合_指定した項目だけ上書きされ抜けると戻ること(self):
        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        with tracking_context(frame=3, iteration=0, modality="region+depth"):
            with tracking_context(modality="depth"):
                inner = (current_frame.get(), current_iteration.get(), current_modality.get())
            outer = (current_frame.get(), current_iteration.get(), current_modality.get())
        after = (current_frame.get(), current_iteration.get(), current_modality.get())

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert inner == (3, 0, "depth")
        assert outer == (3, 0, "region+depth")
        assert after == (None, None, None)

    def test_tracking_context_例外が発生した場合_コンテキストが戻ること(self):
        with pytest.raises(RuntimeError):
            with tracking_context(frame=5):
                raise RuntimeError("失敗")
        assert current_frame.get() is None


class TestSetupLogging:
    """setup_loggingのテストクラス"""

    def test_setup_logging_呼び出した場合_ハンドラーが1つだけ登録されること(self, restore_root_logger):
        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        setup_logging("DEBUG")
        setup_logging("warning")

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert len(restore_root_logger.handlers) == 1
        assert restore_root_logger.level == logging.WARNING
        assert any(
            isinstance(f, TrackingContextFilter) for f in restore_root_logger.handlers[0].filters
        )

    def test_setup_logging_未知のレベルの場合_INFOになること(self, restore_root_logger):
        setup_logging("VERBOSE")
        assert restore_root_logger.level == logging.INFO
