"""
Unit tests for stage error reporting.
"""
from granulite.errors import EmptyInput, GranuliteError, NonManifoldEdge, StageFailure
from granulite.services.error_handler import StageErrorHandler


class _UnlistedError(GranuliteError):
    pass


def test_format_includes_stage_type_and_hint():
    """Test that a known error is tagged with its stage and carries its hint."""
    handler = StageErrorHandler()
    message = handler.format("segment", NonManifoldEdge((3, 7), 3))
    assert message.startswith("[segment] NonManifoldEdge: edge (3, 7) is shared by 3 faces")
    assert "Hint: Repair the mesh" in message


def test_stage_failure_is_unwrapped():
    """Test that wrapped failures report the inner error and its stage."""
    handler = StageErrorHandler()
    wrapped = StageFailure("measure", EmptyInput("gradation needs at least one particle"))
    assert handler.format("pipeline", wrapped).startswith("[measure] EmptyInput:")


def test_unknown_errors_fall_back_to_default():
    """Test that unlisted classes and foreign exceptions use the default entry."""
    handler = StageErrorHandler()
    assert handler.describe(RuntimeError("boom")) == handler.default
    assert handler.describe(_UnlistedError("x")) == handler.default
    assert "Hint:" in handler.format("load", RuntimeError("boom"))


def test_track_counts_errors(caplog):
    """Test that tracked errors are counted, remembered and logged."""
    handler = StageErrorHandler()
    handler.track("measure", EmptyInput("no particles"))
    handler.track("measure", EmptyInput("no particles"))
    handler.track("segment", NonManifoldEdge((0, 1), 3))
    stats = handler.get_error_stats()
    assert stats["total_errors"] == 3
    assert stats["error_types"] == {"EmptyInput": 2, "NonManifoldEdge": 1}
    assert stats["recent_errors"][-1]["stage"] == "segment"
    assert "no particles" in caplog.text


def test_custom_messages_file(tmp_path):
    """Test that a custom messages file replaces the packaged one."""
    path = tmp_path / "messages.yaml"
    path.write_text(
        "error_messages:\n  EmptyInput:\n    description: nothing\n    hint: try again\n"
        "default:\n  description: other\n"
    )
    handler = StageErrorHandler(str(path))
    assert handler.format("measure", EmptyInput("none")) == "[measure] EmptyInput: none. Hint: try again"
    assert handler.format("load", RuntimeError("x")) == "[load] RuntimeError: x"
