"""Core type behavior: serialization round-trips, edit application, windows."""

from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from assocedit.edits import (
    Edit,
    EditProvenance,
    LineSpan,
    NewlineStyle,
    Prediction,
    Version,
    apply_edit,
    apply_edits,
    edited_region,
)
from assocedit.errors import SpanMismatch

from conftest import make_edit


class TestVersionSerialization:
    def test_lf_round_trip(self):
        text = "alpha\nbeta\n"
        v = Version.deserialize(text)
        assert v.lines == ("alpha", "beta")
        assert v.newline is NewlineStyle.LF
        assert v.trailing_newline
        assert v.serialize() == text

    def test_crlf_round_trip(self):
        text = "alpha\r\nbeta\r\n"
        v = Version.deserialize(text)
        assert v.newline is NewlineStyle.CRLF
        assert v.serialize() == text

    def test_missing_trailing_newline_preserved(self):
        text = "alpha\nbeta"
        v = Version.deserialize(text)
        assert not v.trailing_newline
        assert v.serialize() == text

    def test_empty_file(self):
        v = Version.deserialize("")
        assert v.lines == ()
        assert v.serialize() == ""

    def test_mixed_endings_fall_back_to_lf_and_stay_exact(self):
        text = "a\r\nb\nc"
        v = Version.deserialize(text)
        assert v.newline is NewlineStyle.LF
        assert v.serialize() == text

    @given(st.text(alphabet="ab\r\n\t ", max_size=60))
    def test_round_trip_is_identity_on_any_content(self, text):
        assert Version.deserialize(text).serialize() == text


class TestApplyEdit:
    def test_refactor_first_step_reaches_second_version(self, scenario):
        assert apply_edit(scenario.edit_12, scenario.v1) == scenario.v2

    def test_refactor_second_step_reaches_third_version(self, scenario):
        assert apply_edit(scenario.edit_23, scenario.v2) == scenario.v3

    def test_pure_insertion_at_point(self):
        source = Version(("a", "b", "c"))
        edit = make_edit([], ["x"], start=1)
        assert apply_edit(edit, source).lines == ("a", "x", "b", "c")

    def test_span_mismatch_raises(self):
        source = Version(("a", "b"))
        edit = make_edit(["not-there"], ["x"], start=0)
        with pytest.raises(SpanMismatch):
            apply_edit(edit, source)

    def test_span_beyond_version_raises(self):
        edit = make_edit(["a"], ["x"], start=5)
        with pytest.raises(SpanMismatch):
            apply_edit(edit, Version(("a",)))

    def test_is_pure(self, scenario):
        before = scenario.v1.serialize()
        apply_edit(scenario.edit_12, scenario.v1)
        assert scenario.v1.serialize() == before


class TestEditedRegion:
    def test_window_matches_final_version_slice(self, scenario):
        window = edited_region(scenario.edit_23, scenario.v2)
        # the window sits at prefix-start within the applied version
        start = scenario.edit_23.span.start - len(scenario.edit_23.prefix)
        end = start + len(window.lines)
        assert window.lines == scenario.v3.lines[start:end]

    def test_bare_after_when_no_context(self):
        source = Version(("old",))
        edit = make_edit(["old"], ["new"], start=0)
        assert edited_region(edit, source).lines == ("new",)

    def test_cross_checks_apply_edit(self):
        source = Version(tuple(f"l{i}" for i in range(10)))
        edit = make_edit(
            ["l4", "l5"],
            ["x", "y", "z"],
            start=4,
            prefix=["l2", "l3"],
            suffix=["l6", "l7"],
        )
        applied = apply_edit(edit, source)
        window = edited_region(edit, source)
        assert window.lines == applied.lines[2 : 2 + len(window.lines)]


class TestInvariants:
    def test_noop_edit_rejected(self):
        with pytest.raises(ValueError):
            make_edit(["same"], ["same"])

    def test_span_must_cover_before(self):
        with pytest.raises(ValueError):
            Edit(
                prefix=(),
                before=("a", "b"),
                after=("c",),
                suffix=(),
                span=LineSpan(0, 1),
                provenance=EditProvenance(),
            )

    def test_negative_span_rejected(self):
        with pytest.raises(ValueError):
            LineSpan(-1, 0)
        with pytest.raises(ValueError):
            LineSpan(3, 2)

    def test_prediction_rank_positive(self):
        with pytest.raises(ValueError):
            Prediction(rank=0, text=("x",))

    def test_apply_edits_bottom_to_top(self):
        source = Version(("a", "b", "c", "d"))
        edits = [
            make_edit(["a"], ["A"], start=0),
            make_edit(["c"], ["C", "C2"], start=2),
        ]
        assert apply_edits(edits, source).lines == ("A", "b", "C", "C2", "d")
