import pytest

from probegeom_extract.paraphrase import TEMPLATES, Row, paraphrase_rows


def test_each_row_becomes_five_variants():
    rows = [Row("Q1?", "Paris", 1, 7), Row("Q2?", "Lyon", 0, 8, dataset_tag="t")]
    out = paraphrase_rows(rows)
    assert len(out) == 5 * len(rows)
    assert [r.paraphrase_id for r in out] == [0, 1, 2, 3, 4] * 2
    assert [r.answer for r in out[:5]] == [
        "Paris",
        "The answer is: Paris",
        "To be precise, Paris",
        "In other words, Paris",
        "Simply put, Paris",
    ]
    assert {(r.group_id, r.label, r.dataset_tag) for r in out[5:]} == {(8, 0, "t")}
    assert len(TEMPLATES) == 5


def test_rows_are_checked():
    assert Row.from_json({"question": "q", "answer": "a", "label": True, "group_id": 1}).label == 1
    with pytest.raises(ValueError, match="label"):
        Row.from_json({"question": "q", "answer": "a", "label": 3, "group_id": 1})
    with pytest.raises(ValueError, match="group_id"):
        Row.from_json({"question": "q", "answer": "a", "label": 0})
