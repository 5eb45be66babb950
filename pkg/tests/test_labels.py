import pytest

from src.labels import Label


@pytest.mark.parametrize("value, expected", [
    ("phish", Label.PHISH),
    (" Ham ", Label.HAM),
    ("1", Label.PHISH),
    (0, Label.HAM),
    (1, Label.PHISH),
    (True, Label.PHISH),
    (False, Label.HAM),
    (Label.HAM, Label.HAM),
    ("", None),
    (None, None),
    (2, None),
    (-7, None),
])
def test_parse(value, expected):
    assert Label.parse(value) is expected


def test_parse_rejects_unknown_words():
    with pytest.raises(ValueError):
        Label.parse("spam")


def test_target():
    assert Label.PHISH.target == 1.0
    assert Label.HAM.target == 0.0
