import io

import pytest

from ingest.synthetic_corpus import HAM, PHISH, SyntheticCorpus
from src.data_loader import CorpusLoader, iter_corpus, iter_source
from src.exceptions import CorpusError
from src.labels import Label


@pytest.fixture(name="corpus_dir")
def fixture_corpus_dir(tmp_path, phish_eml, ham_eml):
    mail = tmp_path / "mail"
    mail.mkdir()
    (mail / "phish.eml").write_bytes(phish_eml)
    (mail / "ham.eml").write_bytes(ham_eml)
    (mail / "mixed.mbox").write_bytes(SyntheticCorpus(seed=1).mbox([HAM, PHISH, HAM]))
    return mail


def test_manifest_relative_paths_and_labels(corpus_dir):
    manifest = corpus_dir / "manifest.csv"
    manifest.write_text("path,label\nphish.eml,phish\nham.eml, ham\nmixed.mbox,\n")
    items = CorpusLoader(manifest).load_items()
    assert [item.label for item in items] == [Label.PHISH, Label.HAM, None, None, None]
    assert [item.position for item in items] == [0, 1, 2, 3, 4]
    assert items[0].raw.startswith(b"From: PayPal")
    assert items[2].source.endswith("mixed.mbox")
    assert b"Subject: Notes from meeting 0" in items[2].raw


def test_empty_manifest(tmp_path):
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("")
    assert CorpusLoader(manifest).load_items() == []


def test_manifest_missing_column(tmp_path):
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("file,label\na.eml,ham\n")
    with pytest.raises(CorpusError, match="path"):
        CorpusLoader(manifest).load_manifest()


def test_manifest_bad_label(corpus_dir):
    manifest = corpus_dir / "manifest.csv"
    manifest.write_text("path,label\nham.eml,spam\n")
    with pytest.raises(CorpusError):
        CorpusLoader(manifest).load_manifest()


def test_manifest_missing_source(corpus_dir):
    manifest = corpus_dir / "manifest.csv"
    manifest.write_text("path,label\nnowhere.eml,ham\n")
    with pytest.raises(CorpusError):
        CorpusLoader(manifest).load_items()


def test_iter_source_fixed_label(corpus_dir):
    items = list(iter_source(corpus_dir / "mixed.mbox", Label.HAM))
    assert len(items) == 3
    assert all(item.label is Label.HAM for item in items)


def test_iter_corpus_on_stream():
    stream = io.BytesIO(SyntheticCorpus(seed=2).mbox([PHISH, HAM]))
    items = list(iter_corpus(stream))
    assert len(items) == 2
    assert b"Verify your account immediately" in items[0].raw
    assert items[1].label is None


def test_iter_corpus_dispatches_manifest(corpus_dir):
    manifest = corpus_dir / "manifest.csv"
    manifest.write_text("path,label\nham.eml,ham\n")
    items = list(iter_corpus(str(manifest), Label.PHISH))
    assert [item.label for item in items] == [Label.HAM]
