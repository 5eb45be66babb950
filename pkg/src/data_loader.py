#!/usr/bin/env python3
"""
Corpus loaders for the PDENFF mail filter

A labeled corpus is described by a CSV manifest with columns ``path,label``.
Each path is an .eml file, an mbox file or a directory of .eml files,
relative to the manifest; label is phish, ham or empty for unlabeled.
Messages stream in manifest row order, then in-file order.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator, List, Optional, Union

import pandas as pd

from src.email_parser import iterate_raw_messages
from src.exceptions import CorpusError
from src.labels import Label
from src.logger import get_logger

logger = get_logger(__name__)

MANIFEST_COLUMNS = ("path", "label")


@dataclass(frozen=True)
class CorpusItem:
    """One raw message with its (optional) ground truth"""
    raw: bytes
    label: Optional[Label]
    source: str
    position: int


class CorpusLoader:
    """Loader for manifests and single mail sources"""

    def __init__(self, manifest_path: Optional[Union[str, Path]] = None):
        self.manifest_path = Path(manifest_path) if manifest_path else None

    def load_manifest(self) -> pd.DataFrame:
        """Read and validate the manifest"""
        if self.manifest_path is None:
            raise CorpusError("No manifest configured")
        try:
            frame = pd.read_csv(self.manifest_path, dtype=str, keep_default_na=False, skipinitialspace=True)
        except (OSError, pd.errors.ParserError) as e:
            raise CorpusError(f"Cannot read manifest {self.manifest_path}: {e}") from e
        except pd.errors.EmptyDataError:
            return pd.DataFrame(columns=list(MANIFEST_COLUMNS))

        missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
        if missing:
            raise CorpusError(f"Manifest {self.manifest_path} lacks columns: {', '.join(missing)}")

        frame = frame.loc[:, list(MANIFEST_COLUMNS)].copy()
        try:
            frame["label"] = frame["label"].map(Label.parse)
        except ValueError as e:
            raise CorpusError(f"Manifest {self.manifest_path}: {e}") from e
        logger.info(f"Loaded manifest with {len(frame)} sources from {self.manifest_path}")
        return frame

    def iter_items(self) -> Iterator[CorpusItem]:
        frame = self.load_manifest()
        base = self.manifest_path.parent
        position = 0
        for row in frame.itertuples(index=False):
            source = Path(row.path)
            if not source.is_absolute():
                source = base / source
            for raw in iterate_raw_messages(source):
                label = row.label if isinstance(row.label, Label) else None
                yield CorpusItem(raw=raw, label=label, source=str(source), position=position)
                position += 1

    def load_items(self) -> List[CorpusItem]:
        return list(self.iter_items())


def iter_source(source: Union[str, Path, BinaryIO], label: Optional[Label] = None) -> Iterator[CorpusItem]:
    """Stream a single mbox, .eml file, .eml directory or binary stream with one fixed label"""
    name = getattr(source, "name", None) or str(source)
    for position, raw in enumerate(iterate_raw_messages(source)):
        yield CorpusItem(raw=raw, label=label, source=str(name), position=position)


def iter_corpus(source: Union[str, Path, BinaryIO], label: Optional[Label] = None) -> Iterator[CorpusItem]:
    """Manifest (.csv) or plain mail source"""
    if not hasattr(source, "read") and str(source).lower().endswith(".csv"):
        if label is not None:
            logger.warning("Ignoring the fixed label for a manifest corpus; labels come from the manifest")
        yield from CorpusLoader(source).iter_items()
        return
    yield from iter_source(source, label)
