"""Plain-text dataset index and object-count histogram files.

Index lines are ``image<TAB>mask<TAB>edge<TAB>count`` with paths relative to
the index file's directory. Histogram lines are ``object_count<TAB>frequency``.
"""
from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class IndexRecord:
    image: str
    mask: str
    edge: str
    count: int


@dataclass
class DatasetIndex:
    records: list = field(default_factory=list)
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def subset(self, records) -> "DatasetIndex":
        return DatasetIndex(list(records), self.root)


def write_index(path, index: DatasetIndex) -> None:
    lines = [f"{r.image}\t{r.mask}\t{r.edge}\t{r.count}\n" for r in index.records]
    _write_text(path, "".join(lines))


def read_index(path, check_files: bool = True) -> DatasetIndex:
    path = Path(path)
    root = path.parent
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            try:
                count = int(parts[3])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: count {parts[3]!r} is not an integer") from None
            if count < 0:
                raise ValueError(f"{path}:{lineno}: negative count {count}")
            rec = IndexRecord(parts[0], parts[1], parts[2], count)
            if check_files:
                for rel in (rec.image, rec.mask, rec.edge):
                    if not (root / rel).is_file():
                        raise FileNotFoundError(f"{path}:{lineno}: missing file {rel}")
            records.append(rec)
    return DatasetIndex(records, root)


def count_histogram(counts) -> dict:
    return dict(sorted(Counter(int(c) for c in counts).items()))


def write_histogram(path, histogram: dict) -> None:
    _write_text(path, "".join(f"{k}\t{v}\n" for k, v in sorted(histogram.items())))


def read_histogram(path) -> dict:
    hist = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                k, v = line.rstrip("\n").split("\t")
                hist[int(k)] = int(v)
    return hist


def _write_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
