"""Small shared helpers: stable hashing, seed derivation, tokenization, IO."""

from __future__ import annotations

import hashlib
import io
import json
import os
import random
import unicodedata
from pathlib import Path
from typing import Iterable, Iterator, TextIO, Union

Source = Union[str, os.PathLike, TextIO, Iterable[str]]


def stable_hash(*parts: object) -> int:
    """64-bit hash of ``parts`` that is identical across processes and platforms."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


def derive_seed(seed: int, *names: object) -> int:
    """Named sub-stream seed, e.g. ``derive_seed(7, "paths", anchor, 1)``."""
    return stable_hash(int(seed), *names)


def make_rng(seed: int, *names: object) -> random.Random:
    return random.Random(derive_seed(seed, *names) if names else int(seed))


def short_digest(obj: object) -> str:
    data = json.dumps(obj, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(data.encode("utf-8")).hexdigest()[:16]


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and _is_punct(token[start]):
        start += 1
    while end > start and _is_punct(token[end - 1]):
        end -= 1
    return token[start:end]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on Unicode whitespace, strip edge punctuation, drop empties."""
    out = []
    for raw in text.lower().split():
        tok = strip_punct(raw)
        if tok:
            out.append(tok)
    return out


def normalize_text(text: str) -> str:
    return " ".join(text.casefold().split())


def iter_lines(source: Source) -> Iterator[str]:
    """Yield lines (without trailing newline) from a path, open file, or iterable of lines."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            for line in fh:
                yield line.rstrip("\n").rstrip("\r")
        return
    for line in source:
        yield line.rstrip("\n").rstrip("\r")


def source_name(source: Source) -> str:
    if isinstance(source, (str, os.PathLike)):
        return str(source)
    return getattr(source, "name", "<stream>") if isinstance(source, io.IOBase) else "<stream>"


def write_jsonl(path: str | os.PathLike, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")


def read_jsonl(path: str | os.PathLike) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def dump_json(path: str | os.PathLike, obj: object) -> None:
    Path(path).write_text(
        json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=False) + "\n",
        encoding="utf-8",
    )
