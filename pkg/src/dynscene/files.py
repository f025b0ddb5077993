"""Reading and writing the JSON / JSONL files exchanged between stages."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterator, TypeVar

T = TypeVar("T")


class InputError(ValueError):
    """An input file failed to parse or validate."""

    def __init__(self, path, message: str, line: int | None = None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(path, exc.msg, exc.lineno) from exc
    except OSError as exc:
        raise InputError(path, str(exc)) from exc


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def iter_jsonl(path, decode: Callable[[dict], T]) -> Iterator[T]:
    """Yield decoded records; any failure is reported with its 1-based line number."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(path, str(exc)) from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield decode(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise InputError(path, f"{type(exc).__name__}: {exc}", lineno) from exc


def load_decoded(path, decode: Callable[[object], T]) -> T:
    data = read_json(path)
    try:
        return decode(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(path, f"{type(exc).__name__}: {exc}") from exc
