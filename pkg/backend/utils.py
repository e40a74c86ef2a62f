import json
import logging
import os
import re
from pathlib import Path
from typing import Any, Dict, List, Union

from backend.errors import InputError, IoError

logger = logging.getLogger(__name__)

TICKER_PATTERN = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """
    Write text to `path` through a sibling temp file and os.replace.

    Readers never observe a half-written artifact; the temp file is
    removed if the write fails.
    """
    path = Path(path)
    temp_path = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(temp_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(temp_path, path)
    except OSError as e:
        if temp_path.exists():
            temp_path.unlink()
        raise IoError(f"Failed to write artifact ({e.strerror or e})", str(path)) from e
    return path


def atomic_write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    """Atomic JSON dump with sorted keys so identical payloads give identical bytes."""
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def read_text(path: Union[str, Path]) -> str:
    path = Path(path)
    if not path.is_file():
        raise IoError("File not found", str(path))
    try:
        return path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise IoError(f"Cannot read file ({e})", str(path)) from e


def discover_ticker_files(data_dir: Union[str, Path]) -> Dict[str, Path]:
    """
    Map ticker -> CSV path for every `<TICKER>.csv` in `data_dir`.

    Audit files written by `ingest` (samples_*.csv) and files whose stem is
    not a plausible symbol are skipped.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise IoError("Data directory not found", str(data_dir))

    found = {}
    for path in sorted(data_dir.glob("*.csv")):
        stem = path.stem
        if stem.startswith(("samples_", "report_", "metrics_", "pairs")):
            continue
        if not TICKER_PATTERN.match(stem):
            logger.warning(f"Skipping {path.name}: not a ticker file name")
            continue
        found[stem] = path
    return found


def load_universe_file(path: Union[str, Path]) -> List[str]:
    """One symbol per line; blank lines and `#` comments are ignored."""
    tickers = []
    for number, raw_line in enumerate(read_text(path).splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if not TICKER_PATTERN.match(line):
            raise InputError(f"{path}:{number}: invalid ticker symbol {line!r}")
        if line in tickers:
            logger.warning(f"Duplicate ticker {line} in {path} (line {number})")
            continue
        tickers.append(line)
    if not tickers:
        raise InputError(f"Universe file {path} lists no tickers")
    return tickers
