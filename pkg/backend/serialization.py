"""
Plain-text formats for trained models.

Network:

    fdes v1 <N> <L> <delta>
    # sharpness trainable        (optional)
    # label <text>               (optional, one per layer)
    <N rows of N entries>        (repeated L times)

Adjuster: a network block followed by

    disc v1 <w0> ... <w(W-1)> <b>
    scaler v1 <min> <max>        (optional)

Numbers are written with 17 significant digits so files round-trip
bit-exactly.
"""

import logging
import re
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from backend.adversarial import AdjusterModel, Discriminator
from backend.errors import DimensionError, ParameterError, ParseError
from backend.fdes import FdesNetwork, FuzzyEventMatrix
from backend.market_data import Scaler
from backend.utils import atomic_write_text, read_text

logger = logging.getLogger(__name__)

_HEADER = re.compile(r"^fdes\s+v1\s+(\S+)\s+(\S+)\s+(\S+)$")
_TRAINABLE = re.compile(r"^#\s*sharpness\s+trainable$")
_LABEL = re.compile(r"^#\s*label(?:\s+(.*))?$")
_DISC = re.compile(r"^disc\s+v1\s+(.+)$")
_SCALER = re.compile(r"^scaler\s+v1\s+(\S+)\s+(\S+)$")
_READOUT = re.compile(r"^readout\s+v1\s+(\S+)\s+(\S+)$")


def _number(value: float) -> str:
    return format(float(value), ".17g")


def _clean_label(label: str) -> str:
    return " ".join(str(label).split())


class _Lines:
    """Non-blank lines with their 1-based line numbers."""

    def __init__(self, text: str, path: Optional[str]):
        self.rows = [(n, raw.strip()) for n, raw in enumerate(text.splitlines(), start=1) if raw.strip()]
        self.path = path
        self.pos = 0

    def peek(self) -> Optional[Tuple[int, str]]:
        return self.rows[self.pos] if self.pos < len(self.rows) else None

    def take(self, expected: str) -> Tuple[int, str]:
        if self.pos >= len(self.rows):
            last = self.rows[-1][0] + 1 if self.rows else 1
            raise ParseError(f"unexpected end of file, expected {expected}", self.path, last)
        row = self.rows[self.pos]
        self.pos += 1
        return row

    def done(self) -> bool:
        return self.pos >= len(self.rows)


def _floats(tokens: List[str], path: Optional[str], line: int) -> List[float]:
    try:
        values = [float(token) for token in tokens]
    except ValueError:
        raise ParseError(f"invalid number in {' '.join(tokens)!r}", path, line)
    if not all(np.isfinite(values)):
        raise ParseError("non-finite number", path, line)
    return values


def format_network(net: FdesNetwork) -> str:
    lines = [f"fdes v1 {net.dimension} {net.depth} {_number(net.sharpness)}"]
    if net.trainable_sharpness:
        lines.append("# sharpness trainable")
    for layer in net.layers:
        label = _clean_label(layer.label)
        lines.append(f"# label {label}" if label else "# label")
        lines.extend(" ".join(_number(v) for v in row) for row in layer.entries)
    return "\n".join(lines) + "\n"


def _parse_network(lines: _Lines) -> FdesNetwork:
    path = lines.path
    number, header = lines.take("network header")
    match = _HEADER.match(header)
    if not match:
        raise ParseError("expected header 'fdes v1 <N> <L> <delta>'", path, number)
    try:
        dimension, depth, sharpness = int(match.group(1)), int(match.group(2)), float(match.group(3))
    except ValueError:
        raise ParseError(f"malformed header {header!r}", path, number)
    if dimension < 1 or depth < 1:
        raise ParseError(f"header needs N >= 1 and L >= 1, got {dimension} and {depth}", path, number)

    trainable = False
    upcoming = lines.peek()
    if upcoming and _TRAINABLE.match(upcoming[1]):
        lines.take("sharpness flag")
        trainable = True

    layers = []
    for k in range(depth):
        label = ""
        upcoming = lines.peek()
        if upcoming and upcoming[1].startswith("#"):
            label_number, text = lines.take("label")
            label_match = _LABEL.match(text)
            if not label_match:
                raise ParseError(f"unrecognised comment {text!r}", path, label_number)
            label = label_match.group(1) or ""

        rows = []
        first_row = None
        for r in range(dimension):
            row_number, text = lines.take(f"row {r + 1} of layer {k + 1}")
            first_row = first_row or row_number
            values = _floats(text.split(), path, row_number)
            if len(values) != dimension:
                raise ParseError(f"expected {dimension} entries, got {len(values)}", path, row_number)
            rows.append(values)
        try:
            layers.append(FuzzyEventMatrix(np.array(rows), label))
        except (ParameterError, DimensionError) as e:
            raise ParseError(f"layer {k + 1}: {e}", path, first_row)

    try:
        return FdesNetwork(tuple(layers), sharpness, trainable)
    except ParameterError as e:
        raise ParseError(str(e), path, number)


def _expect_end(lines: _Lines) -> None:
    if not lines.done():
        number, text = lines.peek()
        raise ParseError(f"unexpected trailing content {text[:40]!r}", lines.path, number)


def parse_network(text: str, path: Optional[str] = None) -> FdesNetwork:
    lines = _Lines(text, path)
    net = _parse_network(lines)
    _expect_end(lines)
    return net


def save_network(net: FdesNetwork, path: Union[str, Path]) -> Path:
    written = atomic_write_text(path, format_network(net))
    logger.debug(f"Saved network N={net.dimension} L={net.depth} to {written}")
    return written


def load_network(path: Union[str, Path]) -> FdesNetwork:
    return parse_network(read_text(path), str(path))


def format_adjuster(model: AdjusterModel) -> str:
    text = format_network(model.generator)
    text += "disc v1 " + " ".join(_number(v) for v in model.discriminator.params) + "\n"
    if model.scaler is not None:
        text += f"scaler v1 {_number(model.scaler.minimum)} {_number(model.scaler.maximum)}\n"
    if model.gain != 0.0 or model.blend != 0.0:
        text += f"readout v1 {_number(model.gain)} {_number(model.blend)}\n"
    return text


def parse_adjuster(text: str, path: Optional[str] = None) -> AdjusterModel:
    lines = _Lines(text, path)
    generator = _parse_network(lines)

    number, disc_line = lines.take("discriminator line 'disc v1 ...'")
    match = _DISC.match(disc_line)
    if not match:
        raise ParseError("expected discriminator line 'disc v1 <w0> ... <b>'", path, number)
    params = _floats(match.group(1).split(), path, number)
    if len(params) != generator.dimension + 1:
        raise ParseError(
            f"discriminator needs {generator.dimension + 1} numbers, got {len(params)}", path, number
        )
    discriminator = Discriminator(np.array(params[:-1]), params[-1])

    scaler = None
    upcoming = lines.peek()
    if upcoming and upcoming[1].startswith("scaler"):
        number, text_line = lines.take("scaler line")
        match = _SCALER.match(text_line)
        if not match:
            raise ParseError("expected scaler line 'scaler v1 <min> <max>'", path, number)
        low, high = _floats([match.group(1), match.group(2)], path, number)
        try:
            scaler = Scaler(low, high)
        except ValueError as e:
            raise ParseError(str(e), path, number)

    gain, blend = 0.0, 0.0
    upcoming = lines.peek()
    if upcoming and upcoming[1].startswith("readout"):
        number, text_line = lines.take("readout line")
        match = _READOUT.match(text_line)
        if not match:
            raise ParseError("expected readout line 'readout v1 <gain> <blend>'", path, number)
        gain, blend = _floats([match.group(1), match.group(2)], path, number)
        if not 0.0 <= blend <= 1.0:
            raise ParseError(f"readout blend must lie in [0, 1], got {blend}", path, number)

    _expect_end(lines)
    return AdjusterModel(generator, discriminator, scaler, gain, blend)


def save_adjuster(model: AdjusterModel, path: Union[str, Path]) -> Path:
    return atomic_write_text(path, format_adjuster(model))


def load_adjuster(path: Union[str, Path]) -> AdjusterModel:
    return parse_adjuster(read_text(path), str(path))
