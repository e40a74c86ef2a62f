# backend/event_library.py

import logging
import re
from pathlib import Path
from typing import Iterable, List, Union

from backend.errors import DimensionError, InputError
from backend.fdes import DEFAULT_SHARPNESS, FdesNetwork, FuzzyEventMatrix
from backend.serialization import load_network, save_network

logger = logging.getLogger(__name__)

SUFFIX = ".fdes"
_UNSAFE = re.compile(r"[^A-Za-z0-9._-]+")


class EventLibrary:
    """
    Directory of reusable labelled event matrices, one file per event.

    An adjuster for a given day is assembled by composing the events that
    occur on it, in order.
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def _path(self, label: str) -> Path:
        name = _UNSAFE.sub("_", label.strip())
        if not name:
            raise InputError(f"event label {label!r} is empty")
        return self.root / f"{name}{SUFFIX}"

    def store(self, event: FuzzyEventMatrix, label: str = "") -> Path:
        label = label or event.label
        if not label:
            raise InputError("events stored in a library need a label")
        path = save_network(FdesNetwork((FuzzyEventMatrix(event.entries, label),)), self._path(label))
        logger.info(f"Stored event {label!r} ({event.dimension}x{event.dimension}) in {path}")
        return path

    def store_network(self, net: FdesNetwork) -> List[Path]:
        return [self.store(layer) for layer in net.layers]

    def labels(self) -> List[str]:
        if not self.root.is_dir():
            return []
        return sorted(self.load_path(path).label for path in self.root.glob(f"*{SUFFIX}"))

    def load_path(self, path: Path) -> FuzzyEventMatrix:
        net = load_network(path)
        if net.depth != 1:
            raise InputError(f"{path} holds {net.depth} events; library files hold exactly one")
        return net.layers[0]

    def load(self, label: str) -> FuzzyEventMatrix:
        path = self._path(label)
        if not path.is_file():
            raise InputError(f"unknown event {label!r} in library {self.root}")
        return self.load_path(path)

    def compose(self, labels: Iterable[str], sharpness: float = DEFAULT_SHARPNESS) -> FdesNetwork:
        events = [self.load(label) for label in labels]
        if not events:
            raise InputError("compose needs at least one event label")
        dimension = events[0].dimension
        for event in events[1:]:
            if event.dimension != dimension:
                raise DimensionError(
                    f"event {event.label!r} has dimension {event.dimension}, expected {dimension}"
                )
        return FdesNetwork(tuple(events), sharpness)

    def __contains__(self, label: str) -> bool:
        try:
            return self._path(label).is_file()
        except InputError:
            return False

    def __len__(self) -> int:
        return len(self.labels())
