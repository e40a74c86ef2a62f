import numpy as np
import pytest

from backend.errors import DimensionError, InputError
from backend.event_library import EventLibrary
from backend.fdes import FuzzyEventMatrix, forward, init_network


def test_store_and_load_by_label(tmp_path):
    library = EventLibrary(tmp_path / "events")
    event = FuzzyEventMatrix(np.array([[0.2, 0.9], [0.7, 0.1]]), "rate hike")
    path = library.store(event)
    assert path.name == "rate_hike.fdes"
    assert "rate hike" in library
    loaded = library.load("rate hike")
    assert loaded == event
    assert len(library) == 1


def test_store_network_and_compose(tmp_path):
    library = EventLibrary(tmp_path)
    net = init_network(3, 2, seed=4, labels=["cpi", "payrolls"])
    library.store_network(net)
    assert library.labels() == ["cpi", "payrolls"]

    composed = library.compose(["payrolls", "cpi"], sharpness=net.sharpness)
    assert composed.labels == ["payrolls", "cpi"]
    assert composed.layers == (net.layers[1], net.layers[0])
    q0 = np.array([0.3, 0.6, 0.9])
    assert forward(composed, q0).output.shape == (3,)


def test_store_under_new_label(tmp_path):
    library = EventLibrary(tmp_path)
    library.store(FuzzyEventMatrix.identity(2, "event_1"), "AAA_event_1")
    assert library.labels() == ["AAA_event_1"]


def test_library_errors(tmp_path):
    library = EventLibrary(tmp_path)
    with pytest.raises(InputError):
        library.store(FuzzyEventMatrix.identity(2, ""))
    with pytest.raises(InputError):
        library.load("missing")
    with pytest.raises(InputError):
        library.compose([])
    library.store(FuzzyEventMatrix.identity(2, "small"))
    library.store(FuzzyEventMatrix.identity(3, "large"))
    with pytest.raises(DimensionError):
        library.compose(["small", "large"])
    assert "   " not in library


def test_missing_library_directory_is_empty(tmp_path):
    assert EventLibrary(tmp_path / "nowhere").labels() == []
