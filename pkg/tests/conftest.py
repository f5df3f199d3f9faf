import numpy as np
import pytest

from paneleval.panel import PanelDataset


def random_panel(seed, n_entities=10, n_years=6, names=("y", "x1", "x2"), start=2011):
    rng = np.random.default_rng(seed)
    ents = [f"C{i:02d}" for i in range(n_entities)]
    years = list(range(start, start + n_years))
    return PanelDataset(ents, years, {n: rng.normal(size=(n_entities, n_years)) for n in names})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_text(path, text):
    path.write_text(text, encoding="utf-8")
    return path
