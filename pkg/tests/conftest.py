"""Shared fixtures: small synthetic graphs and a hand-built 3-node one."""

import numpy as np
import pytest

from magsim.graph import (CsrMatrix, Mag, ModalitySpec, SyntheticSpec,
                          generate)


def three_node_mag():
    """Hand-built 2-class triangle-less graph: edge 0-1 plus isolated node 2."""
    adjacency = CsrMatrix.from_undirected_edges(np.array([[0, 1]]), 3)
    features = {
        "text": np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]),
        "visual": np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]),
    }
    return Mag(
        num_nodes=3,
        num_classes=2,
        modalities=[("text", 2), ("visual", 3)],
        features=features,
        labels=np.array([0, 1, 0]),
        splits={"train": np.array([0]), "val": np.array([1]), "test": np.array([2])},
        adjacency=adjacency,
    )


@pytest.fixture
def tiny_mag():
    return three_node_mag()


@pytest.fixture(scope="session")
def small_mag():
    """Fast two-modality graph for training smoke tests."""
    spec = SyntheticSpec(
        num_nodes=400,
        num_classes=3,
        modalities=[ModalitySpec("text", 8, 1.0, 0.1),
                    ModalitySpec("visual", 8, 1.0, 0.5)],
        homophily=0.7,
        mean_degree=6,
        split_fracs=(0.6, 0.2, 0.2),
        seed=3,
    )
    return generate(spec)


@pytest.fixture(scope="session")
def census_mag():
    """Larger graph for statistical calibration checks."""
    spec = SyntheticSpec(
        num_nodes=5000,
        num_classes=4,
        modalities=[ModalitySpec("text", 16, 1.0, 0.5)],
        homophily=0.7,
        mean_degree=10,
        seed=17,
    )
    return generate(spec)
