import copy
import json
from importlib import resources

import numpy as np
import pytest

from dsmpc.artifact import synthesize
from dsmpc.model import network_from_dict
from dsmpc.uncertainty import GammaPolicy


def triple_model_doc():
    """The shipped three-subsystem example as a mutable dict."""
    ref = resources.files("dsmpc.data").joinpath("coupled_triple.model.json")
    return json.loads(ref.read_text())


def scalar_model_doc(a=0.5, b=1.0, k=None, noise=0.01, h_state=1.0, h_input=5.0,
                     p=0.7):
    """Single scalar subsystem; gain k=None leaves the LQR helper in charge."""
    doc = {
        "horizon": {"N": 3},
        "probability": {"p_x": p, "p_u": p, "distribution": "gaussian"},
        "graph": {"neighbors": {"0": [0]}},
        "subsystem": [{
            "A": {"0": [[a]]},
            "B": [[b]],
            "C": {"0": [[1.0]]},
            "noise_cov": [[noise]],
            "state_constraints": {"H": [[1.0], [-1.0]], "h": [h_state, h_state]},
            "input_constraints": {"H": [[1.0], [-1.0]], "h": [h_input, h_input]},
        }],
        "weights": {"Q": [[[1.0]]], "R": [[[1.0]]], "T": [[[1.0]]]},
    }
    if k is not None:
        doc["gain"] = {"K": [[[k]]]}
    return doc


def pair_model_doc(coupled=True):
    """Two scalar subsystems, optionally dynamically coupled."""
    off = 0.1 if coupled else 0.0
    neighbors = {"0": [0, 1], "1": [0, 1]} if coupled else {"0": [0], "1": [1]}
    subs = []
    for i in range(2):
        A = {str(i): [[0.5]]}
        if coupled:
            A[str(1 - i)] = [[off]]
        subs.append({
            "A": A,
            "B": [[1.0]],
            "C": {str(i): [[1.0]]},
            "noise_cov": [[0.01]],
            "state_constraints": {"H": [[1.0], [-1.0]], "h": [2.0, 2.0]},
            "input_constraints": {"H": [[1.0], [-1.0]], "h": [5.0, 5.0]},
        })
    return {
        "horizon": {"N": 4},
        "probability": {"p_x": 0.8, "p_u": 0.8, "distribution": "gaussian"},
        "graph": {"neighbors": neighbors},
        "subsystem": subs,
        "weights": {"Q": [[[1.0]]] * 2, "R": [[[0.5]]] * 2, "T": [[[10.0]]] * 2},
        "gain": {"K": [[[-0.25, 0.0]], [[0.0, -0.25]]] if coupled
                 else [[[-0.25]], [[-0.25]]]},
    }


@pytest.fixture(scope="session")
def triple_model():
    return network_from_dict(triple_model_doc())


@pytest.fixture(scope="session")
def triple_artifact(triple_model):
    return synthesize(triple_model, 7, GammaPolicy())


@pytest.fixture()
def triple_doc():
    return copy.deepcopy(triple_model_doc())


@pytest.fixture(scope="session")
def scalar_model():
    return network_from_dict(scalar_model_doc(k=-0.2))


def segments_default():
    return ((0, np.array([-1.0, 0.0, 1.0])),
            (25, np.array([-7.0, -2.0, 7.0])),
            (50, np.array([0.0, 0.0, 0.0])))
