import numpy as np
import pytest

from semshape import Family, MorphableModel
from semshape.demo import make_demo_model


@pytest.fixture(scope="session")
def demo_model() -> MorphableModel:
    return make_demo_model(seed=7)


def tiny_model(n_vertices=2, family=Family.BODY, basis=None, sigma=None, model_id="tiny"):
    """A minimal hand-built model; default basis is all zeros."""
    template = np.zeros((n_vertices, 3))
    template[:, 0] = np.arange(n_vertices)
    faces = np.array([[0, 1, 1 % n_vertices]], dtype=np.uint32)
    if n_vertices >= 3:
        faces = np.array([[0, 1, 2]], dtype=np.uint32)
    if basis is None:
        basis = np.zeros((3 * n_vertices, 10))
    if sigma is None:
        sigma = np.ones(10)
    return MorphableModel(
        model_id=model_id,
        family=family,
        template_vertices=template,
        faces=faces,
        basis=basis,
        sigma=sigma,
    )


@pytest.fixture
def two_vertex_model():
    return tiny_model(n_vertices=2)
