import numpy as np
import pytest
import torch

torch.set_num_threads(4)


@pytest.fixture(scope="session")
def model24():
    from gavatar.prior import build_toy_prior
    return build_toy_prior(7, 24, 120)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_avatar(rng, model, n=8, sh_bands=4):
    """Small valid avatar anchored to a prior model."""
    from gavatar.avatar import CanonicalAvatar
    idx = rng.choice(model.vertex_count, n, replace=False)
    quats = rng.standard_normal((n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return CanonicalAvatar(
        positions=model.rest_vertices[idx] + rng.normal(0, 0.01, (n, 3)),
        log_scales=rng.uniform(-3.5, -2.0, (n, 3)),
        rotations=quats,
        opacities=rng.uniform(-1.0, 2.0, n),
        sh_coeffs=rng.uniform(-0.5, 0.5, (n, 3, sh_bands)),
        gauss_weights=model.skin_weights[idx],
    )


def face_on_camera(size=32, distance=2.5):
    from gavatar.render import Camera
    rot = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    return Camera(rot, np.array([0.0, 0.0, distance]),
                  fx=1.2 * size, fy=1.2 * size, cx=size / 2, cy=size / 2,
                  width=size, height=size)
