# tests/conftest.py
import numpy as np
import pytest

from network_core import GroupSpec, LayerSpec, LrSchedule, NetworkSpec, ParameterSet
from shapes_tasks import ShapesConfig, build_network, generate, make_task
from training_utils import TrainConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="executa os experimentos de bancada marcados como slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="use --runslow para executar")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def tiny_shapes_config():
    return ShapesConfig(image_size=8, n_train=64, n_val=32, min_radius=2.0, max_radius=4.0,
                        size_thresholds=(2.5, 3.2))


@pytest.fixture(scope="session")
def tiny_dataset(tiny_shapes_config):
    return generate(tiny_shapes_config, seed=0)


@pytest.fixture(scope="session")
def tiny_spec():
    return build_network("small", ("classify",), image_size=8)


@pytest.fixture(scope="session")
def multi_spec():
    return build_network("small", ("classify", "detect_grid", "keypoint"), image_size=8)


@pytest.fixture
def classify_task(tiny_dataset):
    return make_task("classify", tiny_dataset)


@pytest.fixture
def short_train():
    return TrainConfig(total_iters=12, batch_size=16, schedule=LrSchedule(0.05))


@pytest.fixture(scope="session")
def relu_dense_spec():
    """Entrada (3,), relu no tronco e uma cabeça dense 3 -> 3."""
    return NetworkSpec((3,), (GroupSpec("base", (LayerSpec.relu(),)),), backbone="base",
                       heads=(("out", (GroupSpec("out_head", (LayerSpec.dense(3, 3),)),)),))


@pytest.fixture(scope="session")
def mlp_spec():
    """Rede densa pequena com duas camadas mascaráveis."""
    return NetworkSpec((6,), (GroupSpec("base", (LayerSpec.dense(6, 5), LayerSpec.relu())),
                              GroupSpec("neck", (LayerSpec.dense(5, 4), LayerSpec.relu()))),
                       backbone="base",
                       heads=(("out", (GroupSpec("out_head", (LayerSpec.dense(4, 2),)),)),))


def _params_from_lists(tensors: dict, maskable=None) -> ParameterSet:
    return ParameterSet({pid: np.asarray(v, dtype=np.float32) for pid, v in tensors.items()}, maskable)


@pytest.fixture
def make_params():
    """Fábrica de ParameterSet float32 a partir de listas."""
    return _params_from_lists
