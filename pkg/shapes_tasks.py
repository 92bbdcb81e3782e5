# shapes_tasks.py
"""
Benchmark sintético de formas geométricas com três tarefas.

- ``classify``: classe da forma dominante (tarefa de pré-treino).
- ``detect_grid``: ocupação de cada célula de uma grade 4x4 (análogo de detecção).
- ``keypoint``: centróide normalizado da maior forma (análogo de keypoints).

Geração e avaliação são puras dado (config, seed).
"""
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from errors import ConfigError, SpecError
from mask_utils import PruneMask, apply_mask
from metrics_utils import load, write_tensors
from network_core import (DTYPE, LOSSES, GroupSpec, LayerSpec, NetworkSpec, ParameterSet, Tensor,
                          predict)

logger = logging.getLogger(__name__)

SHAPE_CLASSES = ("circle", "square", "triangle", "cross")
SIZE_BUCKETS = ("small", "medium", "large")
TASK_IDS = ("classify", "detect_grid", "keypoint")
SPLITS = ("train", "val")


@dataclass(frozen=True)
class ShapesConfig:
    image_size: int = 32
    channels: int = 3
    n_train: int = 2000
    n_val: int = 500
    min_shapes: int = 1
    max_shapes: int = 3
    min_radius: float = 4.0
    max_radius: float = 10.0
    class_frequencies: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    grid: int = 4
    size_thresholds: tuple[float, float] = (6.0, 8.0)
    noise: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "class_frequencies", tuple(float(f) for f in self.class_frequencies))
        object.__setattr__(self, "size_thresholds", tuple(float(t) for t in self.size_thresholds))
        if self.image_size <= 0 or self.channels <= 0:
            raise ConfigError("image_size e channels devem ser positivos.")
        if self.n_train <= 0 or self.n_val <= 0:
            raise ConfigError("n_train e n_val devem ser positivos.")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ConfigError(f"Número de formas inválido: {self.min_shapes}-{self.max_shapes}")
        if not 1.0 <= self.min_radius <= self.max_radius:
            raise ConfigError(f"Raios inválidos: {self.min_radius}-{self.max_radius}")
        if 2 * self.max_radius > self.image_size:
            raise ConfigError(f"Forma de raio {self.max_radius} não cabe numa imagem {self.image_size}px.")
        if self.grid <= 0 or self.image_size % self.grid:
            raise ConfigError(f"A grade {self.grid} não divide a imagem de {self.image_size}px.")
        freqs = np.asarray(self.class_frequencies, dtype=np.float64)
        if freqs.shape != (len(SHAPE_CLASSES),) or np.any(freqs < 0) or not np.isclose(freqs.sum(), 1.0):
            raise ConfigError(f"class_frequencies deve ter {len(SHAPE_CLASSES)} valores >= 0 somando 1.")
        if not self.size_thresholds[0] < self.size_thresholds[1]:
            raise ConfigError(f"size_thresholds deve ser crescente: {self.size_thresholds}")

    def cache_key(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Shape:
    kind: str
    cx: float
    cy: float
    radius: float
    color: tuple[float, ...]


@dataclass
class ShapesSplit:
    images: Tensor
    labels: Tensor
    occupancy: Tensor
    centroids: Tensor
    size_buckets: Tensor

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "ShapesSplit":
        return ShapesSplit(self.images[index], self.labels[index], self.occupancy[index],
                           self.centroids[index], self.size_buckets[index])

    def equals(self, other: "ShapesSplit") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def arrays(self) -> tuple[Tensor, ...]:
        return self.images, self.labels, self.occupancy, self.centroids, self.size_buckets


@dataclass
class ShapesDataset:
    config: ShapesConfig
    seed: int
    train: ShapesSplit
    val: ShapesSplit

    def split(self, name: str) -> ShapesSplit:
        if name not in SPLITS:
            raise ConfigError(f"Split desconhecido: '{name}'")
        return getattr(self, name)


# --------------------------------------------------------------------------- #
# Renderização
# --------------------------------------------------------------------------- #
def shape_mask(shape: Shape, size: int) -> Tensor:
    """Pixels (centros em j + 0.5) cobertos pela forma."""
    coords = np.arange(size, dtype=np.float64) + 0.5
    dx = coords[None, :] - shape.cx
    dy = coords[:, None] - shape.cy
    r = shape.radius
    if shape.kind == "circle":
        return dx * dx + dy * dy <= r * r
    if shape.kind == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= 0.8 * r
    if shape.kind == "triangle":
        return (dy >= -r) & (dy <= 0.75 * r) & (np.abs(dx) <= (dy + r) / 1.75)
    if shape.kind == "cross":
        arm = r / 3
        return ((np.abs(dx) <= r) & (np.abs(dy) <= arm)) | ((np.abs(dy) <= r) & (np.abs(dx) <= arm))
    raise SpecError(f"Forma desconhecida: '{shape.kind}'")


def size_bucket(radius: float, config: ShapesConfig) -> int:
    small, medium = config.size_thresholds
    if radius < small:
        return 0
    return 1 if radius < medium else 2


def render_scene(shapes: list[Shape], config: ShapesConfig, background: Tensor | None = None):
    """
    Desenha as formas em ordem (a última fica por cima) e calcula os rótulos.

    A primeira forma da lista é a dominante (maior); ela é desenhada por último.

    Returns:
        tuple: (imagem, classe, ocupação, centróide, bucket de tamanho)
    """
    size = config.image_size
    image = (np.zeros((config.channels, size, size), dtype=np.float64)
             if background is None else background.astype(np.float64))
    union = np.zeros((size, size), dtype=bool)
    dominant = shapes[0]
    for shape in list(shapes[1:]) + [dominant]:
        pixels = shape_mask(shape, size)
        union |= pixels
        image[:, pixels] = np.asarray(shape.color, dtype=np.float64)[:, None]
    cell = size // config.grid
    occupancy = union.reshape(config.grid, cell, config.grid, cell).any(axis=(1, 3)).reshape(-1)
    ys, xs = np.nonzero(shape_mask(dominant, size))
    centroid = ((xs.mean() + 0.5) / size, (ys.mean() + 0.5) / size)
    return (np.clip(image, 0.0, 1.0).astype(DTYPE), SHAPE_CLASSES.index(dominant.kind),
            occupancy.astype(DTYPE), np.asarray(centroid, dtype=DTYPE), size_bucket(dominant.radius, config))


def sample_scene(rng: np.random.Generator, config: ShapesConfig) -> list[Shape]:
    count = int(rng.integers(config.min_shapes, config.max_shapes + 1))
    label = int(rng.choice(len(SHAPE_CLASSES), p=config.class_frequencies))
    size = config.image_size
    shapes = []
    for i in range(count):
        if i == 0:
            kind = SHAPE_CLASSES[label]
            radius = float(rng.uniform(config.min_radius, config.max_radius))
        else:
            kind = SHAPE_CLASSES[int(rng.integers(len(SHAPE_CLASSES)))]
            radius = shapes[0].radius * float(rng.uniform(0.5, 0.85))
        cx = float(rng.uniform(radius, size - radius))
        cy = float(rng.uniform(radius, size - radius))
        color = tuple(float(c) for c in rng.uniform(0.3, 1.0, size=config.channels))
        shapes.append(Shape(kind, cx, cy, radius, color))
    return shapes


def _render_split(config: ShapesConfig, seed: int, start: int, count: int) -> ShapesSplit:
    size = config.image_size
    images = np.empty((count, config.channels, size, size), dtype=DTYPE)
    labels = np.empty(count, dtype=np.int64)
    occupancy = np.empty((count, config.grid * config.grid), dtype=DTYPE)
    centroids = np.empty((count, 2), dtype=DTYPE)
    buckets = np.empty(count, dtype=np.int64)
    for row in range(count):
        rng = np.random.default_rng([seed, start + row])
        shapes = sample_scene(rng, config)
        background = rng.uniform(0.0, config.noise, size=(config.channels, size, size))
        images[row], labels[row], occupancy[row], centroids[row], buckets[row] = render_scene(
            shapes, config, background)
    return ShapesSplit(images, labels, occupancy, centroids, buckets)


def generate(config: ShapesConfig, seed: int) -> ShapesDataset:
    """
    Gera o dataset de formas (splits de treino e validação disjuntos).

    Cada imagem usa seu próprio gerador ``default_rng([seed, indice])``; as primeiras
    ``n_train`` imagens formam o treino e as seguintes a validação.
    """
    train = _render_split(config, seed, 0, config.n_train)
    val = _render_split(config, seed, config.n_train, config.n_val)
    logger.debug("Dataset gerado: seed=%d, %d treino, %d validação", seed, len(train), len(val))
    return ShapesDataset(config, seed, train, val)


def load_or_generate(config: ShapesConfig, seed: int, cache_dir: str | None = None) -> ShapesDataset:
    """Gera o dataset ou o lê do cache em disco (container SparseCheckpoint, modo denso)."""
    if not cache_dir:
        return generate(config, seed)
    path = os.path.join(cache_dir, f"shapes_{config.cache_key()}_{seed}.ltht")
    fields = ("images", "labels", "occupancy", "centroids", "size_buckets")
    if os.path.exists(path):
        tensors = load(path).tensors
        splits = {}
        for split in SPLITS:
            arrays = [tensors[f"{split}/{name}"] for name in fields]
            arrays[1] = arrays[1].astype(np.int64)
            arrays[4] = arrays[4].astype(np.int64)
            splits[split] = ShapesSplit(*arrays)
        logger.info("Dataset lido do cache: %s", path)
        return ShapesDataset(config, seed, splits["train"], splits["val"])
    dataset = generate(config, seed)
    os.makedirs(cache_dir, exist_ok=True)
    tensors = {}
    for split in SPLITS:
        for name, array in zip(fields, dataset.split(split).arrays()):
            tensors[f"{split}/{name}"] = array.astype(DTYPE)
    write_tensors(tensors, path, modes=dict.fromkeys(tensors, "dense"))
    logger.info("Dataset salvo no cache: %s", path)
    return dataset


# --------------------------------------------------------------------------- #
# Tarefas
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    out_features: int
    loss: str
    metric: str
    higher_is_better: bool

    def __post_init__(self):
        expected = {"classify": ("cross_entropy", "accuracy"),
                    "detect_grid": ("bce", "cell_f1"),
                    "keypoint": ("squared_error", "centroid_error")}
        if self.task_id not in expected:
            raise SpecError(f"Tarefa desconhecida: '{self.task_id}'")
        if (self.loss, self.metric) != expected[self.task_id]:
            raise SpecError(f"Perda/métrica {self.loss}/{self.metric} não combinam com '{self.task_id}'")


def task_spec(task_id: str, grid: int = 4) -> TaskSpec:
    if task_id == "classify":
        return TaskSpec("classify", len(SHAPE_CLASSES), "cross_entropy", "accuracy", True)
    if task_id == "detect_grid":
        return TaskSpec("detect_grid", grid * grid, "bce", "cell_f1", True)
    if task_id == "keypoint":
        return TaskSpec("keypoint", 2, "squared_error", "centroid_error", False)
    raise SpecError(f"Tarefa desconhecida: '{task_id}'")


@dataclass(frozen=True)
class Task:
    spec: TaskSpec
    dataset: ShapesDataset = field(repr=False)

    @property
    def task_id(self) -> str:
        return self.spec.task_id

    def inputs(self, split: str) -> Tensor:
        return self.dataset.split(split).images

    def targets(self, split: str) -> Tensor:
        return task_targets(self.spec, self.dataset.split(split))


def make_task(task_id: str, dataset: ShapesDataset) -> Task:
    return Task(task_spec(task_id, dataset.config.grid), dataset)


def task_targets(spec: TaskSpec, split: ShapesSplit) -> Tensor:
    if spec.task_id == "classify":
        return split.labels
    if spec.task_id == "detect_grid":
        return split.occupancy
    return split.centroids


def build_network(size: str = "small", tasks=("classify",), image_size: int = 32,
                  channels: int = 3, grid: int = 4) -> NetworkSpec:
    """
    Rede do benchmark: grupos ``base`` e ``top`` (convoluções, ``top`` fecha o backbone),
    ``neck`` (tronco denso compartilhado) e uma cabeça ``<tarefa>_head`` por tarefa.

    ``small`` tem 4 convoluções; ``large`` tem 8 convoluções com o dobro de canais.
    """
    conv, relu = LayerSpec.conv2d, LayerSpec.relu
    if size == "small":
        base = (conv(channels, 8), relu(), conv(8, 8), relu(), LayerSpec.maxpool())
        top = (conv(8, 16), relu(), conv(16, 16), relu(), LayerSpec.maxpool(), LayerSpec.flatten())
        top_channels = 16
    elif size == "large":
        base = (conv(channels, 16), relu(), conv(16, 16), relu(), conv(16, 16), relu(),
                conv(16, 16), relu(), LayerSpec.maxpool())
        top = (conv(16, 32), relu(), conv(32, 32), relu(), conv(32, 32), relu(),
               conv(32, 32), relu(), LayerSpec.maxpool(), LayerSpec.flatten())
        top_channels = 32
    else:
        raise SpecError(f"Tamanho de rede desconhecido: '{size}'")
    features = top_channels * (image_size // 4) ** 2
    neck = (LayerSpec.dense(features, 64), relu())
    heads = tuple(
        (task_id, (GroupSpec(f"{task_id}_head", (LayerSpec.dense(64, 32), relu(),
                                                   LayerSpec.dense(32, task_spec(task_id, grid).out_features))),))
        for task_id in tasks
    )
    return NetworkSpec((channels, image_size, image_size),
                       (GroupSpec("base", base), GroupSpec("top", top), GroupSpec("neck", neck)),
                       backbone="top", heads=heads)


# --------------------------------------------------------------------------- #
# Avaliação
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class BreakdownRow:
    kind: str
    key: str
    count: int
    value: float
    correct: int | None = None


@dataclass(frozen=True)
class EvalResult:
    task_id: str
    split: str
    metric_name: str
    value: float
    loss: float
    rows: tuple[BreakdownRow, ...] = ()


def _f1(pred: Tensor, truth: Tensor) -> float:
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return 1.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def score_predictions(spec: TaskSpec, outputs: Tensor, split: ShapesSplit) -> tuple[float, tuple[BreakdownRow, ...]]:
    """
    Métrica da tarefa a partir das saídas brutas da cabeça, com quebra por classe
    (classify/detect_grid) e por bucket de tamanho da forma dominante.
    """
    if outputs.shape != (len(split), spec.out_features):
        raise SpecError(f"Saídas {outputs.shape} incompatíveis com a tarefa '{spec.task_id}'")
    groupings = [("size", SIZE_BUCKETS, split.size_buckets)]
    if spec.task_id in ("classify", "detect_grid"):
        groupings.insert(0, ("class", SHAPE_CLASSES, split.labels))

    if spec.task_id == "classify":
        hits = outputs.argmax(axis=1) == split.labels
        value = float(np.count_nonzero(hits)) / len(split)

        def group_value(index):
            correct = int(np.count_nonzero(hits[index]))
            return correct / int(np.count_nonzero(index)), correct
    elif spec.task_id == "detect_grid":
        pred = outputs > 0
        truth = split.occupancy > 0.5
        value = _f1(pred, truth)

        def group_value(index):
            return _f1(pred[index], truth[index]), None
    else:
        errors = np.sqrt(np.sum((outputs.astype(np.float64) - split.centroids) ** 2, axis=1))
        value = float(errors.mean())

        def group_value(index):
            return float(errors[index].mean()), None

    rows = []
    for kind, names, keys in groupings:
        for code, name in enumerate(names):
            index = keys == code
            count = int(np.count_nonzero(index))
            if count == 0:
                continue
            group_metric, correct = group_value(index)
            rows.append(BreakdownRow(kind, name, count, group_metric, correct))
    return value, tuple(rows)


def evaluate(params: ParameterSet, mask: PruneMask | None, task: Task, split: str,
             spec: NetworkSpec) -> EvalResult:
    """
    Avalia a rede (com a máscara aplicada) na tarefa e split dados.

    Args:
        params (ParameterSet): Parâmetros
        mask (PruneMask | None): Máscara a aplicar antes do forward
        task (Task): Tarefa e dataset
        split (str): "train" ou "val"
        spec (NetworkSpec): Rede que contém a cabeça da tarefa

    Returns:
        EvalResult: Métrica, loss e quebra por classe/tamanho
    """
    if task.task_id not in spec.head_names:
        raise SpecError(f"A rede não tem cabeça para a tarefa '{task.task_id}'")
    if spec.output_shape(task.task_id) != (task.spec.out_features,):
        raise SpecError(f"Cabeça '{task.task_id}' com saída {spec.output_shape(task.task_id)} incompatível")
    if mask is not None:
        params = apply_mask(params, mask)
    data = task.dataset.split(split)
    outputs = predict(params, spec, data.images, task.task_id)
    loss, _ = LOSSES[task.spec.loss](outputs, task_targets(task.spec, data))
    value, rows = score_predictions(task.spec, outputs, data)
    return EvalResult(task.task_id, split, task.spec.metric, value, loss, rows)
