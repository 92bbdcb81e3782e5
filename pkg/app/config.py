# app/config.py
"""
Configuração de experimentos: documento JSON -> ExperimentConfig.

Esquema (todas as chaves opcionais, exceto ``recipe``)::

    {
      "recipe": "sparsity_sweep",
      "network_size": "small",
      "tasks": ["classify"],
      "grid": {"p": [0.5, 0.8, 0.9], "rounds": [1], "scope": ["global"],
               "rewind_iter": [0], "groups": [["base", "top", "neck"]]},
      "replicates": 5, "base_seed": 0, "output_dir": "results", "workers": null,
      "train": {"iters": 600, "batch_size": 32, "base_lr": 0.05, "warmup_iters": 0,
                "decay_milestones": [], "decay_factor": 0.1, "momentum": 0.9,
                "weight_decay": 0.0005, "eval_interval": 0},
      "data": {"n_train": 2000, "n_val": 500, "image_size": 32,
               "class_frequencies": [0.25, 0.25, 0.25, 0.25], "cache_dir": null},
      "early_bird": {"probe_interval": null, "iou_threshold": 0.95, "stable_window": 3,
                     "quality_candidates": 4},
      "transfer": {"source_task": "classify", "target_task": "detect_grid",
                   "shared_groups": ["base", "top", "neck"], "conv_only": true}
    }

``rewind_iter``: int é a iteração absoluta, float em [0, 1] é fração do treino e float
inteiro > 1 (``300.0``) também é iteração absoluta. ``conv_only`` vale para mask_transfer.
``quality_candidates``: quantas máscaras candidatas do early-bird são retreinadas e avaliadas (0 desliga).

Chaves desconhecidas geram ConfigError. Variáveis de ambiente: ``TICKET_FINDER_OUTPUT``
(raiz para ``output_dir`` relativo) e ``TICKET_FINDER_WORKERS`` (número de workers).
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace

import psutil

from earlybird_utils import EarlyBirdConfig
from errors import ConfigError
from network_core import LrSchedule
from pruning_utils import SCOPES
from shapes_tasks import TASK_IDS, ShapesConfig
from training_utils import TrainConfig

logger = logging.getLogger(__name__)

RECIPES = ("sparsity_sweep", "resetting_sweep", "module_pruning", "rounds_sweep", "scope_compare",
           "early_bird", "transfer_compare", "cross_task", "convergence")
NETWORK_SIZES = ("small", "large")
ENV_OUTPUT = "TICKET_FINDER_OUTPUT"
ENV_WORKERS = "TICKET_FINDER_WORKERS"


def _tuple(value) -> tuple:
    return tuple(value) if isinstance(value, (list, tuple)) else (value,)


@dataclass(frozen=True)
class GridSection:
    p: tuple[float, ...] = (0.8,)
    rounds: tuple[int, ...] = (1,)
    scope: tuple[str, ...] = ("global",)
    rewind_iter: tuple[int | float, ...] = (0,)
    groups: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(p) for p in _tuple(self.p)))
        object.__setattr__(self, "rounds", tuple(int(t) for t in _tuple(self.rounds)))
        object.__setattr__(self, "scope", _tuple(self.scope))
        object.__setattr__(self, "rewind_iter", _tuple(self.rewind_iter))
        object.__setattr__(self, "groups", tuple(tuple(g) for g in self.groups))
        if not self.p or not self.rounds or not self.scope or not self.rewind_iter:
            raise ConfigError("A grade de experimentos não pode ter eixos vazios.")
        if any(not 0.0 < p < 1.0 for p in self.p):
            raise ConfigError(f"Valores de p fora de (0, 1): {self.p}")
        if any(t < 1 for t in self.rounds):
            raise ConfigError(f"Valores de rounds devem ser >= 1: {self.rounds}")
        unknown = [s for s in self.scope if s not in SCOPES]
        if unknown:
            raise ConfigError(f"Escopos desconhecidos: {unknown}")
        if any(not g for g in self.groups):
            raise ConfigError("Conjuntos de grupos da grade não podem ser vazios.")


@dataclass(frozen=True)
class TrainSection:
    iters: int = 600
    batch_size: int = 32
    base_lr: float = 0.05
    warmup_iters: int = 0
    decay_milestones: tuple[int, ...] = ()
    decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    eval_interval: int = 0

    def __post_init__(self):
        object.__setattr__(self, "decay_milestones", tuple(self.decay_milestones))
        self.to_train_config()

    def to_train_config(self) -> TrainConfig:
        schedule = LrSchedule(self.base_lr, self.warmup_iters, self.decay_milestones, self.decay_factor)
        return TrainConfig(self.iters, self.batch_size, schedule, self.momentum, self.weight_decay,
                           self.eval_interval)


@dataclass(frozen=True)
class DataSection:
    n_train: int = 2000
    n_val: int = 500
    image_size: int = 32
    class_frequencies: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    cache_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "class_frequencies", tuple(self.class_frequencies))
        self.to_shapes_config()

    def to_shapes_config(self) -> ShapesConfig:
        """Raios e limiares de tamanho escalam com a imagem (referência: 32px)."""
        scale = self.image_size / 32
        return ShapesConfig(image_size=self.image_size, n_train=self.n_train, n_val=self.n_val,
                            min_radius=max(1.0, 4.0 * scale), max_radius=10.0 * scale,
                            class_frequencies=self.class_frequencies,
                            size_thresholds=(6.0 * scale, 8.0 * scale))


@dataclass(frozen=True)
class EarlyBirdSection:
    probe_interval: int | None = None
    iou_threshold: float = 0.95
    stable_window: int = 3
    quality_candidates: int = 4

    def __post_init__(self):
        if self.quality_candidates < 0:
            raise ConfigError(f"quality_candidates não pode ser negativo: {self.quality_candidates}")

    def to_config(self, prune_fraction: float, scope: str = "global", groups=None,
                  rewind_iter: int | float = 0) -> EarlyBirdConfig:
        return EarlyBirdConfig(self.probe_interval, self.iou_threshold, self.stable_window,
                               prune_fraction, scope, groups, rewind_iter)


@dataclass(frozen=True)
class TransferSection:
    source_task: str = "classify"
    target_task: str = "detect_grid"
    shared_groups: tuple[str, ...] = ("base", "top", "neck")
    conv_only: bool = True

    def __post_init__(self):
        object.__setattr__(self, "shared_groups", tuple(self.shared_groups))
        for task in (self.source_task, self.target_task):
            if task not in TASK_IDS:
                raise ConfigError(f"Tarefa desconhecida: '{task}'")
        if not self.shared_groups:
            raise ConfigError("shared_groups não pode ser vazio.")


_SECTIONS = {"grid": GridSection, "train": TrainSection, "data": DataSection,
             "early_bird": EarlyBirdSection, "transfer": TransferSection}


@dataclass(frozen=True)
class ExperimentConfig:
    recipe: str
    network_size: str = "small"
    tasks: tuple[str, ...] = ("classify",)
    grid: GridSection = field(default_factory=GridSection)
    replicates: int = 5
    base_seed: int = 0
    output_dir: str = "results"
    workers: int | None = None
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    early_bird: EarlyBirdSection = field(default_factory=EarlyBirdSection)
    transfer: TransferSection = field(default_factory=TransferSection)

    def __post_init__(self):
        object.__setattr__(self, "tasks", _tuple(self.tasks))
        if self.recipe not in RECIPES:
            raise ConfigError(f"Receita desconhecida: '{self.recipe}'. Opções: {', '.join(RECIPES)}")
        if self.network_size not in NETWORK_SIZES:
            raise ConfigError(f"Tamanho de rede desconhecido: '{self.network_size}'")
        if not self.tasks or any(t not in TASK_IDS for t in self.tasks):
            raise ConfigError(f"Tarefas inválidas: {self.tasks}")
        if self.replicates < 1:
            raise ConfigError(f"replicates deve ser >= 1, recebido {self.replicates}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"workers deve ser >= 1, recebido {self.workers}")

    @property
    def seeds(self) -> list[int]:
        return [self.base_seed + r for r in range(self.replicates)]

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"'{where}' deve ser um objeto JSON.")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Chaves desconhecidas em '{where}': {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"Configuração inválida em '{where}': {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if "recipe" not in data:
        raise ConfigError("A configuração precisa da chave 'recipe'.")
    values = dict(data)
    for name, cls in _SECTIONS.items():
        if name in values:
            values[name] = _build(cls, values[name], name)
    return _build(ExperimentConfig, values, "raiz")


def load_config(path: str) -> ExperimentConfig:
    """Lê e valida um arquivo de configuração JSON."""
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"Arquivo de configuração não encontrado: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON inválido em {path}: {exc}") from exc
    config = config_from_dict(data)
    logger.info("Configuração carregada de %s (receita %s)", path, config.recipe)
    return config


def save_config(config: ExperimentConfig, path: str):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(config.to_dict(), handle, indent=2)


def resolve_output_dir(config: ExperimentConfig) -> str:
    """``output_dir`` absoluto é usado como está; relativo é resolvido sob ``TICKET_FINDER_OUTPUT``."""
    if os.path.isabs(config.output_dir):
        return config.output_dir
    return os.path.join(os.environ.get(ENV_OUTPUT, os.getcwd()), config.output_dir)


def resolve_workers(config: ExperimentConfig) -> int:
    """Prioridade: ``TICKET_FINDER_WORKERS``, depois ``workers`` do config, depois núcleos físicos."""
    env_value = os.environ.get(ENV_WORKERS)
    if env_value:
        try:
            workers = int(env_value)
        except ValueError as exc:
            raise ConfigError(f"{ENV_WORKERS} inválido: '{env_value}'") from exc
        if workers < 1:
            raise ConfigError(f"{ENV_WORKERS} deve ser >= 1")
        return workers
    if config.workers is not None:
        return config.workers
    return psutil.cpu_count(logical=False) or 1
