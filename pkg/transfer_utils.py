# transfer_utils.py
"""
Transferência de tickets entre redes e tarefas.

- ``ticket_transfer``: pesos de rewind + máscara da fonte no tronco mapeado.
- ``mask_transfer``: só seleção por magnitude de pesos pré-treinados, sem retreino da fonte.
- ``cross_task_transfer``: ticket de uma tarefa downstream levado a outra pelo tronco compartilhado.
"""
import json
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import numpy as np

from errors import ConfigError, MappingError
from mask_utils import PruneMask, apply_mask, full_mask, sparsity
from network_core import NetworkSpec, ParameterSet, group_of, init_network, param_id
from pruning_utils import Ticket, magnitude_mask
from shapes_tasks import Task
from training_utils import TrainConfig, TrainResult, train

logger = logging.getLogger(__name__)

TRANSFER_MODES = ("ticket_transfer", "mask_transfer", "cross_task")
_SEPARATOR = "->"


def param_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    """Formato de cada parâmetro da rede, na ordem de ``init_network``."""
    shapes = {}
    for group, index, layer, _ in spec.layer_entries():
        if layer.has_params:
            shapes[param_id(group, index, "weight")] = layer.weight_shape()
            shapes[param_id(group, index, "bias")] = layer.bias_shape()
    return shapes


@dataclass(frozen=True)
class GroupMapping:
    """Pares ordenados (id na fonte -> id no alvo) que cobrem o tronco compartilhado."""
    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        pairs = tuple((str(source), str(target)) for source, target in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        sources = [source for source, _ in pairs]
        targets = [target for _, target in pairs]
        if len(set(sources)) != len(sources) or len(set(targets)) != len(targets):
            raise MappingError("Mapeamento não injetivo: ids repetidos.")

    @classmethod
    def for_groups(cls, groups: Iterable[str], source: NetworkSpec | Mapping,
                   target: NetworkSpec | Mapping) -> "GroupMapping":
        """Mapeia cada parâmetro dos grupos dados para o id de mesmo nome no alvo."""
        groups = list(groups)
        source_shapes = _shapes_of(source)
        target_shapes = _shapes_of(target)
        missing = [g for g in groups if g not in {group_of(pid) for pid in source_shapes}]
        if missing:
            raise MappingError(f"Grupos ausentes da fonte: {missing}")
        pairs = [(pid, pid) for pid in source_shapes if group_of(pid) in groups]
        mapping = cls(tuple(pairs))
        mapping.validate(source_shapes, target_shapes)
        return mapping

    @property
    def targets(self) -> list[str]:
        return [target for _, target in self.pairs]

    def validate(self, source_shapes: Mapping[str, tuple], target_shapes: Mapping[str, tuple]):
        for source, target in self.pairs:
            if source not in source_shapes:
                raise MappingError(f"Parâmetro inexistente na fonte: '{source}'")
            if target not in target_shapes:
                raise MappingError(f"Parâmetro inexistente no alvo: '{target}'")
            if tuple(source_shapes[source]) != tuple(target_shapes[target]):
                raise MappingError(f"Formatos diferentes: '{source}' {tuple(source_shapes[source])} -> "
                                   f"'{target}' {tuple(target_shapes[target])}")

    def fresh_ids(self, target_ids: Iterable[str]) -> list[str]:
        mapped = set(self.targets)
        return [pid for pid in target_ids if pid not in mapped]

    def to_json(self) -> str:
        return json.dumps({"pairs": [f"{source}{_SEPARATOR}{target}" for source, target in self.pairs]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GroupMapping":
        try:
            document = json.loads(text)
            entries = document["pairs"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MappingError(f"Documento de mapeamento inválido: {exc}") from exc
        pairs = []
        for entry in entries:
            if not isinstance(entry, str) or entry.count(_SEPARATOR) != 1:
                raise MappingError(f"Par inválido: {entry!r}")
            source, target = (part.strip() for part in entry.split(_SEPARATOR))
            if not source or not target:
                raise MappingError(f"Par inválido: {entry!r}")
            pairs.append((source, target))
        return cls(tuple(pairs))

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_json())

    @classmethod
    def load(cls, path: str) -> "GroupMapping":
        with open(path, encoding="utf-8") as handle:
            return cls.from_json(handle.read())


def _shapes_of(value: NetworkSpec | Mapping) -> dict[str, tuple]:
    if isinstance(value, NetworkSpec):
        return param_shapes(value)
    return {pid: tuple(np.shape(tensor)) for pid, tensor in value.items()}


def _target_init(target: NetworkSpec | ParameterSet, seed: int) -> ParameterSet:
    return init_network(target, seed) if isinstance(target, NetworkSpec) else target.copy()


@dataclass(frozen=True)
class TransferSpec:
    mode: str
    source: Ticket | ParameterSet
    mapping: GroupMapping
    conv_only: bool = True
    prune_fraction: float = 0.0
    shared_groups: tuple[str, ...] = ()

    def __post_init__(self):
        if self.mode not in TRANSFER_MODES:
            raise ConfigError(f"Modo de transferência desconhecido: '{self.mode}'")
        needs_ticket = self.mode in ("ticket_transfer", "cross_task")
        if needs_ticket and not isinstance(self.source, Ticket):
            raise ConfigError(f"O modo '{self.mode}' precisa de um Ticket como fonte.")
        if self.mode == "mask_transfer" and not isinstance(self.source, ParameterSet):
            raise ConfigError("O modo 'mask_transfer' precisa de parâmetros pré-treinados.")
        if self.mode == "cross_task" and not self.shared_groups:
            raise ConfigError("cross_task precisa da lista de grupos compartilhados.")


def ticket_transfer(source: Ticket, target: NetworkSpec | ParameterSet, mapping: GroupMapping,
                    seed: int = 0) -> tuple[ParameterSet, PruneMask]:
    """
    Copia pesos de rewind e máscara da fonte para os parâmetros mapeados do alvo.

    Parâmetros não mapeados recebem inicialização nova e máscara toda em uns.

    Args:
        source (Ticket): Ticket da tarefa fonte
        target (NetworkSpec | ParameterSet): Rede alvo ou inicialização já pronta
        mapping (GroupMapping): Pares fonte -> alvo
        seed (int): Semente da inicialização dos parâmetros novos

    Returns:
        tuple: (parâmetros do alvo, máscara do alvo)
    """
    fresh = _target_init(target, seed)
    mapping.validate(_shapes_of(source.rewind_weights), _shapes_of(fresh))
    updates = {}
    bits = {}
    for source_id, target_id in mapping.pairs:
        source_bits = source.mask[source_id]
        if target_id not in fresh.maskable_ids and not source_bits.all():
            raise MappingError(f"Máscara com zeros mapeada para parâmetro não mascarável '{target_id}'")
        updates[target_id] = source.rewind_weights[source_id].copy()
        bits[target_id] = source_bits
    mask = full_mask(fresh).with_bits(bits)
    params = apply_mask(fresh.replace(updates), mask)
    logger.info("Ticket transferido: %d tensores mapeados, %d novos", len(mapping.pairs),
                len(mapping.fresh_ids(fresh)))
    return params, mask


def mask_transfer(pretrained: ParameterSet, prune_fraction: float, mapping: GroupMapping,
                  target: NetworkSpec | ParameterSet, seed: int = 0,
                  conv_only: bool = True) -> tuple[ParameterSet, PruneMask]:
    """
    Mantém os maiores ``1 - p`` pesos (por tensor) dos tensores mapeados e zera o resto.

    Com ``conv_only`` só os pesos convolucionais são mascarados; os demais tensores
    mapeados são copiados sem máscara. ``p = 0`` é a transferência simples dos pesos.
    """
    if not 0.0 <= prune_fraction < 1.0:
        raise MappingError(f"Fração de poda fora de [0, 1): {prune_fraction}")
    fresh = _target_init(target, seed)
    mapping.validate(_shapes_of(pretrained), _shapes_of(fresh))
    params = fresh.replace({target_id: pretrained[source_id].copy() for source_id, target_id in mapping.pairs})
    mask = full_mask(params)
    masked_ids = [target_id for target_id in mapping.targets
                  if target_id in params.maskable_ids and (not conv_only or params[target_id].ndim == 4)]
    if prune_fraction > 0.0 and masked_ids:
        mask = magnitude_mask(params, mask, prune_fraction, "layerwise", ids=masked_ids)
        params = apply_mask(params, mask)
    logger.info("Máscara transferida: p=%.2f em %d tensores", prune_fraction, len(masked_ids))
    return params, mask


@dataclass(frozen=True)
class CrossTaskResult:
    params: ParameterSet
    mask: PruneMask
    network_sparsity: float


def cross_task_transfer(source: Ticket, target: NetworkSpec | ParameterSet, mapping: GroupMapping,
                        shared_groups: Iterable[str], seed: int = 0) -> CrossTaskResult:
    """Como ``ticket_transfer``, exigindo que o mapeamento cubra todos os grupos compartilhados."""
    shared = list(shared_groups)
    target_ids = list(_shapes_of(target))
    mapped = set(mapping.targets)
    uncovered = [pid for pid in target_ids if group_of(pid) in shared and pid not in mapped]
    if uncovered:
        raise MappingError(f"Mapeamento não cobre o tronco compartilhado: {uncovered}")
    outside = [pid for pid in mapping.targets if group_of(pid) not in shared]
    if outside:
        raise MappingError(f"Mapeamento fora dos grupos compartilhados: {outside}")
    params, mask = ticket_transfer(source, target, mapping, seed)
    network_sparsity = sparsity(mask).network_sparsity
    logger.info("Transferência entre tarefas: esparsidade da rede alvo %.4f", network_sparsity)
    return CrossTaskResult(params, mask, network_sparsity)


def pretrain(spec: NetworkSpec, task: Task, seed: int, train_config: TrainConfig,
             progress: bool = False) -> ParameterSet:
    """Rede densa treinada na tarefa fonte (o "backbone pré-treinado")."""
    return train(init_network(spec, seed), None, task, spec, train_config, seed, progress=progress).params


def run_transfer(transfer: TransferSpec, target_task: Task, target_spec: NetworkSpec,
                 train_config: TrainConfig, seed: int, progress: bool = False) -> tuple[TrainResult, PruneMask]:
    """Inicializa o alvo pelo modo escolhido e faz o fine-tuning mascarado completo."""
    if transfer.mode == "ticket_transfer":
        params, mask = ticket_transfer(transfer.source, target_spec, transfer.mapping, seed)
    elif transfer.mode == "mask_transfer":
        params, mask = mask_transfer(transfer.source, transfer.prune_fraction, transfer.mapping,
                                     target_spec, seed, transfer.conv_only)
    else:
        outcome = cross_task_transfer(transfer.source, target_spec, transfer.mapping,
                                      transfer.shared_groups, seed)
        params, mask = outcome.params, outcome.mask
    result = train(params, mask, target_task, target_spec, train_config, seed, progress=progress)
    return result, mask
