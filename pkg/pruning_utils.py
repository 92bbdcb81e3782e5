# pruning_utils.py
"""
Poda por magnitude (global e por camada), taxa por rodada, rewind e o laço de
Iterative Magnitude Pruning (treinar -> podar -> rebobinar).
"""
import json
import logging
import math
import os
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from errors import (ConfigError, ContractError, EmptyDomainError, FormatError, RangeError,
                    UnknownGroupError)
from mask_utils import (PruneMask, apply_mask, full_mask, maskable_sparsity, satisfies_mask,
                        zero_masked_momentum)
from metrics_utils import load, write_tensors
from network_core import NetworkSpec, OptimizerState, ParameterSet, group_of, init_network
from shapes_tasks import Task, evaluate
from training_utils import CheckpointStore, TrainConfig, TrainResult, iteration_index, train

logger = logging.getLogger(__name__)

SCOPES = ("global", "layerwise")
_MOMENTUM_PREFIX = "momentum::"
# Tolerância do floor contra erros de arredondamento em r * n (ex.: 0.29 * 100).
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class PruneConfig:
    target_prune_fraction: float
    rounds: int = 1
    scope: str = "global"
    groups: tuple[str, ...] = ()
    rewind_iter: int | float = 0
    train_iters_per_round: int = 1

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if not 0.0 < self.target_prune_fraction < 1.0:
            raise RangeError(f"target_prune_fraction deve estar em (0, 1), recebido {self.target_prune_fraction}")
        if self.rounds < 1:
            raise ConfigError(f"rounds deve ser >= 1, recebido {self.rounds}")
        if self.scope not in SCOPES:
            raise ConfigError(f"Escopo desconhecido: '{self.scope}'")
        if not self.groups:
            raise ConfigError("É preciso escolher ao menos um grupo para podar.")
        if self.train_iters_per_round < 1:
            raise ConfigError("train_iters_per_round deve ser >= 1.")
        self.resolved_rewind_iter()

    def resolved_rewind_iter(self) -> int:
        """Iteração de rewind absoluta (frações são relativas a ``train_iters_per_round``)."""
        try:
            return iteration_index(self.rewind_iter, self.train_iters_per_round)
        except RangeError as exc:
            raise ConfigError(f"rewind_iter inválido: {exc}") from exc


def per_round_keep(p: float, rounds: int) -> float:
    """
    Fração podada por rodada: r = 1 - (1 - p)^(1/T), de modo que T rodadas
    compostas podem exatamente a fração p.

    Ex.: p=0.75, T=2 -> r=0.5.
    """
    if not 0.0 < p < 1.0:
        raise RangeError(f"p deve estar em (0, 1), recebido {p}")
    if rounds < 1:
        raise RangeError(f"T deve ser >= 1, recebido {rounds}")
    return 1.0 - (1.0 - p) ** (1.0 / rounds)


def prune_count(fraction: float, survivors: int) -> int:
    return int(math.floor(fraction * survivors + _FLOOR_EPS))


def selected_ids(params: ParameterSet, groups: Iterable[str] | None, ids: Iterable[str] | None = None) -> list[str]:
    """Ids mascaráveis dos grupos escolhidos, em ordem crescente de id (ordem de desempate)."""
    maskable = sorted(params.maskable_ids)
    if ids is not None:
        ids = set(ids)
        unknown = ids - params.maskable_ids
        if unknown:
            raise ContractError(f"Ids não mascaráveis: {sorted(unknown)}")
        maskable = [pid for pid in maskable if pid in ids]
    if groups is None:
        return maskable
    groups = list(groups)
    if not groups:
        raise ConfigError("Filtro de grupos vazio.")
    known = params.groups()
    missing = [g for g in groups if g not in known]
    if missing:
        raise UnknownGroupError(f"Grupos desconhecidos: {missing}")
    return [pid for pid in maskable if group_of(pid) in groups]


def magnitude_mask(params: ParameterSet, current_mask: PruneMask, prune_fraction: float,
                   scope: str = "global", groups: Iterable[str] | None = None,
                   ids: Iterable[str] | None = None) -> PruneMask:
    """
    Zera os ``floor(r * sobreviventes)`` pesos sobreviventes de menor |w|.

    No escopo global o ranking é conjunto para todos os tensores dos grupos; no
    escopo por camada, cada tensor é ordenado separadamente. Empates em |w| são
    resolvidos por id crescente e depois por índice plano crescente.

    Args:
        params (ParameterSet): Parâmetros (devem satisfazer a máscara atual)
        current_mask (PruneMask): Máscara atual
        prune_fraction (float): Fração r em (0, 1)
        scope (str): "global" ou "layerwise"
        groups (Iterable[str] | None): Grupos podáveis (padrão: todos)
        ids (Iterable[str] | None): Restringe ainda mais a tensores específicos

    Returns:
        PruneMask: Nova máscara, <= a atual elemento a elemento
    """
    if not 0.0 < prune_fraction < 1.0:
        raise RangeError(f"Fração de poda deve estar em (0, 1), recebido {prune_fraction}")
    if scope not in SCOPES:
        raise ConfigError(f"Escopo desconhecido: '{scope}'")
    current_mask.check_aligned(params)
    if not satisfies_mask(params, current_mask):
        raise ContractError("Parâmetros com valores não nulos em posições podadas.")
    ids = selected_ids(params, groups, ids)
    alive = {pid: np.flatnonzero(current_mask[pid]) for pid in ids}
    total = sum(len(index) for index in alive.values())
    if total == 0:
        raise EmptyDomainError("Não há pesos sobreviventes nos grupos selecionados.")

    updates = {}
    if scope == "global":
        magnitudes = np.concatenate([np.abs(params[pid].reshape(-1)[alive[pid]]) for pid in ids])
        order = np.argsort(magnitudes, kind="stable")[:prune_count(prune_fraction, total)]
        offsets = np.cumsum([0] + [len(alive[pid]) for pid in ids])
        owners = np.searchsorted(offsets, order, side="right") - 1
        for position, pid in enumerate(ids):
            chosen = order[owners == position] - offsets[position]
            if len(chosen):
                updates[pid] = _drop(current_mask[pid], alive[pid][chosen])
    else:
        for pid in ids:
            count = prune_count(prune_fraction, len(alive[pid]))
            if count:
                magnitudes = np.abs(params[pid].reshape(-1)[alive[pid]])
                chosen = np.argsort(magnitudes, kind="stable")[:count]
                updates[pid] = _drop(current_mask[pid], alive[pid][chosen])
    return current_mask.with_bits(updates)


def _drop(bits: np.ndarray, flat_index: np.ndarray) -> np.ndarray:
    updated = bits.copy().reshape(-1)
    updated[flat_index] = False
    return updated.reshape(bits.shape)


def rewind(store: CheckpointStore, iteration: int) -> tuple[ParameterSet, OptimizerState]:
    """Cópia bit a bit do snapshot da iteração (0 = inicialização)."""
    return store.get(iteration)


# --------------------------------------------------------------------------- #
# Tickets
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    pruned: int
    survivors: int
    sparsity: float
    metric: float


@dataclass
class Ticket:
    mask: PruneMask
    rewind_weights: ParameterSet
    rewind_state: OptimizerState
    rewind_iter: int
    provenance: dict = field(default_factory=dict)
    rounds: list[RoundRecord] = field(default_factory=list)

    def __post_init__(self):
        self.mask.check_aligned(self.rewind_weights)
        if not satisfies_mask(self.rewind_weights, self.mask):
            raise ContractError("Pesos de rewind do ticket não satisfazem a máscara.")


def rewind_masked(store: CheckpointStore, iteration: int, mask: PruneMask) -> tuple[ParameterSet, OptimizerState]:
    weights, state = rewind(store, iteration)
    zero_masked_momentum(state, mask)
    return apply_mask(weights, mask), state


def imp(spec: NetworkSpec, task: Task, config: PruneConfig, seed: int, train_config: TrainConfig,
        progress: bool = False) -> Ticket:
    """
    Iterative Magnitude Pruning.

    Por T rodadas: treina ``train_iters_per_round`` iterações sob a máscara atual, poda a
    fração ``per_round_keep(p, T)`` dos sobreviventes e rebobina para os pesos da
    iteração ``rewind_iter`` (com a nova máscara aplicada). O schedule de LR retoma na
    iteração de rewind. Com T=1 equivale a uma única poda seguida de rewind.

    Args:
        spec (NetworkSpec): Rede
        task (Task): Tarefa de treino
        config (PruneConfig): Configuração de poda
        seed (int): Semente (inicialização e ordem dos dados)
        train_config (TrainConfig): Hiperparâmetros de treino (total_iters é substituído)
        progress (bool): Barras de progresso

    Returns:
        Ticket: Máscara final, pesos de rewind e registro por rodada
    """
    train_config = replace(train_config, total_iters=config.train_iters_per_round)
    rewind_iter = config.resolved_rewind_iter()
    rate = per_round_keep(config.target_prune_fraction, config.rounds)
    params = init_network(spec, seed)
    mask = full_mask(params)
    store = CheckpointStore()
    start_params, start_state, start_iter = params, None, 0
    records = []
    ids = selected_ids(params, config.groups)
    for round_index in range(config.rounds):
        result = train(start_params, mask, task, spec, train_config, seed, opt_state=start_state,
                       start_iter=start_iter, store=store if round_index == 0 else None,
                       snapshot_iters={0, rewind_iter}, round_index=round_index, progress=progress)
        metric = evaluate(result.params, mask, task, "val", spec).value
        new_mask = magnitude_mask(result.params, mask, rate, config.scope, config.groups)
        pruned = mask.num_pruned
        mask = new_mask
        survivors = sum(mask.survivors(pid) for pid in ids)
        records.append(RoundRecord(round_index, mask.num_pruned - pruned, survivors,
                                   maskable_sparsity(mask, config.groups), metric))
        logger.info("Rodada %d/%d: %d pesos podados, esparsidade dos grupos %.4f",
                    round_index + 1, config.rounds, records[-1].pruned, records[-1].sparsity)
        start_params, start_state = rewind_masked(store, rewind_iter, mask)
        start_iter = rewind_iter

    total = sum(mask[pid].size for pid in ids)
    residual = round(config.target_prune_fraction * total) - (total - sum(mask.survivors(pid) for pid in ids))
    if residual:
        logger.warning("Resíduo do arredondamento: %d elementos abaixo do alvo %.4f", residual,
                       config.target_prune_fraction)
    provenance = {
        "source_task": task.task_id, "p": config.target_prune_fraction, "T": config.rounds,
        "scope": config.scope, "groups": list(config.groups), "rewind_iter": rewind_iter,
        "seed": seed, "creation_iter": config.train_iters_per_round, "residual": int(residual),
    }
    return Ticket(mask, start_params, start_state, rewind_iter, provenance, records)


def dense_ticket(spec: NetworkSpec, seed: int, train_config: TrainConfig, task_id: str | None = None) -> Ticket:
    """Ticket sem poda (máscara toda em uns, pesos iniciais): a linha de base densa."""
    params = init_network(spec, seed)
    state = OptimizerState.zeros_like(params, train_config.momentum, train_config.weight_decay)
    provenance = {"source_task": task_id, "p": 0.0, "T": 0, "scope": None, "groups": [],
                  "rewind_iter": 0, "seed": seed, "creation_iter": 0, "residual": 0}
    return Ticket(full_mask(params), params, state, 0, provenance)


def train_ticket(ticket: Ticket, task: Task, spec: NetworkSpec, config: TrainConfig, seed: int,
                 iters: int | None = None, progress: bool = False) -> TrainResult:
    """Treino mascarado a partir dos pesos de rewind até ``iters`` (padrão: total do config)."""
    return train(ticket.rewind_weights, ticket.mask, task, spec, config, seed,
                 opt_state=ticket.rewind_state, start_iter=ticket.rewind_iter, end_iter=iters,
                 progress=progress)


# --------------------------------------------------------------------------- #
# Persistência
# --------------------------------------------------------------------------- #
def sidecar_path(path: str) -> str:
    return f"{path}.json"


def save_ticket(ticket: Ticket, path: str) -> int:
    """Grava pesos, momentum e máscara num SparseCheckpoint e a proveniência num JSON ao lado."""
    tensors = dict(ticket.rewind_weights)
    tensors.update({_MOMENTUM_PREFIX + pid: buffer for pid, buffer in ticket.rewind_state.buffers.items()})
    mask_tensors = {pid: ticket.mask[pid] for pid in ticket.mask}
    mask_tensors.update({_MOMENTUM_PREFIX + pid: np.ones(b.shape, dtype=bool)
                         for pid, b in ticket.rewind_state.buffers.items()})
    written = write_tensors(tensors, path, mask=PruneMask(mask_tensors, ticket.mask.maskable_ids))
    sidecar = {
        "provenance": ticket.provenance,
        "rewind_iter": ticket.rewind_iter,
        "momentum": ticket.rewind_state.momentum,
        "weight_decay": ticket.rewind_state.weight_decay,
        "rounds": [asdict(record) for record in ticket.rounds],
    }
    with open(sidecar_path(path), "w", encoding="utf-8") as handle:
        json.dump(sidecar, handle, indent=2)
    logger.info("Ticket salvo em %s (%d bytes)", path, written)
    return written


def load_ticket(path: str) -> Ticket:
    checkpoint = load(path)
    if not os.path.exists(sidecar_path(path)):
        raise FormatError(f"Arquivo de proveniência ausente: {sidecar_path(path)}")
    with open(sidecar_path(path), encoding="utf-8") as handle:
        try:
            sidecar = json.load(handle)
        except json.JSONDecodeError as exc:
            raise FormatError(f"Proveniência inválida: {exc}") from exc
    if checkpoint.mask_bits is None:
        raise FormatError("Checkpoint de ticket sem seção de máscara.")
    weights = {pid: t for pid, t in checkpoint.tensors.items() if not pid.startswith(_MOMENTUM_PREFIX)}
    buffers = {pid[len(_MOMENTUM_PREFIX):]: t for pid, t in checkpoint.tensors.items()
               if pid.startswith(_MOMENTUM_PREFIX)}
    maskable = list(checkpoint.mask_bits)
    params = ParameterSet(weights, maskable)
    mask = PruneMask({pid: checkpoint.mask_bits.get(pid, np.ones(t.shape, dtype=bool))
                      for pid, t in weights.items()}, maskable)
    state = OptimizerState(buffers, sidecar["momentum"], sidecar["weight_decay"])
    rounds = [RoundRecord(**record) for record in sidecar.get("rounds", [])]
    return Ticket(mask, params, state, sidecar["rewind_iter"], sidecar["provenance"], rounds)
