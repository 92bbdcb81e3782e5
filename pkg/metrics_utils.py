# metrics_utils.py
"""
Contabilidade de esparsidade, contagem de MACs e o formato binário SparseCheckpoint.

Formato (little-endian, versão 1)::

    cabeçalho : magic "LTHT" | versão u16 | flags u16 (bit 0 = seção de máscara) | n_tensores u32
    tensor    : len(id) u16 | id utf-8 | ndim u8 | dims u32 * ndim | modo u8 (0 denso, 1 esparso)
                denso   -> valores f32 * produto(dims)
                esparso -> nnz u32 | índices u32 * nnz (estritamente crescentes) | valores f32 * nnz
    máscara   : n_ids u32 | por id: len(id) u16 | id utf-8 | bits empacotados (ceil(n / 8) bytes)

"Não nulo" é decidido pelo padrão de bits, então -0.0 sobrevive ao round trip.
"""
import csv
import logging
import math
import os
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from errors import FormatError, RangeError
from mask_utils import PruneMask, sparsity
from network_core import DTYPE, LayerSpec, NetworkSpec, ParameterSet, Tensor, param_id

logger = logging.getLogger(__name__)

MAGIC = b"LTHT"
VERSION = 1
FLAG_MASK = 0x1
MODES = {"dense": 0, "sparse": 1}
BREAK_EVEN = 0.5
MAX_NDIM = 8
_HEADER = struct.Struct("<4sHHI")


# --------------------------------------------------------------------------- #
# Projeção de esparsidade e MACs
# --------------------------------------------------------------------------- #
def project_sparsity(prune_fraction: float, group_param_fraction: float) -> float:
    """Esparsidade da rede quando só uma fração dos parâmetros é podada."""
    for name, value in (("prune_fraction", prune_fraction), ("group_param_fraction", group_param_fraction)):
        if not 0.0 <= value <= 1.0:
            raise RangeError(f"{name} fora de [0, 1]: {value}")
    return prune_fraction * group_param_fraction


def mac_count(layer: LayerSpec, input_hw: tuple[int, int] | None = None,
              weight_sparsity: float = 0.0) -> tuple[int, int]:
    """
    MACs densos e ajustados pela esparsidade de uma camada (batch excluído).

    Args:
        layer (LayerSpec): Camada
        input_hw (tuple | None): (altura, largura) da entrada, usado por conv2d (padding "same")
        weight_sparsity (float): Fração de pesos podados da camada

    Returns:
        tuple[int, int]: (MACs densos, MACs ajustados)
    """
    if not 0.0 <= weight_sparsity <= 1.0:
        raise RangeError(f"Esparsidade fora de [0, 1]: {weight_sparsity}")
    if layer.kind == "conv2d":
        height, width = input_hw
        dense = height * width * layer.out_channels * layer.in_channels * layer.kernel ** 2
    elif layer.kind == "dense":
        dense = layer.in_features * layer.out_features
    else:
        return 0, 0
    return dense, int(round(dense * (1.0 - weight_sparsity)))


# --------------------------------------------------------------------------- #
# SparseCheckpoint
# --------------------------------------------------------------------------- #
def _as_f32(tensor: Tensor, tensor_id: str) -> Tensor:
    if tensor.dtype != DTYPE:
        raise FormatError(f"dtype {tensor.dtype} não suportado, apenas float32", tensor_id)
    return np.ascontiguousarray(tensor, dtype="<f4")


def _nonzero_bits(tensor: Tensor) -> Tensor:
    return np.ascontiguousarray(tensor, dtype="<f4").view("<u4") != 0


def choose_storage(tensor: Tensor, mask: Tensor | None = None) -> str:
    """"sparse" se a fração de elementos não nulos for estritamente menor que 0.5."""
    if tensor.size == 0:
        return "dense"
    nonzero = _nonzero_bits(tensor)
    if mask is not None:
        nonzero &= np.asarray(mask, dtype=bool)
    return "sparse" if np.count_nonzero(nonzero) / tensor.size < BREAK_EVEN else "dense"


def tensor_record_size(tensor_id: str, shape: tuple[int, ...], mode: str, nnz: int = 0) -> int:
    size = 2 + len(tensor_id.encode("utf-8")) + 1 + 4 * len(shape) + 1
    if mode == "dense":
        return size + 4 * math.prod(shape)
    return size + 4 + 8 * nnz


def mask_section_size(mask_bits: Mapping[str, Tensor]) -> int:
    return 4 + sum(2 + len(pid.encode("utf-8")) + (bits.size + 7) // 8 for pid, bits in mask_bits.items())


def _modes_for(tensors: Mapping[str, Tensor], mask: PruneMask | None) -> dict[str, str]:
    return {pid: choose_storage(t, None if mask is None else mask[pid]) for pid, t in tensors.items()}


def checkpoint_size(params: Mapping[str, Tensor], mask: PruneMask | None = None,
                    include_mask: bool = False, modes: Mapping[str, str] | None = None) -> int:
    """Bytes exatos que ``store``/``write_tensors`` escreveriam, sem escrever."""
    modes = _modes_for(params, mask) if modes is None else modes
    total = _HEADER.size
    for pid, tensor in params.items():
        total += tensor_record_size(pid, tensor.shape, modes[pid], int(np.count_nonzero(_nonzero_bits(tensor))))
    if include_mask and mask is not None:
        total += mask_section_size({pid: mask[pid] for pid in mask if pid in mask.maskable_ids})
    return total


def _encode(tensors: Mapping[str, Tensor], modes: Mapping[str, str],
            mask_bits: Mapping[str, Tensor] | None) -> bytes:
    chunks = [_HEADER.pack(MAGIC, VERSION, FLAG_MASK if mask_bits is not None else 0, len(tensors))]
    for pid, tensor in tensors.items():
        values = _as_f32(tensor, pid)
        encoded_id = pid.encode("utf-8")
        if len(values.shape) > MAX_NDIM:
            raise FormatError(f"ndim {values.ndim} acima do máximo {MAX_NDIM}", pid)
        mode = modes[pid]
        chunks.append(struct.pack("<H", len(encoded_id)) + encoded_id)
        chunks.append(struct.pack(f"<B{values.ndim}I", values.ndim, *values.shape))
        chunks.append(struct.pack("<B", MODES[mode]))
        flat = values.reshape(-1)
        if mode == "dense":
            chunks.append(flat.tobytes())
        else:
            indices = np.flatnonzero(_nonzero_bits(flat)).astype("<u4")
            chunks.append(struct.pack("<I", len(indices)))
            chunks.append(indices.tobytes())
            chunks.append(flat[indices].tobytes())
    if mask_bits is not None:
        chunks.append(struct.pack("<I", len(mask_bits)))
        for pid, bits in mask_bits.items():
            encoded_id = pid.encode("utf-8")
            chunks.append(struct.pack("<H", len(encoded_id)) + encoded_id)
            chunks.append(np.packbits(np.asarray(bits, dtype=bool).reshape(-1)).tobytes())
    return b"".join(chunks)


def write_tensors(tensors: Mapping[str, Tensor], path: str, modes: Mapping[str, str] | None = None,
                  mask: PruneMask | None = None) -> int:
    """
    Escreve tensores float32 no formato SparseCheckpoint.

    Args:
        tensors (Mapping): ``id -> tensor`` float32
        path (str): Arquivo de saída
        modes (Mapping | None): Modo por tensor; padrão decidido por ``choose_storage``
        mask (PruneMask | None): Se dada, grava a seção de máscara (ids mascaráveis)

    Returns:
        int: Bytes escritos
    """
    modes = _modes_for(tensors, None) if modes is None else modes
    mask_bits = None
    if mask is not None:
        mask_bits = {pid: mask[pid] for pid in mask if pid in mask.maskable_ids}
    payload = _encode(tensors, modes, mask_bits)
    with open(path, "wb") as handle:
        handle.write(payload)
    logger.debug("Checkpoint escrito: %s (%d bytes, %d tensores)", path, len(payload), len(tensors))
    return len(payload)


def store(params: ParameterSet, mask: PruneMask | None, path: str, include_mask: bool = False) -> int:
    """Grava parâmetros escolhendo o modo de cada tensor pela máscara; devolve os bytes escritos."""
    if mask is not None:
        mask.check_aligned(params)
    return write_tensors(params, path, _modes_for(params, mask), mask if include_mask else None)


@dataclass
class SparseCheckpoint:
    version: int
    tensors: dict[str, Tensor]
    modes: dict[str, str]
    mask_bits: dict[str, Tensor] | None = None
    size: int = 0

    def params(self, maskable=None) -> ParameterSet:
        if maskable is None and self.mask_bits is not None:
            maskable = list(self.mask_bits)
        return ParameterSet(dict(self.tensors), maskable)

    def mask(self) -> PruneMask | None:
        if self.mask_bits is None:
            return None
        bits = {pid: self.mask_bits.get(pid, np.ones(t.shape, dtype=bool)) for pid, t in self.tensors.items()}
        return PruneMask(bits, self.mask_bits)


@dataclass
class _Reader:
    data: bytes
    offset: int = 0
    current: str | None = field(default=None)

    def take(self, count: int) -> bytes:
        if count < 0 or self.offset + count > len(self.data):
            raise FormatError("arquivo truncado", self.current)
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt: str) -> tuple:
        spec = struct.Struct(fmt)
        return spec.unpack(self.take(spec.size))

    def array(self, dtype: str, count: int) -> Tensor:
        return np.frombuffer(self.take(4 * count), dtype=dtype).copy()

    def identifier(self) -> str:
        (length,) = self.unpack("<H")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("id de tensor inválido", self.current) from exc


def load(path: str) -> SparseCheckpoint:
    """
    Lê e valida um SparseCheckpoint. Qualquer inconsistência gera FormatError com o
    id do tensor afetado; nenhum resultado parcial é devolvido.
    """
    with open(path, "rb") as handle:
        data = handle.read()
    reader = _Reader(data)
    magic, version, flags, count = reader.unpack(_HEADER.format)
    if magic != MAGIC:
        raise FormatError(f"magic inválido: {magic!r}")
    if version != VERSION:
        raise FormatError(f"versão não suportada: {version}")
    if flags & ~FLAG_MASK:
        raise FormatError(f"flags desconhecidas: {flags:#x}")
    tensors: dict[str, Tensor] = {}
    modes: dict[str, str] = {}
    for _ in range(count):
        reader.current = None
        pid = reader.identifier()
        reader.current = pid
        if pid in tensors:
            raise FormatError("id repetido", pid)
        (ndim,) = reader.unpack("<B")
        if ndim > MAX_NDIM:
            raise FormatError(f"ndim {ndim} acima do máximo {MAX_NDIM}", pid)
        shape = reader.unpack(f"<{ndim}I")
        size = math.prod(shape)
        (mode_code,) = reader.unpack("<B")
        if mode_code == MODES["dense"]:
            values = reader.array("<f4", size)
        elif mode_code == MODES["sparse"]:
            (nnz,) = reader.unpack("<I")
            if nnz > size:
                raise FormatError(f"nnz {nnz} maior que o número de elementos {size}", pid)
            indices = reader.array("<u4", nnz).astype(np.int64)
            if nnz and (np.any(np.diff(indices) <= 0) or indices[-1] >= size):
                raise FormatError("índices esparsos não crescentes ou fora do tensor", pid)
            stored = reader.array("<f4", nnz)
            values = np.zeros(size, dtype="<f4")
            values[indices] = stored
        else:
            raise FormatError(f"modo de armazenamento desconhecido: {mode_code}", pid)
        tensors[pid] = values.astype(DTYPE, copy=False).reshape(shape)
        modes[pid] = "dense" if mode_code == MODES["dense"] else "sparse"
    mask_bits = None
    reader.current = None
    if flags & FLAG_MASK:
        mask_bits = {}
        (mask_count,) = reader.unpack("<I")
        for _ in range(mask_count):
            pid = reader.identifier()
            reader.current = pid
            if pid not in tensors or pid in mask_bits:
                raise FormatError("máscara para tensor inexistente ou repetido", pid)
            shape = tensors[pid].shape
            packed = np.frombuffer(reader.take((math.prod(shape) + 7) // 8), dtype=np.uint8)
            mask_bits[pid] = np.unpackbits(packed, count=math.prod(shape)).astype(bool).reshape(shape)
    if reader.offset != len(data):
        raise FormatError(f"{len(data) - reader.offset} bytes extras no fim do arquivo")
    return SparseCheckpoint(version, tensors, modes, mask_bits, len(data))


# --------------------------------------------------------------------------- #
# Relatório de custo
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class LayerCost:
    param_id: str
    kind: str
    dense_macs: int
    adjusted_macs: int
    sparsity: float


@dataclass(frozen=True)
class CostReport:
    layers: list[LayerCost]
    bytes_on_disk: int

    @property
    def dense_macs(self) -> int:
        return sum(layer.dense_macs for layer in self.layers)

    @property
    def adjusted_macs(self) -> int:
        return sum(layer.adjusted_macs for layer in self.layers)

    def to_csv(self, path: str):
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["param_id", "kind", "sparsity", "dense_macs", "adjusted_macs"])
            for layer in self.layers:
                writer.writerow([layer.param_id, layer.kind, f"{layer.sparsity:.6f}",
                                 layer.dense_macs, layer.adjusted_macs])
            writer.writerow(["total", "", "", self.dense_macs, self.adjusted_macs])
            writer.writerow(["bytes_on_disk", "", "", self.bytes_on_disk, ""])
        logger.info("Relatório de custo salvo em %s", path)


def network_cost(spec: NetworkSpec, params: ParameterSet, mask: PruneMask | None = None,
                 head: str | None = None) -> CostReport:
    """MACs por camada (densos e ajustados) e bytes em disco sob a política de armazenamento."""
    layer_sparsity = {}
    if mask is not None:
        layer_sparsity = {layer.param_id: layer.sparsity for layer in sparsity(mask).layers}
    layers = []
    for group, index, layer, in_shape in spec.layer_entries(head):
        if not layer.has_params:
            continue
        pid = param_id(group, index, "weight")
        fraction = layer_sparsity.get(pid, 0.0)
        input_hw = in_shape[1:] if layer.kind == "conv2d" else None
        dense, adjusted = mac_count(layer, input_hw, fraction)
        layers.append(LayerCost(pid, layer.kind, dense, adjusted, fraction))
    return CostReport(layers, checkpoint_size(params, mask))
