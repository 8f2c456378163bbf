"""The predictive network: a graph-convolutional drug encoder with masked
max-pool readout, a dense branch over precomputed cell-line vectors, and an
MLP head over the concatenated embeddings.

Batch normalization sits after each hidden linear layer of the cell branch
and head, before the activation; the graph encoder carries none so its
output stays padding-invariant. Regression emits the raw head output,
classification a sigmoid probability.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, asdict
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .molgraph import ATOM_FEATURE_DIM, PaddedGraph

TASKS = ("regression", "classification")

CHECKPOINT_MAGIC = "cdr-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is unreadable or does not match expectations."""


@dataclass
class ModelConfig:
    gcn_layer_dims: tuple[int, ...] = (256, 128)
    cell_branch_dims: tuple[int, ...] = (128,)
    head_dims: tuple[int, ...] = (128, 1)
    dropout_rate: float = 0.1
    use_batch_norm: bool = True
    task: str = "regression"
    n_max_atoms: int = 100
    cell_input_dim: int = 512
    atom_input_dim: int = ATOM_FEATURE_DIM

    def __post_init__(self):
        self.gcn_layer_dims = tuple(int(d) for d in self.gcn_layer_dims)
        self.cell_branch_dims = tuple(int(d) for d in self.cell_branch_dims)
        self.head_dims = tuple(int(d) for d in self.head_dims)
        dims = self.gcn_layer_dims + self.cell_branch_dims + self.head_dims
        if not dims or any(d <= 0 for d in dims):
            raise ValueError("all layer widths must be positive")
        if not self.gcn_layer_dims or not self.head_dims:
            raise ValueError("the graph encoder and head each need at least one layer")
        if self.head_dims[-1] != 1:
            raise ValueError(f"the head must end in width 1, got {self.head_dims[-1]}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if min(self.n_max_atoms, self.cell_input_dim, self.atom_input_dim) <= 0:
            raise ValueError("sizes must be positive")


@dataclass
class GraphConvLayer:
    weight: ad.Tensor
    bias: ad.Tensor


@dataclass
class DenseLayer:
    weight: ad.Tensor
    bias: ad.Tensor
    norm: ad.BatchNormState | None = None


@dataclass
class ModelParams:
    """All trainable tensors plus batch-norm running statistics."""

    gcn: list[GraphConvLayer]
    cell: list[DenseLayer]
    head: list[DenseLayer]

    def parameters(self) -> list[ad.Tensor]:
        out: list[ad.Tensor] = []
        for layer in self.gcn:
            out += [layer.weight, layer.bias]
        for layer in (*self.cell, *self.head):
            out += [layer.weight, layer.bias]
            if layer.norm is not None:
                out += [layer.norm.gamma, layer.norm.beta]
        return out

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """Every array worth checkpointing, in a stable order."""
        for i, layer in enumerate(self.gcn):
            yield f"gcn.{i}.weight", layer.weight.data
            yield f"gcn.{i}.bias", layer.bias.data
        for branch, layers in (("cell", self.cell), ("head", self.head)):
            for i, layer in enumerate(layers):
                yield f"{branch}.{i}.weight", layer.weight.data
                yield f"{branch}.{i}.bias", layer.bias.data
                if layer.norm is not None:
                    yield f"{branch}.{i}.norm.gamma", layer.norm.gamma.data
                    yield f"{branch}.{i}.norm.beta", layer.norm.beta.data
                    yield f"{branch}.{i}.norm.running_mean", layer.norm.running_mean
                    yield f"{branch}.{i}.norm.running_var", layer.norm.running_var

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> ad.Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return ad.Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def _zero_bias(dim: int) -> ad.Tensor:
    return ad.Tensor(np.zeros((1, dim)), requires_grad=True)


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, unit batch-norm; deterministic per seed."""
    rng = np.random.default_rng(seed)

    def dense(in_dim, out_dim, with_norm):
        return DenseLayer(
            weight=_glorot(rng, in_dim, out_dim),
            bias=_zero_bias(out_dim),
            norm=ad.BatchNormState(out_dim) if with_norm else None,
        )

    gcn = []
    in_dim = cfg.atom_input_dim
    for out_dim in cfg.gcn_layer_dims:
        gcn.append(GraphConvLayer(weight=_glorot(rng, in_dim, out_dim), bias=_zero_bias(out_dim)))
        in_dim = out_dim

    cell = []
    in_dim = cfg.cell_input_dim
    for out_dim in cfg.cell_branch_dims:
        cell.append(dense(in_dim, out_dim, cfg.use_batch_norm))
        in_dim = out_dim

    head = []
    in_dim = cfg.gcn_layer_dims[-1] + (cfg.cell_branch_dims[-1] if cfg.cell_branch_dims
                                       else cfg.cell_input_dim)
    for out_dim in cfg.head_dims[:-1]:
        head.append(dense(in_dim, out_dim, cfg.use_batch_norm))
        in_dim = out_dim
    head.append(dense(in_dim, cfg.head_dims[-1], False))
    return ModelParams(gcn=gcn, cell=cell, head=head)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def encode_drug(tape: ad.Tape, graph: PaddedGraph, params: ModelParams,
                cfg: ModelConfig, mode: str) -> ad.Tensor:
    """Graph convolutions over the padded graph, then masked max-pool readout."""
    if graph.features.shape != (cfg.n_max_atoms, cfg.atom_input_dim):
        raise ValueError(
            f"graph padded to {graph.features.shape}, model expects "
            f"({cfg.n_max_atoms}, {cfg.atom_input_dim})")
    adj = ad.Tensor(graph.norm_adjacency)
    h = ad.Tensor(graph.features)
    for layer in params.gcn:
        h = ad.matmul(tape, adj, ad.matmul(tape, h, layer.weight))
        h = ad.relu(tape, ad.add(tape, h, layer.bias))
    return ad.max_pool_rows(tape, h, graph.mask)


def _dense_stack(tape, x, layers: Sequence[DenseLayer], cfg, mode, rng,
                 activate_last: bool):
    for i, layer in enumerate(layers):
        x = ad.add(tape, ad.matmul(tape, x, layer.weight), layer.bias)
        if not activate_last and i == len(layers) - 1:
            break
        if layer.norm is not None:
            x = ad.batch_norm(tape, x, layer.norm, mode)
        x = ad.relu(tape, x)
        x = ad.dropout(tape, x, cfg.dropout_rate, mode, rng)
    return x


def encode_cell(tape: ad.Tape, features: ad.Tensor, params: ModelParams,
                cfg: ModelConfig, mode: str,
                rng: np.random.Generator | None = None) -> ad.Tensor:
    """Dense branch over fixed, precomputed cell-line vectors."""
    x = features if isinstance(features, ad.Tensor) else ad.Tensor(features)
    if x.data.ndim == 1:
        x = ad.Tensor(x.data.reshape(1, -1), requires_grad=x.requires_grad)
    if x.data.shape[1] != cfg.cell_input_dim:
        raise ValueError(
            f"cell vector of width {x.data.shape[1]}, model expects {cfg.cell_input_dim}")
    return _dense_stack(tape, x, params.cell, cfg, mode, rng, activate_last=True)


def predict(tape: ad.Tape, drug_emb: ad.Tensor, cell_emb: ad.Tensor,
            params: ModelParams, cfg: ModelConfig, mode: str,
            rng: np.random.Generator | None = None) -> ad.Tensor:
    """Head MLP over the concatenated embeddings; sigmoid for classification."""
    h = ad.concat_cols(tape, drug_emb, cell_emb)
    out = _dense_stack(tape, h, params.head, cfg, mode, rng, activate_last=False)
    if cfg.task == "classification":
        out = ad.sigmoid(tape, out)
    return out


def forward_batch(tape: ad.Tape, graphs: Sequence[PaddedGraph], cell_matrix,
                  params: ModelParams, cfg: ModelConfig, mode: str,
                  rng: np.random.Generator | None = None) -> ad.Tensor:
    """Predictions for a batch of (graph, cell vector) pairs.

    Repeated graph objects are encoded once; the stacked rows route the
    pooled gradient back through every occurrence.
    """
    cache: dict[int, ad.Tensor] = {}
    rows = []
    for g in graphs:
        key = id(g)
        if key not in cache:
            cache[key] = encode_drug(tape, g, params, cfg, mode)
        rows.append(cache[key])
    drug_emb = ad.stack_rows(tape, rows)
    cell_emb = encode_cell(tape, ad.Tensor(np.asarray(cell_matrix)), params, cfg, mode, rng)
    return predict(tape, drug_emb, cell_emb, params, cfg, mode, rng)


def predict_records(params: ModelParams, cfg: ModelConfig, dataset,
                    batch_size: int = 256) -> np.ndarray:
    """Eval-mode predictions for every record of a joined dataset."""
    out = np.empty(len(dataset.records))
    for start in range(0, len(dataset.records), batch_size):
        batch = dataset.records[start : start + batch_size]
        graphs = [dataset.graphs[r.drug_id] for r in batch]
        cells = np.stack([dataset.cells.vectors[r.cell_line_id] for r in batch])
        pred = forward_batch(ad.Tape(), graphs, cells, params, cfg, "eval")
        out[start : start + len(batch)] = pred.data[:, 0]
    return out


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(path, cfg: ModelConfig, params: ModelParams) -> None:
    """Write a versioned container: JSON header plus raw little-endian float64."""
    arrays = list(params.named_arrays())
    header = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams]:
    """Read a checkpoint, rejecting version or shape mismatches."""
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise CheckpointError(f"{path}: not a checkpoint file") from None
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {header.get('version')} is not supported "
                f"(expected {CHECKPOINT_VERSION})")
        cfg = ModelConfig(**header["config"])
        params = init_params(cfg, seed=0)
        expected = list(params.named_arrays())
        declared = header["arrays"]
        if [d["name"] for d in declared] != [n for n, _ in expected]:
            raise CheckpointError(f"{path}: checkpoint arrays do not match the configuration")
        for decl, (name, arr) in zip(declared, expected):
            shape = tuple(decl["shape"])
            if shape != arr.shape:
                raise CheckpointError(
                    f"{path}: array {name} has shape {shape}, expected {arr.shape}")
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise CheckpointError(f"{path}: truncated while reading {name}")
            arr[...] = np.frombuffer(buf, dtype="<f8").reshape(shape)
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after the last array")
    return cfg, params
