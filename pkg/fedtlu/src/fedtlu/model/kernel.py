"""Windowed next-token language model with analytic gradients.

Forward pass for a batch of context windows (B, C):

    x   = concat(embed[ctx_1], ..., embed[ctx_C])        (B, C*d)
    a_0 = tanh(x @ W_in + b_in)                          (B, h)
    a_r = a_{r-1} + tanh(a_{r-1} @ W1_r + b1_r) @ W2_r + b2_r
    z   = a_R @ W_out + b_out                            (B, V)
    loss = mean(-log softmax(z)[target])

Each repeated block r holds (W1_r, b1_r, W2_r, b2_r) with parameter counts
(h*h, h, h*h, h), so all blocks share one signature.
"""

import logging
import math

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view

from fedtlu.common.errors import (
    ArchitectureError,
    DataError,
    ShapeMismatchError,
    TokenRangeError,
)
from fedtlu.common.types import (
    BLOCK_TENSORS,
    EMBED_WEIGHT,
    INPUT_BIAS,
    INPUT_WEIGHT,
    OUTPUT_BIAS,
    OUTPUT_WEIGHT,
    ArchConfig,
    Batch,
    Gradients,
    ModelState,
    ParamTensor,
    TokenShard,
    block_tensor_name,
)
from fedtlu.common.utils import derive_seed
from fedtlu.data.pipeline import batches


logger = logging.getLogger(__name__)

INIT_SCALE = 0.05
# Evaluation chunk, in windows of seq_len positions.
EVAL_WINDOWS = 64


def init_model(arch: ArchConfig, seed: int) -> ModelState:
    """Weights uniform in [-0.05, 0.05] from the seeded PRNG, biases zero."""
    if not arch.is_valid():
        raise ArchitectureError(f'Invalid architecture dimensions: {arch}')
    rng = np.random.default_rng(seed)
    params = []
    for name, shape, block_id in arch.layout():
        if len(shape) == 1:
            values = np.zeros(shape, dtype=np.float64)
        else:
            values = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
        params.append(
            ParamTensor(name=name, shape=shape, values=values, block_id=block_id)
        )
    return ModelState(arch=arch, params=params)


def _check_batch(arch: ArchConfig, batch: Batch) -> None:
    if batch.size == 0:
        raise DataError('Batch must not be empty.')
    if batch.contexts.ndim != 2 or batch.contexts.shape != (
        batch.size,
        arch.context_len,
    ):
        raise ShapeMismatchError(
            f'Contexts of shape {batch.contexts.shape} do not match '
            f'({batch.size}, {arch.context_len})'
        )
    for ids in (batch.contexts, batch.targets):
        if ids.min() < 0 or ids.max() >= arch.vocab_size:
            raise TokenRangeError(
                f'Token ids must be in [0, {arch.vocab_size}), '
                f'got range [{ids.min()}, {ids.max()}]'
            )


def _forward(arrays: dict[str, np.ndarray], arch: ArchConfig, contexts: np.ndarray):
    b = contexts.shape[0]
    x = arrays[EMBED_WEIGHT][contexts].reshape(b, arch.context_len * arch.embed_dim)
    a = np.tanh(x @ arrays[INPUT_WEIGHT] + arrays[INPUT_BIAS])
    acts = [a]
    hidden = []
    for r in range(arch.num_blocks):
        w1, b1, w2, b2 = (arrays[block_tensor_name(r, s)] for s in BLOCK_TENSORS)
        u = np.tanh(a @ w1 + b1)
        a = a + (u @ w2 + b2)
        hidden.append(u)
        acts.append(a)
    logits = a @ arrays[OUTPUT_WEIGHT] + arrays[OUTPUT_BIAS]
    return logits, (x, acts, hidden)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _example_nll(
    arrays: dict[str, np.ndarray], arch: ArchConfig, contexts: np.ndarray, targets: np.ndarray
) -> np.ndarray:
    logits, _ = _forward(arrays, arch, contexts)
    logp = _log_softmax(logits)
    return -logp[np.arange(len(targets)), targets]


def _loss_and_grads(
    arrays: dict[str, np.ndarray], arch: ArchConfig, batch: Batch
) -> tuple[float, Gradients]:
    contexts, targets = batch
    b = len(targets)
    logits, (x, acts, hidden) = _forward(arrays, arch, contexts)
    logp = _log_softmax(logits)
    rows = np.arange(b)
    mean_nll = float(-logp[rows, targets].mean())

    grads: Gradients = {}
    dlogits = np.exp(logp)
    dlogits[rows, targets] -= 1.0
    dlogits /= b
    grads[OUTPUT_WEIGHT] = acts[-1].T @ dlogits
    grads[OUTPUT_BIAS] = dlogits.sum(axis=0)
    da = dlogits @ arrays[OUTPUT_WEIGHT].T

    for r in reversed(range(arch.num_blocks)):
        w1, _, w2, _ = (arrays[block_tensor_name(r, s)] for s in BLOCK_TENSORS)
        u = hidden[r]
        a_prev = acts[r]
        grads[block_tensor_name(r, 'fc2.weight')] = u.T @ da
        grads[block_tensor_name(r, 'fc2.bias')] = da.sum(axis=0)
        dz = (da @ w2.T) * (1.0 - u * u)
        grads[block_tensor_name(r, 'fc1.weight')] = a_prev.T @ dz
        grads[block_tensor_name(r, 'fc1.bias')] = dz.sum(axis=0)
        # residual path carries da through unchanged
        da = da + dz @ w1.T

    a0 = acts[0]
    dz0 = da * (1.0 - a0 * a0)
    grads[INPUT_WEIGHT] = x.T @ dz0
    grads[INPUT_BIAS] = dz0.sum(axis=0)
    dx = (dz0 @ arrays[INPUT_WEIGHT].T).reshape(b, arch.context_len, arch.embed_dim)
    d_embed = np.zeros_like(arrays[EMBED_WEIGHT])
    np.add.at(d_embed, contexts, dx)
    grads[EMBED_WEIGHT] = d_embed

    ordered = {name: grads[name] for name in arrays}
    return mean_nll, ordered


def loss_and_grads(model: ModelState, batch: Batch) -> tuple[float, Gradients]:
    """Mean next-token NLL over the batch and its exact analytic gradients."""
    _check_batch(model.arch, batch)
    return _loss_and_grads(model.arrays(), model.arch, batch)


def nll(model: ModelState, batch: Batch) -> float:
    """Forward-only mean NLL of a batch."""
    _check_batch(model.arch, batch)
    return float(
        _example_nll(model.arrays(), model.arch, batch.contexts, batch.targets).mean()
    )


def _check_congruent(*states: ModelState) -> None:
    first = states[0]
    for other in states[1:]:
        if not first.is_congruent(other):
            raise ShapeMismatchError('Model states are not shape-congruent.')


def _proximal(
    grads: Gradients,
    current: dict[str, np.ndarray],
    anchor: dict[str, np.ndarray],
    mu: float,
) -> Gradients:
    return {name: g + mu * (current[name] - anchor[name]) for name, g in grads.items()}


def proximal_adjust(
    grads: Gradients, current: ModelState, anchor: ModelState, mu: float
) -> Gradients:
    """Add the FedProx term mu * (w - w_anchor) to every gradient entry."""
    if mu < 0:
        raise ValueError(f'mu must be >= 0, got {mu}')
    _check_congruent(current, anchor)
    for p in current.params:
        if p.name not in grads or grads[p.name].shape != p.values.shape:
            raise ShapeMismatchError(f'Gradient for {p.name!r} missing or misshapen.')
    if mu == 0:
        return {name: g.copy() for name, g in grads.items()}
    return _proximal(grads, current.arrays(), anchor.arrays(), mu)


def local_update(
    global_model: ModelState,
    shard: TokenShard,
    epochs: int,
    eta: float,
    batch_size: int,
    seq_len: int,
    mu: float,
    seed: int,
) -> ModelState:
    """Run E epochs of mini-batch SGD on one client's shard.

    The received global model is both the starting point and the proximal
    anchor. Epoch e shuffles with a seed derived from (seed, e).
    """
    arch = global_model.arch
    if shard.length < arch.context_len + 1:
        raise DataError(
            f'Shard {shard.client_id} of {shard.length} tokens cannot form '
            'a training example'
        )
    anchor = global_model.arrays()
    arrays = {name: values.copy() for name, values in anchor.items()}
    steps = 0
    last_loss = math.nan
    for epoch in range(epochs):
        for batch in batches(
            shard,
            seq_len,
            batch_size,
            seed=derive_seed(seed, 'epoch', epoch),
            context_len=arch.context_len,
        ):
            _check_batch(arch, batch)
            last_loss, grads = _loss_and_grads(arrays, arch, batch)
            if mu > 0:
                grads = _proximal(grads, arrays, anchor, mu)
            for name, g in grads.items():
                arrays[name] = arrays[name] - eta * g
            steps += 1
    logger.debug(
        f'Client {shard.client_id}: {steps} steps over {epochs} epochs, '
        f'last batch loss {last_loss:.4f}'
    )
    return global_model.with_arrays(arrays)


def evaluate_nll(model: ModelState, tokens: np.ndarray, seq_len: int) -> float:
    """Mean NLL over every position of a stream that has a full context."""
    arch = model.arch
    tokens = np.asarray(tokens, dtype=np.int64)
    n = len(tokens)
    if n < arch.context_len + 1:
        raise DataError(
            f'Sequence of {n} tokens is shorter than one example '
            f'(C={arch.context_len})'
        )
    if tokens.min() < 0 or tokens.max() >= arch.vocab_size:
        raise TokenRangeError(f'Token ids must be in [0, {arch.vocab_size}).')
    contexts = sliding_window_view(tokens, arch.context_len)[: n - arch.context_len]
    targets = tokens[arch.context_len :]
    arrays = model.arrays()
    chunk = max(1, seq_len) * EVAL_WINDOWS
    total = 0.0
    for start in range(0, len(targets), chunk):
        stop = start + chunk
        total += float(
            _example_nll(arrays, arch, contexts[start:stop], targets[start:stop]).sum()
        )
    return total / len(targets)


def perplexity(model: ModelState, tokens: np.ndarray, seq_len: int) -> float:
    """exp(mean token NLL) over the evaluation stream."""
    return math.exp(evaluate_nll(model, tokens, seq_len))
