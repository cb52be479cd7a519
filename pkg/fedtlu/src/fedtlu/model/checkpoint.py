"""Two-part checkpoint files.

Layout::

    <manifest byte length as ASCII decimal>\\n
    <UTF-8 JSON manifest>
    <little-endian float64 values of every tensor, in manifest order>

The manifest lists the architecture and, per tensor, its name, shape,
block_id, byte offset into the blob and value count.
"""

import json
import logging
import math

from pathlib import Path

import numpy as np

from pydantic import BaseModel, ConfigDict, ValidationError

from fedtlu.common.errors import CheckpointError
from fedtlu.common.types import ArchConfig, ModelState, ParamTensor


logger = logging.getLogger(__name__)

FORMAT_NAME = 'fedtlu-checkpoint'
FORMAT_VERSION = 1
VALUE_DTYPE = np.dtype('<f8')


class TensorEntry(BaseModel):
    """Manifest entry for one tensor."""

    model_config = ConfigDict(extra='forbid')

    name: str
    shape: list[int]
    block_id: int | None
    offset: int
    count: int


class CheckpointManifest(BaseModel):
    """Checkpoint manifest."""

    model_config = ConfigDict(extra='forbid')

    format: str = FORMAT_NAME
    version: int = FORMAT_VERSION
    arch: ArchConfig
    tensors: list[TensorEntry]


def save_checkpoint(model: ModelState, path: str | Path) -> Path:
    """Write ``model`` to ``path`` in the two-part format."""
    path = Path(path)
    entries = []
    offset = 0
    for p in model.params:
        entries.append(
            TensorEntry(
                name=p.name,
                shape=list(p.shape),
                block_id=p.block_id,
                offset=offset,
                count=p.param_count,
            )
        )
        offset += p.param_count * VALUE_DTYPE.itemsize
    manifest = CheckpointManifest(arch=model.arch, tensors=entries)
    manifest_bytes = manifest.model_dump_json().encode('utf-8')
    blob = b''.join(
        np.ascontiguousarray(p.values, dtype=VALUE_DTYPE).tobytes() for p in model.params
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('wb') as f:
        f.write(f'{len(manifest_bytes)}\n'.encode('ascii'))
        f.write(manifest_bytes)
        f.write(blob)
    logger.info(f'Saved checkpoint {path} ({model.num_params} values)')
    return path


def _read_manifest(raw: bytes) -> tuple[CheckpointManifest, bytes]:
    header_end = raw.find(b'\n')
    if header_end < 0:
        raise CheckpointError('Missing manifest length header line.')
    try:
        manifest_len = int(raw[:header_end].decode('ascii'))
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointError(f'Invalid manifest length header: {e}') from e
    start = header_end + 1
    manifest_raw = raw[start : start + manifest_len]
    if manifest_len < 0 or len(manifest_raw) != manifest_len:
        raise CheckpointError('Manifest is truncated.')
    try:
        manifest = CheckpointManifest.model_validate_json(manifest_raw)
    except ValidationError as e:
        raise CheckpointError(f'Corrupt manifest: {e}') from e
    if manifest.format != FORMAT_NAME or manifest.version != FORMAT_VERSION:
        raise CheckpointError(
            f'Unsupported checkpoint format {manifest.format} v{manifest.version}'
        )
    return manifest, raw[start + manifest_len :]


def load_checkpoint(path: str | Path) -> ModelState:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        CheckpointError: On a corrupt manifest, tensors that do not match the
            architecture layout, count/shape mismatches or a blob whose size
            differs from the declared values.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Checkpoint '{path}' could not be read: {e}") from e
    manifest, blob = _read_manifest(raw)

    layout = manifest.arch.layout()
    if [e.name for e in manifest.tensors] != [name for name, _, _ in layout]:
        known = {name for name, _, _ in layout}
        unknown = [e.name for e in manifest.tensors if e.name not in known]
        raise CheckpointError(
            f'Manifest tensors do not match the architecture layout'
            f'{f" (unknown: {unknown})" if unknown else ""}'
        )

    params = []
    expected_offset = 0
    for entry, (name, shape, block_id) in zip(manifest.tensors, layout):
        if tuple(entry.shape) != shape or entry.block_id != block_id:
            raise CheckpointError(
                f'Tensor {name!r}: manifest shape {entry.shape} / block '
                f'{entry.block_id} does not match {list(shape)} / {block_id}'
            )
        if entry.count != math.prod(shape):
            raise CheckpointError(
                f'Tensor {name!r}: count {entry.count} does not match shape {list(shape)}'
            )
        if entry.offset != expected_offset:
            raise CheckpointError(f'Tensor {name!r}: unexpected offset {entry.offset}')
        end = entry.offset + entry.count * VALUE_DTYPE.itemsize
        if end > len(blob):
            raise CheckpointError(f'Value blob is truncated at tensor {name!r}.')
        values = np.frombuffer(blob, dtype=VALUE_DTYPE, count=entry.count, offset=entry.offset)
        params.append(
            ParamTensor(
                name=name,
                shape=shape,
                values=values.astype(np.float64),
                block_id=block_id,
            )
        )
        expected_offset = end
    if expected_offset != len(blob):
        raise CheckpointError(
            f'Value blob has {len(blob) - expected_offset} trailing bytes.'
        )
    logger.info(f'Loaded checkpoint {path}')
    return ModelState(arch=manifest.arch, params=params)
