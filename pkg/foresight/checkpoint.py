"""
Binary parameter / optimizer checkpoints.

Layout (little-endian), see FILE_FORMATS.md:
    header  struct "<4sHHHHIIIQQQQHH" (60 bytes)
    payload n_arrays × d float64 values (θ, then θ_old for optimizer checkpoints)

The random-number state is (master_seed, phase): every sampling stream of a
phase is derived from SeedSequence([master_seed, phase, ...]), so no generator
state is stored and a resumed run draws the same episodes as an uninterrupted one.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from foresight.errors import CheckpointError
from foresight.paramcore import PolicyLayout, PolicyParameters

logger = logging.getLogger(__name__)

MAGIC = b"FOPO"
VERSION = 1
HEADER = struct.Struct("<4sHHHHIIIQQQQHH")
KIND_PARAMETERS = 1
KIND_OPTIMIZER = 2
SUFFIX = ".ckpt"


@dataclass
class Checkpoint:
    layout: PolicyLayout
    theta: np.ndarray
    theta_old: Optional[np.ndarray] = None
    master_seed: int = 0
    phase: int = 0
    step: int = 0

    @property
    def kind(self) -> int:
        return KIND_PARAMETERS if self.theta_old is None else KIND_OPTIMIZER

    def parameters(self) -> PolicyParameters:
        return PolicyParameters(self.theta.copy(), self.layout)


def save_checkpoint(path: Path, ckpt: Checkpoint) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    arrays = [ckpt.theta] if ckpt.theta_old is None else [ckpt.theta, ckpt.theta_old]
    d = ckpt.layout.d
    for a in arrays:
        if a.shape != (d,):
            raise CheckpointError(f"array of shape {a.shape} does not match d={d}")
        if not np.all(np.isfinite(a)):
            logger.warning("writing non-finite values to %s", path)

    layout = ckpt.layout
    header = HEADER.pack(MAGIC, VERSION, ckpt.kind, layout.game_id, layout.feature_map_id,
                         layout.hidden_units, layout.n_actions, layout.n_features,
                         d, ckpt.master_seed, ckpt.phase, ckpt.step, len(arrays), 0)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(header + payload)
    tmp.replace(path)
    return path


def load_checkpoint(path: Path, expected: Optional[PolicyLayout] = None) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Args:
        path: Checkpoint file
        expected: When given, the stored layout must match it

    Raises:
        CheckpointError: missing file, bad magic or version, truncated payload,
            layout mismatch
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    (magic, version, kind, game_id, fmap_id, hidden, n_actions, n_features,
     d, seed, phase, step, n_arrays, _) = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if kind not in (KIND_PARAMETERS, KIND_OPTIMIZER) or n_arrays != kind:
        raise CheckpointError(f"{path}: inconsistent kind {kind} / {n_arrays} arrays")

    layout = PolicyLayout(n_actions=n_actions, n_features=n_features, hidden_units=hidden,
                          game_id=game_id, feature_map_id=fmap_id)
    if layout.d != d:
        raise CheckpointError(f"{path}: header d={d} disagrees with layout d={layout.d}")
    if len(raw) != HEADER.size + n_arrays * d * 8:
        raise CheckpointError(f"{path}: payload size {len(raw) - HEADER.size} does not match {n_arrays}×{d} floats")
    if expected is not None and expected != layout:
        raise CheckpointError(f"{path}: layout {layout} does not match the configured game {expected}")

    values = np.frombuffer(raw, dtype="<f8", offset=HEADER.size).astype(np.float64)
    theta = values[:d].copy()
    theta_old = values[d:2 * d].copy() if n_arrays == 2 else None
    return Checkpoint(layout, theta, theta_old, master_seed=seed, phase=phase, step=step)


def list_checkpoints(directory: Path) -> List[Path]:
    """Checkpoint files in a directory, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise CheckpointError(f"checkpoint directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix == SUFFIX)
