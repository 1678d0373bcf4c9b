"""
Instance and corpus generation.

RSA pipeline: disjoint feature-pair banks -> binary objective matrices
(rows = feature dimensions, columns = referents, column 0 = target) annotated
with the golden-chain round count -> materialized ObjectSets -> JSONL corpus.
Taboo: seeded association worlds.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from foresight import rsa_oracle
from foresight.environments import TabooWorld, taboo_generate_world
from foresight.errors import ContractViolation, CorpusError, DegenerateInstanceError
from foresight.logsetup import progress_enabled
from foresight.settings import DataGenConfig, TabooGameConfig

logger = logging.getLogger(__name__)

CORPUS_SCHEMA = "rsa-corpus/1"
TABOO_CORPUS_SCHEMA = "taboo-corpus/1"
TABOO_WORLD_SCHEMA = "taboo-world/1"
MANIFEST_NAME = "manifest.json"

# SeedSequence stream ids, so the splits never share randomness
_STREAM_BANK = 0
_STREAM_RL = 1
_STREAM_PRETRAIN = 2
_STREAM_TABOO = 3


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


# ============================================================
# Feature banks
# ============================================================

@dataclass(frozen=True)
class FeaturePairBank:
    pairs: Tuple[Tuple[str, str], ...]
    split: str

    def tokens(self) -> set:
        return {v for pair in self.pairs for v in pair}


def build_feature_bank(seed: int = 0, pretrain_count: int = 86,
                       rl_count: int = 25) -> Tuple[FeaturePairBank, FeaturePairBank]:
    """Two disjoint banks of synthetic contrast pairs ("f017a" / "f017b")."""
    if pretrain_count < 1 or rl_count < 1:
        raise ContractViolation("bank sizes must be >= 1")
    total = pretrain_count + rl_count
    width = max(3, len(str(total - 1)))
    order = _rng(seed, _STREAM_BANK).permutation(total)
    pairs = [(f"f{k:0{width}d}a", f"f{k:0{width}d}b") for k in order]
    return (FeaturePairBank(tuple(pairs[:pretrain_count]), "pretrain"),
            FeaturePairBank(tuple(pairs[pretrain_count:]), "rl"))


# ============================================================
# Objective matrices
# ============================================================

@dataclass(frozen=True)
class ObjectiveMatrix:
    matrix: np.ndarray = field(compare=False)
    min_rounds: Optional[int] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.matrix.shape)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ObjectiveMatrix) and self.min_rounds == other.min_rounds
                and np.array_equal(self.matrix, other.matrix))

    def __hash__(self) -> int:
        return hash((self.matrix.tobytes(), self.matrix.shape, self.min_rounds))


def _neutral_instance(matrix: np.ndarray) -> rsa_oracle.ObjectSet:
    # labels are irrelevant to the chain; only equality with the target matters
    m, n = matrix.shape
    dims = tuple(f"d{j}" for j in range(m))
    objects = tuple(tuple(f"d{j}{'+' if matrix[j, i] else '-'}" for j in range(m)) for i in range(n))
    return rsa_oracle.ObjectSet(dims, objects, 0)


def annotate(matrix: np.ndarray) -> ObjectiveMatrix:
    """Attach min_rounds; raises DegenerateInstanceError for unsolvable matrices."""
    chain = rsa_oracle.golden_chain(_neutral_instance(matrix))
    return ObjectiveMatrix(matrix, chain.min_rounds)


def _check_shape(m: int, n: int) -> None:
    if not (2 <= m <= 8 and 2 <= n <= 12):
        raise CorpusError(f"matrix shape {m}x{n} outside 2..8 x 2..12")
    if n > 2 ** m:
        raise CorpusError(f"cannot build {n} distinct referent columns from {m} binary rows")


def _random_matrix(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    all_ones = 2 ** m - 1
    codes = rng.choice(all_ones, size=n - 1, replace=False)
    matrix = np.ones((m, n), dtype=np.int8)
    for i, code in enumerate(codes, start=1):
        matrix[:, i] = [(int(code) >> j) & 1 for j in range(m)]
    return matrix


def generate_matrices(shapes: Optional[Sequence[Tuple[int, int]]], count: int, seed: int,
                      cfg: Optional[DataGenConfig] = None, stream: int = _STREAM_RL) -> List[ObjectiveMatrix]:
    """
    Random solvable matrices with distinct columns.

    Args:
        shapes: (m, n) shapes used in turn; None samples m and n uniformly
            from the configured ranges
        count: Number of matrices
        seed: Master seed; item i uses SeedSequence([seed, stream, i])

    Raises:
        CorpusError: infeasible shape or no solvable matrix within max_attempts
    """
    cfg = cfg or DataGenConfig()
    result: List[ObjectiveMatrix] = []
    for i in tqdm(range(count), desc="matrices", disable=not progress_enabled() or count < 100):
        rng = _rng(seed, stream, i)
        if shapes:
            m, n = shapes[i % len(shapes)]
        else:
            m = int(rng.integers(cfg.min_dims, cfg.max_dims + 1))
            n = int(rng.integers(cfg.min_referents, min(cfg.max_referents, 2 ** m) + 1))
        _check_shape(m, n)
        for _ in range(cfg.max_attempts):
            try:
                result.append(annotate(_random_matrix(rng, m, n)))
                break
            except DegenerateInstanceError:
                continue
        else:
            raise CorpusError(f"no solvable {m}x{n} matrix within {cfg.max_attempts} attempts")
    return result


def materialize_instance(matrix: ObjectiveMatrix, bank: FeaturePairBank, seed: int,
                         instance_id: str = "") -> rsa_oracle.ObjectSet:
    """
    Assign one bank pair per row; 1 entries take the target's value, 0 the other.

    Object order follows the matrix columns, so object 0 is the target.
    """
    grid = matrix.matrix
    m, n = grid.shape
    if len(bank.pairs) < m:
        raise CorpusError(f"bank '{bank.split}' has {len(bank.pairs)} pairs, matrix needs {m}")
    rng = np.random.default_rng(seed)
    rows = rng.choice(len(bank.pairs), size=m, replace=False)
    flips = rng.integers(2, size=m)
    dims, target_values, other_values = [], [], []
    for j in range(m):
        a, b = bank.pairs[int(rows[j])]
        dims.append(f"{a}/{b}")
        target_values.append(b if flips[j] else a)
        other_values.append(a if flips[j] else b)
    objects = tuple(
        tuple(target_values[j] if grid[j, i] else other_values[j] for j in range(m)) for i in range(n)
    )
    return rsa_oracle.ObjectSet(tuple(dims), objects, 0, instance_id)


def shuffle_objects(instance: rsa_oracle.ObjectSet, seed: int) -> rsa_oracle.ObjectSet:
    """Random object order so the target's position carries no signal."""
    order = np.random.default_rng(seed).permutation(instance.n_objects)
    objects = tuple(instance.objects[int(k)] for k in order)
    target = int(np.flatnonzero(order == instance.target_index)[0])
    return rsa_oracle.ObjectSet(instance.feature_dims, objects, target, instance.instance_id)


def instance_matrix(instance: rsa_oracle.ObjectSet) -> np.ndarray:
    """Inverse of materialize_instance: entry (j, i) is 1 when object i shares the target's value j."""
    target = instance.target
    return np.array([[int(o[j] == target[j]) for o in instance.objects] for j in range(instance.n_dims)],
                    dtype=np.int8)


# ============================================================
# RSA corpus
# ============================================================

@dataclass
class RsaCorpus:
    splits: Dict[str, List[rsa_oracle.ObjectSet]]
    chains: Dict[str, List[rsa_oracle.GoldenChain]]
    manifest: Dict

    def instances(self, split: str) -> List[rsa_oracle.ObjectSet]:
        if split not in self.splits:
            raise CorpusError(f"corpus has no split '{split}'")
        return self.splits[split]


def _build_split(name: str, count: int, bank: FeaturePairBank, cfg: DataGenConfig,
                 stream: int) -> List[rsa_oracle.ObjectSet]:
    matrices = generate_matrices(None, count, cfg.seed, cfg, stream)
    instances = []
    for i, matrix in enumerate(matrices):
        item_seed = int(np.random.SeedSequence([cfg.seed, stream, i, 1]).generate_state(1)[0])
        inst = materialize_instance(matrix, bank, item_seed, f"{name}-{i:05d}")
        if cfg.shuffle_objects:
            inst = shuffle_objects(inst, item_seed)
        instances.append(inst)
    return instances


def generate_rsa_corpus(cfg: DataGenConfig) -> RsaCorpus:
    """RL instances from the rl bank, pretraining instances + golden chains from the pretrain bank."""
    pretrain_bank, rl_bank = build_feature_bank(cfg.seed, cfg.pretrain_pairs, cfg.rl_pairs)
    logger.info("Generating %d RL instances and %d pretraining chains (seed %d)",
                cfg.rl_count, cfg.pretrain_count, cfg.seed)
    rl = _build_split("rl", cfg.rl_count, rl_bank, cfg, _STREAM_RL)
    pretrain = _build_split("pretrain", cfg.pretrain_count, pretrain_bank, cfg, _STREAM_PRETRAIN)
    chains = {"pretrain": [rsa_oracle.golden_chain(inst) for inst in pretrain]}
    manifest = {
        "schema": CORPUS_SCHEMA,
        "game": "rsa",
        "seed": cfg.seed,
        "generation": cfg.model_dump(),
        "banks": {"pretrain": len(pretrain_bank.pairs), "rl": len(rl_bank.pairs)},
    }
    return RsaCorpus({"rl": rl, "pretrain": pretrain}, chains, manifest)


def _write_jsonl(path: Path, records: Sequence[Dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> List[Dict]:
    if not path.is_file():
        raise CorpusError(f"missing corpus file {path}")
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: {e}") from e
    return records


def emit_corpus(corpus: RsaCorpus, path: Path) -> Path:
    """
    Write <split>_instances.jsonl, <split>_chains.jsonl and manifest.json.

    Returns:
        Path: the corpus directory

    Raises:
        CorpusError: destination not writable
    """
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        counts, chain_counts = {}, {}
        for split, instances in corpus.splits.items():
            records = []
            for inst in instances:
                record = rsa_oracle.instance_record(inst)
                record["split"] = split
                records.append(record)
            _write_jsonl(path / f"{split}_instances.jsonl", records)
            counts[split] = len(records)
        for split, chains in corpus.chains.items():
            records = [rsa_oracle.chain_record(inst, chain) for inst, chain in zip(corpus.splits[split], chains)]
            _write_jsonl(path / f"{split}_chains.jsonl", records)
            chain_counts[split] = len(records)
        manifest = dict(corpus.manifest, counts=counts, chain_counts=chain_counts,
                        splits=sorted(corpus.splits))
        (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"cannot write corpus to {path}: {e}") from e
    logger.info("Corpus written to %s (%s)", path, ", ".join(f"{k}={v}" for k, v in counts.items()))
    return path


def load_corpus(path: Path) -> RsaCorpus:
    """Reload a corpus written by emit_corpus; chains are recomputed from the instances."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise CorpusError(f"no corpus manifest in {path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("schema") != CORPUS_SCHEMA:
        raise CorpusError(f"{manifest_path}: unexpected schema {manifest.get('schema')!r}")
    splits: Dict[str, List[rsa_oracle.ObjectSet]] = {}
    for split in manifest.get("splits", []):
        try:
            splits[split] = [rsa_oracle.instance_from_record(r) for r in _read_jsonl(path / f"{split}_instances.jsonl")]
        except (KeyError, TypeError, ValueError, ContractViolation) as e:
            raise CorpusError(f"malformed instance record in split '{split}': {e}") from e
    chains = {split: [rsa_oracle.golden_chain(inst) for inst in splits[split]]
              for split in manifest.get("chain_counts", {}) if split in splits}
    return RsaCorpus(splits, chains, manifest)


# ============================================================
# Taboo corpus
# ============================================================

def generate_taboo_worlds(seed: int, count: int, cfg: Optional[TabooGameConfig] = None) -> List[TabooWorld]:
    cfg = cfg or TabooGameConfig()
    worlds = []
    for i in range(count):
        world_seed = int(np.random.SeedSequence([seed, _STREAM_TABOO, i]).generate_state(1)[0])
        worlds.append(taboo_generate_world(world_seed, cfg.vocab_size, cfg.cue_count, cfg.max_turns,
                                           cfg.signature_size, world_id=f"taboo-{i:05d}"))
    return worlds


def world_record(world: TabooWorld) -> Dict:
    return {
        "schema": TABOO_WORLD_SCHEMA,
        "world_id": world.world_id,
        "weights": world.weights.tolist(),
        "target_index": world.target_index,
        "max_turns": world.max_turns,
    }


def world_from_record(record: Dict) -> TabooWorld:
    if record.get("schema") != TABOO_WORLD_SCHEMA:
        raise CorpusError(f"unexpected schema {record.get('schema')!r}")
    try:
        weights = np.asarray(record["weights"], dtype=np.float64)
        return TabooWorld(weights, int(record["target_index"]), int(record["max_turns"]), str(record["world_id"]))
    except (KeyError, TypeError, ValueError) as e:
        raise CorpusError(f"malformed taboo world record: {e}") from e


def emit_taboo_corpus(worlds: Sequence[TabooWorld], path: Path, seed: int, cfg: TabooGameConfig) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        _write_jsonl(path / "taboo_worlds.jsonl", [world_record(w) for w in worlds])
        manifest = {
            "schema": TABOO_CORPUS_SCHEMA,
            "game": "taboo",
            "seed": seed,
            "generation": cfg.model_dump(),
            "counts": {"worlds": len(worlds)},
        }
        (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"cannot write corpus to {path}: {e}") from e
    return path


def load_taboo_corpus(path: Path) -> List[TabooWorld]:
    return [world_from_record(r) for r in _read_jsonl(Path(path) / "taboo_worlds.jsonl")]
