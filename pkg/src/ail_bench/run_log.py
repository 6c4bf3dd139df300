import fcntl
import hashlib
import json
import logging
import os
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)


class RunRecord(BaseModel):
    """Outcome of one training run.

    Attributes:
        config: Flattened ChoiceConfig (inactive sub-choices omitted).
        config_hash: sha256 of the sorted-key JSON of ``config``.
        env_id: Task the run trained on.
        demos: Label of the demonstration set (task identity with ``env_id``).
        seed: Run seed.
        total_env_steps: Training budget.
        eval_curve: (env step, normalized score) per evaluation.
        raw_curve: (env step, mean episode return) per evaluation.
        final_score: Last normalized score.
        average_score: Mean normalized score over the evaluations.
        status: ``ok`` or ``failed``.
        error: Failure message for failed runs.
        random_ref: Random-policy return used for normalization.
        expert_ref: Expert return used for normalization.
    """
    config: Dict[str, Any]
    config_hash: str
    env_id: str
    demos: str = ""
    seed: int
    total_env_steps: int = 0
    eval_curve: List[Tuple[int, float]] = Field(default_factory=list)
    raw_curve: List[Tuple[int, float]] = Field(default_factory=list)
    final_score: Optional[float] = None
    average_score: Optional[float] = None
    status: Literal["ok", "failed"] = "ok"
    error: Optional[str] = None
    random_ref: Optional[float] = None
    expert_ref: Optional[float] = None

    @property
    def key(self) -> Tuple[str, int, str, str]:
        """Identity used to skip already-finished runs when a sweep resumes."""
        return (self.config_hash, self.seed, self.env_id, self.demos)

    @property
    def task(self) -> Tuple[str, str]:
        return (self.env_id, self.demos)

    def metric(self, name: str) -> Optional[float]:
        return getattr(self, name)


def sha256_bytes(b: bytes) -> str:
    """Computes the SHA256 hash of a byte sequence."""
    return hashlib.sha256(b).hexdigest()


def sha256_json(obj) -> str:
    """Computes the SHA256 hash of a JSON-serializable object.

    The object is serialized with sorted keys so equal objects hash equally.
    Non-finite floats are written as ``Infinity``/``NaN``.

    Args:
        obj: The object to hash.

    Returns:
        The hexadecimal representation of the SHA256 hash.
    """
    return sha256_bytes(json.dumps(obj, sort_keys=True).encode())


def config_hash(flat_config: Dict[str, Any]) -> str:
    return sha256_json(flat_config)


def append_record(path: str, record: RunRecord) -> None:
    """Appends one record as a JSON line under an exclusive file lock.

    Args:
        path: Results file (created if missing).
        record: The record to append.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    line = json.dumps(record.model_dump(), sort_keys=True) + "\n"
    with open(path, "a", encoding="utf-8") as f:
        fcntl.flock(f, fcntl.LOCK_EX)
        try:
            f.write(line)
            f.flush()
            os.fsync(f.fileno())
        finally:
            fcntl.flock(f, fcntl.LOCK_UN)


def load_records(path: str) -> List[RunRecord]:
    """Loads every record of a results file.

    A truncated final line (an interrupted append) is skipped with a warning;
    malformed lines elsewhere raise.

    Args:
        path: Results file; a missing file yields no records.

    Returns:
        The records in file order.
    """
    if not os.path.exists(path):
        return []
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    records = []
    for i, line in enumerate(lines):
        try:
            records.append(RunRecord.model_validate(json.loads(line)))
        except ValueError:
            if i == len(lines) - 1:
                logger.warning("skipping truncated last line of %s", path)
                break
            raise
    return records
