"""Small shared helpers: seed fan-out and deterministic JSON."""
import hashlib
import json
from pathlib import Path

SCHEMA_VERSION = 1


def stage_seed(seed: int, stage: str) -> int:
    """Derive a per-stage RNG seed from a global seed.

    Uses a stable hash of the stage name so each pipeline stage is
    independently reproducible from the single global seed.
    """
    digest = hashlib.sha256(stage.encode("utf-8")).digest()
    offset = int.from_bytes(digest[:8], "big")
    return (int(seed) + offset) % (1 << 63)


def dump_json(obj, path) -> None:
    """Write JSON with sorted keys so reruns are byte-identical."""
    text = json.dumps(obj, sort_keys=True, indent=2)
    Path(path).write_text(text + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())
