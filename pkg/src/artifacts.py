"""
artifacts.py - shared error root, atomic file writes, JSON / JSON-lines IO,
content fingerprints and the run manifest.
"""
import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone


class PipelineError(Exception):
    """Base class for every error the pipeline reports to the user."""


# ---------------------------
# Atomic writes
# ---------------------------
def atomic_write_text(path, text):
    """Write text to path via a temp file in the same directory + rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_json(path, payload):
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_jsonl(path, rows):
    lines = [json.dumps(row, sort_keys=True) for row in rows]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def append_jsonl(path, row):
    """Append one record; used for the trial log, which is append-only."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path):
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise PipelineError(f"{path}:{line_no}: invalid JSON ({e.msg})") from e
    return rows


# ---------------------------
# Fingerprints
# ---------------------------
def file_fingerprint(path):
    """sha256 of the raw file bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


# ---------------------------
# Run manifest
# ---------------------------
@dataclass
class RunManifest:
    command: str
    trial_config: dict
    dataset_fingerprints: dict
    fold_seed: int
    backend: str
    backend_options: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    tool_version: str = ""
    created_at: str = ""

    def save(self, path):
        payload = asdict(self)
        if not payload["created_at"]:
            payload["created_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
        write_json(path, payload)

    @classmethod
    def load(cls, path):
        return cls(**read_json(path))
