"""Append-only run records in the workspace directory."""

from __future__ import annotations

import json
import os
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

WORKSPACE_ENV = "LINKGUARD_WORKSPACE"
RUNS_FILENAME = "runs.jsonl"


def workspace_dir(explicit: str | None = None) -> Path:
    root = Path(explicit or os.environ.get(WORKSPACE_ENV, "."))
    root.mkdir(parents=True, exist_ok=True)
    return root


@dataclass
class RunRecord:
    command: str
    config: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)
    outcome: dict = field(default_factory=dict)
    run_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    started_at: str = ""
    finished_at: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def append_run(record: RunRecord, workspace: str | None = None) -> Path:
    path = workspace_dir(workspace) / RUNS_FILENAME
    if not record.finished_at:
        record.finished_at = time.strftime("%Y-%m-%dT%H:%M:%S")
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record.to_dict(), default=str) + "\n")
    return path


def load_runs(workspace: str | None = None) -> list[dict]:
    path = workspace_dir(workspace) / RUNS_FILENAME
    if not path.exists():
        return []
    runs = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                runs.append(json.loads(line))
    return runs


def find_run(run_id: str, workspace: str | None = None) -> dict | None:
    for run in load_runs(workspace):
        if run.get("run_id") == run_id:
            return run
    return None
