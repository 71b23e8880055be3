# src/archive.py
import hashlib
import json
import os
from datetime import datetime, timezone
from typing import Iterable, Optional

import psutil

from src.logger import log_error, log_info, log_success


def config_hash(data: dict) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def ensure_dir(path: str) -> str:
    if not os.path.exists(path):
        os.makedirs(path, exist_ok=True)
    return path


def append_records(filepath: str, records: Iterable[dict]) -> int:
    """
    Append dictionaries as JSON lines. Returns number of records appended.
    """
    ensure_dir(os.path.dirname(filepath) or ".")
    count = 0
    try:
        with open(filepath, "a", encoding="utf-8") as f:
            for rec in records:
                f.write(json.dumps(rec, ensure_ascii=False, default=str) + "\n")
                count += 1
    except OSError as e:
        log_error(f"Failed to append records to {filepath}: {e}")
    return count


def read_records(filepath: str):
    """
    Read a JSON lines file; unreadable lines are skipped.
    """
    if not os.path.exists(filepath):
        return []
    results = []
    with open(filepath, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                results.append(json.loads(line))
            except json.JSONDecodeError:
                continue
    return results


def rss_mib() -> float:
    return psutil.Process(os.getpid()).memory_info().rss / (1024.0 * 1024.0)


class RunArchive:
    """
    Output directory of one command run:

        <out>/<command>-<case>-<method>-<hash12>/
            config.json     resolved configuration snapshot
            events.jsonl    level start/finish records with resource usage
            ...             CSV, SVG and field files written by the drivers

    The directory name depends only on the configuration, so reruns of the
    same configuration overwrite their previous results.
    """

    def __init__(self, out_dir: str, command: str, run_config, timing: bool = True):
        self.command = command
        self.run_config = run_config
        snapshot = {"command": command, **run_config.as_dict()}
        self.hash = config_hash(snapshot)
        name = f"{command}-{run_config.case}-{run_config.method}-{self.hash[:12]}"
        self.path = ensure_dir(os.path.join(out_dir, name))
        self.timing = timing
        self.events_path = os.path.join(self.path, "events.jsonl")
        if os.path.exists(self.events_path):
            os.remove(self.events_path)
        with open(os.path.join(self.path, "config.json"), "w", encoding="utf-8") as f:
            json.dump({"config_hash": self.hash, **snapshot}, f, indent=2, sort_keys=True, default=str)
            f.write("\n")
        log_info(f"Run directory: {self.path} (config hash {self.hash[:12]})")

    def file(self, name: str) -> str:
        return os.path.join(self.path, name)

    def record(self, event: str, **fields) -> None:
        entry = {"event": event, **fields}
        if self.timing:
            entry["time"] = datetime.now(timezone.utc).isoformat()
            entry["rss_mib"] = round(rss_mib(), 1)
        append_records(self.events_path, [entry])

    def events(self):
        return read_records(self.events_path)

    def finish(self, status: str = "ok", message: Optional[str] = None) -> None:
        self.record("finished", status=status, message=message)
        if status == "ok":
            log_success(f"Results written to {self.path}")
        else:
            log_error(f"Run ended with status {status}: {message}")
