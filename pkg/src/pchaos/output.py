"""Run directories, CSV/JSONL writers and manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

from . import __version__

OUT_ENV = "PCHAOS_OUT"
DEFAULT_ROOT = "runs"


def output_root(explicit: str | None = None) -> Path:
    """``explicit`` if given, else ``$PCHAOS_OUT``, else ``./runs``."""
    return Path(explicit or os.environ.get(OUT_ENV) or DEFAULT_ROOT)


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def source_digest() -> str:
    """Hash of the package sources, so outputs can be traced to the code that made them."""
    h = hashlib.sha256()
    here = Path(__file__).parent
    for p in sorted(list(here.glob("*.py")) + list(here.glob("*.pyx"))):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def version_stamp() -> str:
    return f"{__version__}+src.{source_digest()}"


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunWriter:
    """Single writer for one run directory; records every file for the manifest."""

    def __init__(self, directory: Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def _track(self, name):
        if name not in self.files:
            self.files.append(name)
        return self.dir / name

    def csv(self, name: str, header, rows):
        path = self._track(name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow(r)
        return path

    def jsonl(self, name: str, records):
        path = self._track(name)
        with open(path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True, default=_jsonable) + "\n")
        return path

    def manifest(self, subcommand: str, config: dict, seed, wall_time: float, status: str, extra=None):
        man = {
            "subcommand": subcommand,
            "config": config,
            "seed": seed,
            "wall_time_s": round(wall_time, 6),
            "version": version_stamp(),
            "status": status,
            "files": {f: file_sha256(self.dir / f) for f in self.files},
        }
        if extra:
            man.update(extra)
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(man, indent=2, sort_keys=True, default=_jsonable) + "\n")
        return path


def _jsonable(x):
    try:
        import numpy as np

        if isinstance(x, np.generic):
            return x.item()
        if isinstance(x, np.ndarray):
            return x.tolist()
    except ImportError:  # pragma: no cover
        pass
    return str(x)
