"""Run manifests: enough provenance to reproduce any output directory.

Every run directory holds exactly one manifest.json recording the
command, the fully resolved config, the seed, a content hash of the
package sources, timestamps, and the produced output paths. Reruns with
an identical manifest reproduce the metric CSVs bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path


def code_hash() -> str:
    """SHA-256 over the package sources, in sorted path order."""
    pkg_dir = Path(__file__).parent
    h = hashlib.sha256()
    for path in sorted(pkg_dir.rglob("*.py")):
        h.update(str(path.relative_to(pkg_dir)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


class RunManifest:
    def __init__(self, out_dir, command: str, argv: list[str], seed: int,
                 config_snapshot: dict):
        self.path = Path(out_dir) / "manifest.json"
        self.data = {
            "command": command,
            "argv": list(argv),
            "seed": seed,
            "config": config_snapshot,
            "code_hash": code_hash(),
            "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "finished": None,
            "outputs": [],
        }

    def add_output(self, path) -> None:
        rel = str(Path(path))
        if rel not in self.data["outputs"]:
            self.data["outputs"].append(rel)
        self.write()

    def finish(self) -> None:
        self.data["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        self.write()

    def write(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".json.tmp")
        with open(tmp, "w") as f:
            json.dump(self.data, f, indent=1, default=str)
        tmp.replace(self.path)
