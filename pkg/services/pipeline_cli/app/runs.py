"""Run directories: artifacts, input digests and metrics for one subcommand."""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List

from services.shared.observability import write_metrics

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
_BLOCK = 1 << 16


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(_BLOCK), b""):
            digest.update(block)
    return digest.hexdigest()


def _files(paths: Iterable[Path]) -> List[Path]:
    found: List[Path] = []
    for path in paths:
        path = Path(path)
        if path.is_dir():
            found.extend(sorted(p for p in path.rglob("*") if p.is_file()))
        elif path.is_file():
            found.append(path)
    return found


class RunDirectory:
    """``<out_dir>/<command>`` holding a command's outputs.

    The manifest lists input digests and parameters only, so identical inputs
    give byte-identical manifests.
    """

    def __init__(self, out_dir: Path, command: str):
        self.command = command
        self.path = Path(out_dir) / command
        self.inputs: List[Path] = []
        self.artifacts: List[str] = []

    def open(self) -> "RunDirectory":
        self.path.mkdir(parents=True, exist_ok=True)
        return self

    def add_inputs(self, *paths: Path) -> None:
        self.inputs.extend(Path(p) for p in paths if p is not None)

    def file(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.path / name

    def write_json(self, name: str, document: Any) -> Path:
        path = self.file(name)
        path.write_text(json.dumps(document, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.file(name)
        path.write_text(text, encoding="utf-8")
        return path

    def finalize(self, parameters: Dict[str, Any]) -> Path:
        manifest = {
            "command": self.command,
            "inputs": {str(path): file_digest(path) for path in _files(self.inputs)},
            "parameters": parameters,
            "artifacts": sorted(set(self.artifacts)),
        }
        path = self.path / MANIFEST_NAME
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        write_metrics(self.path)
        logger.info(f"Run {self.command} finalized in {self.path} ({len(manifest['inputs'])} inputs)")
        return path
