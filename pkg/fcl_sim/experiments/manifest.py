"""
Reproducibility record written next to every command's outputs.
"""
import hashlib
import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict

from fcl_sim.logger import get_logger

logger = get_logger(__name__)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """
    Parameters
    ----------
    command : str
    config : str
        Resolved config in ``section.key=value`` form; loading it reproduces the run.
    artifacts : dict
        Artifact path to SHA-256 of its bytes.
    timings : dict
        Wall time per stage in seconds; not part of any hashed output.
    version : str
    """

    command: str
    config: str
    version: str
    artifacts: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    def add_artifact(self, path) -> str:
        digest = sha256_file(path)
        self.artifacts[str(path)] = digest
        return digest

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        logger.info(f"Manifest written to {path}")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))
