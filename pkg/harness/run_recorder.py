import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from harness.experiment_config import ExperimentConfig

logger = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parent.parent
SOURCE_PACKAGES = ["tensor_core", "sphere_geometry", "wells", "optimizers", "ensemble", "state_following",
                   "harness", "database"]


def code_hash(root: Path = REPO_ROOT) -> str:
    """git-style content hash over the library sources"""
    files = [root / "config.py", root / "main.py"]
    for package in SOURCE_PACKAGES:
        files.extend(sorted((root / package).glob("*.py")))
    digest = hashlib.sha1()
    for path in sorted(f for f in files if f.exists()):
        content = path.read_bytes()
        blob = hashlib.sha1(b"blob %d\0" % len(content) + content).hexdigest()
        digest.update(f"{path.relative_to(root).as_posix()} {blob}\n".encode())
    return digest.hexdigest()


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else str(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


@dataclass
class RunRecord:
    config: Dict[str, Any]
    code_hash: str
    replicas: List[Dict[str, Any]] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)
    wall_clock_seconds: float = 0.0


class RunRecorder:
    """Writes one run's artifacts under <out>/<experiment>-seed<seed>/.

    Data files carry no wall-clock values, so replaying a config reproduces
    them byte for byte; timings go to timing.json only.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.run_dir = Path(config.out) / f"{config.experiment}-seed{config.seed}"
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.record = RunRecord(config=config.snapshot(), code_hash=code_hash())
        self._started = time.perf_counter()

    def _header_lines(self) -> List[str]:
        lines = [f"# {key}: {value}" for key, value in self.record.config.items()]
        lines.append(f"# code_hash: {self.record.code_hash}")
        return lines

    def _register(self, path: Path) -> Path:
        name = path.name
        if name not in self.record.artifacts:
            self.record.artifacts.append(name)
        return path

    def write_frame(self, name: str, df: pd.DataFrame) -> Path:
        """CSV with the config snapshot as '# key: value' header lines"""
        path = self.run_dir / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as file:
            for line in self._header_lines():
                file.write(line + "\n")
            df.to_csv(file, index=False, float_format="%.10g")
        return self._register(path)

    def write_dat(self, name: str, df: pd.DataFrame) -> Path:
        """Whitespace-separated columns for gnuplot"""
        path = self.run_dir / f"{name}.dat"
        with open(path, "w", encoding="utf-8") as file:
            file.write("# " + " ".join(str(c) for c in df.columns) + "\n")
            writer = csv.writer(file, delimiter=" ", lineterminator="\n")
            for row in df.itertuples(index=False):
                writer.writerow([f"{v:.10g}" if isinstance(v, (float, np.floating)) else v for v in row])
        return self._register(path)

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.run_dir / f"{name}.json"
        body = {"config": self.record.config, "code_hash": self.record.code_hash, **payload}
        with open(path, "w", encoding="utf-8") as file:
            json.dump(_jsonable(body), file, indent=2, sort_keys=True)
        return self._register(path)

    def add_replica(self, row: Dict[str, Any]):
        self.record.replicas.append(row)

    def replica_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.record.replicas)

    def finish(self, summary: Dict[str, Any]) -> RunRecord:
        """Write replicas.csv, summary.json and timing.json"""
        self.record.summary = summary
        if self.record.replicas:
            self.write_frame("replicas", self.replica_frame())
        self.write_json("summary", {"summary": summary, "artifacts": sorted(self.record.artifacts)})
        self.record.wall_clock_seconds = time.perf_counter() - self._started
        with open(self.run_dir / "timing.json", "w", encoding="utf-8") as file:
            json.dump({"wall_clock_seconds": self.record.wall_clock_seconds}, file, indent=2)
        logger.info(f"✅ Run written to {self.run_dir} ({self.record.wall_clock_seconds:.1f}s)")
        return self.record

    def get_statistics(self, column: str) -> Dict[str, Any]:
        """Describe one replica column with pandas"""
        try:
            df = self.replica_frame()
            if column not in df:
                return {}
            series = df[column]
            if series.dtype == bool or series.dtype == object:
                return {"counts": series.value_counts().to_dict()}
            return {k: float(v) for k, v in series.describe().items()}
        except Exception as e:
            logger.error(f"❌ Error computing statistics for {column}: {e}")
            return {}


def read_frame(path) -> pd.DataFrame:
    """Load a recorder CSV, skipping its '# key: value' header"""
    return pd.read_csv(path, comment="#")


def read_header(path) -> Dict[str, str]:
    header = {}
    with open(path, encoding="utf-8") as file:
        for line in file:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition(": ")
            header[key] = value
    return header
