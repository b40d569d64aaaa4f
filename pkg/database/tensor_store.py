import json
import logging
import struct
from pathlib import Path
from typing import List, Dict, Any, Optional

import numpy as np

from config import TENSOR_STORE_PATH
from tensor_core.hamiltonian import DisorderTensor

logger = logging.getLogger(__name__)

MAGIC = b"PSPN"
FORMAT_VERSION = 1
# magic, version, p, N, seed, reserved -> 32 bytes, little-endian
HEADER = struct.Struct("<4sIIIQ8x")
assert HEADER.size == 32


class TensorFormatError(ValueError):
    pass


def write_tensor(path, tensor: DisorderTensor) -> Path:
    """Write header + row-major little-endian float64 payload, plus a JSON sidecar"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    seed = tensor.seed if tensor.seed is not None else 0
    with open(path, "wb") as handle:
        handle.write(HEADER.pack(MAGIC, FORMAT_VERSION, tensor.p, tensor.N, seed))
        handle.write(np.ascontiguousarray(tensor.entries, dtype="<f8").tobytes(order="C"))

    sidecar = {
        "p": tensor.p,
        "N": tensor.N,
        "seed": tensor.seed,
        "provenance": tensor.provenance,
        "format_version": FORMAT_VERSION,
    }
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as handle:
        json.dump(sidecar, handle, indent=2, default=str)
    return path


def read_tensor(path) -> DisorderTensor:
    path = Path(path)
    with open(path, "rb") as handle:
        raw_header = handle.read(HEADER.size)
        if len(raw_header) != HEADER.size:
            raise TensorFormatError(f"{path}: truncated header")
        magic, version, p, N, seed = HEADER.unpack(raw_header)
        if magic != MAGIC:
            raise TensorFormatError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise TensorFormatError(f"{path}: unsupported version {version}")
        payload = handle.read()

    expected = 8 * N ** p
    if len(payload) != expected:
        raise TensorFormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    entries = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape((N,) * p)

    provenance: Dict[str, Any] = {}
    stored_seed: Optional[int] = seed
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        with open(sidecar, "r", encoding="utf-8") as handle:
            info = json.load(handle)
        provenance = info.get("provenance", {})
        stored_seed = info.get("seed", seed)
    return DisorderTensor(p=p, N=N, entries=entries, seed=stored_seed, provenance=provenance)


class TensorStore:
    def __init__(self, store_path: str = TENSOR_STORE_PATH):
        self.store_path = Path(store_path)
        self.store_path.mkdir(parents=True, exist_ok=True)

    def _path(self, name: str) -> Path:
        return self.store_path / f"{name}.pspn"

    def save(self, name: str, tensor: DisorderTensor) -> bool:
        """Save a disorder tensor under a name"""
        try:
            write_tensor(self._path(name), tensor)
            logger.info(f"✅ Saved tensor '{name}' (N={tensor.N}, p={tensor.p})")
            return True
        except Exception as e:
            logger.error(f"❌ Error saving tensor '{name}': {e}")
            return False

    def load(self, name: str) -> DisorderTensor:
        """Load a named tensor"""
        return read_tensor(self._path(name))

    def list_tensors(self) -> List[Dict[str, Any]]:
        """List stored tensors with their header fields"""
        tensors = []
        for path in sorted(self.store_path.glob("*.pspn")):
            try:
                with open(path, "rb") as handle:
                    magic, version, p, N, seed = HEADER.unpack(handle.read(HEADER.size))
                tensors.append({"name": path.stem, "p": p, "N": N, "seed": seed,
                                "size_mb": round(path.stat().st_size / (1024 * 1024), 3)})
            except Exception as e:
                logger.error(f"❌ Error reading header of {path.name}: {e}")
        return tensors

    def delete(self, name: str) -> bool:
        path = self._path(name)
        if not path.exists():
            return False
        path.unlink()
        path.with_suffix(".json").unlink(missing_ok=True)
        return True
