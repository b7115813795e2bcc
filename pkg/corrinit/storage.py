"""
On-disk formats: LayerTensor files, versioned CSV tables, JSON reports and run manifests.

A LayerTensor file is one JSON object

    {"header": {"shape": [F, C, k, k], "dtype": "f64", "order": "row-major",
                "seed": int | null, "spec": InitSpec | null, "encoding": "base64-le"},
     "payload": "<base64 of the little-endian float64 values>"}
"""
import base64
import binascii
import json
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from corrinit import __version__
from corrinit.models import InitSpec, LayerTensor, RunManifest
from corrinit.utils import config_hash

SCHEMA_VERSION = "v1"
SCHEMA_LINE = f"# schema={SCHEMA_VERSION}"
TENSOR_SUFFIX = ".tensor.json"
MANIFEST_SUFFIX = ".manifest.json"

PathLike = Union[str, Path]


class TensorFormatError(ValueError):
    """A LayerTensor file could not be parsed. `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int, path: Optional[PathLike] = None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte {offset})")


def tensor_to_json(tensor: LayerTensor) -> str:
    header = {
        "shape": list(tensor.shape),
        "dtype": "f64",
        "order": "row-major",
        "seed": tensor.seed,
        "spec": tensor.spec.model_dump(mode="json") if tensor.spec else None,
        "encoding": "base64-le",
    }
    payload = base64.b64encode(tensor.values.astype("<f8").tobytes()).decode("ascii")
    return json.dumps({"header": header, "payload": payload})


def write_layer_tensor(tensor: LayerTensor, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(tensor_to_json(tensor), encoding="utf-8")
    return path


def _expect(condition: bool, message: str, offset: int, path: Optional[PathLike]):
    if not condition:
        raise TensorFormatError(message, offset, path)


def tensor_from_bytes(raw: bytes, path: Optional[PathLike] = None) -> LayerTensor:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise TensorFormatError("file is not UTF-8 text", e.start, path) from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise TensorFormatError(f"malformed JSON: {e.msg}", len(text[:e.pos].encode("utf-8")), path) from e

    _expect(isinstance(doc, dict) and "header" in doc and "payload" in doc,
            "expected an object with 'header' and 'payload'", 0, path)
    header, payload = doc["header"], doc["payload"]
    header_at = max(raw.find(b'"header"'), 0)
    _expect(isinstance(header, dict), "header must be an object", header_at, path)
    _expect(header.get("dtype") == "f64", f"unsupported dtype {header.get('dtype')!r}", header_at, path)
    _expect(header.get("order") == "row-major", f"unsupported order {header.get('order')!r}", header_at, path)
    _expect(header.get("encoding") == "base64-le", f"unsupported encoding {header.get('encoding')!r}", header_at, path)
    shape = header.get("shape")
    _expect(isinstance(shape, list) and len(shape) == 4 and all(isinstance(s, int) and s > 0 for s in shape),
            f"shape must be four positive integers, got {shape!r}", header_at, path)

    _expect(isinstance(payload, str), "payload must be a base64 string", max(raw.find(b'"payload"'), 0), path)
    payload_at = raw.find(payload.encode("ascii", errors="replace")) if payload else max(raw.find(b'"payload"'), 0)
    try:
        data = base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as e:
        raise TensorFormatError(f"payload is not valid base64: {e}", payload_at, path) from e
    expected = 8 * int(np.prod(shape))
    _expect(len(data) == expected, f"payload holds {len(data)} bytes, shape {shape} needs {expected}",
            payload_at + len(payload), path)

    try:
        spec = InitSpec.model_validate(header["spec"]) if header.get("spec") is not None else None
        return LayerTensor(shape=tuple(shape), values=np.frombuffer(data, dtype="<f8").astype(np.float64),
                           seed=header.get("seed"), spec=spec)
    except ValidationError as e:
        raise TensorFormatError(f"invalid tensor: {e.errors()[0]['msg']}", header_at, path) from e


def read_layer_tensor(path: PathLike) -> LayerTensor:
    log = logging.getLogger(__name__)
    path = Path(path)
    tensor = tensor_from_bytes(path.read_bytes(), path)
    log.debug(f"Read tensor {tensor.shape} from {path}")
    return tensor


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    """DataFrame as CSV behind a `# schema=v1` line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(SCHEMA_LINE + "\n")
        frame.to_csv(f, index=False, lineterminator="\n")
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        first = f.readline().rstrip("\n")
        if first != SCHEMA_LINE:
            raise ValueError(f"{path}: expected '{SCHEMA_LINE}' as first line, got {first!r}")
        return pd.read_csv(f)


def write_json(model: BaseModel, path: PathLike, exclude: Optional[set] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2, exclude=exclude), encoding="utf-8")
    return path


def manifest_path(output: PathLike) -> Path:
    output = Path(output)
    return output.with_name(output.name + MANIFEST_SUFFIX)


def build_manifest(subcommand: str, parameters: dict, seed: Optional[int], outputs: list, wall_clock: float) -> RunManifest:
    return RunManifest(
        subcommand=subcommand,
        parameters=parameters,
        seed=seed,
        tool_version=__version__,
        outputs=[str(o) for o in outputs],
        wall_clock=wall_clock,
        config_hash=config_hash({"subcommand": subcommand, "parameters": parameters}),
    )


def write_manifest(manifest: RunManifest, output: PathLike) -> Path:
    """Writes `<output>.manifest.json` next to output."""
    return write_json(manifest, manifest_path(output))


def read_manifest(path: PathLike) -> RunManifest:
    return RunManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))
