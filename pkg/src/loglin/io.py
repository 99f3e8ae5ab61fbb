"""File formats: model JSON, samples CSV and deterministic report JSON."""
from __future__ import annotations

import csv
import hashlib
import json
import platform
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import networkx
import numpy as np
import scipy

from . import __version__
from .model import DataError, Model, ModelError, build_model, downward_closure, validate_samples

FORMAT_VERSION = 1


# ------------------------------------------------------------------ models
def model_to_json(model: Model) -> dict:
    names = model.names or tuple(f"X{lab}" for lab in model.labels)
    out: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "variables": [{"name": n, "levels": int(l)} for n, l in zip(names, model.levels)],
    }
    if model.edges is not None:
        out["edges"] = [[a + 1, b + 1] for a, b in model.edges]
    else:
        maximal = [d for d in model.generating_class if not any(d < e for e in model.generating_class)]
        out["generating_class"] = sorted(sorted(v + 1 for v in d) for d in maximal)
    return out


def model_from_json(doc: dict, **kw) -> Model:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelError(f"unsupported format_version {doc.get('format_version')!r}")
    jsonschema.validate(doc, load_schema("model"))
    variables = doc["variables"]
    levels = [v["levels"] for v in variables]
    names = [v["name"] for v in variables]
    p = len(levels)
    kw.setdefault("labels", tuple(range(1, p + 1)))

    def zero_based(ids):
        out = []
        for x in ids:
            if not 1 <= x <= p:
                raise ModelError(f"vertex id {x} out of range 1..{p}")
            out.append(x - 1)
        return out

    if "edges" in doc:
        edges = [tuple(zero_based(e)) for e in doc["edges"]]
        return build_model(levels, edges=edges, names=names, **kw)
    # files may list maximal sets only
    gc = downward_closure(zero_based(d) for d in doc["generating_class"])
    return build_model(levels, generating_class=gc, names=names, **kw)


def read_model(path, **kw) -> Model:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_json(doc, **kw)


def write_model(model: Model, path) -> None:
    write_json(model_to_json(model), path)


# ----------------------------------------------------------------- samples
def _names(model: Model) -> list[str]:
    return list(model.names) if model.names else [f"X{lab}" for lab in model.labels]


def write_samples(samples: np.ndarray, model: Model, path) -> None:
    x = validate_samples(samples, model)
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_names(model))
        w.writerows(x.tolist())


def read_samples(path, model: Model) -> np.ndarray:
    """Read a samples CSV; the header must name the model's variables in order."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if lines and lines[0].startswith("#"):
        meta = lines.pop(0)[1:].strip()
        if meta and meta != f"format_version={FORMAT_VERSION}":
            raise DataError(f"unsupported samples header {meta!r}")
    rows = list(csv.reader(lines))
    if not rows:
        raise DataError("samples file is empty")
    header = [h.strip() for h in rows[0]]
    if header != _names(model):
        raise DataError(f"header {header} does not match model variables {_names(model)}")
    data = []
    for k, r in enumerate(rows[1:], start=1):
        try:
            data.append([int(v) for v in r])
        except ValueError as exc:
            raise DataError(f"row {k}: non-integer entry in {r}") from exc
        if len(r) != len(header):
            raise DataError(f"row {k}: expected {len(header)} columns, found {len(r)}")
    return validate_samples(np.array(data, dtype=np.int64).reshape(-1, len(header)), model)


# ----------------------------------------------------------------- reports
def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, default=_default, sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_json(obj, path) -> None:
    Path(path).write_text(dumps(obj))


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, default=_default, sort_keys=True).encode()).hexdigest()


def provenance(config: dict) -> dict:
    return {
        "config": config,
        "config_hash": config_hash(config),
        "versions": {
            "loglin": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "networkx": networkx.__version__,
        },
    }


def load_schema(name: str) -> dict:
    return json.loads(resources.files("loglin").joinpath("schemas", f"{name}.schema.json").read_text())


def validate_report(report: dict, name: str) -> None:
    jsonschema.validate(json.loads(dumps(report)), load_schema(name))


def load_fixture(name: str) -> dict:
    return json.loads(resources.files("loglin").joinpath("data", f"{name}.json").read_text())
