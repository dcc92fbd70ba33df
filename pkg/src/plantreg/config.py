"""One strict JSON document for every tunable, with dotted-key overrides.

Layout (every section and key optional; omitted values keep their defaults)::

    {"seed": 0,
     "threads": 1,
     "pipeline": {"alpha": 0.1, "beta": 1e-4, "rot_weight": 1.0, "trans_weight": 1.0,
                  "cadence_max_days": 3.0, "reference_policy": "previous_frame",
                  "mutual_matching": true, "fgr_on_all_matches": false,
                  "world_transform": null},
     "filter": {...}, "features": {...}, "ransac": {...}, "fgr": {...},
     "icp": [{"variant": "point_to_plane", "robust_scale": 1.0},
             {"variant": "colored", "robust_scale": 1.0}],
     "render": {...}}

Keys inside ``filter``, ``features``, ``ransac``, ``fgr``, ``render`` and each
``icp`` entry are the field names of the matching config dataclass. Unknown
keys are an error. ``world_transform`` is 16 row-major floats or null. An
``icp`` list replaces the default stages whole, so keys it leaves out take the
``IcpConfig`` defaults (``robust_scale`` null: plain least squares).
"""

from __future__ import annotations

import copy
import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .coarse import FgrConfig, RansacConfig
from .features import FeatureConfig
from .fine import IcpConfig
from .formats import load_json
from .geometry import RigidTransform, SigmaWeights
from .render import TurntableSpec
from .splats import FilterConfig
from .temporal import PipelineConfig

ENV_VAR = "PLANTREG_CONFIG"

_SECTIONS: dict[str, type] = {
    "filter": FilterConfig,
    "features": FeatureConfig,
    "ransac": RansacConfig,
    "fgr": FgrConfig,
    "render": TurntableSpec,
}
# set from elsewhere in the document, not per section
_HIDDEN = {"ransac": {"rng_seed", "sigma_weights"}}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    render: TurntableSpec = field(default_factory=TurntableSpec)
    seed: int = 0
    threads: int = 1


def _plain(v: Any) -> Any:
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, str):  # includes str enums
        return str(v.value) if hasattr(v, "value") else v
    return v


def _section_doc(obj: Any, hidden: set[str] = frozenset()) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.name not in hidden}


def default_document() -> dict:
    p = PipelineConfig()
    doc: dict[str, Any] = {
        "seed": 0,
        "threads": 1,
        "pipeline": {
            "alpha": p.alpha, "beta": p.beta,
            "rot_weight": p.sigma_weights.rot_weight, "trans_weight": p.sigma_weights.trans_weight,
            "cadence_max_days": p.cadence_max_days, "reference_policy": p.reference_policy.value,
            "mutual_matching": p.mutual_matching, "fgr_on_all_matches": p.fgr_on_all_matches,
            "world_transform": None,
        },
        "icp": [_section_doc(c) for c in p.icp],
    }
    for name in _SECTIONS:
        obj = getattr(p, name) if name != "render" else TurntableSpec()
        doc[name] = _section_doc(obj, _HIDDEN.get(name, set()))
    return doc


def _check_keys(given: dict, allowed: dict | set, where: str) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def merge(base: dict, doc: dict) -> dict:
    """Overlay ``doc`` on ``base``, rejecting keys ``base`` does not have."""
    _check_keys(doc, base, "config")
    out = copy.deepcopy(base)
    icp_keys = {f.name for f in dataclasses.fields(IcpConfig)}
    for key, val in doc.items():
        if key == "icp":
            if not isinstance(val, list):
                raise ConfigError("icp: expected a list of stage objects")
            for i, stage in enumerate(val):
                _check_keys(stage, icp_keys, f"icp[{i}]")
            out["icp"] = copy.deepcopy(val)
        elif isinstance(base[key], dict):
            _check_keys(val, base[key], key)
            out[key].update(copy.deepcopy(val))
        else:
            out[key] = val
    return out


def parse_override(text: str) -> tuple[list[str], Any]:
    """``"ransac.max_iterations=5000"`` -> (["ransac", "max_iterations"], 5000).

    The value is read as JSON when possible and kept as a string otherwise.
    """
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_override(doc: dict, path: list[str], value: Any) -> dict:
    out = copy.deepcopy(doc)
    node: Any = out
    icp_keys = {f.name for f in dataclasses.fields(IcpConfig)}
    for part in path[:-1]:
        if isinstance(node, list):
            if not part.isdigit() or int(part) >= len(node):
                raise ConfigError(f"override {'.'.join(path)}: no list entry {part!r}")
            node = node[int(part)]
        elif isinstance(node, dict) and part in node and isinstance(node[part], (dict, list)):
            node = node[part]
        else:
            raise ConfigError(f"override {'.'.join(path)}: unknown key {part!r}")
    last = path[-1]
    if isinstance(node, list):
        if not last.isdigit() or int(last) >= len(node):
            raise ConfigError(f"override {'.'.join(path)}: no list entry {last!r}")
        node[int(last)] = value
    elif path[0] == "icp" and len(path) == 3:
        if last not in icp_keys:
            raise ConfigError(f"override {'.'.join(path)}: unknown key {last!r}")
        node[last] = value
    elif isinstance(node, dict) and last in node:
        node[last] = value
    else:
        raise ConfigError(f"override {'.'.join(path)}: unknown key {last!r}")
    return out


def _coerce(cls: type, values: dict, where: str) -> Any:
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in values:
            continue
        v = values[f.name]
        if isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _check_types(section: dict, reference: dict, where: str) -> None:
    for key, v in section.items():
        ref = reference.get(key)
        if ref is None or v is None:
            continue
        if isinstance(ref, bool):
            ok = isinstance(v, bool)
        elif isinstance(ref, int):
            ok = isinstance(v, int) and not isinstance(v, bool)
        elif isinstance(ref, float):
            ok = isinstance(v, (int, float)) and not isinstance(v, bool)
        elif isinstance(ref, str):
            ok = isinstance(v, str)
        elif isinstance(ref, list):
            ok = isinstance(v, list) and len(v) == len(ref)
        else:
            ok = True
        if not ok:
            raise ConfigError(f"{where}.{key}: expected a value like {ref!r}, got {v!r}")


def build(doc: dict) -> Config:
    """Turn a full (merged) document into validated config objects."""
    defaults = default_document()
    for name in ("pipeline", *_SECTIONS):
        _check_types(doc[name], defaults[name], name)
    for i, stage in enumerate(doc["icp"]):
        _check_types(stage, _section_doc(IcpConfig()), f"icp[{i}]")
    for key in ("seed", "threads"):
        v = doc[key]
        if isinstance(v, bool) or not isinstance(v, int) or v < (1 if key == "threads" else 0):
            raise ConfigError(f"{key}: expected a {'positive' if key == 'threads' else 'non-negative'} integer")

    p = doc["pipeline"]
    try:
        sigma = SigmaWeights(float(p["rot_weight"]), float(p["trans_weight"]))
    except ValueError as exc:
        raise ConfigError(f"pipeline: {exc}") from None
    world = RigidTransform()
    if p["world_transform"] is not None:
        m = np.asarray(p["world_transform"], dtype=np.float64)
        if m.size != 16:
            raise ConfigError("pipeline.world_transform: expected 16 numbers")
        try:
            world = RigidTransform.from_matrix(m.reshape(4, 4))
        except ValueError as exc:
            raise ConfigError(f"pipeline.world_transform: {exc}") from None
    ransac = dict(doc["ransac"], sigma_weights=sigma, rng_seed=doc["seed"])
    try:
        pipeline = PipelineConfig(
            alpha=p["alpha"], beta=p["beta"], sigma_weights=sigma,
            cadence_max_days=p["cadence_max_days"], reference_policy=p["reference_policy"],
            filter=_coerce(FilterConfig, doc["filter"], "filter"),
            features=_coerce(FeatureConfig, doc["features"], "features"),
            ransac=RansacConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in ransac.items()}),
            fgr=_coerce(FgrConfig, doc["fgr"], "fgr"),
            icp=tuple(_coerce(IcpConfig, s, f"icp[{i}]") for i, s in enumerate(doc["icp"])),
            mutual_matching=p["mutual_matching"], fgr_on_all_matches=p["fgr_on_all_matches"],
            world_transform=world,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"pipeline: {exc}") from None
    return Config(pipeline, _coerce(TurntableSpec, doc["render"], "render"), doc["seed"], doc["threads"])


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> Config:
    """Defaults, then the file (``path`` or ``$PLANTREG_CONFIG``), then overrides."""
    doc = default_document()
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is not None:
        try:
            doc = merge(doc, load_json(path))
        except FileNotFoundError:
            raise
        except ValueError as exc:  # invalid JSON
            raise ConfigError(str(exc)) from None
    for text in overrides:
        doc = apply_override(doc, *parse_override(text))
    return build(doc)
