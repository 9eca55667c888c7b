"""JSON formats for trees, marginals, SWI descriptions and metrics.

Floats are written with 17 significant digits so that a value read back is
bit-identical and repeated runs produce byte-identical files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .metric import StagewiseMetric
from .swi import SwiSpec
from .tree import ProbabilityTree, StageMarginal, TreeStructureError

__all__ = [
    "FormatError",
    "dumps",
    "read_json",
    "write_json",
    "tree_to_dict",
    "tree_from_dict",
    "marginal_to_list",
    "marginal_from_obj",
    "spec_to_dict",
    "spec_from_dict",
    "load_tree",
    "load_marginal",
    "load_spec",
    "load_metric",
]


class FormatError(ValueError):
    pass


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    sep = "," if indent else ", "
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = [json.dumps(str(k)) + ": " + _encode(v, indent, level + 1) for k, v in obj.items()]
        return "{" + pad + (sep + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # numeric vectors stay on one line
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, 0, 0) for v in obj) + "]"
        items = [_encode(v, indent, level + 1) for v in obj]
        return "[" + pad + (sep + pad).join(items) + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    return _encode(obj, indent, 0) + "\n"


def read_json(path: str | Path) -> Any:
    with open(path) as fh:
        return json.load(fh)


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(dumps(obj))


def tree_to_dict(tree: ProbabilityTree) -> dict:
    nodes = []
    for k in range(tree.n_nodes):
        par = tree.parent[k]
        nodes.append({
            "id": tree.ids[k],
            "parent": None if par < 0 else tree.ids[par],
            "stage": int(tree.stage[k]),
            "outcome": tree.outcomes[k].tolist(),
            "prob": float(tree.prob[k]),
        })
    return {"stages": tree.n_stages, "dimension": tree.dimension, "nodes": nodes}


def tree_from_dict(data: Mapping) -> ProbabilityTree:
    try:
        nodes = data["nodes"]
        stages = int(data["stages"])
        dim = int(data["dimension"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"tree JSON needs 'stages', 'dimension' and 'nodes': {exc}") from None
    for nd in nodes:
        missing = {"id", "parent", "stage", "outcome", "prob"} - set(nd)
        if missing:
            raise FormatError(f"node entry is missing {sorted(missing)}")
        if len(nd["outcome"]) != dim:
            raise TreeStructureError(f"node {nd['id']} outcome has length {len(nd['outcome'])}, expected {dim}")
    if not nodes:
        raise TreeStructureError("tree has no nodes")
    return ProbabilityTree.from_nodes(nodes, n_stages=stages)


def marginal_to_list(m: StageMarginal) -> list[dict]:
    return [{"point": p.tolist(), "prob": float(q)} for p, q in zip(m.points, m.probs)]


def marginal_from_obj(obj: Any) -> StageMarginal:
    """Accepts a list of ``{"point", "prob"}`` atoms or ``{"points", "probs"}``."""
    if isinstance(obj, Mapping) and "points" in obj:
        points = [np.atleast_1d(np.asarray(p, dtype=float)) for p in obj["points"]]
        return StageMarginal(np.array(points), np.asarray(obj["probs"], dtype=float))
    if isinstance(obj, Mapping) and "support" in obj:
        obj = obj["support"]
    if not isinstance(obj, list):
        raise FormatError("marginal must be a list of {'point', 'prob'} atoms")
    try:
        atoms = [(np.atleast_1d(np.asarray(a["point"], dtype=float)), float(a["prob"])) for a in obj]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad marginal atom: {exc}") from None
    if not atoms:
        raise FormatError("marginal has no atoms")
    return StageMarginal.from_atoms(atoms)


def spec_to_dict(spec: SwiSpec) -> dict:
    return {"stages": [marginal_to_list(m) for m in spec.stages]}


def spec_from_dict(data: Mapping) -> SwiSpec:
    if "stages" not in data:
        raise FormatError("SWI description needs a 'stages' list")
    return SwiSpec(tuple(marginal_from_obj(stage) for stage in data["stages"]))


def load_tree(path: str | Path) -> ProbabilityTree:
    return tree_from_dict(read_json(path))


def load_marginal(path: str | Path) -> StageMarginal:
    return marginal_from_obj(read_json(path))


def load_spec(path: str | Path) -> SwiSpec:
    return spec_from_dict(read_json(path))


def load_metric(path: str | Path | None) -> StagewiseMetric:
    if path is None:
        return StagewiseMetric()
    return StagewiseMetric.from_dict(read_json(path))
