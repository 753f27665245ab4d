"""YAML checkpoints of a CsqbmModel (format ``csqbm-checkpoint``, version 1)."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import pathlib
from typing import Any, Dict, Optional, Tuple

import numpy as np
import yaml

from .exp_family import ExpFamilyPrior
from .model import CsqbmModel
from .quantum_core import PauliHamiltonianSpec, PauliOp


LOGGER = logging.getLogger("csqbm.checkpoint")

CHECKPOINT_FORMAT = "csqbm-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, path: Any, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclasses.dataclass(frozen=True)
class CheckpointMeta:
    rng_label: str = ""
    step: int = 0
    optimizer: Dict[str, Any] = dataclasses.field(default_factory=dict)


def checkpoint_document(model: CsqbmModel, meta: Optional[CheckpointMeta] = None) -> Dict[str, Any]:
    meta = meta or CheckpointMeta()
    prior = model.prior.to_dict()
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "family": prior["family"],
        "n": model.n,
        "m": model.m,
        "coupling_basis": model.coupling_basis.value,
        "beta": float(model.beta),
        "flags": {
            "quadratic_coupling": bool(model.quadratic_coupling),
            "strict_sampler": bool(model.strict_sampler),
            "theta_trainable": bool(model.theta_trainable),
        },
        "log_scale": prior["log_scale"],
        "theta": prior["theta"],
        "W": [[float(x) for x in row] for row in model.W],
        "hidden_terms": model.hidden_spec.to_dict()["terms"],
        "rng_label": meta.rng_label,
        "step": int(meta.step),
        "optimizer": dict(meta.optimizer),
    }


def dumps_checkpoint(model: CsqbmModel, meta: Optional[CheckpointMeta] = None) -> str:
    return yaml.safe_dump(checkpoint_document(model, meta), sort_keys=False, allow_unicode=True)


def model_digest(model: CsqbmModel) -> str:
    return hashlib.sha256(dumps_checkpoint(model).encode("utf-8")).hexdigest()


def file_digest(path: pathlib.Path) -> str:
    return hashlib.sha256(pathlib.Path(path).read_bytes()).hexdigest()


def save_checkpoint(
    path: pathlib.Path, model: CsqbmModel, meta: Optional[CheckpointMeta] = None
) -> str:
    """Write atomically; returns the SHA-256 of the written bytes."""
    path = pathlib.Path(path)
    text = dumps_checkpoint(model, meta)
    path.parent.mkdir(parents=True, exist_ok=True)
    temporary = path.with_suffix(path.suffix + ".tmp")
    temporary.write_text(text, encoding="utf-8")
    temporary.replace(path)
    LOGGER.debug("Checkpoint written: %s", path)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def model_from_document(document: Dict[str, Any], source: Any = "<checkpoint>") -> Tuple[CsqbmModel, CheckpointMeta]:
    if not isinstance(document, dict):
        raise CheckpointError(source, "checkpoint must be a mapping")
    if document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(source, f"not a {CHECKPOINT_FORMAT} document")
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(source, f"unsupported checkpoint version {document.get('version')!r}")
    try:
        prior = ExpFamilyPrior.from_dict(
            {
                "family": document["family"],
                "theta": document["theta"],
                "log_scale": document.get("log_scale", 0.0),
            }
        )
        hidden = PauliHamiltonianSpec.from_dict(
            {"num_qubits": document["m"], "terms": document.get("hidden_terms", [])}
        )
        flags = document.get("flags", {})
        model = CsqbmModel(
            prior=prior,
            W=np.asarray(document["W"], dtype=float).reshape(prior.dim, int(document["m"])),
            hidden_spec=hidden,
            coupling_basis=PauliOp.parse(document["coupling_basis"]),
            beta=float(document["beta"]),
            quadratic_coupling=bool(flags.get("quadratic_coupling", False)),
            strict_sampler=bool(flags.get("strict_sampler", True)),
            theta_trainable=bool(flags.get("theta_trainable", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(source, f"invalid checkpoint: {exc}") from exc
    if model.n != int(document.get("n", model.n)):
        raise CheckpointError(source, f"n={document['n']} does not match theta ({model.n} units)")
    meta = CheckpointMeta(
        rng_label=str(document.get("rng_label", "")),
        step=int(document.get("step", 0)),
        optimizer=dict(document.get("optimizer") or {}),
    )
    return model, meta


def load_checkpoint(path: pathlib.Path) -> Tuple[CsqbmModel, CheckpointMeta]:
    path = pathlib.Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise CheckpointError(path, f"malformed YAML: {exc}") from exc
    return model_from_document(document, path)


__all__ = [
    "CHECKPOINT_FORMAT",
    "CHECKPOINT_VERSION",
    "CheckpointError",
    "CheckpointMeta",
    "checkpoint_document",
    "dumps_checkpoint",
    "file_digest",
    "load_checkpoint",
    "model_digest",
    "model_from_document",
    "save_checkpoint",
]
