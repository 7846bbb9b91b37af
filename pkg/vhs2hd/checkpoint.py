"""
Training checkpoints as flat named-tensor archives.

Tensor names:
    model.<group>.<parameter>            network weights (group in G, F, D_X, D_Y, D_Z)
    optim.<group>.<parameter>.<slot>     Adam state (slot in exp_avg, exp_avg_sq, step)
    state.<name>                         sampler RNG state, fake-image pools
Metadata: format_version, full config document, step counters, digest.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Union

import torch

from vhs2hd import metrics
from vhs2hd.errors import CheckpointIncompatibleError, CheckpointIntegrityError
from vhs2hd.utils.archive import load_archive, save_archive

FORMAT_VERSION = 1

OPTIM_SLOTS = ("exp_avg", "exp_avg_sq", "step")

# Train fields that may differ between a checkpoint and the run resuming it.
RESUMABLE_TRAIN_FIELDS = ("total_cycle_steps", "checkpoint_every", "log_every", "sample_workers", "num_threads")


@dataclass
class Checkpoint:
    models: Dict[str, Dict[str, torch.Tensor]]
    optim: Dict[str, Dict[str, Dict[str, torch.Tensor]]]
    config: Dict[str, Any]
    counters: Dict[str, int]
    state: Dict[str, torch.Tensor] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def tensors(self) -> Dict[str, torch.Tensor]:
        out: Dict[str, torch.Tensor] = {}
        for group, params in self.models.items():
            for name, t in params.items():
                out["model.%s.%s" % (group, name)] = t
        for group, params in self.optim.items():
            for name, slots in params.items():
                for slot, t in slots.items():
                    out["optim.%s.%s.%s" % (group, name, slot)] = t
        for name, t in self.state.items():
            out["state.%s" % name] = t
        return out

    def metadata(self) -> Dict[str, Any]:
        return {"format_version": self.format_version, "config": self.config, "counters": self.counters}

    @classmethod
    def from_archive(cls, tensors: Mapping[str, torch.Tensor], metadata: Mapping[str, Any]) -> "Checkpoint":
        models: Dict[str, Dict[str, torch.Tensor]] = {}
        optim: Dict[str, Dict[str, Dict[str, torch.Tensor]]] = {}
        state: Dict[str, torch.Tensor] = {}
        for key, t in tensors.items():
            kind, _, rest = key.partition(".")
            if kind == "model":
                group, _, name = rest.partition(".")
                models.setdefault(group, {})[name] = t
            elif kind == "optim":
                group, _, tail = rest.partition(".")
                name, _, slot = tail.rpartition(".")
                optim.setdefault(group, {}).setdefault(name, {})[slot] = t
            elif kind == "state":
                state[rest] = t
            else:
                raise CheckpointIntegrityError("Unexpected tensor %r in checkpoint" % key)
        return cls(
            models=models,
            optim=optim,
            config=dict(metadata["config"]),
            counters={k: int(v) for k, v in metadata["counters"].items()},
            state=state,
            format_version=int(metadata["format_version"]),
        )


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    """Atomic write; an interrupted save leaves any previous file at `path` intact."""
    path = Path(path)
    save_archive(path, ckpt.tensors(), ckpt.metadata())
    metrics.record_checkpoint()
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Raises:
        FileNotFoundError: no such file
        CheckpointIntegrityError: truncated, tampered or malformed archive
        CheckpointIncompatibleError: written by another format version
    """
    try:
        tensors, metadata = load_archive(path)
    except ValueError as e:
        raise CheckpointIntegrityError(str(e)) from e
    if "digest" not in metadata or not {"format_version", "config", "counters"} <= metadata.keys():
        raise CheckpointIntegrityError("%s is not a checkpoint archive" % path)
    if metadata["format_version"] != FORMAT_VERSION:
        raise CheckpointIncompatibleError(
            "Checkpoint %s has format version %s, this build reads version %d"
            % (path, metadata["format_version"], FORMAT_VERSION)
        )
    return Checkpoint.from_archive(tensors, metadata)


def _differences(a: Any, b: Any, prefix: str = "") -> Iterable[str]:
    if isinstance(a, dict) and isinstance(b, dict):
        for key in sorted(set(a) | set(b)):
            yield from _differences(a.get(key), b.get(key), "%s%s." % (prefix, key))
    elif a != b:
        yield prefix.rstrip(".")


def check_compatible(ckpt: Checkpoint, config: Mapping[str, Any], sections: Iterable[str] = ("model",)) -> None:
    """
    Compare config sections of a checkpoint with the running config.

    Raises:
        CheckpointIncompatibleError: listing every differing key
    """
    diffs = []
    for section in sections:
        theirs = dict(ckpt.config.get(section, {}))
        ours = dict(config.get(section, {}))
        if section == "train":
            for name in RESUMABLE_TRAIN_FIELDS:
                theirs.pop(name, None)
                ours.pop(name, None)
        diffs += ["%s.%s" % (section, d) for d in _differences(theirs, ours)]
    if diffs:
        raise CheckpointIncompatibleError("Checkpoint does not match the config: %s" % ", ".join(diffs))


# --- optimizer state <-> named tensors ---


def optimizer_tensors(optimizer: torch.optim.Optimizer, names: Iterable[str]) -> Dict[str, Dict[str, torch.Tensor]]:
    """Adam state keyed by parameter name; `names` in the order the parameters were registered."""
    state = optimizer.state_dict()["state"]
    out: Dict[str, Dict[str, torch.Tensor]] = {}
    for index, name in enumerate(names):
        slots = state.get(index)
        if not slots:
            continue
        out[name] = {
            slot: (slots[slot] if isinstance(slots[slot], torch.Tensor) else torch.tensor(float(slots[slot])))
            for slot in OPTIM_SLOTS
        }
    return out


def load_optimizer_tensors(
    optimizer: torch.optim.Optimizer,
    names: Iterable[str],
    tensors: Mapping[str, Mapping[str, torch.Tensor]],
) -> None:
    current = optimizer.state_dict()
    state = {}
    for index, name in enumerate(names):
        if name in tensors:
            state[index] = {slot: tensors[name][slot].clone() for slot in OPTIM_SLOTS}
    optimizer.load_state_dict({"state": state, "param_groups": current["param_groups"]})
