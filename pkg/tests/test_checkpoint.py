"""Unit tests for checkpoint archives."""

import pytest
import torch

from vhs2hd import metrics
from vhs2hd.checkpoint import (
    FORMAT_VERSION,
    Checkpoint,
    check_compatible,
    load_checkpoint,
    save_checkpoint,
)
from vhs2hd.config import build_config
from vhs2hd.errors import CheckpointIncompatibleError, CheckpointIntegrityError
from vhs2hd.models import init_models
from vhs2hd.trainer import Trainer
from vhs2hd.utils.archive import save_archive

from tests.conftest import TINY_OVERRIDES


@pytest.fixture
def trained(tiny_config):
    """A trainer after one style and one resolution step on random tensors."""
    bundle = init_models(tiny_config.model, seed=0)
    trainer = Trainer(bundle, tiny_config.train)
    g = torch.Generator().manual_seed(0)
    x = torch.rand((2, 3, 16, 16), generator=g) * 2 - 1
    y = torch.rand((2, 3, 16, 16), generator=g) * 2 - 1
    trainer.style_step(x, y)
    trainer.resolution_step(x, y)
    return trainer


class TestSaveLoad:
    """Tests for save_checkpoint / load_checkpoint."""

    def test_round_trip(self, trained, tiny_config, tmp_path):
        """Weights, optimizer state, counters and RNG state survive a save/load."""
        doc = tiny_config.model_dump(mode="json")
        path = save_checkpoint(trained.capture(doc), tmp_path / "c.safetensors")
        ckpt = load_checkpoint(path)
        assert ckpt.format_version == FORMAT_VERSION
        assert ckpt.counters == {"cycle_steps": 1, "res_steps": 1}
        assert ckpt.config == doc
        assert "vhs2hd_checkpoints_written_total 1" in metrics.render_prometheus()

        fresh = Trainer(init_models(tiny_config.model, seed=5), tiny_config.train)
        fresh.restore(ckpt)
        assert fresh.bundle.hashes() == trained.bundle.hashes()
        assert (fresh.cycle_steps, fresh.res_steps) == (1, 1)
        assert torch.equal(fresh.rng.get_state(), trained.rng.get_state())
        for name, opt in trained.optimizers.items():
            for a, b in zip(opt.state.values(), fresh.optimizers[name].state.values()):
                assert torch.equal(a["exp_avg"], b["exp_avg"])
                assert torch.equal(a["exp_avg_sq"], b["exp_avg_sq"])

    def test_byte_stable(self, trained, tiny_config, tmp_path):
        """The same state encodes to the same bytes."""
        doc = tiny_config.model_dump(mode="json")
        save_checkpoint(trained.capture(doc), tmp_path / "a.safetensors")
        save_checkpoint(trained.capture(doc), tmp_path / "b.safetensors")
        assert (tmp_path / "a.safetensors").read_bytes() == (tmp_path / "b.safetensors").read_bytes()

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "absent.safetensors")

    def test_tampered(self, trained, tiny_config, tmp_path):
        """A flipped tensor byte fails the digest check."""
        path = save_checkpoint(trained.capture(tiny_config.model_dump(mode="json")), tmp_path / "c.safetensors")
        data = bytearray(path.read_bytes())
        data[-1] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointIntegrityError):
            load_checkpoint(path)

    def test_truncated(self, trained, tiny_config, tmp_path):
        path = save_checkpoint(trained.capture(tiny_config.model_dump(mode="json")), tmp_path / "c.safetensors")
        path.write_bytes(path.read_bytes()[:100])
        with pytest.raises(CheckpointIntegrityError):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        """A valid archive without checkpoint metadata is rejected."""
        save_archive(tmp_path / "w.safetensors", {"a": torch.zeros(2)}, {"kind": "weights"})
        with pytest.raises(CheckpointIntegrityError):
            load_checkpoint(tmp_path / "w.safetensors")

    def test_other_format_version(self, tmp_path):
        ckpt = Checkpoint(models={"G": {"w": torch.zeros(1)}}, optim={}, config={}, counters={}, format_version=99)
        save_archive(tmp_path / "old.safetensors", ckpt.tensors(), ckpt.metadata())
        with pytest.raises(CheckpointIncompatibleError):
            load_checkpoint(tmp_path / "old.safetensors")

    def test_tensor_names(self, trained, tiny_config):
        names = trained.capture(tiny_config.model_dump(mode="json")).tensors().keys()
        assert any(n.startswith("model.G.") for n in names)
        assert any(n.startswith("optim.D_Z.") and n.endswith(".exp_avg") for n in names)
        assert "state.rng.sampler" in names


class TestCompatibility:
    """Tests for check_compatible."""

    def test_lists_differing_keys(self, trained, tiny_config):
        ckpt = trained.capture(tiny_config.model_dump(mode="json"))
        other = build_config(preset="desk", overrides=TINY_OVERRIDES + ["model.generator.depth=3"])
        with pytest.raises(CheckpointIncompatibleError, match="model.generator.depth"):
            check_compatible(ckpt, other.model_dump(mode="json"))

    def test_resumable_fields_ignored(self, trained, tiny_config):
        """Extending total_cycle_steps does not block a resume."""
        ckpt = trained.capture(tiny_config.model_dump(mode="json"))
        longer = build_config(preset="desk", overrides=TINY_OVERRIDES + ["train.total_cycle_steps=50"])
        check_compatible(ckpt, longer.model_dump(mode="json"), sections=("model", "train"))

    def test_hyperparameter_change_blocks_resume(self, trained, tiny_config):
        ckpt = trained.capture(tiny_config.model_dump(mode="json"))
        other = build_config(preset="desk", overrides=TINY_OVERRIDES + ["train.lr=0.001"])
        with pytest.raises(CheckpointIncompatibleError, match="train.lr"):
            check_compatible(ckpt, other.model_dump(mode="json"), sections=("model", "train"))
