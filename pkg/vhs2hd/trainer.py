"""
Interleaved two-branch training.

One cycle = one style step (G, F, D_X, D_Y; adversarial + cycle terms) followed by
k resolution steps (G as the Enhance Net, D_Z; adversarial + perceptual terms).
Each step updates its discriminators first, then its generators, and never
mixes gradients of the two branches in one optimizer step.
"""

import asyncio
import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn

from vhs2hd import metrics
from vhs2hd.checkpoint import (
    Checkpoint,
    check_compatible,
    load_checkpoint,
    load_optimizer_tensors,
    optimizer_tensors,
    save_checkpoint,
)
from vhs2hd.config import ConfigModel, TrainConfig
from vhs2hd.dataset import DatasetManifest, FrameCache, sample_batch
from vhs2hd.errors import DivergenceError, NonFiniteLossError
from vhs2hd.logger import get_logger
from vhs2hd.losses import (
    LossReport,
    adversarial_loss_D,
    adversarial_loss_G,
    build_report,
    check_finite,
    cycle_loss,
    perceptual_loss,
    total_generator_objective,
)
from vhs2hd.models import ModelBundle, init_models

logger = get_logger()

LATEST_POINTER = "latest"
LOG_NAME = "log.jsonl"
CONFIG_NAME = "config.json"
METRICS_NAME = "metrics.prom"

STYLE_GROUPS = ("G", "F", "D_X", "D_Y")
RESOLUTION_GROUPS = ("G", "D_Z")

# (group weights + optimizer state, fake-pool contents, pool RNG state)
Snapshot = Tuple[Dict[str, Tuple[dict, dict]], Dict[str, List[torch.Tensor]], torch.Tensor]


def set_requires_grad(modules: Iterable[nn.Module], flag: bool) -> None:
    for m in modules:
        for p in m.parameters():
            p.requires_grad_(flag)


class FakePool:
    """
    History of generated images shown to a discriminator. Until full, every image
    is stored and returned; afterwards, with probability 0.5 a stored image is
    returned in its place and swapped out.
    """

    def __init__(self, size: int, generator: torch.Generator):
        self.size = size
        self.generator = generator
        self.images: List[torch.Tensor] = []

    def query(self, images: torch.Tensor) -> torch.Tensor:
        if self.size <= 0:
            return images
        out = []
        for image in images.detach():
            if len(self.images) < self.size:
                self.images.append(image.clone())
                out.append(image)
            elif torch.rand((), generator=self.generator) < 0.5:
                index = int(torch.randint(len(self.images), (1,), generator=self.generator))
                out.append(self.images[index].clone())
                self.images[index] = image.clone()
            else:
                out.append(image)
        return torch.stack(out)

    def tensor(self) -> Optional[torch.Tensor]:
        return torch.stack(self.images) if self.images else None

    def load(self, stacked: Optional[torch.Tensor]) -> None:
        self.images = [t.clone() for t in stacked] if stacked is not None else []


class Trainer:
    """
    Owns the optimizers, step counters and sampler RNG for one ModelBundle.
    One Adam per group: G, F, D_X, D_Y, D_Z. The G optimizer is shared by both
    step types because the Enhance Net is G.
    """

    def __init__(
        self,
        bundle: ModelBundle,
        cfg: TrainConfig,
        manifest: Optional[DatasetManifest] = None,
    ):
        self.bundle = bundle
        self.cfg = cfg
        self.weights = cfg.loss_weights()
        self.manifest = manifest
        self.cache = FrameCache(manifest) if manifest is not None else None
        self.optimizers: Dict[str, torch.optim.Optimizer] = {
            name: torch.optim.Adam(module.parameters(), lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2))
            for name, module in bundle.groups().items()
        }
        self.cycle_steps = 0
        self.res_steps = 0
        self.consecutive_aborts = 0
        self.aborts: List[str] = []
        self.rng = torch.Generator().manual_seed(cfg.seed)
        self.pool_rng = torch.Generator().manual_seed(cfg.seed + 1)
        size = cfg.pool_size if cfg.use_fake_pool else 0
        self.pools = {name: FakePool(size, self.pool_rng) for name in ("X", "Y", "Z")}
        bundle.train(True)

    # --- helpers ---

    def _snapshot(self, names: Sequence[str], pools: Sequence[str]) -> Snapshot:
        groups = {
            name: (
                {k: v.clone() for k, v in self.bundle.groups()[name].state_dict().items()},
                _clone_state(self.optimizers[name].state_dict()),
            )
            for name in names
        }
        # Pool entries are replaced, never written in place: a shallow copy is enough.
        pool_images = {name: list(self.pools[name].images) for name in pools}
        return groups, pool_images, self.pool_rng.get_state()

    def _rollback(self, snapshot: Snapshot) -> None:
        groups, pool_images, pool_rng_state = snapshot
        for name, (weights, optim_state) in groups.items():
            self.bundle.groups()[name].load_state_dict(weights)
            self.optimizers[name].load_state_dict(optim_state)
        for name, images in pool_images.items():
            self.pools[name].images = images
        self.pool_rng.set_state(pool_rng_state)

    def _apply(self, loss: torch.Tensor, names: Sequence[str]) -> None:
        for name in names:
            self.optimizers[name].zero_grad(set_to_none=False)
        # Constant losses (stubbed discriminators) carry no graph; nothing to update.
        if not loss.requires_grad:
            return
        loss.backward()
        for name in names:
            self.optimizers[name].step()

    def _abort(self, kind: str, error: NonFiniteLossError) -> None:
        self.consecutive_aborts += 1
        metrics.record_step_abort(kind)
        self.aborts.append(
            "%s step aborted at cycle %d: %s (%d in a row)" % (kind, self.cycle_steps, error, self.consecutive_aborts)
        )
        if self.consecutive_aborts >= self.cfg.max_consecutive_aborts:
            raise DivergenceError(
                "Training diverged: %d consecutive aborted steps, last on term %s"
                % (self.consecutive_aborts, error.term)
            ) from error

    # --- steps ---

    def style_step(self, x: torch.Tensor, y: torch.Tensor) -> Optional[Dict[str, float]]:
        """
        Update D_Y, D_X on real vs translated images, then G and F jointly on the
        adversarial terms plus lambda_cyc * cycle loss. Returns the loss fragment,
        or None when the step was aborted on a non-finite loss (state rolled back).
        """
        b = self.bundle
        form = self.weights.gan_form
        start = metrics.record_step_start()
        snapshot = self._snapshot(("D_X", "D_Y"), pools=("X", "Y"))
        try:
            fake_y = b.G(x)
            fake_x = b.F(y)

            loss_D_Y = adversarial_loss_D(b.D_Y(y), b.D_Y(self.pools["Y"].query(fake_y.detach())), form)
            loss_D_X = adversarial_loss_D(b.D_X(x), b.D_X(self.pools["X"].query(fake_x.detach())), form)
            check_finite("total_D_Y", loss_D_Y)
            check_finite("total_D_X", loss_D_X)
            self._apply(loss_D_Y + loss_D_X, ("D_Y", "D_X"))

            set_requires_grad([b.D_X, b.D_Y], False)
            gan_G_Y = adversarial_loss_G(b.D_Y(fake_y), form)
            gan_F_X = adversarial_loss_G(b.D_X(fake_x), form)
            cyc = cycle_loss(x, b.F(fake_y), y, b.G(fake_x))
            loss_G = total_generator_objective(self.weights, gan_G_Y=gan_G_Y, gan_F_X=gan_F_X, cyc=cyc)
            self._apply(loss_G, ("G", "F"))
        except NonFiniteLossError as e:
            self._rollback(snapshot)
            self._abort("style", e)
            return None
        finally:
            set_requires_grad([b.D_X, b.D_Y], True)
        self.consecutive_aborts = 0
        self.cycle_steps += 1
        metrics.record_step_done("style", start)
        return {
            "gan_G_Y": float(gan_G_Y.detach()),
            "gan_F_X": float(gan_F_X.detach()),
            "cyc": float(cyc.detach()),
            "total_D_X": float(loss_D_X.detach()),
            "total_D_Y": float(loss_D_Y.detach()),
        }

    def resolution_step(self, z: torch.Tensor, y: torch.Tensor) -> Optional[Dict[str, float]]:
        """
        Update D_Z on y vs G(z), then G on its adversarial term plus
        kappa_perc * perceptual distance between features of G(z) and y.
        """
        b = self.bundle
        form = self.weights.gan_form
        start = metrics.record_step_start()
        snapshot = self._snapshot(("D_Z",), pools=("Z",))
        try:
            fake = b.enhance_net(z)

            loss_D_Z = adversarial_loss_D(b.D_Z(y), b.D_Z(self.pools["Z"].query(fake.detach())), form)
            check_finite("total_D_Z", loss_D_Z)
            self._apply(loss_D_Z, ("D_Z",))

            set_requires_grad([b.D_Z], False)
            gan_G_Z = adversarial_loss_G(b.D_Z(fake), form)
            perc = perceptual_loss(b.features(fake), b.features(y), self.weights.perc_norm)
            loss_G = total_generator_objective(self.weights, gan_G_Z=gan_G_Z, perc=perc)
            self._apply(loss_G, ("G",))
        except NonFiniteLossError as e:
            self._rollback(snapshot)
            self._abort("resolution", e)
            return None
        finally:
            set_requires_grad([b.D_Z], True)
        self.consecutive_aborts = 0
        self.res_steps += 1
        metrics.record_step_done("resolution", start)
        return {"gan_G_Z": float(gan_G_Z.detach()), "perc": float(perc.detach()), "total_D_Z": float(loss_D_Z.detach())}

    # --- schedule ---

    def _sample(self, domain: str):
        return sample_batch(
            self.manifest, domain, self.cfg.batch_size, self.cfg.crop, self.rng,
            hflip=self.cfg.hflip, cache=self.cache, workers=self.cfg.sample_workers,
        )

    def run_cycle(self) -> LossReport:
        """One style step then k resolution steps, each retried on fresh batches after an abort."""
        if self.manifest is None:
            raise ValueError("Trainer has no manifest to sample from")
        style = None
        while style is None:
            style = self.style_step(self._sample("X"), self._sample("Y"))
        fragments = []
        for _ in range(self.cfg.res_steps_per_cycle_step):
            fragment = None
            while fragment is None:
                fragment = self.resolution_step(*self._sample("Z"))
            fragments.append(fragment)
        resolution = {}
        if fragments:
            resolution = {key: sum(f[key] for f in fragments) / len(fragments) for key in fragments[0]}
        return build_report(self.cycle_steps, self.weights, style, resolution)

    # --- checkpoint state ---

    def capture(self, config: Dict) -> Checkpoint:
        models = {name: {k: v.detach().clone() for k, v in m.state_dict().items()} for name, m in self.bundle.groups().items()}
        optim = {
            name: optimizer_tensors(self.optimizers[name], [n for n, _ in m.named_parameters()])
            for name, m in self.bundle.groups().items()
        }
        state = {"rng.sampler": self.rng.get_state(), "rng.pool": self.pool_rng.get_state()}
        for name, pool in self.pools.items():
            stacked = pool.tensor()
            if stacked is not None:
                state["pool.%s" % name] = stacked
        return Checkpoint(
            models=models,
            optim=optim,
            config=config,
            counters={"cycle_steps": self.cycle_steps, "res_steps": self.res_steps},
            state=state,
        )

    def restore(self, ckpt: Checkpoint) -> None:
        for name, m in self.bundle.groups().items():
            m.load_state_dict(ckpt.models[name])
            load_optimizer_tensors(self.optimizers[name], [n for n, _ in m.named_parameters()], ckpt.optim.get(name, {}))
        self.cycle_steps = ckpt.counters["cycle_steps"]
        self.res_steps = ckpt.counters["res_steps"]
        self.consecutive_aborts = 0
        self.rng.set_state(ckpt.state["rng.sampler"])
        self.pool_rng.set_state(ckpt.state["rng.pool"])
        for name, pool in self.pools.items():
            pool.load(ckpt.state.get("pool.%s" % name))


def _clone_state(state: dict) -> dict:
    return {
        "state": {k: {s: (v.clone() if isinstance(v, torch.Tensor) else v) for s, v in slots.items()} for k, slots in state["state"].items()},
        "param_groups": [dict(g) for g in state["param_groups"]],
    }


def checkpoint_name(step: int) -> str:
    return "ckpt_%08d.safetensors" % step


def latest_checkpoint(run_dir: Union[str, Path]) -> Optional[Path]:
    pointer = Path(run_dir) / LATEST_POINTER
    if not pointer.is_file():
        return None
    name = pointer.read_text(encoding="utf-8").strip()
    return Path(run_dir) / name if name else None


def _write_pointer(run_dir: Path, name: str) -> None:
    tmp = run_dir / (LATEST_POINTER + ".tmp")
    tmp.write_text(name + "\n", encoding="utf-8")
    tmp.replace(run_dir / LATEST_POINTER)


def _truncate_log(path: Path, last_step: int) -> None:
    """Keep only the records of steps <= last_step (those covered by the resumed checkpoint)."""
    if not path.exists():
        return
    kept = [
        line for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip() and json.loads(line)["step"] <= last_step
    ]
    path.write_text("".join(line + "\n" for line in kept), encoding="utf-8")


async def train(
    manifest: DatasetManifest,
    config: ConfigModel,
    run_dir: Union[str, Path],
    *,
    resume: bool = False,
    bundle: Optional[ModelBundle] = None,
) -> Path:
    """
    Run the schedule until total_cycle_steps style steps are done.

    Writes into run_dir: config.json, log.jsonl (one LossReport per log interval),
    ckpt_<step>.safetensors every checkpoint_every cycle steps and at the end,
    a `latest` pointer and metrics.prom. Torch's thread count and deterministic
    mode are set for the run and restored afterwards.

    Raises:
        DivergenceError: too many consecutive non-finite steps
        CheckpointIncompatibleError: resume against a checkpoint of another config
        OSError: I/O failure; the last complete checkpoint stays in place
    """
    cfg = config.train
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / CONFIG_NAME).write_text(config.to_json(), encoding="utf-8")

    prev_threads = torch.get_num_threads()
    prev_deterministic = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(cfg.num_threads)
    torch.use_deterministic_algorithms(cfg.deterministic)
    try:
        bundle = bundle or init_models(config.model, seed=cfg.seed, gan_form=cfg.gan_form)
        await _run_schedule(Trainer(bundle, cfg, manifest), config, run_dir, resume)
    finally:
        torch.use_deterministic_algorithms(prev_deterministic)
        torch.set_num_threads(prev_threads)
    return run_dir


async def _run_schedule(trainer: Trainer, config: ConfigModel, run_dir: Path, resume: bool) -> None:
    cfg = config.train
    config_doc = config.model_dump(mode="json")
    log_path = run_dir / LOG_NAME

    if resume:
        ckpt_path = latest_checkpoint(run_dir)
        if ckpt_path is None:
            await logger.warning("No checkpoint in %s, starting from scratch" % run_dir)
            log_path.unlink(missing_ok=True)
        else:
            ckpt = load_checkpoint(ckpt_path)
            check_compatible(ckpt, config_doc, sections=("model", "train"))
            trainer.restore(ckpt)
            _truncate_log(log_path, trainer.cycle_steps)
            await logger.info(
                "Resumed from %s at cycle step %d (resolution steps %d)"
                % (ckpt_path.name, trainer.cycle_steps, trainer.res_steps)
            )
    else:
        log_path.unlink(missing_ok=True)

    await logger.info(
        "Training: %d cycle steps, k=%d, crop=%d, batch=%d, gan_form=%s"
        % (cfg.total_cycle_steps, cfg.res_steps_per_cycle_step, cfg.crop, cfg.batch_size, cfg.gan_form)
    )

    async def write_checkpoint() -> None:
        name = checkpoint_name(trainer.cycle_steps)
        ckpt = trainer.capture(config_doc)
        await asyncio.to_thread(save_checkpoint, ckpt, run_dir / name)
        _write_pointer(run_dir, name)
        metrics.write_textfile(run_dir / METRICS_NAME)
        await logger.info("Checkpoint %s written" % name)

    with open(log_path, "a", encoding="utf-8") as log_fh:
        while trainer.cycle_steps < cfg.total_cycle_steps:
            try:
                report = await asyncio.to_thread(trainer.run_cycle)
            finally:
                for message in trainer.aborts:
                    await logger.warning(message)
                trainer.aborts.clear()
            step = trainer.cycle_steps
            if step % cfg.log_every == 0:
                log_fh.write(report.to_json() + "\n")
                log_fh.flush()
                await logger.debug("step %d total_G=%.6f cyc=%.6f perc=%.6f" % (step, report.total_G, report.cyc, report.perc))
            if step % cfg.checkpoint_every == 0 or step == cfg.total_cycle_steps:
                await write_checkpoint()

    if latest_checkpoint(run_dir) is None:
        await write_checkpoint()
    await logger.info(
        "Training finished: cycle steps %d, resolution steps %d" % (trainer.cycle_steps, trainer.res_steps)
    )
