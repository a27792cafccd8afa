"""Training loop: adaptive-moment optimization of the cGAN.

The generator is updated every iteration on the five-term objective; the
discriminator only every d_update_period-th iteration (default 4), which
keeps the adversarial game balanced at batch size 1. Training runs in
two phases: fixed-size pretraining (everything bicubically resized to
one size) and input-size flexibility fine-tuning (IFF), where images
keep their native sizes and the optimizer moments carry over.

All randomness is derived from (seed, epoch, iteration), so runs with
equal seeds produce identical parameter trajectories, and resuming from
an epoch checkpoint continues the loss stream bitwise.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import losses as L
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import epoch_iter, image_to_tensor, load_pair
from .discriminator import DiscriminatorSpec, SppDiscriminator, discriminate, init_parameters
from .generator import GeneratorSpec, NoiseSource, UrNetGenerator
from .multiscale import (
    MultiScaleGenerator,
    bicubic_resize,
    build_pyramid,
    init_uniform_fusion,
    multiscale_loss,
    multiscale_specs,
)

log = logging.getLogger(__name__)

PHASE_PRETRAIN = "pretrain"
PHASE_IFF = "iff"


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec)
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    multiscale: bool = False
    channel_scale: float = 1.0  # width multiplier for the multiscale trio
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 1
    d_update_period: int = 4
    max_epochs: int = 1
    pretrain_size: tuple | None = (256, 256)
    iff_max_side: int = 1024
    grad_clip: float | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "beta1", "beta2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch_size", "d_update_period", "max_epochs", "iff_max_side"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.pretrain_size is not None:
            self.pretrain_size = tuple(int(v) for v in self.pretrain_size)


def config_to_dict(config: TrainConfig):
    d = dataclasses.asdict(config)
    d["generator"]["dropout_sites"] = list(config.generator.dropout_sites)
    d["discriminator"]["conv_channels"] = list(config.discriminator.conv_channels)
    if d["pretrain_size"] is not None:
        d["pretrain_size"] = list(d["pretrain_size"])
    return d


def config_from_dict(d):
    d = dict(d)
    d["generator"] = GeneratorSpec(**d["generator"])
    d["discriminator"] = DiscriminatorSpec(**d["discriminator"])
    d["weights"] = L.LossWeights(**d["weights"])
    return TrainConfig(**d)


@dataclass
class TrainState:
    config: TrainConfig
    generator: torch.nn.Module
    discriminators: list
    g_opt: torch.optim.Adam
    d_opt: torch.optim.Adam
    iteration: int = 0
    epoch: int = 0
    phase: str = PHASE_PRETRAIN

    @property
    def discriminator(self):
        return self.discriminators[0]


def init_state(config: TrainConfig):
    """Fresh models and optimizers, initialized from config.seed."""
    if config.multiscale:
        gen = MultiScaleGenerator(multiscale_specs(config.channel_scale))
        init_parameters(gen, config.seed)
        init_uniform_fusion(gen.fusion)
        discs = [
            init_parameters(SppDiscriminator(config.discriminator), config.seed + 1 + j)
            for j in range(4)
        ]
    else:
        gen = init_parameters(UrNetGenerator(config.generator), config.seed)
        discs = [init_parameters(SppDiscriminator(config.discriminator), config.seed + 1)]
    g_opt = torch.optim.Adam(
        gen.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2)
    )
    d_params = [p for d in discs for p in d.parameters()]
    d_opt = torch.optim.Adam(
        d_params, lr=config.learning_rate, betas=(config.beta1, config.beta2)
    )
    return TrainState(config=config, generator=gen, discriminators=discs, g_opt=g_opt, d_opt=d_opt)


def step_noise(config: TrainConfig, iteration):
    return NoiseSource(config.seed * 1000003 + iteration)


def _zero_param_grads(module):
    for p in module.parameters():
        p.grad = None


def _single_scale_step(state: TrainState, haze_t, clear_t, step_index):
    cfg = state.config
    gen, disc = state.generator, state.discriminator
    out = gen(haze_t, step_noise(cfg, step_index))

    cons = L.consistency_loss(haze_t, out.dehazed, out.i_r, out.j_g)
    g_adv = L.generator_adversarial_loss(discriminate(disc, haze_t, out.dehazed))
    l1 = L.l1_loss(clear_t, out.dehazed)
    ssim_l = L.ssim_loss(clear_t, out.dehazed)
    psnr_l = L.psnr_loss(clear_t, out.dehazed, cfg.weights.thresh)
    g_total, breakdown = L.total_generator_loss(cons, g_adv, l1, ssim_l, psnr_l, cfg.weights)

    state.g_opt.zero_grad()
    _zero_param_grads(disc)
    g_total.backward()
    if cfg.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(gen.parameters(), cfg.grad_clip)
    state.g_opt.step()

    fake = out.dehazed.detach()
    if step_index % cfg.d_update_period == 0:
        d_real = discriminate(disc, haze_t, clear_t)
        d_fake = discriminate(disc, haze_t, fake)
        d_loss = L.discriminator_adversarial_loss(d_real, d_fake)
        state.d_opt.zero_grad()
        d_loss.backward()
        state.d_opt.step()
        breakdown.adversarial_d = float(d_loss.detach())
    else:
        with torch.no_grad():
            d_real = discriminate(disc, haze_t, clear_t)
            d_fake = discriminate(disc, haze_t, fake)
            breakdown.adversarial_d = float(L.discriminator_adversarial_loss(d_real, d_fake))
    return breakdown


def _sum_breakdowns(parts):
    agg = {f.name: 0.0 for f in dataclasses.fields(L.LossBreakdown)}
    for bd in parts:
        for k, v in bd.as_dict().items():
            agg[k] += v
    return L.LossBreakdown(**agg)


def _multiscale_step(state: TrainState, haze_t, clear_t, step_index):
    cfg = state.config
    gen = state.generator
    haze_pyr = build_pyramid(haze_t)
    clear_pyr = build_pyramid(clear_t)
    outs = gen(haze_pyr, step_noise(cfg, step_index))
    wd = sum(p.pow(2).sum() for p in gen.parameters())
    g_total, d_total, parts = multiscale_loss(
        outs, haze_pyr, clear_pyr, state.discriminators, cfg.weights, weight_decay=wd
    )
    state.g_opt.zero_grad()
    for d in state.discriminators:
        _zero_param_grads(d)
    g_total.backward()
    if cfg.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(gen.parameters(), cfg.grad_clip)
    state.g_opt.step()

    if step_index % cfg.d_update_period == 0:
        state.d_opt.zero_grad()
        d_total.backward()
        state.d_opt.step()
    return _sum_breakdowns(parts)


def train_step(state: TrainState, pair, step_index):
    """One optimization step on a (haze, clear) unit-signed array pair.

    The generator steps unconditionally, the discriminator only when
    step_index is a multiple of d_update_period (step_index is 1-based).
    """
    haze, clear = pair
    haze_t = haze if isinstance(haze, torch.Tensor) else image_to_tensor(haze)
    clear_t = clear if isinstance(clear, torch.Tensor) else image_to_tensor(clear)
    try:
        if state.config.multiscale:
            breakdown = _multiscale_step(state, haze_t, clear_t, step_index)
        else:
            breakdown = _single_scale_step(state, haze_t, clear_t, step_index)
    except ValueError as exc:
        if "non-finite loss term" in str(exc):
            raise TrainingDivergedError(
                f"training halted at step {step_index}: {exc}"
            ) from exc
        raise
    state.iteration = step_index
    return breakdown


def _resize_pair(haze, clear, size):
    ht = bicubic_resize(image_to_tensor(haze), size)
    ct = bicubic_resize(image_to_tensor(clear), size)
    return ht, ct


def _cap_longest_side(haze_t, clear_t, max_side):
    h, w = haze_t.shape[-2:]
    longest = max(h, w)
    if longest <= max_side:
        return haze_t, clear_t
    scale = max_side / longest
    size = (max(1, round(h * scale)), max(1, round(w * scale)))
    return bicubic_resize(haze_t, size), bicubic_resize(clear_t, size)


def _min_native_side(config: TrainConfig):
    m = config.discriminator.min_input_side
    # The multiscale quarter-scale branch must still satisfy the
    # discriminator minimum after two ceil-halvings.
    return 4 * (m - 1) + 1 if config.multiscale else m


def run_epochs(state: TrainState, manifest, n_epochs, step_callback=None, checkpoint_dir=None):
    """Drive n_epochs of training over the manifest from the current
    state, emitting one LossBreakdown per step and an epoch checkpoint
    when checkpoint_dir is given."""
    if len(manifest) == 0:
        raise ValueError("training dataset is empty")
    cfg = state.config
    native = state.phase == PHASE_IFF
    for _ in range(n_epochs):
        for entry in epoch_iter(manifest, cfg.seed, state.epoch):
            haze, clear = load_pair(entry)
            if native:
                haze_t, clear_t = _cap_longest_side(
                    image_to_tensor(haze), image_to_tensor(clear), cfg.iff_max_side
                )
                h, w = haze_t.shape[-2:]
                if min(h, w) < _min_native_side(cfg):
                    log.warning(
                        "skipping %s (%dx%d): below discriminator minimum %d",
                        entry.id, h, w, _min_native_side(cfg),
                    )
                    continue
            else:
                haze_t, clear_t = _resize_pair(haze, clear, cfg.pretrain_size)
            breakdown = train_step(state, (haze_t, clear_t), state.iteration + 1)
            if step_callback is not None:
                step_callback(state, breakdown)
        state.epoch += 1
        if checkpoint_dir is not None:
            save_state(state, f"{checkpoint_dir}/{state.phase}_{state.epoch:04d}.ckpt")
    return state


def pretrain_fixed_size(config: TrainConfig, manifest, step_callback=None, checkpoint_dir=None):
    """Phase 1: every image bicubically resized to config.pretrain_size."""
    if config.pretrain_size is None:
        raise ValueError("pretrain_size must be set for fixed-size pretraining")
    state = init_state(config)
    state.phase = PHASE_PRETRAIN
    return run_epochs(state, manifest, config.max_epochs, step_callback, checkpoint_dir)


def finetune_iff(config: TrainConfig, state: TrainState, manifest, step_callback=None, checkpoint_dir=None):
    """Phase 2: continue from a pretrained state at native image sizes,
    keeping the optimizer moments."""
    state.phase = PHASE_IFF
    return run_epochs(state, manifest, config.max_epochs, step_callback, checkpoint_dir)


# --- checkpoint (de)serialization ---------------------------------------


def _named_modules(state: TrainState):
    mods = {"g": state.generator}
    for j, d in enumerate(state.discriminators):
        mods[f"d{j}"] = d
    return mods


def _optimizer_sections(opt, param_names, prefix):
    sections = {}
    for p, name in param_names.items():
        st = opt.state.get(p)
        if not st:
            continue
        step = st["step"]
        step = float(step) if not isinstance(step, torch.Tensor) else float(step.item())
        sections[f"{prefix}/{name}/step"] = np.asarray(step, dtype=np.float64)
        sections[f"{prefix}/{name}/exp_avg"] = st["exp_avg"].detach().numpy()
        sections[f"{prefix}/{name}/exp_avg_sq"] = st["exp_avg_sq"].detach().numpy()
    return sections


def save_state(state: TrainState, path):
    sections = {}
    names_g = {}
    names_d = {}
    for tag, mod in _named_modules(state).items():
        for name, p in mod.named_parameters():
            key = f"{tag}/{name}"
            sections[f"params/{key}"] = p.detach().numpy()
            (names_g if tag == "g" else names_d)[p] = key
    sections.update(_optimizer_sections(state.g_opt, names_g, "opt"))
    sections.update(_optimizer_sections(state.d_opt, names_d, "opt"))
    meta = {
        "config": config_to_dict(state.config),
        "iteration": state.iteration,
        "epoch": state.epoch,
        "phase": state.phase,
    }
    return save_checkpoint(path, meta, sections)


def _restore_optimizer(opt, param_names, sections, prefix):
    for p, name in param_names.items():
        key = f"{prefix}/{name}/step"
        if key not in sections:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(sections[key].ravel()[0])),
            "exp_avg": torch.from_numpy(sections[f"{prefix}/{name}/exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(sections[f"{prefix}/{name}/exp_avg_sq"].copy()),
        }


def _compat_dict(config_dict):
    # max_epochs only controls run length; everything else defines the
    # model and its optimization trajectory and must match on resume
    d = dict(config_dict)
    d.pop("max_epochs", None)
    return d


def load_state(path, expected_config: TrainConfig | None = None):
    """Rebuild a TrainState from a checkpoint file.

    When expected_config is given, it must agree with the stored config
    on everything except run length, otherwise loading is refused.
    """
    meta, sections = load_checkpoint(path)
    if expected_config is not None:
        from .checkpoint import ConfigHashMismatchError, config_hash

        stored = config_hash(_compat_dict(meta["config"]))
        expected = config_hash(_compat_dict(config_to_dict(expected_config)))
        if stored != expected:
            raise ConfigHashMismatchError(
                f"{path}: checkpoint was trained under a different configuration "
                f"(stored compat hash {stored[:12]}..., expected {expected[:12]}...)"
            )
    config = config_from_dict(meta["config"])
    state = init_state(config)
    state.iteration = int(meta["iteration"])
    state.epoch = int(meta["epoch"])
    state.phase = meta["phase"]

    names_g = {}
    names_d = {}
    for tag, mod in _named_modules(state).items():
        for name, p in mod.named_parameters():
            key = f"{tag}/{name}"
            with torch.no_grad():
                p.copy_(torch.from_numpy(sections[f"params/{key}"].copy()))
            (names_g if tag == "g" else names_d)[p] = key
    _restore_optimizer(state.g_opt, names_g, sections, "opt")
    _restore_optimizer(state.d_opt, names_d, sections, "opt")
    return state
