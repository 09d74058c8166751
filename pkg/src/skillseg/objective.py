"""Capacity-constrained importance-weighted objective and the training loop.

The per-batch loss is built from K forward samples per datum: normalized
importance weights (full latent densities, detached) weight each sample's
reconstruction term, and the KL control is applied purely through
|KL - C(iteration)| penalties on the weight-averaged KL values, with the
slack C ramped linearly. At K = 1 this is exactly the single-sample
capacity objective. The log-mean-exp of the weights is reported as the
tightened likelihood bound.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from skillseg.datagen import Dataset
from skillseg.diffcore import Tensor, backward, const, dotsum, log, tsum, weighted_colsum
from skillseg.diffcore.adam import AdamState, clip_global_norm
from skillseg.diffcore.tensor import absval, exp as texp
from skillseg.errors import ConfigError, NumericError
from skillseg.model import BatchTrace, ModelConfig, SkillModel

LOG_2PI = math.log(2.0 * math.pi)
TRAIN_FRAC = 0.9
EVAL_SUBSET = 256


# ---- schedules ----


def linear_schedule(start: float, end: float, iterations: int, it: int) -> float:
    if iterations <= 0:
        raise ConfigError("schedule iterations must be > 0")
    return start + (end - start) * min(1.0, it / iterations)


def cosine_schedule(start: float, end: float, iterations: int, it: int) -> float:
    if iterations <= 0:
        raise ConfigError("schedule iterations must be > 0")
    frac = min(1.0, it / iterations)
    return end + (start - end) * 0.5 * (1.0 + math.cos(math.pi * frac))


# ---- configuration ----


@dataclass
class TrainConfig:
    """All experiment hyperparameters; defaults are the 1D-synthetic column."""

    alpha: float = 1e-3
    weight_decay: float = 5e-2
    gamma_d: float = 5.0
    gamma_s: float = 5.0
    cap_d: tuple = (0.0, 1.0, 30_000)
    cap_s: tuple = (0.0, 1.0, 30_000)
    omega: tuple = (1.0, 0.2, 30_000)
    mu_d: float = 0.0
    sigma_d: float = 1.0
    vae_sigma: float | None = None
    s_skills: int = 6
    n_max: int = 3
    t_eps: float = 0.85
    obs_sigma: float = 0.1
    rnn_size: int = 64
    linear_size: int = 16
    t_steps: int = 200
    sub_len: int = 50
    batch_size: int = 64
    iwae_k: int = 20
    seed: int = 0
    dataset: str = ""
    iterations: int = 30_000
    preprocess: str = "mean_velocity"
    relative_encoding: bool = False
    reverse_read: bool = True
    reread_len: int = 32
    variance_normalization: str = "per_dim"
    eval_interval: int = 500
    checkpoint_interval: int = 5000
    grad_clip: float = 10.0
    warmup_iterations: int = 0

    def __post_init__(self):
        for name in ("cap_d", "cap_s", "omega"):
            sched = tuple(getattr(self, name))
            if len(sched) != 3 or sched[2] <= 0:
                raise ConfigError(f"{name} must be (start, end, iterations>0), got {sched}")
            setattr(self, name, sched)
        if self.obs_sigma <= 0:
            raise ConfigError("obs_sigma must be > 0")
        if self.sigma_d <= 0:
            raise ConfigError("sigma_d must be > 0")
        if not 0.0 < self.t_eps <= 1.0:
            raise ConfigError("t_eps must be in (0, 1]")
        if self.iwae_k < 1:
            raise ConfigError("iwae_k must be >= 1")
        if self.variance_normalization not in ("per_dim", "none"):
            raise ConfigError(f"unknown variance_normalization {self.variance_normalization!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"malformed config {path}: {err}") from err
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        for name in ("cap_d", "cap_s", "omega"):
            out[name] = list(out[name])
        return out

    def model_config(self, dims: int) -> ModelConfig:
        return ModelConfig(
            s_skills=self.s_skills, n_max=self.n_max, dims=dims,
            t_steps=self.t_steps, sub_len=self.sub_len, rnn_size=self.rnn_size,
            linear_size=self.linear_size, t_eps=self.t_eps, mu_d=self.mu_d,
            sigma_d=self.sigma_d, preprocess=self.preprocess,
            relative_encoding=self.relative_encoding, reverse_read=self.reverse_read,
            reread_len=self.reread_len)

    def schedules_at(self, it: int, omega_it: int | None = None) -> tuple[float, float, float]:
        """(C_d, C_s, omega) at a global iteration (omega clock may differ)."""
        c_d = linear_schedule(*self.cap_d, it)
        c_s = linear_schedule(*self.cap_s, it)
        om = cosine_schedule(*self.omega, it if omega_it is None else omega_it)
        return c_d, c_s, om


def config_3d(**overrides) -> TrainConfig:
    base = dict(weight_decay=5e-1, gamma_d=3.0, gamma_s=3.0, cap_d=(0.0, 2.0, 30_000),
                s_skills=12)
    base.update(overrides)
    return TrainConfig(**base)


def config_2d_hri(**overrides) -> TrainConfig:
    base = dict(weight_decay=5e-3, gamma_d=10.0, gamma_s=10.0, cap_d=(0.0, 2.0, 30_000),
                mu_d=0.5, n_max=4, s_skills=6, obs_sigma=0.15)
    base.update(overrides)
    return TrainConfig(**base)


def config_2d_teaching(**overrides) -> TrainConfig:
    base = dict(alpha=5e-4, weight_decay=5e-1, gamma_d=3.0, gamma_s=3.0,
                cap_d=(0.0, 2.0, 30_000), omega=(2.0, 0.5, 30_000), mu_d=-0.5,
                n_max=5, s_skills=12, rnn_size=32)
    base.update(overrides)
    return TrainConfig(**base)


# ---- loss terms ----


def gaussian_logpdf(x, mu, sigma):
    return -0.5 * LOG_2PI - np.log(sigma) - (x - mu) ** 2 / (2.0 * sigma**2)


def variance_normalizer(dataset: Dataset, mode: str) -> np.ndarray | None:
    """Per-dimension empirical variance of the training values, or None."""
    if mode == "none":
        return None
    var = dataset.values.reshape(-1, dataset.D).var(axis=0)
    return np.maximum(var, 1e-12)


def reconstruction_loglik_rows(target: np.ndarray, canvas: Tensor, sigma: float,
                               var_norm: np.ndarray | None = None) -> Tensor:
    """Per-row Gaussian log-likelihood of (R, T, D) targets under the canvas.

    Each entry's log-density is divided by its dimension's normalizer.
    """
    if sigma <= 0:
        raise ConfigError("sigma must be > 0")
    r, t, d = target.shape
    inv = np.ones(d) if var_norm is None else 1.0 / np.asarray(var_norm)
    diff = const(target) - canvas
    sse = tsum(diff * diff * inv[None, None, :].copy(), axis=(1, 2))
    norm_const = float(t * inv.sum() * (-0.5 * LOG_2PI - math.log(sigma)))
    return sse * (-0.5 / sigma**2) + norm_const


def reconstruction_loglik(target: np.ndarray, recon: np.ndarray, sigma: float,
                          var_norm: np.ndarray | None = None) -> float:
    """Scalar version for a single T x D pair."""
    out = reconstruction_loglik_rows(target[None], const(recon[None]), sigma, var_norm)
    return float(out.data[0])


def kl_gaussian(mu_hat, log_sigma_hat, mu_p: float, sigma_p: float):
    """Closed-form KL( N(mu_hat, sigma_hat^2) || N(mu_p, sigma_p^2) ), elementwise."""
    var_hat = np.exp(2.0 * np.asarray(log_sigma_hat))
    return (np.log(sigma_p) - np.asarray(log_sigma_hat)
            + (var_hat + (np.asarray(mu_hat) - mu_p) ** 2) / (2.0 * sigma_p**2) - 0.5)


def kl_duration(mu_hat: np.ndarray, log_sigma_hat: np.ndarray,
                mu_p: float, sigma_p: float) -> float:
    """Gaussian KL summed over the iterations of one trace."""
    return float(np.sum(kl_gaussian(mu_hat, log_sigma_hat, mu_p, sigma_p)))


def _kl_gaussian_tensor(mu_hat: Tensor, log_sigma_hat: Tensor,
                        mu_p: float, sigma_p: float) -> Tensor:
    var_hat = texp(log_sigma_hat * 2.0)
    diff = mu_hat - mu_p
    return ((-1.0) * log_sigma_hat + math.log(sigma_p)
            + (var_hat + diff * diff) * (0.5 / sigma_p**2) - 0.5)


def kl_skill_batch(probs: np.ndarray) -> float:
    """KL of the batch-aggregated categorical against the uniform prior."""
    probs = np.atleast_2d(probs)
    qbar = probs.mean(axis=0)
    s = probs.shape[1]
    nz = qbar > 0
    return float(np.sum(qbar[nz] * np.log(qbar[nz] * s)))


def capacity_objective(loglik: float, kl_d: float, kl_s: float, gamma_d: float,
                       gamma_s: float, c_d: float, c_s: float) -> float:
    """Negated capacity-constrained bound (a minimization loss)."""
    return -loglik + gamma_d * abs(kl_d - c_d) + gamma_s * abs(kl_s - c_s)


# ---- the batched IWAE objective ----


@dataclass
class LossBreakdown:
    loss: float
    recon: float
    kl_d: float
    kl_s: float
    iwae_bound: float
    c_d: float
    c_s: float
    omega: float
    aux_recon: float = 0.0
    elbo_estimate: float = 0.0


def _importance_weights(trace: BatchTrace, recon_values: np.ndarray,
                        model: SkillModel, cfg: TrainConfig
                        ) -> tuple[np.ndarray, float, np.ndarray]:
    """Normalized per-datum weights over the K samples, plus the IWAE bound
    and the raw per-sample log-weights (B, K).

    log w = recon + log p(z) - log q(z|tau) with the duration densities in
    pre-sigmoid space (the sigmoid Jacobians cancel), the skill posterior as
    the categorical probability of the sampled class, and the skill prior as
    the conditioning-chain transition probability.
    """
    rows = trace.rows
    log_w = recon_values.copy()
    matrix = np.log(model.conditioning_matrix())
    bias = model.params["cond.b"].data
    start_logp = bias - (np.max(bias) + np.log(np.exp(bias - np.max(bias)).sum()))
    for step in trace.steps:
        act = step.active
        z_raw = step.z_d_raw.data[:, 0]
        mu_hat = step.mu_d.data[:, 0]
        sig_hat = np.exp(step.log_sigma_d.data[:, 0])
        log_q_d = gaussian_logpdf(z_raw, mu_hat, sig_hat)
        log_p_d = gaussian_logpdf(z_raw, cfg.mu_d, cfg.sigma_d)
        cls = np.argmax(step.z_s.data, axis=1)
        probs = step.skill_probs.data
        log_q_s = np.log(probs[np.arange(rows), cls])
        if step.prev_class is None:
            log_p_s = start_logp[cls]
        else:
            log_p_s = matrix[step.prev_class, cls]
        log_w += act * (log_p_d + log_p_s - log_q_d - log_q_s)
    per_datum = log_w.reshape(trace.batch, trace.k)
    m = per_datum.max(axis=1, keepdims=True)
    shifted = np.exp(per_datum - m)
    weights = shifted / shifted.sum(axis=1, keepdims=True)
    bound = float(np.mean(m[:, 0] + np.log(shifted.mean(axis=1))))
    return weights.reshape(rows), bound, per_datum


def iwae_loss(model: SkillModel, values: np.ndarray, cfg: TrainConfig,
              it: int = 0, rng: np.random.Generator | None = None,
              var_norm: np.ndarray | None = None, k: int | None = None,
              omega_it: int | None = None) -> tuple[Tensor, LossBreakdown, BatchTrace]:
    """Build the scalar training loss for one mini-batch."""
    c_d, c_s, omega = cfg.schedules_at(it, omega_it)
    k = cfg.iwae_k if k is None else k
    b = values.shape[0]
    trace = model.forward_batch(values, mode="train", omega=omega, rng=rng, k=k)
    target = np.repeat(values, k, axis=0)
    recon_rows = reconstruction_loglik_rows(target, trace.canvas, cfg.obs_sigma, var_norm)
    weights, bound, log_w = _importance_weights(trace, recon_rows.data, model, cfg)
    w_over_b = weights / b

    recon_term = dotsum(recon_rows, w_over_b)

    kld_rows = const(np.zeros((trace.rows, 1)))
    for step in trace.steps:
        kl = _kl_gaussian_tensor(step.mu_d, step.log_sigma_d, cfg.mu_d, cfg.sigma_d)
        kld_rows = kld_rows + kl * step.active[:, None]
    kl_d_avg = dotsum(kld_rows[:, 0], w_over_b)

    kl_s_total = const(np.array(0.0))
    s = cfg.s_skills
    for step in trace.steps:
        mass_w = weights * step.active
        mass = float(mass_w.sum())
        if mass <= 0:
            continue
        qbar = weighted_colsum(step.skill_probs, mass_w / mass)
        kl_s_total = kl_s_total + tsum(qbar * log(qbar * float(s)))

    loss = (-1.0) * recon_term \
        + absval(kl_d_avg - c_d) * cfg.gamma_d \
        + absval(kl_s_total - c_s) * cfg.gamma_s

    aux_value = 0.0
    if cfg.vae_sigma is not None:
        aux_rows = const(np.zeros(trace.rows))
        for step in trace.steps:
            diff = const(step.sub.data) - step.sub_hat
            sse = tsum(diff * diff, axis=(1, 2))
            per_row = sse * (-0.5 / cfg.vae_sigma**2) \
                + float(step.sub.data.shape[1] * step.sub.data.shape[2]
                        * (-0.5 * LOG_2PI - math.log(cfg.vae_sigma)))
            aux_rows = aux_rows + per_row * step.active
        aux_term = dotsum(aux_rows, w_over_b)
        loss = loss + (-1.0) * aux_term
        aux_value = float(aux_term.data)

    breakdown = LossBreakdown(
        loss=float(loss.data), recon=float(recon_term.data), kl_d=float(kl_d_avg.data),
        kl_s=float(kl_s_total.data), iwae_bound=bound, c_d=c_d, c_s=c_s, omega=omega,
        aux_recon=aux_value, elbo_estimate=float(log_w.mean()))
    return loss, breakdown, trace


# ---- evaluation helper shared by training and the eval module ----


def dataset_loglik(model: SkillModel, values: np.ndarray, cfg: TrainConfig,
                   mode: str, omega: float = None, rng=None,
                   var_norm: np.ndarray | None = None, chunk: int = 256) -> float:
    """Mean per-trajectory reconstruction log-likelihood in the given mode."""
    total = 0.0
    for start in range(0, values.shape[0], chunk):
        batch = values[start:start + chunk]
        trace = model.forward_batch(batch, mode=mode,
                                    omega=1.0 if omega is None else omega, rng=rng)
        rows = reconstruction_loglik_rows(batch, trace.canvas, cfg.obs_sigma, var_norm)
        total += float(rows.data.sum())
    return total / values.shape[0]


# ---- training loops ----


@dataclass
class TrainResult:
    model: SkillModel
    metrics_path: Path
    checkpoint_path: Path
    history: list[LossBreakdown] = field(default_factory=list)


def _metrics_row(it: int, b: LossBreakdown, test_ll: float | None) -> str:
    cells = [str(it)] + [repr(x) for x in
                         (b.loss, b.recon, b.kl_d, b.kl_s, b.c_d, b.c_s, b.omega)]
    cells.append("" if test_ll is None else repr(test_ll))
    return ",".join(cells)


METRICS_HEADER = "iteration,loss,recon,kl_d,kl_s,c_d,c_s,omega,test_loglik"


def _batch_stream(n: int, batch: int, rng: np.random.Generator):
    if n < batch:
        while True:
            yield rng.choice(n, size=batch, replace=True)
    while True:
        perm = rng.permutation(n)
        for i in range(0, n - batch + 1, batch):
            yield perm[i:i + batch]


def train(cfg: TrainConfig, dataset: Dataset, out_dir,
          stages: list[tuple[int, Dataset]] | None = None) -> TrainResult:
    """Mini-batch optimization of the capacity objective; fully seeded.

    Writes metrics.csv (one row per iteration), periodic checkpoints, and a
    final checkpoint under out_dir. With ``stages`` (curriculum), the dataset
    switches at the given iteration offsets and the temperature schedule
    clock resets at each switch.
    """
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    stage_list = [(0, dataset)] + (stages or [])
    stage_starts = [s[0] for s in stage_list]
    if stage_starts != sorted(stage_starts):
        raise ConfigError("curriculum stages must be ordered by start iteration")

    model = SkillModel(cfg.model_config(dataset.D), seed=cfg.seed)
    adam = AdamState(model.params, alpha=cfg.alpha, weight_decay=cfg.weight_decay)

    metrics_path = out / "metrics.csv"
    metrics_fh = open(metrics_path, "w")
    metrics_fh.write(METRICS_HEADER + "\n")
    history: list[LossBreakdown] = []
    last_good: tuple | None = None
    stage_idx = -1
    train_values = test_values = None
    var_norm = None
    stream = None
    omega_start = 0

    for it in range(cfg.iterations):
        if stage_idx + 1 < len(stage_list) and it >= stage_list[stage_idx + 1][0]:
            stage_idx += 1
            active_ds = stage_list[stage_idx][1]
            train_split, test_split = active_ds.train_test_split(TRAIN_FRAC)
            train_values, test_values = train_split.values, test_split.values
            var_norm = variance_normalizer(train_split, cfg.variance_normalization)
            stream = _batch_stream(train_values.shape[0], cfg.batch_size, rng)
            omega_start = it
            if stage_idx > 0:
                prev_ds = stage_list[stage_idx - 1][1]
                if _dataset_skill_count(active_ds) < _dataset_skill_count(prev_ds):
                    warnings.warn(f"curriculum stage {stage_idx} has fewer skills "
                                  f"than the previous stage", stacklevel=2)

        idx = next(stream)
        batch = train_values[idx]
        model.params.zero_grad()
        loss, breakdown, _ = iwae_loss(model, batch, cfg, it=it, rng=rng,
                                       var_norm=var_norm, omega_it=it - omega_start)
        if not np.isfinite(breakdown.loss):
            metrics_fh.close()
            _dump_failure(out, it, breakdown, model, adam, last_good)
            raise NumericError(f"non-finite loss at iteration {it}; "
                               f"diagnostics in {out / 'failure.json'}")
        backward(loss)
        clip_global_norm(model.params, cfg.grad_clip)
        if cfg.warmup_iterations:
            adam.alpha = cfg.alpha * min(1.0, (it + 1) / cfg.warmup_iterations)
        adam.step(model.params)
        model.train_steps += 1

        test_ll = None
        if cfg.eval_interval and ((it + 1) % cfg.eval_interval == 0 or it + 1 == cfg.iterations):
            subset = test_values[:EVAL_SUBSET]
            test_ll = dataset_loglik(model, subset, cfg, mode="test", var_norm=var_norm)
        metrics_fh.write(_metrics_row(it, breakdown, test_ll) + "\n")
        if (it + 1) % 50 == 0:
            metrics_fh.flush()
        history.append(breakdown)
        if it % 25 == 0 or it + 1 == cfg.iterations:
            last_good = (model.params.state_dict(), adam.state_dict(), it)

        if cfg.checkpoint_interval and (it + 1) % cfg.checkpoint_interval == 0:
            model.save(out / "checkpoints" / f"ckpt_{it + 1:06d}.json",
                       adam.state_dict(), {"iteration": it + 1, "config": cfg.to_dict()})

    metrics_fh.close()
    final_path = out / "checkpoint.json"
    model.save(final_path, adam.state_dict(),
               {"iteration": cfg.iterations, "config": cfg.to_dict()})
    return TrainResult(model=model, metrics_path=metrics_path,
                       checkpoint_path=final_path, history=history)


def curriculum_train(cfg: TrainConfig, staged_datasets: list[Dataset], out_dir,
                     stage_length: int = 3000) -> TrainResult:
    """Switch dataset every ``stage_length`` iterations, resetting the
    temperature clock at each switch; everything else persists."""
    if not staged_datasets:
        raise ConfigError("need at least one dataset")
    stages = [(i * stage_length, ds) for i, ds in enumerate(staged_datasets[1:], start=1)]
    total_cfg = replace(cfg, iterations=stage_length * len(staged_datasets))
    return train(total_cfg, staged_datasets[0], out_dir, stages=stages)


def _dataset_skill_count(ds: Dataset) -> int:
    if ds.waypoints:
        return len({w for traj in ds.waypoints for w in traj})
    return 0


def _dump_failure(out: Path, it: int, breakdown: LossBreakdown, model: SkillModel,
                  adam: AdamState, last_good: tuple | None):
    Path(out / "failure.json").write_text(json.dumps({
        "iteration": it,
        "loss": breakdown.loss, "recon": breakdown.recon,
        "kl_d": breakdown.kl_d, "kl_s": breakdown.kl_s,
        "param_norms": {k: float(np.abs(v.data).max()) for k, v in model.params.items()},
    }, indent=1, sort_keys=True, default=str))
    if last_good is not None:
        params, opt, good_it = last_good
        model.params.load_state_dict(params)
        adam.load_state_dict(opt)
        model.save(out / "checkpoint_lastgood.json", opt, {"iteration": good_it})
