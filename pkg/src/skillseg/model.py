"""Inference + generative network for iterative trajectory explanation.

One forward pass reads the preprocessed trajectory with a vanilla RNN, then
repeatedly: predicts how much of the remaining trajectory the next skill
covers (a Gaussian sample squashed by a sigmoid), cuts that window out with
the differentiable extractor, encodes it to a discrete skill code (relaxed
during training, one-hot at test time), decodes the skill, and pastes the
decoded sub-trajectory back onto the reconstruction canvas. The loop stops
when the covered fraction reaches the threshold or the iteration cap.

A small conditioning layer biases the encoder logits with the previous skill
code; its softmax rows are the learned skill-to-skill transition structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from skillseg.diffcore import (
    ParameterSet,
    Tensor,
    affine,
    concat,
    const,
    elu,
    gaussian_reparam,
    gumbel_softmax,
    repeat_rows,
    reshape,
    rnn_cell,
    sigmoid,
    softmax,
)
from skillseg.diffcore.checkpoint import load_checkpoint, save_checkpoint
from skillseg.errors import ConfigError
from skillseg.trajectory import Trajectory, mean_velocity
from skillseg.transformer import Window, paste_window, st_extract, st_paste

ENC_HIDDEN = (30, 15)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture card: every size and threshold a checkpoint depends on."""

    s_skills: int = 6
    n_max: int = 3
    dims: int = 1
    t_steps: int = 200
    sub_len: int = 50
    rnn_size: int = 64
    linear_size: int = 16
    t_eps: float = 0.85
    mu_d: float = 0.0
    sigma_d: float = 1.0
    preprocess: str = "mean_velocity"
    relative_encoding: bool = False
    reverse_read: bool = True
    reread_len: int = 32

    def __post_init__(self):
        if self.preprocess not in ("mean_velocity", "identity"):
            raise ConfigError(f"unknown preprocess {self.preprocess!r}")
        if not 0.0 < self.t_eps <= 1.0:
            raise ConfigError(f"t_eps must be in (0, 1], got {self.t_eps}")
        if self.sigma_d <= 0:
            raise ConfigError("sigma_d must be positive")

    @property
    def signal_dim(self) -> int:
        return 1 if self.preprocess == "mean_velocity" else self.dims

    @property
    def rnn_input_dim(self) -> int:
        # signal features while reading, then [z_d, z_s] while iterating
        return self.signal_dim + 1 + self.s_skills

    def to_dict(self) -> dict:
        return {
            "s_skills": self.s_skills, "n_max": self.n_max, "dims": self.dims,
            "t_steps": self.t_steps, "sub_len": self.sub_len,
            "rnn_size": self.rnn_size, "linear_size": self.linear_size,
            "t_eps": self.t_eps, "mu_d": self.mu_d, "sigma_d": self.sigma_d,
            "preprocess": self.preprocess, "relative_encoding": self.relative_encoding,
            "reverse_read": self.reverse_read, "reread_len": self.reread_len,
        }


@dataclass
class StepTrace:
    """Latents and masks of one loop iteration over the whole row batch."""

    mu_d: Tensor
    log_sigma_d: Tensor
    z_d_raw: Tensor
    z_d: Tensor
    offset: Tensor
    logits: Tensor
    z_s: Tensor
    skill_probs: Tensor
    sub: Tensor
    sub_hat: Tensor
    active: np.ndarray
    clipped: np.ndarray
    prev_class: np.ndarray | None
    eps_d: np.ndarray


@dataclass
class BatchTrace:
    """Full forward record for B data rows fanned out to K samples each."""

    canvas: Tensor
    steps: list[StepTrace]
    batch: int
    k: int
    mode: str

    @property
    def rows(self) -> int:
        return self.batch * self.k

    def n_steps_per_row(self) -> np.ndarray:
        return np.sum([s.active for s in self.steps], axis=0).astype(int)


@dataclass
class ForwardTrace:
    """One trajectory's explanation: durations, skills, boundaries, recon."""

    n_steps: int
    durations: list[float]
    skill_ids: list[int]
    boundaries: list[float]
    windows: list[Window]
    skill_codes: list[np.ndarray]
    reconstruction: np.ndarray
    clipped: bool


@dataclass
class GenerationResult:
    trajectory: Trajectory
    skill_ids: list[int]
    durations: list[float]
    untrained_warning: bool = False


class SkillModel:
    """Parameter container plus the batched forward/generate passes."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.train_steps = 0
        rng = np.random.default_rng(seed)
        p = ParameterSet()
        c = config
        h, i = c.rnn_size, c.rnn_input_dim
        flat = c.sub_len * c.dims
        p.add("rnn.w_h", (h, h), rng)
        p.add("rnn.w_x", (i, h), rng)
        p.add("rnn.b", (h,), kind="bias")
        p.add("dur.w1", (h, c.linear_size), rng)
        p.add("dur.b1", (c.linear_size,), kind="bias")
        # zero output layer: the duration posterior starts exactly at the
        # prior (mu=0, log sigma=0) and must earn any deviation
        p.add("dur.w2", (c.linear_size, 2), kind="bias")
        p.add("dur.b2", (2,), kind="bias")
        e1, e2 = ENC_HIDDEN
        p.add("enc.w1", (flat, e1), rng)
        p.add("enc.b1", (e1,), kind="bias")
        p.add("enc.w2", (e1, e2), rng)
        p.add("enc.b2", (e2,), kind="bias")
        p.add("enc.w3", (e2, c.s_skills), rng)
        p.add("enc.b3", (c.s_skills,), kind="bias")
        p.add("cond.w", (c.s_skills, c.s_skills), rng)
        p.add("cond.b", (c.s_skills,), kind="bias")
        # decoder mirrors the encoder hidden sizes, skill code re-injected
        # at every hidden layer input
        p.add("dec.w1", (c.s_skills, e2), rng)
        p.add("dec.b1", (e2,), kind="bias")
        p.add("dec.w2", (e2 + c.s_skills, e1), rng)
        p.add("dec.b2", (e1,), kind="bias")
        p.add("dec.w3", (e1 + c.s_skills, flat), rng)
        p.add("dec.b3", (flat,), kind="bias")
        self.params = p

    # ---- preprocessing / context ----

    def preprocess_batch(self, values: np.ndarray) -> np.ndarray:
        """(B, T, D) positions -> (B, T, signal_dim) inference-net input.

        The mean-velocity signal is rescaled by (T - 1): per-step differences
        of normalized-workspace data are O(1/T) and would be nearly invisible
        to the freshly initialized RNN, so the input is expressed as velocity
        per unit normalized time instead.
        """
        if self.config.preprocess == "identity":
            return values.copy()
        sig = np.zeros((values.shape[0], values.shape[1], 1))
        sig[:, 1:, 0] = np.diff(values, axis=1).mean(axis=2) * (values.shape[1] - 1)
        return sig

    def infer_context(self, signal: np.ndarray) -> Tensor:
        """Run the RNN over a (B, T, signal_dim) signal; returns final hidden.

        With ``reverse_read`` the signal is consumed end-to-start: a vanilla
        cell's final state is dominated by its most recent inputs, and the
        first duration decision needs the trajectory's beginning, not its end.
        """
        if signal.ndim == 2:
            signal = signal[None, :, :]
        b, t, sd = signal.shape
        if sd != self.config.signal_dim:
            raise ConfigError(f"signal dim {sd} != configured {self.config.signal_dim}")
        x_seq = np.zeros((b, t, self.config.rnn_input_dim))
        x_seq[:, :, :sd] = signal[:, ::-1, :] if self.config.reverse_read else signal
        p = self.params
        h = const(np.zeros((b, self.config.rnn_size)))
        for step in range(t):
            h = rnn_cell(h, const(x_seq[:, step, :]), p["rnn.w_h"], p["rnn.w_x"], p["rnn.b"])
        return h

    # ---- per-iteration pieces ----

    def _iterate_hidden(self, h: Tensor, z_d_prev: Tensor | None, z_s_prev: Tensor | None) -> Tensor:
        rows = h.data.shape[0]
        sd = self.config.signal_dim
        pad = const(np.zeros((rows, sd)))
        if z_d_prev is None:
            x = const(np.zeros((rows, self.config.rnn_input_dim)))
        else:
            x = concat([pad, z_d_prev, z_s_prev], axis=1)
        p = self.params
        return rnn_cell(h, x, p["rnn.w_h"], p["rnn.w_x"], p["rnn.b"])

    def _reread_remainder(self, h: Tensor, signal_rep: Tensor, cum: Tensor) -> Tensor:
        """Advance h over the not-yet-explained signal, resampled coarsely.

        The window (cum, 1 - cum) is cut out with the differentiable
        extractor, so the read itself is smooth in the accumulated durations.
        Gives every later duration decision a fresh view of what remains.
        """
        c = self.config
        rows = h.data.shape[0]
        sub = st_extract(signal_rep, cum, 1.0 - cum, c.reread_len)
        pad = const(np.zeros((rows, c.reread_len, 1 + c.s_skills)))
        seq = concat([sub, pad], axis=2)
        order = range(c.reread_len - 1, -1, -1) if c.reverse_read else range(c.reread_len)
        p = self.params
        for t in order:
            h = rnn_cell(h, seq[:, t, :], p["rnn.w_h"], p["rnn.w_x"], p["rnn.b"])
        return h

    def _duration_head(self, h: Tensor) -> tuple[Tensor, Tensor]:
        p = self.params
        hidden = elu(affine(h, p["dur.w1"], p["dur.b1"]))
        out = affine(hidden, p["dur.w2"], p["dur.b2"])
        return out[:, 0:1], out[:, 1:2]

    def encode_logits(self, sub: Tensor, prev_skill: Tensor | None) -> Tensor:
        """Encoder MLP on the flattened window plus the conditioning bias."""
        p = self.params
        rows = sub.data.shape[0]
        if self.config.relative_encoding:
            sub = sub - sub[:, 0:1, :]
        flat = reshape(sub, (rows, self.config.sub_len * self.config.dims))
        h1 = elu(affine(flat, p["enc.w1"], p["enc.b1"]))
        h2 = elu(affine(h1, p["enc.w2"], p["enc.b2"]))
        logits = affine(h2, p["enc.w3"], p["enc.b3"])
        if prev_skill is None:
            prev_skill = const(np.zeros((rows, self.config.s_skills)))
        return logits + affine(prev_skill, p["cond.w"], p["cond.b"])

    def decode(self, z_s: Tensor) -> Tensor:
        """(R, S) simplex codes -> (R, L, D) mean sub-trajectories."""
        p = self.params
        rows = z_s.data.shape[0]
        h1 = elu(affine(z_s, p["dec.w1"], p["dec.b1"]))
        h2 = elu(affine(concat([h1, z_s], axis=1), p["dec.w2"], p["dec.b2"]))
        out = affine(concat([h2, z_s], axis=1), p["dec.w3"], p["dec.b3"])
        return reshape(out, (rows, self.config.sub_len, self.config.dims))

    def encode_skill(self, sub: np.ndarray, prev_skill: np.ndarray | None,
                     omega: float, mode: str, rng=None) -> tuple[np.ndarray, np.ndarray]:
        """Single-window convenience: returns (z_s, logits) as arrays."""
        sub_t = const(sub[None, :, :])
        prev_t = None if prev_skill is None else const(prev_skill[None, :])
        logits = self.encode_logits(sub_t, prev_t)
        if mode == "train":
            z_s = gumbel_softmax(logits, omega, rng)
        else:
            z_s = const(_one_hot(logits.data, self.config.s_skills))
        return z_s.data[0], logits.data[0]

    def decode_skill(self, z_s: np.ndarray) -> np.ndarray:
        return self.decode(const(np.atleast_2d(z_s))).data[0]

    # ---- forward ----

    def forward_batch(self, values: np.ndarray, mode: str = "train", omega: float = 1.0,
                      rng: np.random.Generator | None = None, k: int = 1) -> BatchTrace:
        """Explain (B, T, D) trajectories; each row fanned out to k samples.

        The context pass runs once per datum and is shared across the k
        samples. Rows that have covered t_eps stop contributing: later
        iterations are masked out of the canvas and the trace.
        """
        if mode not in ("train", "test"):
            raise ConfigError(f"mode must be train or test, got {mode}")
        c = self.config
        b, t, d = values.shape
        if t != c.t_steps or d != c.dims:
            raise ConfigError(f"expected (B, {c.t_steps}, {c.dims}) values, got {values.shape}")
        rows = b * k
        signal = self.preprocess_batch(values)
        h = self.infer_context(signal)
        if k > 1:
            h = repeat_rows(h, k)
        x_rep = const(np.repeat(values, k, axis=0))
        sig_rep = const(np.repeat(signal, k, axis=0)) if c.reread_len > 0 else None
        canvas = const(np.zeros((rows, t, d)))
        cum = const(np.zeros((rows, 1)))
        active = np.ones(rows)
        z_d_prev = z_s_prev = None
        steps: list[StepTrace] = []
        for n in range(c.n_max):
            h = self._iterate_hidden(h, z_d_prev, z_s_prev)
            if n > 0 and c.reread_len > 0:
                h = self._reread_remainder(h, sig_rep, cum)
            mu_d, log_sigma_d = self._duration_head(h)
            if mode == "train":
                eps = rng.standard_normal((rows, 1))
                z_d_raw = gaussian_reparam(mu_d, log_sigma_d, eps)
            else:
                eps = np.zeros((rows, 1))
                z_d_raw = mu_d
            z_d = sigmoid(z_d_raw)
            offset = cum
            sub, clip_flags = st_extract(x_rep, offset, z_d, c.sub_len, return_flags=True)
            prev_class = None if z_s_prev is None else np.argmax(z_s_prev.data, axis=1)
            logits = self.encode_logits(sub, z_s_prev)
            if mode == "train":
                z_s = gumbel_softmax(logits, omega, rng)
            else:
                z_s = const(_one_hot(logits.data, c.s_skills))
            sub_hat = self.decode(z_s)
            contrib = st_paste(sub_hat, offset, z_d, t) * active[:, None, None]
            canvas = canvas + contrib
            steps.append(StepTrace(
                mu_d=mu_d, log_sigma_d=log_sigma_d, z_d_raw=z_d_raw, z_d=z_d,
                offset=offset, logits=logits, z_s=z_s,
                skill_probs=softmax(logits, axis=-1), sub=sub, sub_hat=sub_hat,
                active=active.copy(), clipped=clip_flags, prev_class=prev_class,
                eps_d=eps))
            cum = cum + z_d
            z_d_prev, z_s_prev = z_d, z_s
            active = active * (cum.data[:, 0] < c.t_eps)
            if not active.any():
                break
        return BatchTrace(canvas=canvas, steps=steps, batch=b, k=k, mode=mode)

    def forward(self, traj: Trajectory, mode: str = "test", omega: float = 1.0,
                rng: np.random.Generator | None = None) -> ForwardTrace:
        trace = self.forward_batch(traj.values[None, :, :], mode=mode, omega=omega, rng=rng)
        return extract_row_trace(trace, 0)

    # ---- generative direction ----

    def conditioning_matrix(self) -> np.ndarray:
        """Row i = transition distribution over successors of skill i."""
        logits = self.params["cond.w"].data + self.params["cond.b"].data[None, :]
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def skill_prototypes(self) -> np.ndarray:
        """(S, L, D) decoded one-hot codes: the learned skill library."""
        return self.decode(const(np.eye(self.config.s_skills))).data

    def sample_skill_chain(self, n_skills: int, rng: np.random.Generator,
                           first_skill: int | None = None) -> list[int]:
        matrix = self.conditioning_matrix()
        chain = [int(rng.integers(self.config.s_skills)) if first_skill is None else int(first_skill)]
        for _ in range(n_skills - 1):
            chain.append(int(rng.choice(self.config.s_skills, p=matrix[chain[-1]])))
        return chain

    def generate(self, n_skills: int, rng: np.random.Generator,
                 first_skill: int | None = None) -> GenerationResult:
        """Sample a skill chain from the conditioning prior and render it."""
        if n_skills < 1:
            raise ConfigError("n_skills must be >= 1")
        c = self.config
        chain = self.sample_skill_chain(n_skills, rng, first_skill)
        raw = rng.normal(c.mu_d, c.sigma_d, size=n_skills)
        durations = 1.0 / (1.0 + np.exp(-raw))
        protos = self.skill_prototypes()
        canvas = np.zeros((c.t_steps, c.dims))
        offset = 0.0
        kept: list[float] = []
        for skill, dur in zip(chain, durations):
            if offset >= 1.0:
                break
            dur = min(float(dur), 1.0 - offset)
            canvas = paste_window(canvas, protos[skill], Window(offset, dur))
            kept.append(dur)
            offset += dur
        return GenerationResult(Trajectory(canvas), chain[: len(kept)], kept,
                                untrained_warning=self.train_steps == 0)

    # ---- persistence ----

    def save(self, path, optimizer_state: dict | None = None, extra_meta: dict | None = None):
        meta = {"architecture": self.config.to_dict(), "train_steps": self.train_steps}
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.params.state_dict(), optimizer_state, meta)

    @classmethod
    def load(cls, path) -> tuple["SkillModel", dict | None, dict]:
        params, opt, meta = load_checkpoint(path)
        config = ModelConfig(**meta["architecture"])
        model = cls(config, seed=0)
        model.params.load_state_dict(params)
        model.train_steps = int(meta.get("train_steps", 0))
        return model, opt, meta


def _one_hot(logits: np.ndarray, s: int) -> np.ndarray:
    out = np.zeros_like(logits)
    out[np.arange(logits.shape[0]), np.argmax(logits, axis=1)] = 1.0
    return out


def extract_row_trace(trace: BatchTrace, row: int) -> ForwardTrace:
    """Per-trajectory view of one row of a batched trace."""
    durations, skills, windows, codes = [], [], [], []
    clipped = False
    offset = 0.0
    for step in trace.steps:
        if step.active[row] == 0:
            break
        dur = float(step.z_d.data[row, 0])
        durations.append(dur)
        skills.append(int(np.argmax(step.z_s.data[row])))
        codes.append(step.z_s.data[row].copy())
        windows.append(Window(min(offset, 1.0 - 1e-9), max(min(dur, 1.0 - offset), 1e-9)))
        clipped = clipped or bool(step.clipped[row])
        offset += dur
    boundaries = list(np.minimum(np.cumsum(durations)[:-1], 1.0)) if len(durations) > 1 else []
    return ForwardTrace(
        n_steps=len(durations), durations=durations, skill_ids=skills,
        boundaries=[float(x) for x in boundaries], windows=windows, skill_codes=codes,
        reconstruction=trace.canvas.data[row].copy(), clipped=clipped)
