"""Trainable full-attention denoiser over spatiotemporal latent tokens.

A deliberately small diffusion transformer: per-cell tokens (identity
patchifier) from an (F, H, W, C) latent plus a handful of learned text
tokens per condition, run through pre-norm single-head full-attention
blocks. The attention map over the concatenated token sequence is
materialized explicitly so any block/timestep can be captured and sliced
into its text/latent quadrants. The prediction head is zero-initialized:
an untrained model predicts exactly zero velocity while still producing
valid row-stochastic attention.

Everything crossing the module boundary is float64 numpy; internals are
float32 torch. Training and evaluation run single-threaded by default so
repeated runs are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import (
    CodecError,
    DatasetError,
    GeometryError,
    LayerIndexError,
    UnknownConditionError,
)
from .models import condition_label
from .masks import ERSpec
from .rng import NoiseStream
from .sampling import ConditionedModel
from .schedules import FLOW_MATCHING, VP_SDE, Schedule
from . import tensorio

__all__ = [
    "AttentionSnapshot",
    "ToyDiT",
    "TrainResult",
    "train_denoiser",
    "save_checkpoint",
    "load_checkpoint",
    "set_torch_threads",
]


def set_torch_threads(n: int = 1) -> None:
    """Fix intra-op threads; same thread count => bit-identical reruns."""
    torch.set_num_threads(max(1, int(n)))


@dataclass(frozen=True)
class AttentionSnapshot:
    """Full row-stochastic attention matrix of one block at one timestep.

    The text rows/columns come first; the four quadrants are views into the
    stored matrix, so reassembling them reproduces it bit-exactly.
    """

    layer: int
    time: float
    n_text: int
    geometry: tuple[int, int, int]  # (F, H, W) token layout
    matrix: np.ndarray  # (N+M, N+M)

    def __post_init__(self):
        n_tokens = self.n_text + int(np.prod(self.geometry))
        if self.matrix.shape != (n_tokens, n_tokens):
            raise GeometryError(
                f"snapshot matrix {self.matrix.shape} does not match "
                f"{self.n_text} text + {self.geometry} latent tokens"
            )

    @property
    def a_ee(self) -> np.ndarray:
        return self.matrix[: self.n_text, : self.n_text]

    @property
    def a_eb(self) -> np.ndarray:
        return self.matrix[: self.n_text, self.n_text:]

    @property
    def a_be(self) -> np.ndarray:
        return self.matrix[self.n_text:, : self.n_text]

    @property
    def a_bb(self) -> np.ndarray:
        return self.matrix[self.n_text:, self.n_text:]

    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)


class _Block(nn.Module):
    def __init__(self, d: int, n_text: int, text_attn_bias: float):
        super().__init__()
        self.n_text = n_text
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)
        self.mlp = nn.Sequential(nn.Linear(d, 4 * d), nn.GELU(), nn.Linear(4 * d, d))
        self.scale = 1.0 / math.sqrt(d)
        # pre-softmax bias on text-token columns: with thousands of latent
        # tokens, uniform attention starves the handful of text tokens of
        # gradient; the bias keeps the conditioning path alive from step 0
        # without breaking row normalization or relevance ordering
        self.text_bias = nn.Parameter(torch.tensor(float(text_attn_bias)))
        # distance-decay strength for latent-latent attention (locality prior)
        self.dist_scale = nn.Parameter(torch.tensor(0.5))

    def forward(self, x: torch.Tensor, want_attn: bool, dist: torch.Tensor | None):
        h = self.norm1(x)
        logits = self.q(h) @ self.k(h).transpose(-1, -2) * self.scale
        logits[..., : self.n_text] = logits[..., : self.n_text] + self.text_bias
        if dist is not None:
            n = self.n_text
            logits[..., n:, n:] = logits[..., n:, n:] - torch.abs(self.dist_scale) * dist
        attn = torch.softmax(logits, dim=-1)
        x = x + self.o(attn @ self.v(h))
        x = x + self.mlp(self.norm2(x))
        return x, (attn if want_attn else None)


class ToyDiT(nn.Module, ConditionedModel):
    """Conditioned velocity model with capturable full attention."""

    def __init__(self, frames: int, height: int, width: int, channels: int = 1,
                 embed_dim: int = 32, blocks: int = 2, n_text: int = 2,
                 n_conditions: int = 2, family: str = FLOW_MATCHING,
                 horizon: float = 1.0, init_seed: int = 0,
                 text_attn_bias: float = 4.0):
        super().__init__()
        self.geometry = (frames, height, width, channels)
        self.n_latent = frames * height * width
        self.embed_dim = embed_dim
        self.n_blocks = blocks
        self.n_text = n_text
        self.n_conditions = n_conditions
        self.family = family
        self.horizon = horizon
        self.init_seed = init_seed

        gen_state = torch.random.get_rng_state()
        torch.manual_seed(init_seed)
        try:
            self.cond_table = nn.Parameter(0.5 * torch.randn(n_conditions, n_text, embed_dim))
            self.patch_in = nn.Linear(channels, embed_dim)
            self.pos_emb = nn.Parameter(0.02 * torch.randn(self.n_latent, embed_dim))
            n_freq = 8
            self.register_buffer(
                "time_freqs",
                torch.exp(torch.linspace(0.0, math.log(200.0), n_freq)),
            )
            self.time_mlp = nn.Sequential(
                nn.Linear(2 * n_freq, embed_dim), nn.SiLU(), nn.Linear(embed_dim, embed_dim)
            )
            self.blocks = nn.ModuleList(
                _Block(embed_dim, n_text, text_attn_bias) for _ in range(blocks)
            )
            self.head = nn.Linear(embed_dim, channels)
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)
            # toroidal euclidean distance between latent tokens (shapes in the
            # toy data wrap around the grid, so the lattice is a torus)
            self.register_buffer("token_dist", self._toroidal_distances(frames, height, width))
        finally:
            torch.random.set_rng_state(gen_state)

    @staticmethod
    def _toroidal_distances(frames: int, height: int, width: int) -> torch.Tensor:
        def axis_delta(n: int) -> torch.Tensor:
            idx = torch.arange(n, dtype=torch.float32)
            d = torch.abs(idx[:, None] - idx[None, :])
            return torch.minimum(d, n - d)

        df = axis_delta(frames).reshape(frames, 1, 1, frames, 1, 1)
        dh = axis_delta(height).reshape(1, height, 1, 1, height, 1)
        dw = axis_delta(width).reshape(1, 1, width, 1, 1, width)
        dist2 = df**2 + dh**2 + dw**2
        m = frames * height * width
        return torch.sqrt(dist2.expand(frames, height, width, frames, height, width)
                          .reshape(m, m))

    @property
    def default_capture_layer(self) -> int:
        return self.n_blocks - 1

    # -- torch path -------------------------------------------------------
    def _cond_rows(self, labels: list[int], ers) -> torch.Tensor:
        rows = []
        for i, label in enumerate(labels):
            if not (0 <= label < self.n_conditions):
                raise UnknownConditionError(
                    f"label {label} outside condition table of size {self.n_conditions}"
                )
            r = self.cond_table[label]
            er: ERSpec | None = None if ers is None else ers[i]
            if er is not None and er.gamma > 0.0:
                scale = torch.ones(self.n_text, 1, dtype=r.dtype, device=r.device)
                for k in er.target_tokens:
                    if not (0 <= k < self.n_text):
                        raise IndexError(f"target token {k} outside [0, {self.n_text})")
                    scale[k] = 1.0 + er.gamma
                r = r * scale
            rows.append(r)
        return torch.stack(rows, dim=0)

    def velocity_gain(self, t: torch.Tensor) -> torch.Tensor:
        """Exact time gain turning the bounded head output into a velocity.

        The head regresses the well-conditioned displacement target
        (x_t - z0 for the straight path, sqrt(abar)*x_t - z0 for vp-sde);
        the conditional velocity is that displacement times a known gain,
        so the network never has to learn the near-singular 1/t scaling.
        """
        t = torch.clamp(t, min=1e-3 * self.horizon)
        if self.family == VP_SDE:
            sched = Schedule(family=VP_SDE, horizon=self.horizon, steps=1)
            ab = torch.tensor([sched.alpha_bar(float(ti)) for ti in t],
                              dtype=torch.float32)
            beta = torch.tensor([sched.beta(float(ti)) for ti in t], dtype=torch.float32)
            return (beta / 2.0) * torch.sqrt(ab) / torch.clamp(1.0 - ab, min=1e-6)
        return 1.0 / t

    def forward(self, x: torch.Tensor, t: torch.Tensor, cond_rows: torch.Tensor,
                capture: tuple[int, ...] = (), return_raw: bool = False):
        """x: (B, M, C) float32 tokens; t: (B,); cond_rows: (B, n_text, d)."""
        for layer in capture:
            if not (0 <= layer < self.n_blocks):
                raise LayerIndexError(f"capture layer {layer} outside [0, {self.n_blocks})")
        b = x.shape[0]
        tt = t.reshape(b, 1) * self.time_freqs.reshape(1, -1)
        t_emb = self.time_mlp(torch.cat([torch.sin(tt), torch.cos(tt)], dim=-1))
        lat = self.patch_in(x) + self.pos_emb.unsqueeze(0) + t_emb.unsqueeze(1)
        tokens = torch.cat([cond_rows, lat], dim=1)
        attn_maps: dict[int, torch.Tensor] = {}
        for idx, block in enumerate(self.blocks):
            tokens, attn = block(tokens, want_attn=idx in capture, dist=self.token_dist)
            if attn is not None:
                attn_maps[idx] = attn
        raw = self.head(tokens[:, self.n_text:, :])
        if return_raw:
            return raw, attn_maps
        vel = raw * self.velocity_gain(t).reshape(b, 1, 1)
        return vel, attn_maps

    # -- numpy model interface ---------------------------------------------
    def _check_geometry(self, x: np.ndarray) -> None:
        if tuple(x.shape) != self.geometry:
            raise GeometryError(f"input {x.shape} does not match model {self.geometry}")

    def velocity(self, x: np.ndarray, t: float, cond) -> np.ndarray:
        vs, _ = self.velocity_batch([x], t, [cond])
        return vs[0]

    def velocity_batch(self, xs, t: float, conds, ers=None, capture=()):
        """One batched forward; snapshots are taken from the first element."""
        for x in xs:
            self._check_geometry(np.asarray(x))
        b = len(xs)
        f, h, w, c = self.geometry
        batch = np.stack([np.asarray(x, dtype=np.float64) for x in xs])
        x_t = torch.from_numpy(batch.reshape(b, self.n_latent, c).astype(np.float32))
        labels = [condition_label(cd) for cd in conds]
        with torch.no_grad():
            rows = self._cond_rows(labels, ers)
            tt = torch.full((b,), float(t), dtype=torch.float32)
            vel, attn_maps = self.forward(x_t, tt, rows, capture=tuple(capture))
        vels = [
            vel[i].numpy().astype(np.float64).reshape(f, h, w, c) for i in range(b)
        ]
        snaps = [
            AttentionSnapshot(
                layer=layer,
                time=float(t),
                n_text=self.n_text,
                geometry=(f, h, w),
                matrix=attn_maps[layer][0].numpy().astype(np.float64),
            )
            for layer in sorted(attn_maps)
        ]
        return vels, snaps


@dataclass
class TrainResult:
    epoch_losses: list[float]
    baseline_loss: float
    final_loss: float
    steps: int


def _regression_targets(sched: Schedule, z0: np.ndarray, t: np.ndarray,
                        eps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(x_t, displacement target) for a batch; t is one scalar per item.

    The displacement target is the conditional velocity divided by the
    model's fixed time gain, i.e. x_t - z0 (straight path) or
    sqrt(abar)*x_t - z0 (vp-sde). Regressing it instead of the raw
    velocity keeps targets bounded at small t.
    """
    b = z0.shape[0]
    flat = (b,) + (1,) * (z0.ndim - 1)
    if sched.family == VP_SDE:
        ab = np.array([sched.alpha_bar(float(ti)) for ti in t]).reshape(flat)
        x_t = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
        return x_t, np.sqrt(ab) * x_t - z0
    tau = (t / sched.horizon).reshape(flat)
    x_t = (1.0 - tau) * z0 + tau * eps
    return x_t, x_t - z0


def train_denoiser(model: ToyDiT, clips, sched: Schedule, epochs: int, lr: float,
                   seed: int, batch_size: int = 8, t_min_frac: float = 0.05) -> TrainResult:
    """Velocity-regression training on forward-marginal pairs.

    Per item: draw t ~ U(t_min_frac*T, T) and fresh noise, build the noised
    input and the schedule-consistent velocity target, regress with MSE.
    The reported baseline is the loss of the zero predictor over the same
    draws, i.e. what the freshly initialized (zero-head) model scores.
    """
    if len(clips) == 0:
        raise DatasetError("training needs at least one clip")
    if sched.family not in (VP_SDE, FLOW_MATCHING):
        raise DatasetError(f"unknown family {sched.family}")
    if sched.family != model.family:
        raise GeometryError(
            f"schedule family {sched.family!r} != model family {model.family!r}"
        )
    videos = np.stack([np.asarray(c.video, dtype=np.float64) for c in clips])
    labels = [int(c.label) for c in clips]
    if videos.shape[1:] != model.geometry:
        raise GeometryError(f"clips {videos.shape[1:]} do not match model {model.geometry}")

    torch.manual_seed(seed)
    stream = NoiseStream(seed, stream=101)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    n = len(clips)
    f, h, w, c = model.geometry

    epoch_losses: list[float] = []
    baseline_acc: list[float] = []
    t_lo = t_min_frac * sched.horizon
    steps = 0
    for epoch in range(epochs):
        order = stream.permutation_at(10_000_000 + epoch, n)
        running = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            b = len(idx)
            draw = steps  # one counter slot per gradient step for (t, eps)
            t = stream.uniform_at(2 * draw, t_lo, sched.horizon, b)
            eps = stream.normal_at(2 * draw + 1, (b, f, h, w, c))
            z0 = videos[idx]
            x_t, target = _regression_targets(sched, z0, t, eps)
            baseline_acc.append(float(np.mean(target**2)))

            xb = torch.from_numpy(x_t.reshape(b, model.n_latent, c).astype(np.float32))
            tb = torch.from_numpy(t.astype(np.float32))
            vb = torch.from_numpy(target.reshape(b, model.n_latent, c).astype(np.float32))
            rows = model._cond_rows([labels[i] for i in idx], None)
            pred, _ = model.forward(xb, tb, rows, return_raw=True)
            loss = torch.mean((pred - vb) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
            running.append(float(loss.detach()))
            steps += 1
        epoch_losses.append(float(np.mean(running)))
    baseline = float(np.mean(baseline_acc)) if baseline_acc else float("nan")
    final = epoch_losses[-1] if epoch_losses else baseline
    return TrainResult(epoch_losses, baseline, final, steps)


# ---------------------------------------------------------------------------
# checkpoints: one grid file per parameter plus a key=value sidecar


_MANIFEST = "manifest.txt"


def save_checkpoint(model: ToyDiT, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    f, h, w, c = model.geometry
    lines = [
        f"frames={f}",
        f"height={h}",
        f"width={w}",
        f"channels={c}",
        f"embed_dim={model.embed_dim}",
        f"blocks={model.n_blocks}",
        f"n_text={model.n_text}",
        f"n_conditions={model.n_conditions}",
        f"family={model.family}",
        f"horizon={model.horizon}",
        f"init_seed={model.init_seed}",
    ]
    (directory / _MANIFEST).write_text("\n".join(lines) + "\n")
    for name, param in model.state_dict().items():
        tensorio.write_grid(directory / f"{name}.dfvt", param.detach().numpy().astype(np.float64))


def load_checkpoint(directory) -> ToyDiT:
    directory = Path(directory)
    manifest_path = directory / _MANIFEST
    if not manifest_path.exists():
        raise CodecError(f"{directory}: missing checkpoint manifest")
    fields: dict[str, str] = {}
    for line in manifest_path.read_text().splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    try:
        model = ToyDiT(
            frames=int(fields["frames"]),
            height=int(fields["height"]),
            width=int(fields["width"]),
            channels=int(fields["channels"]),
            embed_dim=int(fields["embed_dim"]),
            blocks=int(fields["blocks"]),
            n_text=int(fields["n_text"]),
            n_conditions=int(fields["n_conditions"]),
            family=fields["family"],
            horizon=float(fields["horizon"]),
            init_seed=int(fields.get("init_seed", "0")),
        )
    except KeyError as missing:
        raise CodecError(f"{directory}: checkpoint manifest missing {missing}") from None
    state = {}
    for name, param in model.state_dict().items():
        arr = tensorio.read_grid(directory / f"{name}.dfvt")
        state[name] = torch.from_numpy(arr.astype(np.float32)).reshape(param.shape)
    model.load_state_dict(state)
    return model
