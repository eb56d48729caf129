"""Multimodal student policy with a variational skill bottleneck.

Each observation group becomes one token; unavailable groups are replaced by
a learned null token and excluded from attention, so nothing downstream can
depend on their raw values.  Goals reach the action decoder only through the
latent z — except the local tracking goal, which also feeds a mask-gated
residual shortcut straight into the decoder.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import torch
from torch import nn

from ..obs.layout import ObservationLayout
from ..obs.mask import GROUPS
from .actor_critic import FIXED_LOG_STD
from .mlp import mlp, require_finite
from .pointset import PointSetEncoder


@dataclasses.dataclass(frozen=True)
class StudentArchConfig:
    """Width table for the student; defaults are the compact configuration."""

    token_dim: int = 64
    fusion_layers: int = 2
    fusion_heads: int = 4
    ffn_dim: int = 128
    latent_dim: int = 16
    film_scale: float = 0.1
    decoder_hidden: tuple = (256, 256, 128)
    posterior_hidden: tuple = (512, 256, 128, 64)
    point_hidden: tuple = (64, 64)
    min_std: float = 1e-4
    latent_decoder: bool = False

    @classmethod
    def desk(cls) -> "StudentArchConfig":
        return cls()

    @classmethod
    def full_scale(cls) -> "StudentArchConfig":
        return cls(token_dim=256, ffn_dim=1024, latent_dim=64,
                   decoder_hidden=(1024, 1024, 512),
                   posterior_hidden=(2048, 1024, 512, 256),
                   point_hidden=(256, 256))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("decoder_hidden", "posterior_hidden", "point_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StudentArchConfig":
        d = dict(d)
        for k in ("decoder_hidden", "posterior_hidden", "point_hidden"):
            d[k] = tuple(d[k])
        return cls(**d)


@dataclasses.dataclass
class StudentLatents:
    """Latent bookkeeping for one forward pass.

    ``post_mean`` is the full posterior mean (prior mean plus the privileged
    encoder's residual); ``post_mean``/``post_std`` are None on the
    deployment path, where ``z_res`` is exactly zero and z = z_prior.
    """

    prior_mean: torch.Tensor
    prior_std: torch.Tensor
    post_mean: torch.Tensor | None
    post_std: torch.Tensor | None
    z_res: torch.Tensor
    z: torch.Tensor


def _sinusoidal_encoding(n_slots: int, dim: int) -> torch.Tensor:
    pos = torch.arange(n_slots, dtype=torch.float32)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float32)[None, :]
    angle = pos / torch.pow(10000.0, i / dim)
    enc = torch.zeros(n_slots, dim)
    enc[:, 0::2] = torch.sin(angle)
    enc[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return enc


class _FusionLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, dropout=0.0,
                                          batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ffn_dim), nn.GELU(),
                                nn.Linear(ffn_dim, dim))

    def forward(self, x: torch.Tensor, key_padding_mask: torch.Tensor,
                need_weights: bool = False):
        attn_out, weights = self.attn(
            x, x, x, key_padding_mask=key_padding_mask,
            need_weights=need_weights, average_attn_weights=False)
        x = self.norm1(x + attn_out)
        x = self.norm2(x + self.ff(x))
        return x, weights


class StudentPolicy(nn.Module):
    """Token-fusion student: prior/posterior latent heads + FiLM decoder.

    Token slots are [context, proprio, *GROUPS]; context and proprio are
    always available, the seven goal/perception groups are maskable.
    """

    def __init__(self, layout: ObservationLayout, teacher_dim: int,
                 action_dim: int, arch: StudentArchConfig | None = None):
        super().__init__()
        if layout.meta.get("kind") != "student":
            raise ValueError(f"need a student layout, got {layout.meta}")
        arch = arch if arch is not None else StudentArchConfig()
        self.arch = arch
        self.layout = layout
        self.obs_dim = layout.total_dim
        self.teacher_dim = int(teacher_dim)
        self.action_dim = int(action_dim)
        td, zd = arch.token_dim, arch.latent_dim

        self._group_slices = {
            "global_goal": layout.slice("global"),
            "goal_cmd": layout.slice("cmd"),
            "local_goal": layout.slice("local"),
            "object_trans": layout.row_slice("task_obj_trans"),
            "object_rot": layout.row_slice("task_obj_rot"),
            "object_pos": layout.row_slice("task_obj_pos"),
            "object_pcd": layout.row_slice("task_pcd"),
        }
        self._proprio_slice = layout.slice("proprio")
        self._history_slice = layout.slice("history")
        self._local_idx = GROUPS.index("local_goal")
        self._n_points = int(layout.meta["points"])
        pcd_len = layout.length("task_pcd")
        self._point_dim = pcd_len // self._n_points

        def group_dim(g: str) -> int:
            s = self._group_slices[g]
            return s.stop - s.start

        self.tokenizers = nn.ModuleDict({
            g: mlp(group_dim(g), [td], td, activation=nn.GELU)
            for g in GROUPS if g != "object_pcd"
        })
        self.pcd_encoder = PointSetEncoder(self._point_dim, td,
                                           arch.point_hidden)
        proprio_in = (layout.length("proprio") + layout.length("history"))
        self.proprio_tokenizer = mlp(proprio_in, [2 * td], td,
                                     activation=nn.GELU)

        self.context_token = nn.Parameter(0.02 * torch.randn(td))
        self.null_tokens = nn.Parameter(torch.zeros(len(GROUPS), td))
        n_slots = 2 + len(GROUPS)
        self.register_buffer("pos_encoding",
                             _sinusoidal_encoding(n_slots, td))
        self.fusion = nn.ModuleList(
            _FusionLayer(td, arch.fusion_heads, arch.ffn_dim)
            for _ in range(arch.fusion_layers))

        head_hidden = td // 2
        self.prior_mean_head = mlp(td, [head_hidden], zd)
        self.prior_std_head = mlp(td, [head_hidden], zd)
        ph = arch.posterior_hidden
        self.posterior_trunk = mlp(self.teacher_dim, list(ph[:-1]), ph[-1],
                                   final_activation=True)
        self.post_mean_head = mlp(ph[-1], [ph[-1] // 2], zd)
        self.post_std_head = mlp(ph[-1], [ph[-1] // 2], zd)

        local_len = layout.length("local")
        dims = [td + local_len, *arch.decoder_hidden]
        self.decoder_layers = nn.ModuleList(
            nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        for lin in self.decoder_layers:
            nn.init.xavier_uniform_(lin.weight)
            nn.init.zeros_(lin.bias)
        # FiLM heads start at zero so conditioning begins as the identity
        self.film_gamma = nn.ModuleList(
            nn.Linear(zd, w) for w in arch.decoder_hidden)
        self.film_beta = nn.ModuleList(
            nn.Linear(zd, w) for w in arch.decoder_hidden)
        for head in (*self.film_gamma, *self.film_beta):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)
        self.action_head = nn.Linear(arch.decoder_hidden[-1], self.action_dim)
        nn.init.xavier_uniform_(self.action_head.weight)
        nn.init.zeros_(self.action_head.bias)

        self.critic = mlp(self.obs_dim, arch.decoder_hidden, 1)

        aux_in = zd + td
        self.aux_heads = nn.ModuleDict({
            g: mlp(aux_in, [td], group_dim(g)) for g in GROUPS
            if g != "local_goal"
        })
        self.local_goal_head = mlp(aux_in, [td], local_len)
        if arch.latent_decoder:
            self.latent_decoder = mlp(zd, [4 * zd], max(zd // 4, 1))
        else:
            self.latent_decoder = None

        self.register_buffer("log_std",
                             torch.full((self.action_dim,), FIXED_LOG_STD))

    # ---------------------------------------------------------------- helpers
    def _mask_flags(self, mask, n: int, device) -> torch.Tensor:
        """(n, 7) float tensor of availability flags in GROUPS order."""
        if hasattr(mask, "as_dict"):
            mask = mask.as_dict()
        if isinstance(mask, dict):
            cols = [np.asarray(mask[g], dtype=np.float32) for g in GROUPS]
            arr = np.stack(cols, axis=-1)
        else:
            arr = np.asarray(mask, dtype=np.float32) \
                if not torch.is_tensor(mask) else mask
        flags = torch.as_tensor(arr, dtype=torch.float32, device=device)
        if flags.shape != (n, len(GROUPS)):
            raise ValueError(
                f"mask shape {tuple(flags.shape)} != ({n}, {len(GROUPS)})")
        return flags

    def _fuse(self, obs: torch.Tensor, flags: torch.Tensor,
              need_weights: bool = False):
        """Token fusion; returns (context_out, proprio_feats, attn_maps)."""
        n = obs.shape[0]
        proprio_feats = self.proprio_tokenizer(torch.cat(
            [obs[:, self._proprio_slice], obs[:, self._history_slice]], dim=-1))
        tokens = [self.context_token.expand(n, -1), proprio_feats]
        for gi, g in enumerate(GROUPS):
            raw = obs[:, self._group_slices[g]]
            if g == "object_pcd":
                emb = self.pcd_encoder(
                    raw.reshape(n, self._n_points, self._point_dim))
            else:
                emb = self.tokenizers[g](raw)
            keep = flags[:, gi:gi + 1] > 0.0
            emb = torch.where(keep, emb,
                              self.null_tokens[gi].expand(n, -1))
            tokens.append(emb)
        x = torch.stack(tokens, dim=1) + self.pos_encoding
        always = torch.zeros(n, 2, dtype=torch.bool, device=obs.device)
        pad = torch.cat([always, flags <= 0.0], dim=1)
        maps = []
        for layer in self.fusion:
            x, w = layer(x, pad, need_weights=need_weights)
            if need_weights:
                maps.append(w)
        return x[:, 0], proprio_feats, maps

    def _decode(self, proprio_feats: torch.Tensor, shortcut: torch.Tensor,
                z: torch.Tensor) -> torch.Tensor:
        h = torch.cat([proprio_feats, shortcut], dim=-1)
        for lin, gam, bet in zip(self.decoder_layers, self.film_gamma,
                                 self.film_beta):
            h = torch.relu(lin(h))
            h = h + self.arch.film_scale * (gam(z) * h + bet(z))
        return self.action_head(h)

    # ------------------------------------------------------------------ api
    def forward(self, obs: torch.Tensor, mask, privileged_obs=None,
                mode: str = "prior_only", sample: bool = False,
                generator: torch.Generator | None = None,
                return_attention: bool = False):
        """(action_mean, StudentLatents, aux_outputs[, attention_maps]).

        ``prior_only`` never evaluates the privileged encoder, even if
        ``privileged_obs`` is supplied.
        """
        if mode not in ("posterior", "prior_only"):
            raise ValueError(f"unknown mode {mode!r}")
        require_finite("obs", obs)
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(
                f"observation width {obs.shape[-1]} != {self.obs_dim}")
        flags = self._mask_flags(mask, obs.shape[0], obs.device)

        ctx, proprio_feats, maps = self._fuse(obs, flags,
                                              need_weights=return_attention)
        mu_p = self.prior_mean_head(ctx)
        sigma_p = nn.functional.softplus(self.prior_std_head(ctx)) \
            + self.arch.min_std

        def draw(shape):
            return torch.randn(shape, generator=generator, device=obs.device,
                               dtype=obs.dtype)

        if mode == "posterior":
            if privileged_obs is None:
                raise ValueError("posterior mode requires privileged_obs")
            require_finite("privileged_obs", privileged_obs)
            if privileged_obs.shape[-1] != self.teacher_dim:
                raise ValueError(
                    f"privileged width {privileged_obs.shape[-1]} != "
                    f"{self.teacher_dim}")
            h = self.posterior_trunk(privileged_obs)
            mu_e = self.post_mean_head(h)
            sigma_e = nn.functional.softplus(self.post_std_head(h)) \
                + self.arch.min_std
            z_prior = mu_p
            z_res = mu_e + sigma_e * draw(mu_e.shape) if sample else mu_e
            post_mean, post_std = mu_p + mu_e, sigma_e
        else:
            z_prior = mu_p + sigma_p * draw(mu_p.shape) if sample else mu_p
            z_res = torch.zeros_like(mu_p)
            post_mean = post_std = None

        z = z_prior + z_res
        latents = StudentLatents(prior_mean=mu_p, prior_std=sigma_p,
                                 post_mean=post_mean, post_std=post_std,
                                 z_res=z_res, z=z)
        local = obs[:, self._group_slices["local_goal"]]
        shortcut = local * flags[:, self._local_idx:self._local_idx + 1]
        mean = self._decode(proprio_feats, shortcut, z)
        aux = self.aux_decode(z, ctx)
        if return_attention:
            return mean, latents, aux, maps
        return mean, latents, aux

    def aux_decode(self, z: torch.Tensor, context: torch.Tensor) -> dict:
        """Reconstructions of maskable groups plus the local-goal prediction."""
        h = torch.cat([z, context], dim=-1)
        out = {"recon": {g: head(h) for g, head in self.aux_heads.items()},
               "local_goal": self.local_goal_head(h)}
        if self.latent_decoder is not None:
            out["latent_decode"] = self.latent_decoder(z)
        return out

    def value(self, obs: torch.Tensor) -> torch.Tensor:
        require_finite("obs", obs)
        return self.critic(obs).squeeze(-1)

    def action_dist(self, mean: torch.Tensor) -> torch.distributions.Normal:
        return torch.distributions.Normal(mean, torch.exp(self.log_std))
