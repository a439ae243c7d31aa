"""Design-conditioned multi-task sequence model.

Three variants share one causal TCN backbone and the same per-time-step
prediction heads:

  film_crossattn  config encoder -> TCN -> feature-wise modulation ->
                  single-token cross attention -> fusion -> heads
  concat_config   design vector tiled onto every operational row (input
                  width 8 + 24), then TCN -> heads
  no_config       operational inputs only, TCN -> heads

The VFM head predicts the three phase components in normalized space; the
total rate is never predicted. After denormalization it is derived as
w_oil + w_wat + w_gas + w_gl, so the mass balance residual is identically
zero for any weights and any inputs.

The modulation layer starts as the exact identity (unit scale, zero shift
from a zeroed projection), and the TCN is strictly causal: step t of the
output is bit-identical under any perturbation of inputs at steps > t.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..datamodel import (
    NormStats,
    WellDesign,
    normalize_ops,
    qgl_to_kg_per_s,
    to_design_vector,
)
from ..errors import ConfigurationError
from . import layers as L

VARIANTS = ("no_config", "concat_config", "film_crossattn")

DESIGN_DIM = 24
OPS_DIM = 8


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. Defaults are desk scale; the full-scale
    configuration uses embed_dim=256 and head_hidden=128."""

    embed_dim: int = 64
    n_tcn_blocks: int = 4
    kernel_size: int = 3
    n_heads: int = 4
    config_dropout: float = 0.1
    tcn_dropout: float = 0.3
    attn_dropout: float = 0.1
    head_hidden: int = 32
    variant: str = "film_crossattn"
    use_physics: bool = True
    use_regime: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.embed_dim % self.n_heads != 0:
            raise ConfigurationError("embed_dim must be divisible by n_heads")
        if self.kernel_size < 1 or self.n_tcn_blocks < 1:
            raise ConfigurationError("kernel_size and n_tcn_blocks must be >= 1")
        for name in ("config_dropout", "tcn_dropout", "attn_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def conv_dilations(cfg: ModelConfig) -> list[tuple[int, int]]:
    """Per-block dilations (2^i for the first convolution, 2^(i+1) for the
    second). The resulting causal span is 1 + (k-1) * sum of all dilations;
    for the default 4 blocks with kernel 3 that is 91 steps."""
    return [(2**i, 2 ** (i + 1)) for i in range(cfg.n_tcn_blocks)]


def receptive_field(cfg: ModelConfig) -> int:
    span = 1
    for d1, d2 in conv_dilations(cfg):
        span += (cfg.kernel_size - 1) * (d1 + d2)
    return span


@dataclass
class PredictionSequence:
    """Model outputs for one well, normalized and denormalized views.

    w_tot is a derived property, never a stored prediction: it is the exact
    floating-point sum w_oil + w_wat + w_gas + w_gl, evaluated left to right,
    so recomputing that expression always reproduces it bit for bit.
    """

    comp_norm: np.ndarray  # [T, 3] normalized (oil, water, gas)
    pres_norm: np.ndarray  # [T, 2] normalized (pbh, tbh)
    logits_bh: np.ndarray | None  # [T, 3]
    logits_wh: np.ndarray | None
    w_oil: np.ndarray  # kg/s
    w_wat: np.ndarray
    w_gas: np.ndarray
    p_bh: np.ndarray  # bar
    t_bh: np.ndarray  # K
    w_gl: np.ndarray  # kg/s, known gas lift input

    @property
    def w_tot(self) -> np.ndarray:
        return self.w_oil + self.w_wat + self.w_gas + self.w_gl

    def require_regime(self) -> tuple[np.ndarray, np.ndarray]:
        if self.logits_bh is None or self.logits_wh is None:
            raise ConfigurationError("regime outputs requested from a model built with use_regime=False")
        return self.logits_bh, self.logits_wh


class WellModel:
    """A variant of the design-conditioned predictor with explicit backprop."""

    def __init__(self, config: ModelConfig, stats: NormStats):
        if stats is None:
            raise ConfigurationError("model requires fitted normalization stats")
        self.config = config
        self.stats = stats
        self.params = self._init_params(np.random.default_rng(config.seed))

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------

    def _init_params(self, rng) -> dict[str, np.ndarray]:
        cfg = self.config
        d, hh, k = cfg.embed_dim, cfg.head_hidden, cfg.kernel_size
        p: dict[str, np.ndarray] = {}

        def lin(name, fan_in, fan_out):
            s = 1.0 / np.sqrt(fan_in)
            p[f"{name}.w"] = rng.uniform(-s, s, size=(fan_in, fan_out))
            p[f"{name}.b"] = np.zeros(fan_out)

        def conv(name, fan_in, fan_out):
            s = 1.0 / np.sqrt(k * fan_in)
            p[f"{name}.w"] = rng.uniform(-s, s, size=(k, fan_in, fan_out))
            p[f"{name}.b"] = np.zeros(fan_out)

        def ln(name, dim):
            p[f"{name}.g"] = np.ones(dim)
            p[f"{name}.b"] = np.zeros(dim)

        if cfg.variant == "film_crossattn":
            lin("cfg.fc1", DESIGN_DIM, d)
            ln("cfg.ln1", d)
            lin("cfg.fc2", d, d)
            ln("cfg.ln2", d)

        in_dim = {"no_config": OPS_DIM,
                  "concat_config": OPS_DIM + DESIGN_DIM,
                  "film_crossattn": OPS_DIM}[cfg.variant]
        lin("tcn.in", in_dim, d)
        ln("tcn.in_ln", d)
        for i in range(cfg.n_tcn_blocks):
            conv(f"tcn.b{i}.c1", d, d)
            ln(f"tcn.b{i}.ln1", d)
            conv(f"tcn.b{i}.c2", d, d)
            ln(f"tcn.b{i}.ln2", d)

        if cfg.variant == "film_crossattn":
            # Identity at initialization: unit scale, zero shift.
            p["film.wg"] = np.zeros((d, d))
            p["film.bg"] = np.ones(d)
            p["film.wb"] = np.zeros((d, d))
            p["film.bb"] = np.zeros(d)
            # Query/key projections never influence a single-token softmax
            # (weights are identically 1); they are kept for parity with the
            # stated multi-head structure and receive zero gradient.
            lin("attn.q", d, d)
            lin("attn.k", d, d)
            lin("attn.v", d, d)
            lin("attn.out", d, d)
            ln("attn.ln", d)
            lin("fuse", d, d)
            ln("fuse.ln", d)

        lin("head.vfm.1", d, hh)
        lin("head.vfm.2", hh, 3)
        lin("head.pres.1", d, hh)
        lin("head.pres.2", hh, 2)
        if cfg.use_regime:
            lin("head.regbh.1", d, hh)
            lin("head.regbh.2", hh, 3)
            lin("head.regwh.1", d, hh)
            lin("head.regwh.2", hh, 3)
        return p

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    # ------------------------------------------------------------------
    # Forward / backward
    # ------------------------------------------------------------------

    def _mlp_head(self, name, h, caches):
        p = self.params
        a, c1 = L.linear_fwd(h, p[f"{name}.1.w"], p[f"{name}.1.b"])
        g, cg = L.gelu_fwd(a)
        y, c2 = L.linear_fwd(g, p[f"{name}.2.w"], p[f"{name}.2.b"])
        caches[name] = (c1, cg, c2)
        return y

    def _mlp_head_bwd(self, name, dy, caches, grads):
        p = self.params
        c1, cg, c2 = caches[name]
        dg, grads[f"{name}.2.w"], grads[f"{name}.2.b"] = L.linear_bwd(dy, c2, p[f"{name}.2.w"])
        da = L.gelu_bwd(dg, cg)
        dh, grads[f"{name}.1.w"], grads[f"{name}.1.b"] = L.linear_bwd(da, c1, p[f"{name}.1.w"])
        return dh

    def forward_core(self, c_vec, ops_norm, train=False, rng=None, skip_film=False):
        """Run the network on one well.

        c_vec: design 24-vector (ignored by no_config), ops_norm: [T, 8]
        normalized operational rows. skip_film bypasses the modulation stage
        (testing hook for the identity-at-initialization property). Returns
        (outputs, caches); outputs holds normalized head values.
        """
        cfg = self.config
        p = self.params
        if train and rng is None:
            raise ConfigurationError("training-mode forward requires an rng for dropout")
        ops_norm = np.asarray(ops_norm, dtype=float)
        if ops_norm.ndim != 2 or ops_norm.shape[1] != OPS_DIM:
            raise ConfigurationError(f"ops input must be [T, {OPS_DIM}], got {ops_norm.shape}")
        caches: dict = {"skip_film": skip_film}

        z = None
        if cfg.variant == "film_crossattn":
            c_row = np.asarray(c_vec, dtype=float).reshape(1, -1)
            if c_row.shape[1] != DESIGN_DIM:
                raise ConfigurationError(f"design vector must have length {DESIGN_DIM}")
            a, c1 = L.linear_fwd(c_row, p["cfg.fc1.w"], p["cfg.fc1.b"])
            n1, cn1 = L.layernorm_fwd(a, p["cfg.ln1.g"], p["cfg.ln1.b"])
            g1, cg1 = L.gelu_fwd(n1)
            d1, cd1 = L.dropout_fwd(g1, cfg.config_dropout, rng, train)
            a2, c2 = L.linear_fwd(d1, p["cfg.fc2.w"], p["cfg.fc2.b"])
            n2, cn2 = L.layernorm_fwd(a2, p["cfg.ln2.g"], p["cfg.ln2.b"])
            g2, cg2 = L.gelu_fwd(n2)
            z, cd2 = L.dropout_fwd(g2, cfg.config_dropout, rng, train)
            caches["cfg"] = (c1, cn1, cg1, cd1, c2, cn2, cg2, cd2)

        if cfg.variant == "concat_config":
            c_row = np.asarray(c_vec, dtype=float).reshape(1, -1)
            if c_row.shape[1] != DESIGN_DIM:
                raise ConfigurationError(f"design vector must have length {DESIGN_DIM}")
            x = np.concatenate([ops_norm, np.broadcast_to(c_row, (ops_norm.shape[0], DESIGN_DIM))], axis=1)
        else:
            x = ops_norm

        a, cin = L.linear_fwd(x, p["tcn.in.w"], p["tcn.in.b"])
        n, cin_ln = L.layernorm_fwd(a, p["tcn.in_ln.g"], p["tcn.in_ln.b"])
        h, cin_g = L.gelu_fwd(n)
        caches["tcn.in"] = (cin, cin_ln, cin_g)

        block_caches = []
        for i, (dil1, dil2) in enumerate(conv_dilations(cfg)):
            u, cc1 = L.causal_conv_fwd(h, p[f"tcn.b{i}.c1.w"], p[f"tcn.b{i}.c1.b"], dil1)
            u, cl1 = L.layernorm_fwd(u, p[f"tcn.b{i}.ln1.g"], p[f"tcn.b{i}.ln1.b"])
            u, cg1_ = L.gelu_fwd(u)
            u, cd1_ = L.dropout_fwd(u, cfg.tcn_dropout, rng, train)
            u, cc2 = L.causal_conv_fwd(u, p[f"tcn.b{i}.c2.w"], p[f"tcn.b{i}.c2.b"], dil2)
            u, cl2 = L.layernorm_fwd(u, p[f"tcn.b{i}.ln2.g"], p[f"tcn.b{i}.ln2.b"])
            u, cg2_ = L.gelu_fwd(u)
            u, cd2_ = L.dropout_fwd(u, cfg.tcn_dropout, rng, train)
            h = h + u  # residual
            block_caches.append((cc1, cl1, cg1_, cd1_, cc2, cl2, cg2_, cd2_))
        caches["tcn.blocks"] = block_caches

        if cfg.variant == "film_crossattn":
            gamma, cfg_g = L.linear_fwd(z, p["film.wg"], p["film.bg"])
            beta, cfg_b = L.linear_fwd(z, p["film.wb"], p["film.bb"])
            h_film = h if skip_film else gamma * h + beta
            caches["film"] = (cfg_g, cfg_b, gamma, h)

            v_tok, cav = L.linear_fwd(z, p["attn.v.w"], p["attn.v.b"])
            att, catt = L.single_token_attention_fwd(h_film, v_tok, p["attn.out.w"], p["attn.out.b"])
            att_d, cad = L.dropout_fwd(att, cfg.attn_dropout, rng, train)
            h2 = h_film + att_d
            h3, caln = L.layernorm_fwd(h2, p["attn.ln.g"], p["attn.ln.b"])
            caches["attn"] = (cav, catt, cad, caln)

            fu, cfu = L.linear_fwd(h3, p["fuse.w"], p["fuse.b"])
            fn, cfl = L.layernorm_fwd(fu, p["fuse.ln.g"], p["fuse.ln.b"])
            h, cfg_fg = L.gelu_fwd(fn)
            caches["fuse"] = (cfu, cfl, cfg_fg)

        outputs = {
            "comp": self._mlp_head("head.vfm", h, caches),
            "pres": self._mlp_head("head.pres", h, caches),
            "logits_bh": self._mlp_head("head.regbh", h, caches) if cfg.use_regime else None,
            "logits_wh": self._mlp_head("head.regwh", h, caches) if cfg.use_regime else None,
        }
        return outputs, caches

    def backward(self, caches, d_outputs) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss wrt all parameters, given gradients wrt
        the normalized head outputs (missing/None entries contribute zero)."""
        cfg = self.config
        p = self.params
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}

        dh = self._mlp_head_bwd("head.vfm", d_outputs["comp"], caches, grads)
        dh = dh + self._mlp_head_bwd("head.pres", d_outputs["pres"], caches, grads)
        if cfg.use_regime:
            if d_outputs.get("logits_bh") is not None:
                dh = dh + self._mlp_head_bwd("head.regbh", d_outputs["logits_bh"], caches, grads)
            if d_outputs.get("logits_wh") is not None:
                dh = dh + self._mlp_head_bwd("head.regwh", d_outputs["logits_wh"], caches, grads)

        dz = None
        if cfg.variant == "film_crossattn":
            cfu, cfl, cfg_fg = caches["fuse"]
            dfn = L.gelu_bwd(dh, cfg_fg)
            dfu, grads["fuse.ln.g"], grads["fuse.ln.b"] = L.layernorm_bwd(dfn, cfl)
            dh3, grads["fuse.w"], grads["fuse.b"] = L.linear_bwd(dfu, cfu, p["fuse.w"])

            cav, catt, cad, caln = caches["attn"]
            dh2, grads["attn.ln.g"], grads["attn.ln.b"] = L.layernorm_bwd(dh3, caln)
            datt = L.dropout_bwd(dh2, cad)
            dv_tok, grads["attn.out.w"], grads["attn.out.b"] = L.single_token_attention_bwd(
                datt, catt, p["attn.out.w"])
            dz_att, grads["attn.v.w"], grads["attn.v.b"] = L.linear_bwd(dv_tok, cav, p["attn.v.w"])
            dh_film = dh2  # residual branch

            cfg_g, cfg_b, gamma, h_pre = caches["film"]
            if caches["skip_film"]:
                dh = dh_film
                dz_film = np.zeros_like(dz_att)
            else:
                dgamma = (dh_film * h_pre).sum(axis=0, keepdims=True)
                dbeta = dh_film.sum(axis=0, keepdims=True)
                dh = dh_film * gamma
                dzg, grads["film.wg"], grads["film.bg"] = L.linear_bwd(dgamma, cfg_g, p["film.wg"])
                dzb, grads["film.wb"], grads["film.bb"] = L.linear_bwd(dbeta, cfg_b, p["film.wb"])
                dz_film = dzg + dzb
            dz = dz_att + dz_film

        for i in reversed(range(cfg.n_tcn_blocks)):
            cc1, cl1, cg1_, cd1_, cc2, cl2, cg2_, cd2_ = caches["tcn.blocks"][i]
            du = dh  # residual: gradient flows to both the block and its input
            du = L.dropout_bwd(du, cd2_)
            du = L.gelu_bwd(du, cg2_)
            du, grads[f"tcn.b{i}.ln2.g"], grads[f"tcn.b{i}.ln2.b"] = L.layernorm_bwd(du, cl2)
            du, grads[f"tcn.b{i}.c2.w"], grads[f"tcn.b{i}.c2.b"] = L.causal_conv_bwd(
                du, cc2, p[f"tcn.b{i}.c2.w"])
            du = L.dropout_bwd(du, cd1_)
            du = L.gelu_bwd(du, cg1_)
            du, grads[f"tcn.b{i}.ln1.g"], grads[f"tcn.b{i}.ln1.b"] = L.layernorm_bwd(du, cl1)
            du, grads[f"tcn.b{i}.c1.w"], grads[f"tcn.b{i}.c1.b"] = L.causal_conv_bwd(
                du, cc1, p[f"tcn.b{i}.c1.w"])
            dh = dh + du

        cin, cin_ln, cin_g = caches["tcn.in"]
        dn = L.gelu_bwd(dh, cin_g)
        da, grads["tcn.in_ln.g"], grads["tcn.in_ln.b"] = L.layernorm_bwd(dn, cin_ln)
        _, grads["tcn.in.w"], grads["tcn.in.b"] = L.linear_bwd(da, cin, p["tcn.in.w"])

        if cfg.variant == "film_crossattn":
            c1, cn1, cg1, cd1, c2, cn2, cg2, cd2 = caches["cfg"]
            dg2 = L.dropout_bwd(dz, cd2)
            dn2 = L.gelu_bwd(dg2, cg2)
            da2, grads["cfg.ln2.g"], grads["cfg.ln2.b"] = L.layernorm_bwd(dn2, cn2)
            dd1, grads["cfg.fc2.w"], grads["cfg.fc2.b"] = L.linear_bwd(da2, c2, p["cfg.fc2.w"])
            dg1 = L.dropout_bwd(dd1, cd1)
            dn1 = L.gelu_bwd(dg1, cg1)
            da1, grads["cfg.ln1.g"], grads["cfg.ln1.b"] = L.layernorm_bwd(dn1, cn1)
            _, grads["cfg.fc1.w"], grads["cfg.fc1.b"] = L.linear_bwd(da1, c1, p["cfg.fc1.w"])

        return grads

    # ------------------------------------------------------------------
    # Inference
    # ------------------------------------------------------------------

    def design_vector(self, design: WellDesign) -> np.ndarray:
        return to_design_vector(design, self.stats)

    def predict(self, design: WellDesign, ops: np.ndarray) -> PredictionSequence:
        """Evaluation-mode prediction from raw (unnormalized) operational rows."""
        ops = np.asarray(ops, dtype=float)
        c_vec = self.design_vector(design) if self.config.variant != "no_config" else np.zeros(DESIGN_DIM)
        outputs, _ = self.forward_core(c_vec, normalize_ops(ops, self.stats), train=False)
        return self.to_prediction(outputs, ops, design)

    def to_prediction(self, outputs, ops, design: WellDesign) -> PredictionSequence:
        """Assemble a PredictionSequence: denormalize and attach gas lift."""
        st = self.stats
        comp = outputs["comp"] * st.target_std[:3] + st.target_mean[:3]
        pbh = outputs["pres"][:, 0] * st.target_std[3] + st.target_mean[3]
        tbh = outputs["pres"][:, 1] * st.target_std[4] + st.target_mean[4]
        w_gl = qgl_to_kg_per_s(ops[:, 1], design.gas_constant)
        return PredictionSequence(
            comp_norm=outputs["comp"],
            pres_norm=outputs["pres"],
            logits_bh=outputs["logits_bh"],
            logits_wh=outputs["logits_wh"],
            w_oil=comp[:, 0],
            w_wat=comp[:, 1],
            w_gas=comp[:, 2],
            p_bh=pbh,
            t_bh=tbh,
            w_gl=w_gl,
        )
