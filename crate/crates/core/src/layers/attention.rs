use rand::Rng;

use super::{degreewise, dense, init_degreewise, init_dense, scalar_silu, EdgeGeometry, IFilm, INVARIANT_EPS};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::contract;
use crate::tensor::{IrrepsSpec, LAYERNORM_EPS};
use crate::{Real, Result};

#[derive(Clone, Debug)]
pub struct AttentionConfig {
    pub spec_in: IrrepsSpec,
    pub spec_out: IrrepsSpec,
    /// Width of the edge network.
    pub hidden: usize,
    pub n_rbf: usize,
    /// Destinations carry features of `spec_in` (self-attention).
    pub use_dst: bool,
    /// Non-equivariant variant for ablations: the edge network reads raw
    /// displacements and messages mix all coefficients with one dense map.
    pub raw_positions: bool,
}

/// Invariant-weighted message passing from sources to destinations.
///
/// Per edge `e = (src → dst)` with direction `u_e`, an edge network over
/// invariants yields an attention logit, per-channel scales `s_e` and
/// harmonic weights `λ_e`. The message is `s_e ⊙ W·x_src + λ_e ⊙ Y(u_e)`
/// and messages are combined with the softmax-normalised logits.
pub struct EdgeAttention {
    pub cfg: AttentionConfig,
    pub prefix: String,
}

impl EdgeAttention {
    pub fn new(cfg: AttentionConfig, prefix: impl Into<String>) -> Self {
        Self { cfg, prefix: prefix.into() }
    }

    pub fn edge_features(&self) -> usize {
        let nch = self.cfg.spec_in.num_channels();
        self.cfg.n_rbf + 2 * nch + if self.cfg.use_dst { 2 * nch } else { 0 } + if self.cfg.raw_positions { 3 } else { 0 }
    }

    fn out_cols(&self) -> usize {
        1 + 2 * self.cfg.spec_out.num_channels()
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamStore, rng: &mut R) -> Result<()> {
        let p = &self.prefix;
        let nch = self.cfg.spec_out.num_channels();
        if self.cfg.raw_positions {
            init_dense(params, &format!("{p}.msg"), self.cfg.spec_in.width(), self.cfg.spec_out.width(), 1.0, &[], rng)?;
        } else {
            init_degreewise(params, &format!("{p}.msg"), &self.cfg.spec_in, &self.cfg.spec_out, 1.0, rng)?;
        }
        init_dense(params, &format!("{p}.e1"), self.edge_features(), self.cfg.hidden, 1.0, &[], rng)?;
        let mut bias = vec![0.0; self.out_cols()];
        bias[1..1 + nch].iter_mut().for_each(|b| *b = 1.0);
        init_dense(params, &format!("{p}.e2"), self.cfg.hidden, self.out_cols(), 0.5, &bias, rng)
    }

    /// Aggregated messages `[n_dst × spec_out.width()]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &ParamStore, x: Var, x_dst: Option<Var>, geo: &EdgeGeometry<T>) -> Result<Var> {
        let cfg = &self.cfg;
        let p = &self.prefix;
        contract!(tape.shape(x) == (geo.n_src, cfg.spec_in.width()), "attention: source features {:?} do not match {} sources of {}", tape.shape(x), geo.n_src, cfg.spec_in);
        contract!(cfg.use_dst == x_dst.is_some(), "attention: destination features {} but block expects {}", if x_dst.is_some() { "given" } else { "missing" }, cfg.use_dst);
        contract!(geo.lmax >= cfg.spec_in.lmax().max(cfg.spec_out.lmax()), "attention: edge harmonics stop at degree {}", geo.lmax);
        let e = geo.num_edges();
        let nch_out = cfg.spec_out.num_channels();

        let inv = tape.invariants(&cfg.spec_in, x, INVARIANT_EPS)?;
        let xs = tape.gather_rows(x, geo.src.clone())?;
        let mut parts = vec![tape.constant(e, geo.n_rbf, geo.rbf.clone())?];
        parts.push(tape.gather_rows(inv, geo.src.clone())?);
        parts.push(tape.sh_project(&cfg.spec_in, xs, geo.sh.clone())?);
        if let Some(xd) = x_dst {
            contract!(tape.shape(xd) == (geo.n_dst, cfg.spec_in.width()), "attention: destination features {:?} do not match {} destinations", tape.shape(xd), geo.n_dst);
            let inv_d = tape.invariants(&cfg.spec_in, xd, INVARIANT_EPS)?;
            parts.push(tape.gather_rows(inv_d, geo.dst.clone())?);
            let xd_e = tape.gather_rows(xd, geo.dst.clone())?;
            parts.push(tape.sh_project(&cfg.spec_in, xd_e, geo.sh.clone())?);
        }
        if cfg.raw_positions {
            let inv_r = T::c(1.0 / geo.r_cut);
            parts.push(tape.constant(e, 3, geo.disp.iter().map(|d| *d * inv_r).collect())?);
        }
        let feats = tape.concat_cols(&parts)?;
        let h = dense(tape, params, &format!("{p}.e1"), feats)?;
        let h = tape.silu(h);
        let o = dense(tape, params, &format!("{p}.e2"), h)?;
        let logit = tape.slice_cols(o, 0, 1)?;
        let scales = tape.slice_cols(o, 1, nch_out)?;
        let lam = tape.slice_cols(o, 1 + nch_out, nch_out)?;
        let att = tape.segment_softmax(logit, geo.dst.clone(), geo.n_dst)?;

        let lin = if cfg.raw_positions { dense(tape, params, &format!("{p}.msg"), x)? } else { degreewise(tape, params, &format!("{p}.msg"), &cfg.spec_in, &cfg.spec_out, x)? };
        let lin_e = tape.gather_rows(lin, geo.src.clone())?;
        let carried = tape.channel_scale(&cfg.spec_out, lin_e, scales)?;
        let emitted = tape.sh_edge(&cfg.spec_out, lam, geo.sh.clone())?;
        let msg = tape.add(carried, emitted)?;
        let weighted = tape.mul_col(msg, att)?;
        tape.scatter_add_rows(weighted, geo.dst.clone(), geo.n_dst)
    }
}

/// Self-attention block: attention, layer norm, gating, residual, a gated
/// feed-forward and an optional iFiLM stage.
pub struct AttentionBlock {
    pub attn: EdgeAttention,
    pub film: Option<IFilm>,
    pub prefix: String,
}

impl AttentionBlock {
    pub fn new(cfg: AttentionConfig, film: Option<IFilm>, prefix: impl Into<String>) -> Self {
        let prefix = prefix.into();
        let cfg = AttentionConfig { use_dst: true, ..cfg };
        Self { attn: EdgeAttention::new(cfg, format!("{prefix}.att")), film, prefix }
    }

    fn spec_out(&self) -> &IrrepsSpec {
        &self.attn.cfg.spec_out
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamStore, rng: &mut R) -> Result<()> {
        let p = &self.prefix;
        let (spec_in, spec_out) = (&self.attn.cfg.spec_in, self.spec_out());
        let (n0, ng) = (spec_out.num_scalars(), spec_out.num_gated());
        self.attn.init(params, rng)?;
        init_degreewise(params, &format!("{p}.res"), spec_in, spec_out, 1.0, rng)?;
        init_degreewise(params, &format!("{p}.ffn1"), spec_out, spec_out, 1.0, rng)?;
        init_degreewise(params, &format!("{p}.ffn2"), spec_out, spec_out, 0.5, rng)?;
        if ng > 0 {
            init_dense(params, &format!("{p}.gate"), n0, ng, 1.0, &[], rng)?;
            init_dense(params, &format!("{p}.ffng"), n0, ng, 1.0, &[], rng)?;
        }
        if let Some(f) = &self.film {
            f.init(params, rng)?;
        }
        Ok(())
    }

    fn gated<T: Real>(&self, tape: &mut Tape<T>, params: &ParamStore, name: &str, x: Var) -> Result<Var> {
        let spec = self.spec_out();
        if spec.num_gated() == 0 {
            return Ok(x);
        }
        let s = tape.slice_cols(x, 0, spec.num_scalars())?;
        let g = dense(tape, params, &format!("{}.{name}", self.prefix), s)?;
        tape.gate(spec, x, g)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &ParamStore, x: Var, geo: &EdgeGeometry<T>, cond: Option<Var>) -> Result<Var> {
        let p = &self.prefix;
        let spec_out = self.spec_out().clone();
        contract!(geo.n_src == geo.n_dst, "attention block needs a self graph");
        let agg = self.attn.forward(tape, params, x, Some(x), geo)?;
        let ln = tape.layernorm(&spec_out, agg, LAYERNORM_EPS)?;
        let upd = self.gated(tape, params, "gate", ln)?;
        let res = degreewise(tape, params, &format!("{p}.res"), &self.attn.cfg.spec_in, &spec_out, x)?;
        let y = tape.add(res, upd)?;

        let f = tape.layernorm(&spec_out, y, LAYERNORM_EPS)?;
        let f = degreewise(tape, params, &format!("{p}.ffn1"), &spec_out, &spec_out, f)?;
        let f = self.gated(tape, params, "ffng", f)?;
        let f = scalar_silu(tape, &spec_out, f)?;
        let f = degreewise(tape, params, &format!("{p}.ffn2"), &spec_out, &spec_out, f)?;
        let y = tape.add(y, f)?;

        match (&self.film, cond) {
            (Some(film), Some(c)) => film.forward(tape, params, y, c),
            (Some(_), None) => Err(crate::Error::Contract(format!("{p}: iFiLM stage needs a condition"))),
            _ => Ok(y),
        }
    }
}
