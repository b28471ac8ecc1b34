//! Equivariant building blocks over point clouds.

mod attention;
mod film;
mod geometry;
mod knn;
mod pool;

use rand::Rng;

pub use attention::{AttentionBlock, AttentionConfig, EdgeAttention};
pub use film::{ifilm_tensor, FilmKind, IFilm, IFilmConfig};
pub use geometry::{rbf_expand, EdgeGeometry};
pub use knn::{farthest_point_sampling, knn, KnnGraph};
pub use pool::{smaxpool, smaxpool_map, smaxpool_tensor, sup, sup_tensor, sup_weights};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::tensor::IrrepsSpec;
use crate::{Real, Result};

/// Guard inside the smoothed channel norms fed to edge networks.
pub const INVARIANT_EPS: f64 = 1e-6;

/// Dense layer `x·W + b` with `W` stored as `{prefix}.w` (`in × out`).
pub fn dense<T: Real>(tape: &mut Tape<T>, params: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(params, &format!("{prefix}.w"))?;
    let b = tape.param(params, &format!("{prefix}.b"))?;
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Registers a dense layer with weights uniform in `±gain·√(3/fan_in)`.
pub fn init_dense<R: Rng + ?Sized>(params: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, gain: f64, bias: &[f64], rng: &mut R) -> Result<()> {
    params.insert_uniform(format!("{prefix}.w"), fan_in, fan_out, gain * (3.0 / fan_in as f64).sqrt(), rng)?;
    let b = if bias.is_empty() { vec![0.0; fan_out] } else { bias.to_vec() };
    params.insert(format!("{prefix}.b"), 1, fan_out, b)
}

/// Registers one `m_out × m_in` block per output degree, `{prefix}.l{l}`.
pub fn init_degreewise<R: Rng + ?Sized>(params: &mut ParamStore, prefix: &str, spec_in: &IrrepsSpec, spec_out: &IrrepsSpec, gain: f64, rng: &mut R) -> Result<()> {
    for &(l, m_out) in spec_out.irreps() {
        let m_in = spec_in.multiplicity(l);
        if m_in > 0 {
            params.insert_uniform(format!("{prefix}.l{l}"), m_out, m_in, gain * (3.0 / m_in as f64).sqrt(), rng)?;
        }
    }
    Ok(())
}

/// Degree-wise linear map with weights registered by [`init_degreewise`].
pub fn degreewise<T: Real>(tape: &mut Tape<T>, params: &ParamStore, prefix: &str, spec_in: &IrrepsSpec, spec_out: &IrrepsSpec, x: Var) -> Result<Var> {
    let mut ws = Vec::with_capacity(spec_out.irreps().len());
    for &(l, m_out) in spec_out.irreps() {
        if spec_in.multiplicity(l) > 0 {
            ws.push(tape.param(params, &format!("{prefix}.l{l}"))?);
        } else {
            ws.push(tape.constant(m_out, 0, Vec::new())?);
        }
    }
    tape.degreewise_linear(spec_in, spec_out, x, &ws)
}

/// SiLU applied to the type-0 block only; higher degrees pass unchanged.
pub fn scalar_silu<T: Real>(tape: &mut Tape<T>, spec: &IrrepsSpec, x: Var) -> Result<Var> {
    let n0 = spec.num_scalars();
    let w = spec.width();
    if n0 == 0 {
        return Ok(x);
    }
    let s = tape.slice_cols(x, 0, n0)?;
    let s = tape.silu(s);
    if w == n0 {
        return Ok(s);
    }
    let rest = tape.slice_cols(x, n0, w - n0)?;
    tape.concat_cols(&[s, rest])
}

/// Degree-wise channel concatenation `a ⊕ b` on the tape.
pub fn channel_concat<T: Real>(tape: &mut Tape<T>, spec_a: &IrrepsSpec, a: Var, spec_b: &IrrepsSpec, b: Var) -> Result<(IrrepsSpec, Var)> {
    let rows = tape.shape(a).0;
    crate::error::contract!(tape.shape(a) == (rows, spec_a.width()) && tape.shape(b) == (rows, spec_b.width()), "channel concat: shapes {:?} and {:?} do not match {spec_a} and {spec_b}", tape.shape(a), tape.shape(b));
    let spec = spec_a.concat(spec_b);
    let (wa, wb) = (spec_a.width(), spec_b.width());
    let mut map = Vec::with_capacity(rows * spec.width());
    for r in 0..rows {
        let base = r * (wa + wb);
        for &(l, _) in spec.irreps() {
            let d = 2 * l + 1;
            let (oa, ob) = (spec_a.offset(l), spec_b.offset(l));
            map.extend((0..spec_a.multiplicity(l) * d).map(|j| base + oa + j));
            map.extend((0..spec_b.multiplicity(l) * d).map(|j| base + wa + ob + j));
        }
    }
    let joined = tape.concat_cols(&[a, b])?;
    let width = spec.width();
    let out = tape.route(joined, std::sync::Arc::new(map), rows, width)?;
    Ok((spec, out))
}
