//! Slice-level kernels shared by value tensors and the differentiation tape.
//!
//! All buffers are row-major `[rows × spec.width()]` in the layout of
//! [`IrrepsSpec`].

use super::IrrepsSpec;
use crate::Real;

/// Multiplies each `(l, channel)` segment by `blocks[l]` (row-major `(2l+1)²`).
pub fn rotate_rows<T: Real>(spec: &IrrepsSpec, blocks: &[Vec<T>], x: &[T], out: &mut [T]) {
    let width = spec.width();
    for (row_in, row_out) in x.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        for (l, _, start) in spec.channels() {
            let d = 2 * l + 1;
            let seg = &row_in[start..start + d];
            let block = &blocks[l];
            for i in 0..d {
                let mut acc = T::zero();
                for j in 0..d {
                    acc += block[i * d + j] * seg[j];
                }
                row_out[start + i] = acc;
            }
        }
    }
}

/// Rotation-invariant summary per row: type-0 values followed by the
/// smoothed norms `sqrt(‖c‖² + eps²)` of every channel with `l > 0`.
pub fn invariants<T: Real>(spec: &IrrepsSpec, x: &[T], eps: T, out: &mut [T]) {
    let width = spec.width();
    let n_out = spec.num_channels();
    let eps2 = eps * eps;
    for (row_in, row_out) in x.chunks_exact(width).zip(out.chunks_exact_mut(n_out)) {
        for (k, (l, _, start)) in spec.channels().enumerate() {
            row_out[k] = if l == 0 {
                row_in[start]
            } else {
                let s: T = row_in[start..start + 2 * l + 1].iter().map(|v| *v * *v).sum();
                (s + eps2).sqrt()
            };
        }
    }
}

/// Mixes channels within each degree: `out_l = W_l · x_l` with `W_l` of
/// shape `m_out × m_in` (row-major). Degrees present in `spec_out` but not
/// in `spec_in` produce zeros; `weights[i]` belongs to `spec_out.irreps()[i]`.
pub fn degreewise_linear<T: Real>(spec_in: &IrrepsSpec, spec_out: &IrrepsSpec, weights: &[&[T]], x: &[T], rows: usize, out: &mut [T], accumulate: bool) {
    let (w_in, w_out) = (spec_in.width(), spec_out.width());
    if !accumulate {
        out.iter_mut().for_each(|v| *v = T::zero());
    }
    for (i, &(l, m_out)) in spec_out.irreps().iter().enumerate() {
        let m_in = spec_in.multiplicity(l);
        if m_in == 0 || rows == 0 {
            continue;
        }
        let d = 2 * l + 1;
        let (off_in, off_out) = (spec_in.offset(l), spec_out.offset(l));
        let w = weights[i];
        debug_assert_eq!(w.len(), m_out * m_in);
        for m in 0..d {
            T::gemm(rows, m_in, m_out, &x[off_in + m..], w_in, d, w, 1, m_in, T::one(), &mut out[off_out + m..], w_out, d);
        }
    }
}

/// Backward of [`degreewise_linear`]: accumulates into `dx` and `dw`.
#[allow(clippy::too_many_arguments)]
pub fn degreewise_linear_backward<T: Real>(
    spec_in: &IrrepsSpec,
    spec_out: &IrrepsSpec,
    weights: &[&[T]],
    x: &[T],
    rows: usize,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    dw: &mut [Option<&mut [T]>],
) {
    let (w_in, w_out) = (spec_in.width(), spec_out.width());
    for (i, &(l, m_out)) in spec_out.irreps().iter().enumerate() {
        let m_in = spec_in.multiplicity(l);
        if m_in == 0 || rows == 0 {
            continue;
        }
        let d = 2 * l + 1;
        let (off_in, off_out) = (spec_in.offset(l), spec_out.offset(l));
        for m in 0..d {
            if let Some(dx) = dx.as_deref_mut() {
                T::gemm(rows, m_out, m_in, &dout[off_out + m..], w_out, d, weights[i], m_in, 1, T::one(), &mut dx[off_in + m..], w_in, d);
            }
            if let Some(dw) = dw[i].as_deref_mut() {
                T::gemm(m_out, rows, m_in, &dout[off_out + m..], d, w_out, &x[off_in + m..], w_in, d, T::one(), dw, m_in, 1);
            }
        }
    }
}

/// Per-row, per-degree RMS of channel norms (the layer-norm denominator
/// before `eps`), stored as `[rows × n_degrees]`.
pub fn degree_rms<T: Real>(spec: &IrrepsSpec, x: &[T], out: &mut [T]) {
    let width = spec.width();
    let nd = spec.irreps().len();
    for (row_in, row_out) in x.chunks_exact(width).zip(out.chunks_exact_mut(nd)) {
        for (k, &(l, m)) in spec.irreps().iter().enumerate() {
            let off = spec.offset(l);
            let s: T = row_in[off..off + m * (2 * l + 1)].iter().map(|v| *v * *v).sum();
            row_out[k] = (s / T::c(m as f64)).sqrt();
        }
    }
}

/// Divides every degree block by its RMS channel norm plus `eps`.
pub fn layernorm<T: Real>(spec: &IrrepsSpec, x: &[T], eps: T, out: &mut [T]) {
    let width = spec.width();
    let nd = spec.irreps().len();
    let mut rms = vec![T::zero(); nd];
    for (row_in, row_out) in x.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        degree_rms(spec, row_in, &mut rms);
        for (k, &(l, m)) in spec.irreps().iter().enumerate() {
            let off = spec.offset(l);
            let inv = T::one() / (rms[k] + eps);
            for j in off..off + m * (2 * l + 1) {
                row_out[j] = row_in[j] * inv;
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Scales each `l > 0` channel by `sigmoid(scalars[row, k])`, where `k`
/// enumerates gated channels in layout order. Type-0 channels pass through.
pub fn gate<T: Real>(spec: &IrrepsSpec, x: &[T], scalars: &[T], out: &mut [T]) {
    let width = spec.width();
    let ng = spec.num_gated();
    for ((row_in, row_out), s) in x.chunks_exact(width).zip(out.chunks_exact_mut(width)).zip(scalars.chunks_exact(ng.max(1))) {
        let mut k = 0;
        for (l, _, start) in spec.channels() {
            let d = 2 * l + 1;
            if l == 0 {
                row_out[start] = row_in[start];
            } else {
                let g = sigmoid(s[k]);
                k += 1;
                for j in start..start + d {
                    row_out[j] = row_in[j] * g;
                }
            }
        }
    }
}

/// Degree-wise channel concatenation of two row-aligned buffers.
pub fn concat_channels<T: Real>(spec_a: &IrrepsSpec, a: &[T], spec_b: &IrrepsSpec, b: &[T], rows: usize) -> Vec<T> {
    let spec = spec_a.concat(spec_b);
    let width = spec.width();
    let mut out = vec![T::zero(); rows * width];
    for r in 0..rows {
        let row_a = &a[r * spec_a.width()..(r + 1) * spec_a.width()];
        let row_b = &b[r * spec_b.width()..(r + 1) * spec_b.width()];
        let row = &mut out[r * width..(r + 1) * width];
        for &(l, _) in spec.irreps() {
            let d = 2 * l + 1;
            let (la, lb) = (spec_a.multiplicity(l) * d, spec_b.multiplicity(l) * d);
            let off = spec.offset(l);
            if la > 0 {
                let oa = spec_a.offset(l);
                row[off..off + la].copy_from_slice(&row_a[oa..oa + la]);
            }
            if lb > 0 {
                let ob = spec_b.offset(l);
                row[off + la..off + la + lb].copy_from_slice(&row_b[ob..ob + lb]);
            }
        }
    }
    out
}
