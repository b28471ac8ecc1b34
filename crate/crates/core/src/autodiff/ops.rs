use std::sync::Arc;

use super::{Op, Tape, Var};
use crate::error::contract;
use crate::so3::num_coeffs;
use crate::tensor::{kernels, IrrepsSpec};
use crate::{Real, Result};

/// Fixed-fan-in weighted row mixing: output row `q` is
/// `Σ_j w[q·k + j] · x[idx[q·k + j]]`.
#[derive(Clone, Debug)]
pub struct SparseMix<T> {
    pub k: usize,
    pub idx: Vec<usize>,
    pub w: Vec<T>,
}

impl<T: Real> SparseMix<T> {
    pub fn rows(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.idx.len() / self.k
        }
    }
}

impl<T: Real> Tape<T> {
    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        contract!(sa == sb, "{what}: shapes {sa:?} and {sb:?} differ");
        Ok(sa)
    }

    fn spec_width(&self, spec: &IrrepsSpec, x: Var, what: &str) -> Result<usize> {
        let (rows, cols) = self.shape(x);
        contract!(cols == spec.width(), "{what}: input has {cols} columns, spec {spec} needs {}", spec.width());
        Ok(rows)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((n, k), (k2, m)) = (self.shape(a), self.shape(b));
        contract!(k == k2, "matmul: inner dimensions {k} and {k2} differ");
        let mut out = vec![T::zero(); n * m];
        T::gemm(n, k, m, self.value(a), k, 1, self.value(b), m, 1, T::zero(), &mut out, m, 1);
        Ok(self.push(n, m, out, Op::MatMul(a, b)))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, what)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        Ok(self.push(r, c, out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + b` with `b` a single row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((r, c), sb) = (self.shape(a), self.shape(b));
        contract!(sb == (1, c), "add_row: bias shape {sb:?}, expected (1, {c})");
        let bv = self.value(b);
        let out = self.value(a).chunks_exact(c.max(1)).flat_map(|row| row.iter().zip(bv).map(|(x, y)| *x + *y)).collect();
        Ok(self.push(r, c, out, Op::AddRow(a, b)))
    }

    /// `a ⊙ b` with `b` a single row broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((r, c), sb) = (self.shape(a), self.shape(b));
        contract!(sb == (1, c), "mul_row: shape {sb:?}, expected (1, {c})");
        let bv = self.value(b);
        let out = self.value(a).chunks_exact(c.max(1)).flat_map(|row| row.iter().zip(bv).map(|(x, y)| *x * *y)).collect();
        Ok(self.push(r, c, out, Op::MulRow(a, b)))
    }

    /// Scales every row of `a` by the matching entry of the column `s`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let ((r, c), ss) = (self.shape(a), self.shape(s));
        contract!(ss == (r, 1), "mul_col: shape {ss:?}, expected ({r}, 1)");
        let sv = self.value(s);
        let out = self.value(a).chunks_exact(c.max(1)).zip(sv).flat_map(|(row, w)| row.iter().map(move |x| *x * *w)).collect();
        Ok(self.push(r, c, out, Op::MulCol(a, s)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (r, cols) = self.shape(a);
        let k = T::c(c);
        let out = self.value(a).iter().map(|x| *x * k).collect();
        self.push(r, cols, out, Op::Scale(a, k))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| *x * kernels::sigmoid(*x)).collect();
        self.push(r, c, out, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| kernels::sigmoid(*x)).collect();
        self.push(r, c, out, Op::Sigmoid(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(1, 1, vec![s], Op::SumAll(a))
    }

    /// Horizontal concatenation of row-aligned inputs.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        contract!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            contract!(self.shape(p).0 == rows, "concat_cols: row counts differ");
            cols += self.shape(p).1;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(rows, cols, out, Op::Concat(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        contract!(start + len <= c, "slice_cols: {start}+{len} exceeds {c} columns");
        let v = self.value(a);
        let out = (0..r).flat_map(|i| v[i * c + start..i * c + start + len].iter().copied()).collect();
        Ok(self.push(r, len, out, Op::Slice(a, start)))
    }

    /// Rows of `a` selected by `idx`, repeats allowed.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let (r, c) = self.shape(a);
        contract!(idx.iter().all(|&i| i < r), "gather_rows: index out of range for {r} rows");
        let v = self.value(a);
        let out = idx.iter().flat_map(|&i| v[i * c..(i + 1) * c].iter().copied()).collect();
        Ok(self.push(idx.len(), c, out, Op::Gather(a, idx)))
    }

    /// Sums row `e` of `a` into output row `idx[e]`; output has `rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<Vec<usize>>, rows: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        contract!(idx.len() == r, "scatter_add_rows: {} indices for {r} rows", idx.len());
        contract!(idx.iter().all(|&i| i < rows), "scatter_add_rows: index out of range");
        let mut out = vec![T::zero(); rows * c];
        let v = self.value(a);
        for (e, &d) in idx.iter().enumerate() {
            for j in 0..c {
                out[d * c + j] += v[e * c + j];
            }
        }
        Ok(self.push(rows, c, out, Op::ScatterAdd(a, idx)))
    }

    /// Column-wise softmax over the rows sharing a segment id.
    pub fn segment_softmax(&mut self, a: Var, seg: Arc<Vec<usize>>, n_seg: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        contract!(seg.len() == r, "segment_softmax: {} ids for {r} rows", seg.len());
        contract!(seg.iter().all(|&s| s < n_seg), "segment_softmax: id out of range");
        let v = self.value(a);
        let mut max = vec![T::neg_infinity(); n_seg * c];
        for (e, &s) in seg.iter().enumerate() {
            for j in 0..c {
                max[s * c + j] = max[s * c + j].max(v[e * c + j]);
            }
        }
        let mut out: Vec<T> = seg.iter().enumerate().flat_map(|(e, &s)| (0..c).map(move |j| (e, s, j))).map(|(e, s, j)| (v[e * c + j] - max[s * c + j]).exp()).collect();
        let mut den = vec![T::zero(); n_seg * c];
        for (e, &s) in seg.iter().enumerate() {
            for j in 0..c {
                den[s * c + j] += out[e * c + j];
            }
        }
        for (e, &s) in seg.iter().enumerate() {
            for j in 0..c {
                out[e * c + j] /= den[s * c + j];
            }
        }
        Ok(self.push(r, c, out, Op::SegmentSoftmax(a, seg, n_seg)))
    }

    /// Multiplies channel `k` of every row by `s[row, k]`.
    pub fn channel_scale(&mut self, spec: &IrrepsSpec, x: Var, s: Var) -> Result<Var> {
        let rows = self.spec_width(spec, x, "channel_scale")?;
        let nch = spec.num_channels();
        contract!(self.shape(s) == (rows, nch), "channel_scale: scales {:?}, expected ({rows}, {nch})", self.shape(s));
        let w = spec.width();
        let (xv, sv) = (self.value(x), self.value(s));
        let mut out = vec![T::zero(); rows * w];
        for r in 0..rows {
            for (k, (l, _, start)) in spec.channels().enumerate() {
                let f = sv[r * nch + k];
                for j in start..start + 2 * l + 1 {
                    out[r * w + j] = xv[r * w + j] * f;
                }
            }
        }
        Ok(self.push(rows, w, out, Op::ChannelScale(spec.clone(), x, s)))
    }

    /// Degree-wise linear map; `weights[i]` is `m_out × m_in` for `spec_out.irreps()[i]`.
    pub fn degreewise_linear(&mut self, spec_in: &IrrepsSpec, spec_out: &IrrepsSpec, x: Var, weights: &[Var]) -> Result<Var> {
        let rows = self.spec_width(spec_in, x, "degreewise_linear")?;
        contract!(weights.len() == spec_out.irreps().len(), "degreewise_linear: {} weight blocks for {}", weights.len(), spec_out);
        for (&(l, m_out), &w) in spec_out.irreps().iter().zip(weights) {
            let m_in = spec_in.multiplicity(l);
            contract!(self.shape(w) == (m_out, m_in), "degreewise_linear: degree {l} weight {:?}, expected ({m_out}, {m_in})", self.shape(w));
        }
        let mut out = vec![T::zero(); rows * spec_out.width()];
        {
            let refs: Vec<&[T]> = weights.iter().map(|w| self.value(*w)).collect();
            kernels::degreewise_linear(spec_in, spec_out, &refs, self.value(x), rows, &mut out, false);
        }
        Ok(self.push(rows, spec_out.width(), out, Op::Linear(spec_in.clone(), spec_out.clone(), x, weights.to_vec())))
    }

    /// Channel `k = (l, c)` of row `e` is `lam[e, k] · Y_l(u_e)`, with the
    /// harmonics table `y` laid out as `[rows × n]` with `n ≥ (lmax+1)²`.
    pub fn sh_edge(&mut self, spec: &IrrepsSpec, lam: Var, y: Arc<Vec<T>>) -> Result<Var> {
        let (rows, nch) = self.shape(lam);
        contract!(nch == spec.num_channels(), "sh_edge: {nch} scales for {} channels", spec.num_channels());
        let ny = if rows == 0 { 0 } else { y.len() / rows };
        contract!(y.len() == rows * ny && ny >= num_coeffs(spec.lmax()), "sh_edge: harmonics table of {} entries does not cover {rows} rows up to degree {}", y.len(), spec.lmax());
        let w = spec.width();
        let lv = self.value(lam);
        let mut out = vec![T::zero(); rows * w];
        for r in 0..rows {
            for (k, (l, _, start)) in spec.channels().enumerate() {
                let f = lv[r * nch + k];
                for m in 0..2 * l + 1 {
                    out[r * w + start + m] = f * y[r * ny + l * l + m];
                }
            }
        }
        Ok(self.push(rows, w, out, Op::ShEdge(spec.clone(), lam, y)))
    }

    /// `⟨x_{l,c}, Y_l(u_e)⟩` for every channel.
    pub fn sh_project(&mut self, spec: &IrrepsSpec, x: Var, y: Arc<Vec<T>>) -> Result<Var> {
        let rows = self.spec_width(spec, x, "sh_project")?;
        let ny = if rows == 0 { 0 } else { y.len() / rows };
        contract!(y.len() == rows * ny && ny >= num_coeffs(spec.lmax()), "sh_project: harmonics table of {} entries does not cover {rows} rows up to degree {}", y.len(), spec.lmax());
        let (w, nch) = (spec.width(), spec.num_channels());
        let xv = self.value(x);
        let mut out = vec![T::zero(); rows * nch];
        for r in 0..rows {
            for (k, (l, _, start)) in spec.channels().enumerate() {
                let mut acc = T::zero();
                for m in 0..2 * l + 1 {
                    acc += xv[r * w + start + m] * y[r * ny + l * l + m];
                }
                out[r * nch + k] = acc;
            }
        }
        Ok(self.push(rows, nch, out, Op::ShProject(spec.clone(), x, y)))
    }

    /// Type-0 values and smoothed norms `sqrt(‖c‖² + eps²)` of `l > 0` channels.
    pub fn invariants(&mut self, spec: &IrrepsSpec, x: Var, eps: f64) -> Result<Var> {
        let rows = self.spec_width(spec, x, "invariants")?;
        let nch = spec.num_channels();
        let mut out = vec![T::zero(); rows * nch];
        kernels::invariants(spec, self.value(x), T::c(eps), &mut out);
        Ok(self.push(rows, nch, out, Op::Invariants(spec.clone(), x, T::c(eps))))
    }

    pub fn layernorm(&mut self, spec: &IrrepsSpec, x: Var, eps: f64) -> Result<Var> {
        let rows = self.spec_width(spec, x, "layernorm")?;
        let mut out = vec![T::zero(); rows * spec.width()];
        kernels::layernorm(spec, self.value(x), T::c(eps), &mut out);
        Ok(self.push(rows, spec.width(), out, Op::LayerNorm(spec.clone(), x, T::c(eps))))
    }

    /// Sigmoid gating of `l > 0` channels by `s [rows × num_gated]`.
    pub fn gate(&mut self, spec: &IrrepsSpec, x: Var, s: Var) -> Result<Var> {
        let rows = self.spec_width(spec, x, "gate")?;
        contract!(self.shape(s) == (rows, spec.num_gated()), "gate: scalars {:?}, expected ({rows}, {})", self.shape(s), spec.num_gated());
        let mut out = vec![T::zero(); rows * spec.width()];
        kernels::gate(spec, self.value(x), self.value(s), &mut out);
        Ok(self.push(rows, spec.width(), out, Op::Gate(spec.clone(), x, s)))
    }

    /// Output entry `j` is the flat input entry `map[j]`; shape `rows × cols`.
    pub fn route(&mut self, x: Var, map: Arc<Vec<usize>>, rows: usize, cols: usize) -> Result<Var> {
        contract!(map.len() == rows * cols, "route: map has {} entries for {rows}x{cols}", map.len());
        let xv = self.value(x);
        contract!(map.iter().all(|&i| i < xv.len()), "route: index out of range");
        let out = map.iter().map(|&i| xv[i]).collect();
        Ok(self.push(rows, cols, out, Op::Route(x, map)))
    }

    pub fn sparse_mix(&mut self, x: Var, mix: Arc<SparseMix<T>>) -> Result<Var> {
        let (r, c) = self.shape(x);
        contract!(mix.idx.len() == mix.w.len(), "sparse_mix: index and weight lengths differ");
        contract!(mix.k > 0 && mix.idx.len() % mix.k == 0, "sparse_mix: ragged fan-in");
        contract!(mix.idx.iter().all(|&i| i < r), "sparse_mix: index out of range");
        let rows = mix.rows();
        let xv = self.value(x);
        let mut out = vec![T::zero(); rows * c];
        for q in 0..rows {
            for j in q * mix.k..(q + 1) * mix.k {
                let (src, w) = (mix.idx[j], mix.w[j]);
                for t in 0..c {
                    out[q * c + t] += w * xv[src * c + t];
                }
            }
        }
        Ok(self.push(rows, c, out, Op::Mix(x, mix)))
    }

    /// Feature-wise modulation with one condition row shared by all points.
    ///
    /// Every channel `k` is multiplied by `scale[k]`. Type-0 channels then get
    /// `shift[k]` added. With `shift_all`, `shift` covers every channel and is
    /// added to every coefficient, which no longer commutes with rotations.
    pub fn film(&mut self, spec: &IrrepsSpec, x: Var, scale: Var, shift: Var, shift_all: bool) -> Result<Var> {
        let rows = self.spec_width(spec, x, "film")?;
        let nch = spec.num_channels();
        let n_shift = if shift_all { nch } else { spec.num_scalars() };
        contract!(self.shape(scale) == (1, nch), "film: scale {:?}, expected (1, {nch})", self.shape(scale));
        contract!(self.shape(shift) == (1, n_shift), "film: shift {:?}, expected (1, {n_shift})", self.shape(shift));
        let w = spec.width();
        let (xv, a, b) = (self.value(x), self.value(scale), self.value(shift));
        let mut out = vec![T::zero(); rows * w];
        for r in 0..rows {
            for (k, (l, _, start)) in spec.channels().enumerate() {
                let add = if l == 0 || shift_all { b[k] } else { T::zero() };
                for j in start..start + 2 * l + 1 {
                    out[r * w + j] = a[k] * xv[r * w + j] + add;
                }
            }
        }
        Ok(self.push(rows, w, out, Op::Film { spec: spec.clone(), x, scale, shift, shift_all }))
    }

    /// `logsumexp(z) − z[target]` over all entries of `z`.
    pub fn cross_entropy(&mut self, z: Var, target: usize) -> Result<Var> {
        let zv = self.value(z);
        contract!(target < zv.len(), "cross_entropy: target {target} out of {} logits", zv.len());
        let v = log_sum_exp(zv) - zv[target];
        Ok(self.push(1, 1, vec![v], Op::CrossEntropy(z, target)))
    }

    /// `out[g] = Σ_l Σ_{m,n} D^l(g)[m,n] φ_l[m] ψ_l[n]` for a table of
    /// flattened Wigner blocks `[G × Σ(2l+1)²]`.
    /// `out[g] = Σ_c Σ_l tr(D^l(g)ᵀ φ_{c,l} ψ_{c,l}ᵀ)` for `C × (L+1)²` inputs.
    pub fn so3_conv(&mut self, lmax: usize, phi: Var, psi: Var, table: Arc<Vec<T>>) -> Result<Var> {
        let n = num_coeffs(lmax);
        let kk = wigner_table_width(lmax);
        let (c, w) = self.shape(phi);
        contract!(w == n && c > 0 && self.shape(psi) == (c, n), "so3_conv: φ̂ and ψ̂ must both be (C, {n})");
        contract!(!table.is_empty() && table.len() % kk == 0, "so3_conv: table width mismatch");
        let g = table.len() / kk;
        let (pv, sv) = (self.value(phi), self.value(psi));
        let mut p = vec![T::zero(); kk];
        for r in 0..c {
            for (acc, v) in p.iter_mut().zip(flat_outer(lmax, &pv[r * n..(r + 1) * n], &sv[r * n..(r + 1) * n])) {
                *acc += v;
            }
        }
        let mut out = vec![T::zero(); g];
        T::gemm(g, kk, 1, &table, kk, 1, &p, 1, 1, T::zero(), &mut out, 1, 1);
        Ok(self.push(1, g, out, Op::So3Conv(lmax, phi, psi, table)))
    }
}

pub(crate) fn log_sum_exp<T: Real>(z: &[T]) -> T {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    m + z.iter().map(|v| (*v - m).exp()).sum::<T>().ln()
}

/// `Σ_{l ≤ lmax} (2l+1)²`.
pub fn wigner_table_width(lmax: usize) -> usize {
    (0..=lmax).map(|l| (2 * l + 1) * (2 * l + 1)).sum()
}

/// Per-degree `outer(φ_l, ψ_l)` flattened row-major and stacked.
pub(crate) fn flat_outer<T: Real>(lmax: usize, phi: &[T], psi: &[T]) -> Vec<T> {
    let mut p = Vec::with_capacity(wigner_table_width(lmax));
    for l in 0..=lmax {
        let d = 2 * l + 1;
        let (a, b) = (&phi[l * l..l * l + d], &psi[l * l..l * l + d]);
        for x in a {
            for y in b {
                p.push(*x * *y);
            }
        }
    }
    p
}
