use super::ops::wigner_table_width;
use super::{Gradients, Op, Tape, Var};
use crate::error::contract;
use crate::so3::num_coeffs;
use crate::tensor::kernels;
use crate::{Real, Result};

type Grads<T> = Vec<Option<Vec<T>>>;

fn buf<'a, T: Real>(grads: &'a mut Grads<T>, tape: &Tape<T>, v: Var) -> &'a mut [T] {
    let len = tape.nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn acc<T: Real>(grads: &mut Grads<T>, tape: &Tape<T>, v: Var, f: impl Fn(usize) -> T) {
    for (i, g) in buf(grads, tape, v).iter_mut().enumerate() {
        *g += f(i);
    }
}

impl<T: Real> Tape<T> {
    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        contract!(self.shape(loss) == (1, 1), "backward needs a scalar loss, got shape {:?}", self.shape(loss));
        let mut grads: Grads<T> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut Grads<T>) {
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.shape(*a);
                let m = cols;
                let (av, bv) = (self.value(*a), self.value(*b));
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                T::gemm(n, m, k, g, m, 1, bv, 1, m, T::one(), buf(grads, self, *a), k, 1);
                T::gemm(k, n, m, av, 1, k, g, m, 1, T::one(), buf(grads, self, *b), m, 1);
            }
            Op::Add(a, b) => {
                acc(grads, self, *a, |j| g[j]);
                acc(grads, self, *b, |j| g[j]);
            }
            Op::Sub(a, b) => {
                acc(grads, self, *a, |j| g[j]);
                acc(grads, self, *b, |j| -g[j]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(grads, self, *a, |j| g[j] * bv[j]);
                acc(grads, self, *b, |j| g[j] * av[j]);
            }
            Op::AddRow(a, b) => {
                acc(grads, self, *a, |j| g[j]);
                let db = buf(grads, self, *b);
                for r in 0..rows {
                    for c in 0..cols {
                        db[c] += g[r * cols + c];
                    }
                }
            }
            Op::MulRow(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(grads, self, *a, |j| g[j] * bv[j % cols]);
                let db = buf(grads, self, *b);
                for r in 0..rows {
                    for c in 0..cols {
                        db[c] += g[r * cols + c] * av[r * cols + c];
                    }
                }
            }
            Op::MulCol(a, s) => {
                let (av, sv) = (self.value(*a), self.value(*s));
                acc(grads, self, *a, |j| g[j] * sv[j / cols]);
                let ds = buf(grads, self, *s);
                for r in 0..rows {
                    ds[r] += (0..cols).map(|c| g[r * cols + c] * av[r * cols + c]).sum::<T>();
                }
            }
            Op::Scale(a, k) => acc(grads, self, *a, |j| g[j] * *k),
            Op::Silu(a) => {
                let av = self.value(*a);
                acc(grads, self, *a, |j| {
                    let s = kernels::sigmoid(av[j]);
                    g[j] * s * (T::one() + av[j] * (T::one() - s))
                });
            }
            Op::Sigmoid(a) => acc(grads, self, *a, |j| g[j] * y[j] * (T::one() - y[j])),
            Op::SumAll(a) => acc(grads, self, *a, |_| g[0]),
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let pc = self.shape(*p).1;
                    acc(grads, self, *p, |j| g[(j / pc) * cols + off + j % pc]);
                    off += pc;
                }
            }
            Op::Slice(a, start) => {
                let ac = self.shape(*a).1;
                let da = buf(grads, self, *a);
                for r in 0..rows {
                    for c in 0..cols {
                        da[r * ac + start + c] += g[r * cols + c];
                    }
                }
            }
            Op::Gather(a, idx) => {
                let da = buf(grads, self, *a);
                for (e, &s) in idx.iter().enumerate() {
                    for c in 0..cols {
                        da[s * cols + c] += g[e * cols + c];
                    }
                }
            }
            Op::ScatterAdd(a, idx) => acc(grads, self, *a, |j| g[idx[j / cols] * cols + j % cols]),
            Op::SegmentSoftmax(a, seg, n_seg) => {
                let mut dot = vec![T::zero(); n_seg * cols];
                for (e, &s) in seg.iter().enumerate() {
                    for c in 0..cols {
                        dot[s * cols + c] += y[e * cols + c] * g[e * cols + c];
                    }
                }
                acc(grads, self, *a, |j| {
                    let (e, c) = (j / cols, j % cols);
                    y[j] * (g[j] - dot[seg[e] * cols + c])
                });
            }
            Op::ChannelScale(spec, x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let nch = spec.num_channels();
                let mut dx = vec![T::zero(); xv.len()];
                let mut ds = vec![T::zero(); sv.len()];
                for r in 0..rows {
                    for (k, (l, _, start)) in spec.channels().enumerate() {
                        let f = sv[r * nch + k];
                        for j in r * cols + start..r * cols + start + 2 * l + 1 {
                            dx[j] = g[j] * f;
                            ds[r * nch + k] += g[j] * xv[j];
                        }
                    }
                }
                acc(grads, self, *x, |j| dx[j]);
                acc(grads, self, *s, |j| ds[j]);
            }
            Op::Linear(spec_in, spec_out, x, ws) => {
                let weights: Vec<&[T]> = ws.iter().map(|w| self.value(*w)).collect();
                let mut dx = vec![T::zero(); self.value(*x).len()];
                let mut dws: Vec<Vec<T>> = ws.iter().map(|w| vec![T::zero(); self.value(*w).len()]).collect();
                {
                    let mut slots: Vec<Option<&mut [T]>> = dws.iter_mut().map(|d| Some(d.as_mut_slice())).collect();
                    kernels::degreewise_linear_backward(spec_in, spec_out, &weights, self.value(*x), rows, g, Some(&mut dx), &mut slots);
                }
                acc(grads, self, *x, |j| dx[j]);
                for (w, dw) in ws.iter().zip(&dws) {
                    acc(grads, self, *w, |j| dw[j]);
                }
            }
            Op::ShEdge(spec, lam, yt) => {
                let ny = if rows == 0 { 0 } else { yt.len() / rows };
                let nch = spec.num_channels();
                let dl = buf(grads, self, *lam);
                for r in 0..rows {
                    for (k, (l, _, start)) in spec.channels().enumerate() {
                        let mut s = T::zero();
                        for m in 0..2 * l + 1 {
                            s += g[r * cols + start + m] * yt[r * ny + l * l + m];
                        }
                        dl[r * nch + k] += s;
                    }
                }
            }
            Op::ShProject(spec, x, yt) => {
                let ny = if rows == 0 { 0 } else { yt.len() / rows };
                let w = spec.width();
                let dx = buf(grads, self, *x);
                for r in 0..rows {
                    for (k, (l, _, start)) in spec.channels().enumerate() {
                        let gk = g[r * cols + k];
                        for m in 0..2 * l + 1 {
                            dx[r * w + start + m] += gk * yt[r * ny + l * l + m];
                        }
                    }
                }
            }
            Op::Invariants(spec, x, _) => {
                let xv = self.value(*x);
                let w = spec.width();
                let dx = buf(grads, self, *x);
                for r in 0..rows {
                    for (k, (l, _, start)) in spec.channels().enumerate() {
                        let gk = g[r * cols + k];
                        if l == 0 {
                            dx[r * w + start] += gk;
                        } else {
                            let n = y[r * cols + k];
                            for j in r * w + start..r * w + start + 2 * l + 1 {
                                dx[j] += gk * xv[j] / n;
                            }
                        }
                    }
                }
            }
            Op::LayerNorm(spec, x, eps) => {
                let xv = self.value(*x);
                let dx = buf(grads, self, *x);
                for r in 0..rows {
                    for &(l, m) in spec.irreps() {
                        let a = r * cols + spec.offset(l);
                        let b = a + m * (2 * l + 1);
                        let s: T = xv[a..b].iter().map(|v| *v * *v).sum();
                        let rms = (s / T::c(m as f64)).sqrt();
                        let den = rms + *eps;
                        let gx: T = (a..b).map(|j| g[j] * xv[j]).sum();
                        let corr = if rms > T::zero() { gx / (den * den * T::c(m as f64) * rms) } else { T::zero() };
                        for j in a..b {
                            dx[j] += g[j] / den - corr * xv[j];
                        }
                    }
                }
            }
            Op::Gate(spec, x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let ng = spec.num_gated();
                let mut dx = vec![T::zero(); xv.len()];
                let mut ds = vec![T::zero(); sv.len()];
                for r in 0..rows {
                    let mut k = 0;
                    for (l, _, start) in spec.channels() {
                        let range = r * cols + start..r * cols + start + 2 * l + 1;
                        if l == 0 {
                            dx[range.start] = g[range.start];
                            continue;
                        }
                        let sg = kernels::sigmoid(sv[r * ng + k]);
                        let mut gx = T::zero();
                        for j in range {
                            dx[j] = g[j] * sg;
                            gx += g[j] * xv[j];
                        }
                        ds[r * ng + k] = gx * sg * (T::one() - sg);
                        k += 1;
                    }
                }
                acc(grads, self, *x, |j| dx[j]);
                acc(grads, self, *s, |j| ds[j]);
            }
            Op::Route(x, map) => {
                let dx = buf(grads, self, *x);
                for (j, &src) in map.iter().enumerate() {
                    dx[src] += g[j];
                }
            }
            Op::Mix(x, mix) => {
                let dx = buf(grads, self, *x);
                for q in 0..rows {
                    for j in q * mix.k..(q + 1) * mix.k {
                        let (src, w) = (mix.idx[j], mix.w[j]);
                        for t in 0..cols {
                            dx[src * cols + t] += w * g[q * cols + t];
                        }
                    }
                }
            }
            Op::Film { spec, x, scale, shift, shift_all } => {
                let (xv, a) = (self.value(*x), self.value(*scale));
                let nch = spec.num_channels();
                let mut da = vec![T::zero(); nch];
                let mut db = vec![T::zero(); self.value(*shift).len()];
                let mut dx = vec![T::zero(); xv.len()];
                for r in 0..rows {
                    for (k, (l, _, start)) in spec.channels().enumerate() {
                        for j in r * cols + start..r * cols + start + 2 * l + 1 {
                            dx[j] = g[j] * a[k];
                            da[k] += g[j] * xv[j];
                            if l == 0 || *shift_all {
                                db[k] += g[j];
                            }
                        }
                    }
                }
                acc(grads, self, *x, |j| dx[j]);
                acc(grads, self, *scale, |j| da[j]);
                acc(grads, self, *shift, |j| db[j]);
            }
            Op::CrossEntropy(z, target) => {
                let zv = self.value(*z);
                let lse = super::ops::log_sum_exp(zv);
                acc(grads, self, *z, |j| {
                    let p = (zv[j] - lse).exp();
                    g[0] * (p - if j == *target { T::one() } else { T::zero() })
                });
            }
            Op::So3Conv(lmax, phi, psi, table) => {
                let kk = wigner_table_width(*lmax);
                let ng = table.len() / kk;
                // M = tableᵀ · dout, one (2l+1)² block per degree
                let mut mflat = vec![T::zero(); kk];
                T::gemm(kk, ng, 1, table, 1, kk, g, 1, 1, T::zero(), &mut mflat, 1, 1);
                let (pv, sv) = (self.value(*phi).to_vec(), self.value(*psi).to_vec());
                let n = num_coeffs(*lmax);
                let mut dphi = vec![T::zero(); pv.len()];
                let mut dpsi = vec![T::zero(); sv.len()];
                for r in 0..pv.len() / n {
                    let mut off = 0;
                    for l in 0..=*lmax {
                        let d = 2 * l + 1;
                        let base = r * n + l * l;
                        for a in 0..d {
                            for b in 0..d {
                                let mab = mflat[off + a * d + b];
                                dphi[base + a] += mab * sv[base + b];
                                dpsi[base + b] += mab * pv[base + a];
                            }
                        }
                        off += d * d;
                    }
                }
                acc(grads, self, *phi, |j| dphi[j]);
                acc(grads, self, *psi, |j| dpsi[j]);
            }
        }
    }
}
