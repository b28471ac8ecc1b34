use std::sync::Arc;

use super::KnnGraph;
use crate::so3::{num_coeffs, sph_harmonics_upto, Vec3};
use crate::Real;

/// Gaussian radial basis: `n` bumps centred on `[0, r_cut]`.
pub fn rbf_expand(d: f64, n: usize, r_cut: f64) -> impl Iterator<Item = f64> {
    let step = if n > 1 { r_cut / (n - 1) as f64 } else { r_cut };
    (0..n).map(move |i| {
        let z = (d - i as f64 * step) / step;
        (-0.5 * z * z).exp()
    })
}

/// Per-edge geometric quantities for one graph, cast to `T`.
///
/// Directions point from the destination to the source. Degenerate edges
/// (zero length) keep only the constant harmonic.
pub struct EdgeGeometry<T> {
    pub n_dst: usize,
    pub n_src: usize,
    pub lmax: usize,
    pub r_cut: f64,
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
    pub sh: Arc<Vec<T>>,
    pub rbf: Vec<T>,
    pub n_rbf: usize,
    /// Displacements divided by `r_cut`; only consumed by the non-equivariant ablation.
    pub disp: Vec<T>,
}

impl<T: Real> EdgeGeometry<T> {
    pub fn new(graph: &KnnGraph, dst_pos: &[Vec3], src_pos: &[Vec3], lmax: usize, n_rbf: usize, r_cut: f64) -> Self {
        let e = graph.num_edges();
        let ny = num_coeffs(lmax);
        let mut sh = vec![T::zero(); e * ny];
        let mut rbf = Vec::with_capacity(e * n_rbf);
        let mut disp = Vec::with_capacity(e * 3);
        let mut buf = vec![0.0; ny];
        let dst = graph.dst();
        for (i, (&s, &d)) in graph.src.iter().zip(&dst).enumerate() {
            let v = [src_pos[s][0] - dst_pos[d][0], src_pos[s][1] - dst_pos[d][1], src_pos[s][2] - dst_pos[d][2]];
            let len = graph.dist[i];
            if len > 0.0 {
                sph_harmonics_upto(lmax, [v[0] / len, v[1] / len, v[2] / len], &mut buf);
            } else {
                buf.iter_mut().for_each(|b| *b = 0.0);
                buf[0] = 0.5 / std::f64::consts::PI.sqrt();
            }
            for (o, b) in sh[i * ny..(i + 1) * ny].iter_mut().zip(&buf) {
                *o = T::c(*b);
            }
            rbf.extend(rbf_expand(len, n_rbf, r_cut).map(T::c));
            disp.extend(v.iter().map(|c| T::c(c / r_cut)));
        }
        Self { n_dst: graph.n_dst, n_src: graph.n_src, lmax, r_cut, src: Arc::new(graph.src.clone()), dst: Arc::new(dst), sh: Arc::new(sh), rbf, n_rbf, disp }
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }
}
