use std::sync::Arc;

use super::KnnGraph;
use crate::autodiff::{SparseMix, Tape, Var};
use crate::error::contract;
use crate::tensor::{IrrepsSpec, SphericalTensor};
use crate::{Real, Result};

/// For every destination and channel, the flat input index of each output
/// coefficient: the neighbour whose channel has the largest norm wins, the
/// earliest edge on ties.
pub fn smaxpool_map<T: Real>(spec: &IrrepsSpec, x: &[T], graph: &KnnGraph) -> Vec<usize> {
    let w = spec.width();
    let mut map = vec![0; graph.n_dst * w];
    for d in 0..graph.n_dst {
        let nbrs = graph.neighbors(d);
        for (l, _, start) in spec.channels() {
            let seg = start..start + 2 * l + 1;
            let mut best = (nbrs[0], T::neg_infinity());
            for &p in nbrs {
                let n2: T = x[p * w + seg.start..p * w + seg.end].iter().map(|v| *v * *v).sum();
                if n2 > best.1 {
                    best = (p, n2);
                }
            }
            for j in seg {
                map[d * w + j] = best.0 * w + j;
            }
        }
    }
    map
}

/// Spherical max-pooling of source features onto the graph destinations.
pub fn smaxpool<T: Real>(tape: &mut Tape<T>, spec: &IrrepsSpec, x: Var, graph: &KnnGraph) -> Result<Var> {
    contract!(tape.shape(x) == (graph.n_src, spec.width()), "smaxpool: features {:?} do not match graph sources {}", tape.shape(x), graph.n_src);
    let map = smaxpool_map(spec, tape.value(x), graph);
    tape.route(x, Arc::new(map), graph.n_dst, spec.width())
}

pub fn smaxpool_tensor<T: Real>(features: &SphericalTensor<T>, graph: &KnnGraph) -> Result<SphericalTensor<T>> {
    contract!(features.rows() == graph.n_src, "smaxpool: {} feature rows for {} sources", features.rows(), graph.n_src);
    let map = smaxpool_map(features.spec(), features.data(), graph);
    let data = map.iter().map(|&i| features.data()[i]).collect();
    SphericalTensor::from_data(features.spec().clone(), graph.n_dst, data)
}

/// Interpolation weights `softmax_p(1/‖x − p‖)` over each destination's
/// neighbours; a coincident neighbour takes all the weight.
pub fn sup_weights<T: Real>(graph: &KnnGraph) -> SparseMix<T> {
    let k = graph.k;
    let mut w = Vec::with_capacity(graph.num_edges());
    for d in 0..graph.n_dst {
        let dist = &graph.dist[d * k..(d + 1) * k];
        if let Some(z) = dist.iter().position(|v| *v == 0.0) {
            w.extend((0..k).map(|j| if j == z { T::one() } else { T::zero() }));
            continue;
        }
        let inv: Vec<f64> = dist.iter().map(|v| 1.0 / v).collect();
        let m = inv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = inv.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        w.extend(e.iter().map(|v| T::c(v / s)));
    }
    SparseMix { k, idx: graph.src.clone(), w }
}

/// Spherical upsampling: coefficient-wise softmax interpolation.
pub fn sup<T: Real>(tape: &mut Tape<T>, spec: &IrrepsSpec, x: Var, graph: &KnnGraph) -> Result<Var> {
    contract!(tape.shape(x) == (graph.n_src, spec.width()), "sup: features {:?} do not match graph sources {}", tape.shape(x), graph.n_src);
    tape.sparse_mix(x, Arc::new(sup_weights(graph)))
}

pub fn sup_tensor<T: Real>(features: &SphericalTensor<T>, graph: &KnnGraph) -> Result<SphericalTensor<T>> {
    contract!(features.rows() == graph.n_src, "sup: {} feature rows for {} sources", features.rows(), graph.n_src);
    let mix = sup_weights::<T>(graph);
    let w = features.spec().width();
    let mut data = vec![T::zero(); graph.n_dst * w];
    for q in 0..graph.n_dst {
        for j in q * mix.k..(q + 1) * mix.k {
            let row = features.row(mix.idx[j]);
            for t in 0..w {
                data[q * w + t] += mix.w[j] * row[t];
            }
        }
    }
    SphericalTensor::from_data(features.spec().clone(), graph.n_dst, data)
}
