use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::so3::{sph_harmonics_upto, wigner_blocks, Rotation, SO3Grid};
use crate::Error;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `Σ out ⊙ R` with a fixed random `R`, so every output entry matters.
fn probe(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(v);
    let mut g = rng(seed);
    let w = tape.constant(r, c, (0..r * c).map(|_| g.gen_range(-1.0..1.0)).collect())?;
    let p = tape.mul(v, w)?;
    Ok(tape.sum_all(p))
}

fn store(blocks: &[(&str, usize, usize)], seed: u64) -> ParamStore {
    let mut g = rng(seed);
    let mut s = ParamStore::new();
    for &(n, r, c) in blocks {
        s.insert_uniform(n, r, c, 1.0, &mut g).unwrap();
    }
    s
}

fn assert_grads<F>(s: &ParamStore, f: F)
where
    F: Fn(&mut Tape<f64>, &ParamStore) -> Result<Var>,
{
    let check = check_gradients(s, &[], H, f).unwrap();
    let (name, worst) = check.worst();
    assert!(worst < TOL, "{name}: relative error {worst}");
}

fn sh_table(lmax: usize, rows: usize, seed: u64) -> Arc<Vec<f64>> {
    let mut g = rng(seed);
    let n = crate::so3::num_coeffs(lmax);
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        let u = Rotation::random(&mut g).apply([0.0, 0.0, 1.0]);
        sph_harmonics_upto(lmax, u, &mut out[r * n..(r + 1) * n]);
    }
    Arc::new(out)
}

#[test]
fn square_has_derivative_two_x() {
    let mut s = ParamStore::new();
    s.insert("x", 1, 1, vec![3.0]).unwrap();
    let mut t = Tape::<f64>::new();
    let x = t.param(&s, "x").unwrap();
    let y = t.mul(x, x).unwrap();
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap(), &[6.0]);
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let mut t = Tape::<f64>::new();
    let z = t.constant(1, 3, vec![1.0, 2.0, 0.5]).unwrap();
    let l = t.cross_entropy(z, 1).unwrap();
    let g = t.backward(l).unwrap();
    let e: Vec<f64> = [1.0f64, 2.0, 0.5].iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    let expect = [e[0] / s, e[1] / s - 1.0, e[2] / s];
    for (a, b) in g.get(z).unwrap().iter().zip(expect) {
        assert!((a - b).abs() < 1e-14);
    }
    assert!((t.scalar(l) - (s.ln() - 2.0)).abs() < 1e-14);
}

#[test]
fn uniform_logits_give_log_n() {
    let mut t = Tape::<f64>::new();
    let z = t.constant(7, 1, vec![0.3; 7]).unwrap();
    let l = t.cross_entropy(z, 4).unwrap();
    assert!((t.scalar(l) - 7f64.ln()).abs() < 1e-14);
}

#[test]
fn non_scalar_loss_is_contract_error() {
    let mut t = Tape::<f64>::new();
    let z = t.constant(1, 2, vec![1.0, 2.0]).unwrap();
    assert!(matches!(t.backward(z), Err(Error::Contract(_))));
}

#[test]
fn unreachable_parameters_get_zero_gradient() {
    let s = store(&[("a", 1, 2), ("b", 2, 2)], 1);
    let mut t = Tape::<f64>::new();
    let a = t.param(&s, "a").unwrap();
    let l = t.sum_all(a);
    let g = t.backward(l).unwrap().param_grads(&t, &s);
    assert_eq!(g["a"], vec![1.0, 1.0]);
    assert_eq!(g["b"], vec![0.0; 4]);
}

#[test]
fn three_layer_mlp_matches_finite_differences() {
    let s = store(&[("x", 5, 4), ("w1", 4, 6), ("b1", 1, 6), ("w2", 6, 6), ("w3", 6, 3), ("b3", 1, 3)], 2);
    assert_grads(&s, |t, s| {
        let x = t.param(s, "x")?;
        let (w1, b1, w2, w3, b3) = (t.param(s, "w1")?, t.param(s, "b1")?, t.param(s, "w2")?, t.param(s, "w3")?, t.param(s, "b3")?);
        let h = t.matmul(x, w1)?;
        let h = t.add_row(h, b1)?;
        let h = t.silu(h);
        let h = t.matmul(h, w2)?;
        let h = t.sigmoid(h);
        let h = t.matmul(h, w3)?;
        let h = t.add_row(h, b3)?;
        let z = t.slice_cols(h, 1, 2)?;
        let l1 = t.cross_entropy(z, 3)?;
        let l2 = probe(t, h, 9)?;
        t.add(l1, l2)
    });
}

#[test]
fn elementwise_and_broadcast_ops() {
    let s = store(&[("a", 4, 3), ("b", 4, 3), ("r", 1, 3), ("c", 4, 1)], 3);
    assert_grads(&s, |t, s| {
        let (a, b, r, c) = (t.param(s, "a")?, t.param(s, "b")?, t.param(s, "r")?, t.param(s, "c")?);
        let x = t.sub(a, b)?;
        let x = t.mul_row(x, r)?;
        let x = t.mul_col(x, c)?;
        let y = t.scale(a, -0.7);
        let z = t.concat_cols(&[x, y, b])?;
        probe(t, z, 4)
    });
}

#[test]
fn gather_scatter_and_segment_softmax() {
    let s = store(&[("a", 5, 3), ("z", 7, 2)], 5);
    let idx = Arc::new(vec![4, 0, 0, 2, 3, 1, 4]);
    let seg = Arc::new(vec![0, 0, 1, 1, 1, 2, 2]);
    assert_grads(&s, |t, s| {
        let (a, z) = (t.param(s, "a")?, t.param(s, "z")?);
        let g = t.gather_rows(a, idx.clone())?;
        let w = t.segment_softmax(z, seg.clone(), 3)?;
        let w0 = t.slice_cols(w, 0, 1)?;
        let m = t.mul_col(g, w0)?;
        let out = t.scatter_add_rows(m, seg.clone(), 3)?;
        probe(t, out, 6)
    });
}

#[test]
fn segment_softmax_sums_to_one() {
    let mut t = Tape::<f64>::new();
    let z = t.constant(5, 1, vec![1.0, -3.0, 700.0, 2.0, 2.0]).unwrap();
    let w = t.segment_softmax(z, Arc::new(vec![0, 0, 1, 1, 2]), 3).unwrap();
    let v = t.value(w);
    assert!((v[0] + v[1] - 1.0).abs() < 1e-15);
    assert!((v[2] + v[3] - 1.0).abs() < 1e-15);
    assert_eq!(v[4], 1.0);
}

#[test]
fn spherical_ops_match_finite_differences() {
    let spec = IrrepsSpec::new(vec![(0, 2), (1, 2), (2, 1), (3, 1)]).unwrap();
    let out = IrrepsSpec::new(vec![(0, 1), (1, 3), (2, 2), (3, 1)]).unwrap();
    let rows = 4;
    let nch = spec.num_channels();
    let mut blocks = vec![("x", rows, spec.width()), ("lam", rows, nch), ("s", rows, spec.num_gated()), ("cs", rows, nch)];
    let wnames: Vec<String> = (0..out.irreps().len()).map(|i| format!("w{i}")).collect();
    for (i, &(l, m)) in out.irreps().iter().enumerate() {
        blocks.push((wnames[i].as_str(), m, spec.multiplicity(l)));
    }
    let s = store(&blocks, 7);
    let y = sh_table(spec.lmax(), rows, 8);
    assert_grads(&s, |t, s| {
        let x = t.param(s, "x")?;
        let ws: Vec<Var> = wnames.iter().map(|n| t.param(s, n)).collect::<Result<_>>()?;
        let lin = t.degreewise_linear(&spec, &out, x, &ws)?;
        let lam = t.param(s, "lam")?;
        let e = t.sh_edge(&spec, lam, y.clone())?;
        let x2 = t.add(x, e)?;
        let cs = t.param(s, "cs")?;
        let x2 = t.channel_scale(&spec, x2, cs)?;
        let ln = t.layernorm(&spec, x2, 1e-8)?;
        let sc = t.param(s, "s")?;
        let gated = t.gate(&spec, ln, sc)?;
        let inv = t.invariants(&spec, gated, 1e-3)?;
        let proj = t.sh_project(&spec, x2, y.clone())?;
        let a = probe(t, lin, 1)?;
        let b = probe(t, inv, 2)?;
        let c = probe(t, proj, 3)?;
        let ab = t.add(a, b)?;
        t.add(ab, c)
    });
}

#[test]
fn routing_mixing_and_film() {
    let spec = IrrepsSpec::new(vec![(0, 2), (1, 1), (2, 1)]).unwrap();
    let nch = spec.num_channels();
    let s = store(&[("x", 5, spec.width()), ("a", 1, nch), ("b", 1, spec.num_scalars()), ("ball", 1, nch)], 9);
    let map = Arc::new((0..3 * spec.width()).map(|j| (j * 7) % (5 * spec.width())).collect::<Vec<_>>());
    let mix = Arc::new(SparseMix { k: 2, idx: vec![0, 4, 1, 1, 3, 2], w: vec![0.3, 0.7, 0.5, 0.5, 0.9, 0.1] });
    assert_grads(&s, |t, s| {
        let x = t.param(s, "x")?;
        let r = t.route(x, map.clone(), 3, spec.width())?;
        let m = t.sparse_mix(x, mix.clone())?;
        let (a, b, ball) = (t.param(s, "a")?, t.param(s, "b")?, t.param(s, "ball")?);
        let f = t.film(&spec, m, a, b, false)?;
        let f2 = t.film(&spec, r, a, ball, true)?;
        let p = probe(t, f, 1)?;
        let q = probe(t, f2, 2)?;
        t.add(p, q)
    });
}

#[test]
fn so3_conv_matches_finite_differences_and_definition() {
    let lmax = 3;
    let n = crate::so3::num_coeffs(lmax);
    let s = store(&[("phi", 2, n), ("psi", 2, n)], 10);
    let grid = SO3Grid::equiangular(4, 3, 4);
    let kk = wigner_table_width(lmax);
    let table: Vec<f64> = grid.rotations().iter().flat_map(|r| wigner_blocks(lmax, r).into_iter().flat_map(|b| b.as_slice().to_vec())).collect();
    assert_eq!(table.len(), grid.len() * kk);
    let table = Arc::new(table);
    assert_grads(&s, |t, s| {
        let (phi, psi) = (t.param(s, "phi")?, t.param(s, "psi")?);
        let q = t.so3_conv(lmax, phi, psi, table.clone())?;
        t.cross_entropy(q, 5)
    });
    let mut t = Tape::<f64>::new();
    let (phi, psi) = (t.param(&s, "phi").unwrap(), t.param(&s, "psi").unwrap());
    let q = t.so3_conv(lmax, phi, psi, table.clone()).unwrap();
    let split = |v: &[f64]| (0..=lmax).map(|l| v[l * l..(l + 1) * (l + 1)].to_vec()).collect::<Vec<_>>();
    let (pv, sv) = (&s.get("phi").unwrap().data, &s.get("psi").unwrap().data);
    let per_channel: Vec<_> = (0..2).map(|c| crate::so3::outer_per_degree(&split(&pv[c * n..(c + 1) * n]), &split(&sv[c * n..(c + 1) * n]))).collect();
    for (i, r) in grid.rotations().iter().enumerate() {
        let direct: f64 = per_channel.iter().map(|fl| crate::so3::so3_synthesize(fl, r)).sum();
        assert!((t.value(q)[i] - direct).abs() < 1e-12);
    }
}

#[test]
fn f32_tape_runs_same_graph() {
    let s = store(&[("w", 3, 2)], 11);
    let mut t = Tape::<f32>::new();
    let x = t.constant(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
    let w = t.param(&s, "w").unwrap();
    let y = t.matmul(x, w).unwrap();
    let l = t.sum_all(y);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(w).unwrap(), &[0.0, 0.0, 2.5, 2.5, 3.0, 3.0]);
}
