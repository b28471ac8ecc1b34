//! Translational, gripper and rotational value heads over a latent cloud.

use std::any::Any;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::contract;
use crate::layers::{degreewise, dense, init_degreewise, init_dense, knn, AttentionConfig, EdgeAttention, EdgeGeometry};
use crate::scene::{KeyframeAction, Workspace};
use crate::so3::{num_coeffs, outer_per_degree, so3_synthesize, wigner_blocks, Rotation, SO3Grid, Vec3};
use crate::tensor::IrrepsSpec;
use crate::{Real, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub lmax: usize,
    /// Channels per degree of the aggregated features.
    pub multiplicity: usize,
    pub k: usize,
    pub n_rbf: usize,
    pub edge_hidden: usize,
    pub readout_hidden: usize,
    /// Radial cutoff of the query graphs in meters.
    pub r_cut: f64,
    pub levels: usize,
    pub train_candidates: usize,
    pub test_candidates: usize,
    /// Channel pairs `(φ, ψ)` summed in the rotational correlation.
    pub rotation_channels: usize,
    /// Local continuous search around the best grid rotation.
    pub refine_rotation: bool,
    /// Feed raw edge displacements to the q_t and q_r edge networks (ablation).
    pub raw_positions: bool,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            lmax: 3,
            multiplicity: 8,
            k: 8,
            n_rbf: 16,
            edge_hidden: 32,
            readout_hidden: 32,
            r_cut: 0.15,
            levels: 3,
            train_candidates: 150,
            test_candidates: 1000,
            rotation_channels: 1,
            refine_rotation: false,
            raw_positions: false,
        }
    }
}

/// Rotation grid and its flattened Wigner table `[G × Σ(2l+1)²]`.
pub struct RotationTable {
    pub lmax: usize,
    pub grid: SO3Grid,
    table: Arc<Vec<f64>>,
    table_f32: Arc<Vec<f32>>,
}

impl RotationTable {
    pub fn new(lmax: usize, grid: SO3Grid) -> Self {
        let mut table = Vec::with_capacity(grid.len() * crate::autodiff::wigner_table_width(lmax));
        for g in grid.rotations() {
            for b in wigner_blocks(lmax, g) {
                table.extend_from_slice(b.as_slice());
            }
        }
        let table_f32 = Arc::new(table.iter().map(|v| *v as f32).collect());
        Self { lmax, grid, table: Arc::new(table), table_f32 }
    }

    /// Shared table over [`SO3Grid::for_lmax`].
    pub fn cached(lmax: usize) -> Arc<RotationTable> {
        static CACHE: OnceLock<Mutex<BTreeMap<usize, Arc<RotationTable>>>> = OnceLock::new();
        let mut map = CACHE.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
        map.entry(lmax).or_insert_with(|| Arc::new(RotationTable::new(lmax, SO3Grid::for_lmax(lmax)))).clone()
    }

    pub fn table<T: Real>(&self) -> Arc<Vec<T>> {
        if let Some(t) = (&self.table as &dyn Any).downcast_ref::<Arc<Vec<T>>>() {
            return t.clone();
        }
        if let Some(t) = (&self.table_f32 as &dyn Any).downcast_ref::<Arc<Vec<T>>>() {
            return t.clone();
        }
        Arc::new(self.table.iter().map(|v| T::c(*v)).collect())
    }
}

/// Candidate positions of one coarse-to-fine level.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateLevel {
    pub candidates: Vec<Vec3>,
    pub spacing: f64,
}

impl CandidateLevel {
    /// Index and distance of the candidate closest to `p` (lowest index on ties).
    pub fn nearest(&self, p: Vec3) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.candidates.iter().enumerate() {
            let d = crate::so3::dist(*c, p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }
}

/// Candidates for `level` with a budget of about `n` points.
///
/// Level 0 is a cubic lattice filling the workspace. Level `i > 0` is a cubic
/// lattice clipped to a ball around `center` whose radius starts at the
/// level-0 spacing and shrinks threefold per level. Lattices are aligned
/// with the workspace frame.
pub fn candidate_level(ws: &Workspace, n: usize, level: usize, center: Vec3) -> CandidateLevel {
    let side = (n.max(1) as f64).cbrt().floor().max(1.0) as usize;
    let h = ws.half_extent;
    let sp0 = 2.0 * h / side as f64;
    if level == 0 {
        let mut candidates = Vec::with_capacity(side * side * side);
        for i in 0..side {
            for j in 0..side {
                for k in 0..side {
                    let local = [(i as f64 + 0.5) * sp0 - h, (j as f64 + 0.5) * sp0 - h, (k as f64 + 0.5) * sp0 - h];
                    candidates.push(ws.to_world(local));
                }
            }
        }
        return CandidateLevel { candidates, spacing: sp0 };
    }
    let radius = sp0 / 3f64.powi(level as i32 - 1);
    let spacing = radius * (4.0 * PI / (3.0 * n.max(1) as f64)).cbrt();
    let kmax = (radius / spacing).floor() as i64;
    let mut candidates = Vec::new();
    for i in -kmax..=kmax {
        for j in -kmax..=kmax {
            for k in -kmax..=kmax {
                let off = [i as f64 * spacing, j as f64 * spacing, k as f64 * spacing];
                if (off[0] * off[0] + off[1] * off[1] + off[2] * off[2]).sqrt() <= radius + 1e-12 {
                    candidates.push(crate::so3::add(center, ws.rotation.apply(off)));
                }
            }
        }
    }
    CandidateLevel { candidates, spacing }
}

/// Per-level candidates, scores and the chosen index.
#[derive(Clone, Debug)]
pub struct CoarseToFine {
    pub levels: Vec<(CandidateLevel, Vec<f64>, usize)>,
}

impl CoarseToFine {
    pub fn position(&self) -> Vec3 {
        let (lvl, _, best) = self.levels.last().expect("at least one level");
        lvl.candidates[*best]
    }

    pub fn final_spacing(&self) -> f64 {
        self.levels.last().map_or(0.0, |l| l.0.spacing)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Iterative refinement of the translational argmax under `score`.
pub fn coarse_to_fine<F>(ws: &Workspace, levels: usize, n: usize, mut score: F) -> Result<CoarseToFine>
where
    F: FnMut(&[Vec3]) -> Result<Vec<f64>>,
{
    contract!(levels >= 1, "coarse-to-fine needs at least one level");
    let mut out = Vec::with_capacity(levels);
    let mut center = ws.center;
    for level in 0..levels {
        let lvl = candidate_level(ws, n, level, center);
        let s = score(&lvl.candidates)?;
        contract!(s.len() == lvl.candidates.len(), "score returned {} values for {} candidates", s.len(), lvl.candidates.len());
        let best = argmax(&s);
        center = lvl.candidates[best];
        out.push((lvl, s, best));
    }
    Ok(CoarseToFine { levels: out })
}

/// Teacher-forced levels around `target`: each level is centred on the
/// previous level's candidate nearest the target. Returns levels with their
/// target index, or a data error if the final lattice misses the target.
pub fn teacher_levels(ws: &Workspace, levels: usize, n: usize, target: Vec3) -> Result<Vec<(CandidateLevel, usize)>> {
    contract!(levels >= 1, "coarse-to-fine needs at least one level");
    let mut out = Vec::with_capacity(levels);
    let mut center = ws.center;
    for level in 0..levels {
        let lvl = candidate_level(ws, n, level, center);
        let (idx, d) = lvl.nearest(target);
        if level + 1 == levels && d > lvl.spacing {
            return Err(crate::Error::Data(format!("expert position is {d:.4} m from the nearest final candidate (spacing {:.4} m)", lvl.spacing)));
        }
        center = lvl.candidates[idx];
        out.push((lvl, idx));
    }
    Ok(out)
}

/// Decoded action with the values behind it.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub action: KeyframeAction,
    pub translation: CoarseToFine,
    pub open_logits: [f64; 2],
    pub rotation_logits: Vec<f64>,
    pub rotation_index: usize,
}

pub struct FieldHeads {
    pub cfg: FieldConfig,
    pub latent_spec: IrrepsSpec,
    qt: EdgeAttention,
    qo: EdgeAttention,
    qr: EdgeAttention,
    phi_rows: Arc<Vec<usize>>,
    pub rotations: Arc<RotationTable>,
}

impl FieldHeads {
    pub fn new(cfg: FieldConfig, latent_spec: IrrepsSpec) -> Result<Self> {
        contract!(cfg.k > 0 && cfg.levels > 0 && cfg.r_cut > 0.0, "field heads need k, levels and r_cut positive");
        contract!(cfg.rotation_channels > 0, "field heads need at least one rotation channel");
        contract!(cfg.lmax == latent_spec.lmax(), "field heads at degree {} over latents of degree {}", cfg.lmax, latent_spec.lmax());
        let agg = IrrepsSpec::uniform(cfg.lmax, cfg.multiplicity);
        let att = |name: &str, raw: bool| {
            let acfg = AttentionConfig { spec_in: latent_spec.clone(), spec_out: agg.clone(), hidden: cfg.edge_hidden, n_rbf: cfg.n_rbf, use_dst: false, raw_positions: raw };
            EdgeAttention::new(acfg, format!("{name}.att"))
        };
        let (qt, qo, qr) = (att("qt", cfg.raw_positions), att("qo", false), att("qr", cfg.raw_positions));
        let col = IrrepsSpec::uniform(cfg.lmax, cfg.rotation_channels);
        let phi_rows = (0..cfg.rotation_channels).flat_map(|c| (0..=cfg.lmax).flat_map(move |l| (0..2 * l + 1).map(move |m| (l, c, m)))).map(|(l, c, m)| col.offset(l) + c * (2 * l + 1) + m).collect();
        let rotations = RotationTable::cached(cfg.lmax);
        Ok(Self { cfg, latent_spec, qt, qo, qr, phi_rows: Arc::new(phi_rows), rotations })
    }

    fn agg_spec(&self) -> IrrepsSpec {
        IrrepsSpec::uniform(self.cfg.lmax, self.cfg.multiplicity)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamStore, rng: &mut R) -> Result<()> {
        let n0 = self.cfg.multiplicity;
        let hid = self.cfg.readout_hidden;
        for (att, name, outs) in [(&self.qt, "qt", 1), (&self.qo, "qo", 2)] {
            att.init(params, rng)?;
            init_dense(params, &format!("{name}.r1"), n0, hid, 1.0, &[], rng)?;
            init_dense(params, &format!("{name}.r2"), hid, outs, 1.0, &[], rng)?;
        }
        self.qr.init(params, rng)?;
        let c = self.cfg.rotation_channels;
        init_degreewise(params, "qr.col", &self.agg_spec(), &IrrepsSpec::uniform(self.cfg.lmax, c), 1.0, rng)?;
        let n = num_coeffs(self.cfg.lmax);
        params.insert_uniform("qr.psi", c, n, 1.0 / (c as f64).sqrt(), rng)
    }

    fn aggregate<T: Real>(&self, att: &EdgeAttention, tape: &mut Tape<T>, params: &ParamStore, latent: Var, latent_pos: &[Vec3], queries: &[Vec3]) -> Result<Var> {
        contract!(!latent_pos.is_empty(), "field head over an empty latent cloud");
        let graph = knn(queries, latent_pos, self.cfg.k)?;
        let geo = EdgeGeometry::new(&graph, queries, latent_pos, self.cfg.lmax.max(1), self.cfg.n_rbf, self.cfg.r_cut);
        att.forward(tape, params, latent, None, &geo)
    }

    fn readout<T: Real>(&self, tape: &mut Tape<T>, params: &ParamStore, name: &str, agg: Var) -> Result<Var> {
        let s = tape.slice_cols(agg, 0, self.cfg.multiplicity)?;
        let h = dense(tape, params, &format!("{name}.r1"), s)?;
        let h = tape.silu(h);
        dense(tape, params, &format!("{name}.r2"), h)
    }

    /// Translational logits `[n × 1]` at `candidates`.
    pub fn q_t<T: Real>(&self, tape: &mut Tape<T>, params: &ParamStore, latent: Var, latent_pos: &[Vec3], candidates: &[Vec3]) -> Result<Var> {
        let agg = self.aggregate(&self.qt, tape, params, latent, latent_pos, candidates)?;
        self.readout(tape, params, "qt", agg)
    }

    /// Close/open logits `[1 × 2]` at `position`.
    pub fn q_open<T: Real>(&self, tape: &mut Tape<T>, params: &ParamStore, latent: Var, latent_pos: &[Vec3], position: Vec3) -> Result<Var> {
        let agg = self.aggregate(&self.qo, tape, params, latent, latent_pos, &[position])?;
        self.readout(tape, params, "qo", agg)
    }

    /// Spherical coefficients `φ̂` `[C × (L+1)²]` at `position`, world frame, one row per rotation channel.
    pub fn phi<T: Real>(&self, tape: &mut Tape<T>, params: &ParamStore, latent: Var, latent_pos: &[Vec3], position: Vec3) -> Result<Var> {
        let agg = self.aggregate(&self.qr, tape, params, latent, latent_pos, &[position])?;
        let c = self.cfg.rotation_channels;
        let col = degreewise(tape, params, "qr.col", &self.agg_spec(), &IrrepsSpec::uniform(self.cfg.lmax, c), agg)?;
        tape.route(col, self.phi_rows.clone(), c, num_coeffs(self.cfg.lmax))
    }

    /// Rotational logits `[1 × G]` over the workspace-aligned grid `{R_ws · g}`.
    pub fn q_r<T: Real>(&self, tape: &mut Tape<T>, params: &ParamStore, latent: Var, latent_pos: &[Vec3], position: Vec3, ws: &Workspace) -> Result<Var> {
        let phi = self.phi(tape, params, latent, latent_pos, position)?;
        let local = self.to_workspace_frame(tape, phi, ws)?;
        let psi = tape.param(params, "qr.psi")?;
        tape.so3_conv(self.cfg.lmax, local, psi, self.rotations.table::<T>())
    }

    /// `φ̂ ↦ φ̂ · blockdiag D(R_ws)`, the coefficients seen from the workspace frame.
    fn to_workspace_frame<T: Real>(&self, tape: &mut Tape<T>, phi: Var, ws: &Workspace) -> Result<Var> {
        let n = num_coeffs(self.cfg.lmax);
        let mut m = vec![T::zero(); n * n];
        for (l, b) in wigner_blocks(self.cfg.lmax, &ws.rotation).iter().enumerate() {
            let d = 2 * l + 1;
            let o = l * l;
            for i in 0..d {
                for j in 0..d {
                    m[(o + i) * n + o + j] = T::c(b.as_slice()[i * d + j]);
                }
            }
        }
        let mv = tape.constant(n, n, m)?;
        tape.matmul(phi, mv)
    }

    /// World rotation of grid element `i`.
    pub fn grid_rotation(&self, ws: &Workspace, i: usize) -> Rotation {
        ws.rotation.compose(&self.rotations.grid.rotations()[i])
    }

    /// Greedy argmax decoding of all three heads.
    pub fn decode<T: Real>(&self, tape: &mut Tape<T>, params: &ParamStore, latent: Var, latent_pos: &[Vec3], ws: &Workspace) -> Result<Decoded> {
        let translation = coarse_to_fine(ws, self.cfg.levels, self.cfg.test_candidates, |c| {
            let z = self.q_t(tape, params, latent, latent_pos, c)?;
            Ok(tape.value(z).iter().map(|v| v.as_f64()).collect())
        })?;
        let pos = translation.position();
        let zo = self.q_open(tape, params, latent, latent_pos, pos)?;
        let open_logits = [tape.value(zo)[0].as_f64(), tape.value(zo)[1].as_f64()];
        let phi = self.phi(tape, params, latent, latent_pos, pos)?;
        let local = self.to_workspace_frame(tape, phi, ws)?;
        let psi = tape.param(params, "qr.psi")?;
        let zr = tape.so3_conv(self.cfg.lmax, local, psi, self.rotations.table::<T>())?;
        let rotation_logits: Vec<f64> = tape.value(zr).iter().map(|v| v.as_f64()).collect();
        let rotation_index = argmax(&rotation_logits);
        let mut grid_r = self.rotations.grid.rotations()[rotation_index];
        if self.cfg.refine_rotation {
            let n = num_coeffs(self.cfg.lmax);
            let (pv, sv) = (tape.value(local), tape.value(psi));
            let mut fl: Vec<Vec<f64>> = (0..=self.cfg.lmax).map(|l| vec![0.0; (2 * l + 1) * (2 * l + 1)]).collect();
            for r in 0..self.cfg.rotation_channels {
                let f = outer_per_degree(&split_degrees(self.cfg.lmax, &pv[r * n..(r + 1) * n]), &split_degrees(self.cfg.lmax, &sv[r * n..(r + 1) * n]));
                for (a, b) in fl.iter_mut().zip(&f) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
            grid_r = refine_rotation(&fl, grid_r, self.rotations.grid.resolution());
        }
        let action = KeyframeAction { position: pos, rotation: ws.rotation.compose(&grid_r), open: open_logits[1] > open_logits[0] };
        Ok(Decoded { action, translation, open_logits, rotation_logits, rotation_index })
    }
}

fn split_degrees<T: Real>(lmax: usize, v: &[T]) -> Vec<Vec<f64>> {
    (0..=lmax).map(|l| v[l * l..(l + 1) * (l + 1)].iter().map(|x| x.as_f64()).collect()).collect()
}

/// Pattern search of `g ↦ Σ_l tr(D^l(g)ᵀ F_l)` over right perturbations `g·exp(ω)`.
pub fn refine_rotation(fl: &[Vec<f64>], start: Rotation, resolution: f64) -> Rotation {
    let mut best = start;
    let mut value = so3_synthesize(fl, &best);
    let mut step = 0.5 * resolution;
    while step > 1e-3 {
        let mut improved = false;
        for axis in 0..3 {
            for sign in [1.0, -1.0] {
                let mut w = [0.0; 3];
                w[axis] = sign * step;
                let cand = best.compose(&Rotation::exp(w));
                let v = so3_synthesize(fl, &cand);
                if v > value {
                    best = cand;
                    value = v;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}
