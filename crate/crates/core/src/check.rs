//! Equivariance certification suite.
//!
//! Every record pairs a layer with the identity it must satisfy and the
//! largest deviation seen over randomized trials.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape};
use crate::field::{candidate_level, FieldConfig, FieldHeads};
use crate::layers::{knn, smaxpool, sup, AttentionBlock, AttentionConfig, EdgeGeometry, FilmKind, IFilm, IFilmConfig};
use crate::policy::tasks::{generate_scene, SceneMode, Task};
use crate::policy::{Policy, PolicyConfig};
use crate::scene::Workspace;
use crate::so3::{num_coeffs, real_sph_harmonics, s2_synthesize, sph_harmonics_upto, wigner_blocks, RigidTransform, Rotation, S2Grid, Vec3};
use crate::tensor::{relative_deviation, IrrepsSpec, SphericalTensor};
use crate::{Error, Real, Result};

const FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn default_tolerance(self) -> f64 {
        match self {
            Precision::F32 => 1e-4,
            Precision::F64 => 1e-7,
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "float32" => Ok(Precision::F32),
            "f64" | "float64" => Ok(Precision::F64),
            _ => Err(Error::Contract(format!("unknown precision {s:?} (expected f32 or f64)"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Deliberate symmetry breaks used to show the suite catches them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Raw edge displacements in the attention edge networks.
    RawPositions,
    /// Additive shifts on every coefficient in FiLM.
    PlainFilm,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw-positions" => Ok(Fault::RawPositions),
            "plain-film" => Ok(Fault::PlainFilm),
            _ => Err(Error::Contract(format!("unknown fault {s:?} (expected raw-positions or plain-film)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub lmax: usize,
    pub trials: usize,
    pub tolerance: f64,
    pub precision: Precision,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { lmax: 3, trials: 50, tolerance: Precision::F64.default_tolerance(), precision: Precision::F64, seed: 0, fault: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub layer: String,
    pub identity: String,
    pub trials: usize,
    pub max_deviation: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckRecord {
    fn new(layer: impl Into<String>, identity: impl Into<String>, threshold: f64, devs: &[f64]) -> Self {
        let max_deviation = devs.iter().copied().fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
        Self { layer: layer.into(), identity: identity.into(), trials: devs.len(), max_deviation, threshold, pass: max_deviation <= threshold }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub config: CheckConfig,
    pub pass: bool,
    pub records: Vec<CheckRecord>,
}

impl CheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.records.iter().filter(|r| !r.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs the whole property matrix for `cfg`.
pub fn run(cfg: &CheckConfig) -> Result<CheckReport> {
    crate::error::contract!(cfg.lmax <= crate::so3::MAX_DEGREE, "degree {} exceeds supported maximum {}", cfg.lmax, crate::so3::MAX_DEGREE);
    crate::error::contract!(cfg.trials > 0, "at least one trial is required");
    let mut records = so3_records(cfg)?;
    match cfg.precision {
        Precision::F64 => records.extend(layer_records::<f64>(cfg)?),
        Precision::F32 => records.extend(layer_records::<f32>(cfg)?),
    }
    let policy = checked_policy_config(cfg);
    records.extend(end_to_end(&policy, cfg.trials, cfg.seed ^ 0xe2e, cfg.precision, cfg.tolerance)?);
    let pass = records.iter().all(|r| r.pass);
    Ok(CheckReport { config: cfg.clone(), pass, records })
}

/// Desk-scale network at the configured degree with any fault applied.
pub fn checked_policy_config(cfg: &CheckConfig) -> PolicyConfig {
    let mut p = PolicyConfig::default().with_lmax(cfg.lmax);
    match cfg.fault {
        Some(Fault::RawPositions) => p.field.raw_positions = true,
        Some(Fault::PlainFilm) => p.eptu.film_kind = FilmKind::Plain,
        None => {}
    }
    p
}

fn random_points<R: Rng>(rng: &mut R, n: usize, half: f64) -> Vec<Vec3> {
    (0..n).map(|_| [rng.gen_range(-half..half), rng.gen_range(-half..half), rng.gen_range(-half..half)]).collect()
}

fn random_tensor<T: Real, R: Rng>(rng: &mut R, spec: &IrrepsSpec, rows: usize) -> SphericalTensor<T> {
    let data = (0..rows * spec.width()).map(|_| T::c(rng.gen_range(-1.0..1.0))).collect();
    SphericalTensor::from_data(spec.clone(), rows, data).expect("sized")
}

fn moved(g: &RigidTransform, pts: &[Vec3]) -> Vec<Vec3> {
    pts.iter().map(|p| g.apply(*p)).collect()
}

fn deviation<T: Real>(a: &SphericalTensor<T>, reference: &SphericalTensor<T>) -> f64 {
    a.max_relative_deviation(reference, FLOOR)
}

fn so3_records(cfg: &CheckConfig) -> Result<Vec<CheckRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x503);
    let lmax = cfg.lmax;
    let (mut hom, mut sh) = (Vec::new(), Vec::new());
    let n = num_coeffs(lmax);
    let mut y = vec![0.0; n];
    let mut yr = vec![0.0; n];
    for _ in 0..cfg.trials {
        let (a, b) = (Rotation::random(&mut rng), Rotation::random(&mut rng));
        let (da, db, dab) = (wigner_blocks(lmax, &a), wigner_blocks(lmax, &b), wigner_blocks(lmax, &a.compose(&b)));
        let mut worst: f64 = 0.0;
        for l in 0..=lmax {
            let p = da[l].matmul(&db[l]);
            let diff = p.as_slice().iter().zip(dab[l].as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            worst = worst.max(diff);
        }
        hom.push(worst);
        let v = random_points(&mut rng, 1, 1.0)[0];
        let u = crate::so3::scale(v, 1.0 / crate::so3::norm(v));
        sph_harmonics_upto(lmax, u, &mut y);
        sph_harmonics_upto(lmax, a.apply(u), &mut yr);
        let rotated: Vec<f64> = da.iter().enumerate().flat_map(|(l, d)| d.apply_vec(&y[l * l..(l + 1) * (l + 1)])).collect();
        sh.push(relative_deviation(&yr, &rotated, FLOOR));
    }
    let tol = cfg.tolerance.min(1e-7);
    Ok(vec![
        CheckRecord::new("wigner", "D(R1 R2) = D(R1) D(R2)", tol, &hom),
        CheckRecord::new("spherical_harmonics", "Y(R u) = D(R) Y(u)", tol, &sh),
    ])
}

fn layer_records<T: Real>(cfg: &CheckConfig) -> Result<Vec<CheckRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tol = cfg.tolerance;
    let spec = IrrepsSpec::uniform(cfg.lmax, 3);
    let raw = cfg.fault == Some(Fault::RawPositions);
    let film_kind = if cfg.fault == Some(Fault::PlainFilm) { FilmKind::Plain } else { FilmKind::Invariant };
    let mut devs: [Vec<f64>; 6] = Default::default();
    for trial in 0..cfg.trials {
        let pts = random_points(&mut rng, 40, 0.3);
        let x: SphericalTensor<T> = random_tensor(&mut rng, &spec, 40);
        let g = RigidTransform::random(&mut rng, 0.5);
        let (pm, xr) = (moved(&g, &pts), x.rotate(&g.rotation));

        let sel = crate::layers::farthest_point_sampling(&pts, 10)?;
        let (q, qm): (Vec<Vec3>, Vec<Vec3>) = sel.iter().map(|&i| (pts[i], pm[i])).unzip();
        let pool = |xs: &SphericalTensor<T>, q: &[Vec3], p: &[Vec3]| crate::layers::smaxpool_tensor(xs, &knn(q, p, 8)?);
        devs[0].push(deviation(&pool(&xr, &qm, &pm)?, &pool(&x, &q, &pts)?.rotate(&g.rotation)));

        let up = random_points(&mut rng, 12, 0.3);
        let upm = moved(&g, &up);
        let ups = |xs: &SphericalTensor<T>, q: &[Vec3], p: &[Vec3]| crate::layers::sup_tensor(xs, &knn(q, p, 3)?);
        devs[1].push(deviation(&ups(&xr, &upm, &pm)?, &ups(&x, &up, &pts)?.rotate(&g.rotation)));

        let k: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let film = IFilm::new(IFilmConfig { spec: spec.clone(), d_k: 8, hidden: 12, kind: film_kind, alpha_per_degree: trial % 2 == 1 }, "film");
        let mut params = ParamStore::new();
        film.init(&mut params, &mut rng)?;
        let apply_film = |xs: &SphericalTensor<T>| -> Result<SphericalTensor<T>> {
            let mut tape = Tape::<T>::new();
            let xv = tape.constant(xs.rows(), spec.width(), xs.data().to_vec())?;
            let kv = tape.constant(1, 8, k.iter().map(|v| T::c(*v)).collect())?;
            let y = film.forward(&mut tape, &params, xv, kv)?;
            SphericalTensor::from_data(spec.clone(), xs.rows(), tape.value(y).to_vec())
        };
        devs[2].push(deviation(&apply_film(&xr)?, &apply_film(&x)?.rotate(&g.rotation)));

        let acfg = AttentionConfig { spec_in: spec.clone(), spec_out: spec.clone(), hidden: 12, n_rbf: 8, use_dst: true, raw_positions: raw };
        let fcfg = IFilmConfig { spec: spec.clone(), d_k: 8, hidden: 12, kind: film_kind, alpha_per_degree: false };
        let block = AttentionBlock::new(acfg, Some(IFilm::new(fcfg, "blk.film")), "blk");
        let mut params = ParamStore::new();
        block.init(&mut params, &mut rng)?;
        let apply_block = |xs: &SphericalTensor<T>, p: &[Vec3]| -> Result<SphericalTensor<T>> {
            let mut tape = Tape::<T>::new();
            let geo = EdgeGeometry::new(&knn(p, p, 8)?, p, p, cfg.lmax.max(1), 8, 0.25);
            let xv = tape.constant(xs.rows(), spec.width(), xs.data().to_vec())?;
            let kv = tape.constant(1, 8, k.iter().map(|v| T::c(*v)).collect())?;
            let y = block.forward(&mut tape, &params, xv, &geo, Some(kv))?;
            SphericalTensor::from_data(spec.clone(), xs.rows(), tape.value(y).to_vec())
        };
        devs[3].push(deviation(&apply_block(&xr, &pm)?, &apply_block(&x, &pts)?.rotate(&g.rotation)));

        let pool_graph = knn(&q, &pts, 8)?;
        let pool_graph_m = knn(&qm, &pm, 8)?;
        let on_tape = |xs: &SphericalTensor<T>, graph: &crate::layers::KnnGraph, up: bool| -> Result<SphericalTensor<T>> {
            let mut tape = Tape::<T>::new();
            let xv = tape.constant(xs.rows(), spec.width(), xs.data().to_vec())?;
            let y = if up { sup(&mut tape, &spec, xv, graph)? } else { smaxpool(&mut tape, &spec, xv, graph)? };
            SphericalTensor::from_data(spec.clone(), graph.n_dst, tape.value(y).to_vec())
        };
        let a = on_tape(&xr, &pool_graph_m, false)?;
        let b = on_tape(&x, &pool_graph, false)?.rotate(&g.rotation);
        let up_graph = knn(&up, &pts, 3)?;
        let up_graph_m = knn(&upm, &pm, 3)?;
        let c = on_tape(&xr, &up_graph_m, true)?;
        let d = on_tape(&x, &up_graph, true)?.rotate(&g.rotation);
        devs[4].push(deviation(&a, &b).max(deviation(&c, &d)));

        let inv = |xs: &SphericalTensor<T>| xs.invariants();
        let (ia, ib) = (inv(&xr), inv(&x));
        devs[5].push(relative_deviation(&ia.data, &ib.data, FLOOR));
    }
    let mut out = vec![
        CheckRecord::new("smaxpool", "pool(g X, g P) = D(R) pool(X, P)", tol, &devs[0]),
        CheckRecord::new("sup", "up(g X, g P) = D(R) up(X, P)", tol, &devs[1]),
        CheckRecord::new("ifilm", "iFiLM(D(R) x, k) = D(R) iFiLM(x, k)", tol, &devs[2]),
        CheckRecord::new("attention", "block(g X, g P) = D(R) block(X, P)", tol, &devs[3]),
        CheckRecord::new("pool_and_upsample_on_tape", "recorded ops commute with D(R)", tol, &devs[4]),
        CheckRecord::new("invariants", "|D(R) x| = |x| per channel", tol, &devs[5]),
    ];
    out.extend(eptu_records::<T>(cfg, &mut rng)?);
    out.extend(head_records::<T>(cfg, &mut rng)?);
    Ok(out)
}

fn eptu_records<T: Real>(cfg: &CheckConfig, rng: &mut ChaCha8Rng) -> Result<Vec<CheckRecord>> {
    let pcfg = checked_policy_config(cfg);
    let policy = Policy::new(pcfg)?;
    let tasks = Task::all();
    let mut names: Vec<String> = Vec::new();
    let mut devs: Vec<Vec<f64>> = Vec::new();
    let mut pos_dev = Vec::new();
    for trial in 0..cfg.trials {
        let mut params = ParamStore::new();
        policy.eptu.init(&mut params, rng)?;
        let scene = generate_scene(rng, tasks[trial % tasks.len()], SceneMode::Se3);
        let obs = &scene.demo.observation;
        let k = policy.condition(&scene.demo.instruction)?;
        let g = RigidTransform::random(rng, 0.3);
        let (_, base) = policy.eptu.encode_traced::<T>(&params, obs, &k)?;
        let (_, other) = policy.eptu.encode_traced::<T>(&params, &obs.transformed(&g), &k)?;
        if names.is_empty() {
            names = base.iter().map(|s| s.0.clone()).collect();
            devs = vec![Vec::new(); names.len()];
        }
        let mut worst_pos: f64 = 0.0;
        for (i, ((_, pa, ta), (_, pb, tb))) in base.iter().zip(&other).enumerate() {
            for (p, q) in pa.iter().zip(pb) {
                worst_pos = worst_pos.max(crate::so3::dist(g.apply(*p), *q));
            }
            devs[i].push(deviation(tb, &ta.rotate(&g.rotation)));
        }
        pos_dev.push(worst_pos);
    }
    let mut out = vec![CheckRecord::new("eptu.points", "level points of g P = g (level points of P)", 1e-9, &pos_dev)];
    for (name, d) in names.iter().zip(&devs) {
        out.push(CheckRecord::new(format!("eptu.{name}"), "stage(g P, D(R) X) = D(R) stage(P, X)", cfg.tolerance, d));
    }
    Ok(out)
}

fn head_records<T: Real>(cfg: &CheckConfig, rng: &mut ChaCha8Rng) -> Result<Vec<CheckRecord>> {
    let lmax = cfg.lmax;
    let spec = IrrepsSpec::uniform(lmax, 4);
    let fcfg = FieldConfig { lmax, multiplicity: 4, edge_hidden: 16, readout_hidden: 16, rotation_channels: 2, raw_positions: cfg.fault == Some(Fault::RawPositions), ..FieldConfig::default() };
    let heads = FieldHeads::new(fcfg, spec.clone())?;
    let quad = S2Grid::gauss_legendre((2 * lmax).max(2));
    let mut devs: [Vec<f64>; 4] = Default::default();
    for _ in 0..cfg.trials {
        let mut params = ParamStore::new();
        heads.init(&mut params, rng)?;
        let pos = random_points(rng, 30, 0.15);
        let x: SphericalTensor<T> = random_tensor(rng, &spec, 30);
        let ws = Workspace { center: [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)], rotation: Rotation::random(rng), half_extent: 0.3 };
        let g = RigidTransform::random(rng, 0.5);
        let (pm, xr, wsm) = (moved(&g, &pos), x.rotate(&g.rotation), ws.transformed(&g));
        let cands = candidate_level(&ws, 125, 0, ws.center).candidates;
        let cands_m = candidate_level(&wsm, 125, 0, wsm.center).candidates;
        let query = random_points(rng, 1, 0.1)[0];
        let eval = |xs: &SphericalTensor<T>, p: &[Vec3], c: &[Vec3], w: &Workspace, q: Vec3| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
            let mut tape = Tape::<T>::new();
            let xv = tape.constant(xs.rows(), spec.width(), xs.data().to_vec())?;
            let zt = heads.q_t(&mut tape, &params, xv, p, c)?;
            let zo = heads.q_open(&mut tape, &params, xv, p, q)?;
            let zr = heads.q_r(&mut tape, &params, xv, p, q, w)?;
            let phi = heads.phi(&mut tape, &params, xv, p, q)?;
            let f = |v: crate::autodiff::Var| tape.value(v).iter().map(|a| a.as_f64()).collect::<Vec<f64>>();
            Ok((f(zt), f(zo), f(zr), f(phi)))
        };
        let (ta, oa, ra, phi) = eval(&x, &pos, &cands, &ws, query)?;
        let (tb, ob, rb, _) = eval(&xr, &pm, &cands_m, &wsm, g.apply(query))?;
        devs[0].push(relative_deviation(&tb, &ta, FLOOR));
        devs[1].push(relative_deviation(&ob, &oa, FLOOR));
        devs[2].push(relative_deviation(&rb, &ra, FLOOR));

        let psi = &params.get("qr.psi")?.data;
        let i = rng.gen_range(0..ra.len());
        let world = heads.grid_rotation(&ws, i);
        let n = num_coeffs(lmax);
        let mut direct = 0.0;
        for (a, b) in phi.chunks(n).zip(psi.chunks(n)) {
            direct += correlate_by_quadrature(lmax, a, b, &world, &quad)?;
        }
        let scale = ra.iter().fold(FLOOR, |m, v| m.max(v.abs()));
        devs[3].push((ra[i] - direct).abs() / scale);
    }
    let tol = cfg.tolerance;
    Ok(vec![
        CheckRecord::new("q_t", "Q_t(g X, g c) = Q_t(X, c)", tol, &devs[0]),
        CheckRecord::new("q_open", "Q_open(g X, g q) = Q_open(X, q)", tol, &devs[1]),
        CheckRecord::new("q_r", "Q_r(g X, g q, g W)[i] = Q_r(X, q, W)[i]", tol, &devs[2]),
        CheckRecord::new("so3_conv", "Fourier Q_r = quadrature of phi(u) psi(R^-1 u)", tol.max(1e-6), &devs[3]),
    ])
}

/// `∫ φ(u) ψ(R⁻¹u) du` by Gauss–Legendre quadrature.
fn correlate_by_quadrature(lmax: usize, phi: &[f64], psi: &[f64], r: &Rotation, grid: &S2Grid) -> Result<f64> {
    let split = |v: &[f64]| (0..=lmax).map(|l| v[l * l..(l + 1) * (l + 1)].to_vec()).collect::<Vec<_>>();
    let fa = s2_synthesize(&split(phi), grid);
    let rinv = r.inverse();
    let mut acc = 0.0;
    for ((u, w), f) in grid.directions().iter().zip(grid.weights()).zip(&fa) {
        let v = rinv.apply(*u);
        let mut p = 0.0;
        for l in 0..=lmax {
            let y = real_sph_harmonics(l, v)?;
            p += y.iter().zip(&psi[l * l..(l + 1) * (l + 1)]).map(|(a, b)| a * b).sum::<f64>();
        }
        acc += w * f * p;
    }
    Ok(acc)
}

/// Decoded-action covariance of a randomly initialized policy under random
/// rigid motions of toy scenes.
pub fn end_to_end(cfg: &PolicyConfig, trials: usize, seed: u64, precision: Precision, tolerance: f64) -> Result<Vec<CheckRecord>> {
    let policy = Policy::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = Task::all();
    let mut devs: [Vec<f64>; 4] = Default::default();
    let (mut t_bound, mut r_bound) = (0.0f64, policy.heads.rotations.grid.resolution());
    for trial in 0..trials {
        let mut params = ParamStore::new();
        policy.init(&mut params, &mut rng)?;
        let scene = generate_scene(&mut rng, tasks[trial % tasks.len()], SceneMode::Se3);
        let d = &scene.demo;
        let g = RigidTransform::random(&mut rng, 0.3);
        let other = d.observation.transformed(&g);
        let (a, b) = match precision {
            Precision::F64 => (policy.act_in::<f64>(&params, &d.observation, &d.instruction)?, policy.act_in::<f64>(&params, &other, &d.instruction)?),
            Precision::F32 => (policy.act_in::<f32>(&params, &d.observation, &d.instruction)?, policy.act_in::<f32>(&params, &other, &d.instruction)?),
        };
        t_bound = t_bound.max(a.translation.final_spacing());
        r_bound = r_bound.max(policy.heads.rotations.grid.resolution());
        let expect = a.action.transformed(&g);
        devs[0].push(crate::so3::dist(expect.position, b.action.position));
        devs[1].push(Rotation::geodesic_distance(&expect.rotation, &b.action.rotation));
        devs[2].push(if a.action.open == b.action.open { 0.0 } else { 1.0 });
        let (la, lb) = (&a.translation.levels[0].1, &b.translation.levels[0].1);
        devs[3].push(relative_deviation(lb, la, FLOOR));
    }
    Ok(vec![
        CheckRecord::new("end_to_end.a_t", "|a_t*(g x) - g a_t*(x)| <= final spacing (m)", t_bound, &devs[0]),
        CheckRecord::new("end_to_end.a_r", "angle(a_r*(g x), R a_r*(x)) <= grid resolution (rad)", r_bound, &devs[1]),
        CheckRecord::new("end_to_end.a_open", "a_open*(g x) = a_open*(x)", 0.0, &devs[2]),
        CheckRecord::new("end_to_end.q_t", "Q_t(g x)(g c) = Q_t(x)(c)", tolerance, &devs[3]),
    ])
}
