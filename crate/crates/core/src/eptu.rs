//! Equivariant point-transformer U-Net.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::contract;
use crate::layers::{
    channel_concat, degreewise, farthest_point_sampling, init_degreewise, knn, smaxpool, sup, AttentionBlock, AttentionConfig, EdgeGeometry, FilmKind, IFilm, IFilmConfig,
    KnnGraph,
};
use crate::scene::{rotation_columns, Observation};
use crate::so3::{vector_to_l1, Vec3};
use crate::tensor::{IrrepsSpec, SphericalTensor};
use crate::{Real, Result};

/// Scalar attributes per embedded point: constant, rgb, gripper marker, aperture.
pub const EMBED_SCALARS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EptuConfig {
    /// Points per level, finest first. The depth is `level_sizes.len() - 1`.
    pub level_sizes: Vec<usize>,
    pub multiplicities: Vec<usize>,
    pub lmax: usize,
    pub k_attn: usize,
    pub k_pool: usize,
    pub k_up: usize,
    pub n_rbf: usize,
    pub edge_hidden: usize,
    pub blocks_per_level: usize,
    pub film_encoder: bool,
    pub film_decoder: bool,
    pub film_kind: FilmKind,
    pub d_k: usize,
    pub film_hidden: usize,
}

impl Default for EptuConfig {
    fn default() -> Self {
        Self {
            level_sizes: vec![512, 128, 32],
            multiplicities: vec![8, 8, 8],
            lmax: 3,
            k_attn: 8,
            k_pool: 8,
            k_up: 3,
            n_rbf: 16,
            edge_hidden: 32,
            blocks_per_level: 2,
            film_encoder: true,
            film_decoder: true,
            film_kind: FilmKind::Invariant,
            d_k: 64,
            film_hidden: 32,
        }
    }
}

impl EptuConfig {
    pub fn depth(&self) -> usize {
        self.level_sizes.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        contract!(!self.level_sizes.is_empty(), "eptu needs at least one level");
        contract!(self.multiplicities.len() == self.level_sizes.len(), "eptu: {} multiplicities for {} levels", self.multiplicities.len(), self.level_sizes.len());
        contract!(self.level_sizes.windows(2).all(|w| w[0] > w[1]), "eptu level sizes must strictly decrease: {:?}", self.level_sizes);
        contract!(self.level_sizes.iter().chain(&self.multiplicities).all(|&v| v > 0), "eptu sizes and multiplicities must be positive");
        contract!(self.lmax <= crate::so3::MAX_DEGREE, "eptu lmax {} exceeds {}", self.lmax, crate::so3::MAX_DEGREE);
        contract!(self.k_attn > 0 && self.k_pool > 0 && self.k_up > 0, "eptu neighbourhood sizes must be positive");
        contract!(self.blocks_per_level > 0, "eptu needs at least one block per level");
        contract!(self.n_rbf > 0 && self.edge_hidden > 0 && self.d_k > 0 && self.film_hidden > 0, "eptu widths must be positive");
        Ok(())
    }

    pub fn level_spec(&self, level: usize) -> IrrepsSpec {
        IrrepsSpec::uniform(self.lmax, self.multiplicities[level])
    }

    pub fn embed_spec() -> IrrepsSpec {
        IrrepsSpec::new(vec![(0, EMBED_SCALARS), (1, 3)]).expect("static spec")
    }

    /// Spec of the latent features `h`.
    pub fn latent_spec(&self) -> IrrepsSpec {
        self.level_spec(0)
    }
}

/// Point positions per level and the graphs connecting them.
pub struct Pyramid {
    pub positions: Vec<Vec<Vec3>>,
    pub self_graphs: Vec<KnnGraph>,
    pub pool_graphs: Vec<KnnGraph>,
    pub up_graphs: Vec<KnnGraph>,
    pub r_cuts: Vec<f64>,
}

/// Latent features at the finest level.
#[derive(Clone, Debug)]
pub struct LatentCloud<T: Real = f64> {
    pub positions: Vec<Vec3>,
    pub features: SphericalTensor<T>,
}

/// A named intermediate of the forward pass.
pub struct Stage {
    pub name: String,
    pub level: usize,
    pub spec: IrrepsSpec,
    pub var: Var,
}

/// Result of [`Eptu::forward`].
pub struct Encoded {
    pub pyramid: Pyramid,
    pub spec: IrrepsSpec,
    pub latent: Var,
    pub stages: Vec<Stage>,
}

impl Encoded {
    pub fn positions(&self) -> &[Vec3] {
        &self.pyramid.positions[0]
    }
}

pub struct Eptu {
    pub cfg: EptuConfig,
    enc: Vec<Vec<AttentionBlock>>,
    dec: Vec<Vec<AttentionBlock>>,
}

impl Eptu {
    pub fn new(cfg: EptuConfig) -> Result<Self> {
        cfg.validate()?;
        let mut enc = Vec::new();
        let mut dec = Vec::new();
        for level in 0..=cfg.depth() {
            let spec = cfg.level_spec(level);
            let first_in = if level == 0 { EptuConfig::embed_spec() } else { cfg.level_spec(level - 1) };
            enc.push((0..cfg.blocks_per_level).map(|b| Self::block(&cfg, if b == 0 { &first_in } else { &spec }, &spec, cfg.film_encoder, format!("enc{level}.b{b}"))).collect());
            if level < cfg.depth() {
                dec.push((0..cfg.blocks_per_level).map(|b| Self::block(&cfg, &spec, &spec, cfg.film_decoder, format!("dec{level}.b{b}"))).collect());
            }
        }
        Ok(Self { cfg, enc, dec })
    }

    fn block(cfg: &EptuConfig, spec_in: &IrrepsSpec, spec_out: &IrrepsSpec, film: bool, prefix: String) -> AttentionBlock {
        let acfg = AttentionConfig { spec_in: spec_in.clone(), spec_out: spec_out.clone(), hidden: cfg.edge_hidden, n_rbf: cfg.n_rbf, use_dst: true, raw_positions: false };
        let film = film.then(|| {
            let fcfg = IFilmConfig { spec: spec_out.clone(), d_k: cfg.d_k, hidden: cfg.film_hidden, kind: cfg.film_kind, alpha_per_degree: false };
            IFilm::new(fcfg, format!("{prefix}.film"))
        });
        AttentionBlock::new(acfg, film, prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamStore, rng: &mut R) -> Result<()> {
        for b in self.enc.iter().chain(&self.dec).flatten() {
            b.init(params, rng)?;
        }
        for level in 0..self.cfg.depth() {
            let spec = self.cfg.level_spec(level);
            let cat = self.cfg.level_spec(level + 1).concat(&spec);
            init_degreewise(params, &format!("fuse{level}"), &cat, &spec, 1.0, rng)?;
        }
        Ok(())
    }

    /// Level positions and graphs; level 0 is the scene (capped by farthest
    /// point sampling) followed by the virtual gripper point.
    pub fn pyramid(&self, obs: &Observation) -> Result<Pyramid> {
        obs.validate()?;
        let cfg = &self.cfg;
        let mut level0 = scene_indices(obs, cfg.level_sizes[0])?.into_iter().map(|i| obs.points[i]).collect::<Vec<_>>();
        level0.push(obs.gripper.pose.translation);
        if cfg.depth() > 0 {
            contract!(level0.len() > cfg.level_sizes[1], "cloud of {} points is too small for level sizes {:?}", level0.len(), cfg.level_sizes);
        }
        let mut positions = vec![level0];
        for level in 1..=cfg.depth() {
            let prev = &positions[level - 1];
            let idx = farthest_point_sampling(prev, cfg.level_sizes[level])?;
            let next = idx.iter().map(|&i| prev[i]).collect();
            positions.push(next);
        }
        let mut self_graphs = Vec::new();
        let mut r_cuts = Vec::new();
        for pos in &positions {
            let g = knn(pos, pos, cfg.k_attn)?;
            r_cuts.push(g.median_distance().map_or(1.0, |m| 2.0 * m));
            self_graphs.push(g);
        }
        let mut pool_graphs = Vec::new();
        let mut up_graphs = Vec::new();
        for level in 0..cfg.depth() {
            pool_graphs.push(knn(&positions[level + 1], &positions[level], cfg.k_pool)?);
            up_graphs.push(knn(&positions[level], &positions[level + 1], cfg.k_up)?);
        }
        Ok(Pyramid { positions, self_graphs, pool_graphs, up_graphs, r_cuts })
    }

    /// Level-0 input features in the embed spec.
    pub fn embed<T: Real>(&self, obs: &Observation) -> Result<SphericalTensor<T>> {
        obs.validate()?;
        let idx = scene_indices(obs, self.cfg.level_sizes[0])?;
        Ok(embed_rows(obs, &idx))
    }

    /// Full U-Net pass recorded on `tape`; `cond` is the `[1 × d_k]` condition row.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &ParamStore, obs: &Observation, cond: Var) -> Result<Encoded> {
        let cfg = &self.cfg;
        contract!(tape.shape(cond) == (1, cfg.d_k), "eptu condition has shape {:?}, expected (1, {})", tape.shape(cond), cfg.d_k);
        let pyramid = self.pyramid(obs)?;
        let geos: Vec<EdgeGeometry<T>> = (0..=cfg.depth())
            .map(|l| EdgeGeometry::new(&pyramid.self_graphs[l], &pyramid.positions[l], &pyramid.positions[l], cfg.lmax.max(1), cfg.n_rbf, pyramid.r_cuts[l]))
            .collect();
        let x0: SphericalTensor<T> = self.embed(obs)?;
        let mut spec = x0.spec().clone();
        let mut x = tape.constant(x0.rows(), spec.width(), x0.into_data())?;
        let mut stages = vec![Stage { name: "embed".into(), level: 0, spec: spec.clone(), var: x }];
        let mut skips = Vec::new();
        for level in 0..=cfg.depth() {
            if level > 0 {
                x = smaxpool(tape, &spec, x, &pyramid.pool_graphs[level - 1])?;
                stages.push(Stage { name: format!("pool{level}"), level, spec: spec.clone(), var: x });
            }
            for block in &self.enc[level] {
                x = block.forward(tape, params, x, &geos[level], Some(cond))?;
                spec = block.attn.cfg.spec_out.clone();
                stages.push(Stage { name: block.prefix.clone(), level, spec: spec.clone(), var: x });
            }
            skips.push(x);
        }
        for level in (0..cfg.depth()).rev() {
            x = sup(tape, &spec, x, &pyramid.up_graphs[level])?;
            stages.push(Stage { name: format!("up{level}"), level, spec: spec.clone(), var: x });
            let skip_spec = cfg.level_spec(level);
            let (cat_spec, cat) = channel_concat(tape, &spec, x, &skip_spec, skips[level])?;
            stages.push(Stage { name: format!("cat{level}"), level, spec: cat_spec.clone(), var: cat });
            x = degreewise(tape, params, &format!("fuse{level}"), &cat_spec, &skip_spec, cat)?;
            spec = skip_spec;
            stages.push(Stage { name: format!("fuse{level}"), level, spec: spec.clone(), var: x });
            for block in &self.dec[level] {
                x = block.forward(tape, params, x, &geos[level], Some(cond))?;
                stages.push(Stage { name: block.prefix.clone(), level, spec: spec.clone(), var: x });
            }
        }
        Ok(Encoded { pyramid, spec, latent: x, stages })
    }

    /// Value-level encoding of one observation.
    pub fn encode<T: Real>(&self, params: &ParamStore, obs: &Observation, k: &[f64]) -> Result<LatentCloud<T>> {
        Ok(self.encode_traced::<T>(params, obs, k)?.0)
    }

    /// Encoding plus every named intermediate as `(name, level positions, tensor)`.
    #[allow(clippy::type_complexity)]
    pub fn encode_traced<T: Real>(&self, params: &ParamStore, obs: &Observation, k: &[f64]) -> Result<(LatentCloud<T>, Vec<(String, Vec<Vec3>, SphericalTensor<T>)>)> {
        let mut tape = Tape::<T>::new();
        let cond = tape.constant(1, k.len(), k.iter().map(|v| T::c(*v)).collect())?;
        let enc = self.forward(&mut tape, params, obs, cond)?;
        let mut trace = Vec::with_capacity(enc.stages.len());
        for s in &enc.stages {
            let pos = enc.pyramid.positions[s.level].clone();
            let t = SphericalTensor::from_data(s.spec.clone(), pos.len(), tape.value(s.var).to_vec())?;
            trace.push((s.name.clone(), pos, t));
        }
        let features = SphericalTensor::from_data(enc.spec.clone(), enc.positions().len(), tape.value(enc.latent).to_vec())?;
        Ok((LatentCloud { positions: enc.pyramid.positions[0].clone(), features }, trace))
    }
}

/// Scene point indices kept at level 0 (one slot is reserved for the gripper).
fn scene_indices(obs: &Observation, level0: usize) -> Result<Vec<usize>> {
    let cap = level0.saturating_sub(1).max(1);
    if obs.points.len() <= cap {
        Ok((0..obs.points.len()).collect())
    } else {
        farthest_point_sampling(&obs.points, cap)
    }
}

fn embed_rows<T: Real>(obs: &Observation, idx: &[usize]) -> SphericalTensor<T> {
    let spec = EptuConfig::embed_spec();
    let w = spec.width();
    let mut data = vec![T::zero(); (idx.len() + 1) * w];
    for (r, &i) in idx.iter().enumerate() {
        let row = &mut data[r * w..(r + 1) * w];
        row[0] = T::one();
        for c in 0..3 {
            row[1 + c] = T::c(obs.colors[i][c]);
        }
    }
    let row = &mut data[idx.len() * w..];
    row[0] = T::one();
    row[4] = T::one();
    row[5] = if obs.gripper.open { T::one() } else { T::zero() };
    for (c, col) in rotation_columns(&obs.gripper.pose.rotation).iter().enumerate() {
        let v = vector_to_l1(*col);
        for m in 0..3 {
            row[EMBED_SCALARS + 3 * c + m] = T::c(v[m]);
        }
    }
    SphericalTensor::from_data(spec, idx.len() + 1, data).expect("embed layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Gripper, Workspace};
    use crate::so3::{RigidTransform, Rotation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> EptuConfig {
        EptuConfig { level_sizes: vec![24, 10, 4], multiplicities: vec![2, 3, 2], k_attn: 5, k_pool: 4, n_rbf: 6, edge_hidden: 8, d_k: 4, film_hidden: 6, ..EptuConfig::default() }
    }

    fn observation(rng: &mut ChaCha8Rng, n: usize) -> Observation {
        Observation {
            points: (0..n).map(|_| [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)]).collect(),
            colors: (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect(),
            gripper: Gripper { pose: RigidTransform::new(Rotation::random(rng), [0.0, 0.0, 0.25]), open: true },
            workspace: Workspace::default(),
        }
    }

    #[test]
    fn scene_rows_have_no_vector_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Eptu::new(small_cfg()).unwrap();
        let obs = observation(&mut rng, 12);
        let x: SphericalTensor<f64> = net.embed(&obs).unwrap();
        for r in 0..12 {
            assert!(x.row(r)[EMBED_SCALARS..].iter().all(|v| *v == 0.0));
        }
        assert_eq!(x.rows(), 13);
    }

    #[test]
    fn gripper_vectors_follow_its_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Eptu::new(small_cfg()).unwrap();
        let obs = observation(&mut rng, 12);
        let g = RigidTransform::random(&mut rng, 0.5);
        let a: SphericalTensor<f64> = net.embed(&obs.transformed(&g)).unwrap();
        let b = net.embed::<f64>(&obs).unwrap().rotate(&g.rotation);
        assert!(a.max_relative_deviation(&b, 1e-12) < 1e-12);
    }

    #[test]
    fn encoder_commutes_stage_by_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Eptu::new(small_cfg()).unwrap();
        let mut params = ParamStore::new();
        net.init(&mut params, &mut rng).unwrap();
        let obs = observation(&mut rng, 40);
        let k = [0.5, -0.1, 0.2, 0.7];
        let (_, base) = net.encode_traced::<f64>(&params, &obs, &k).unwrap();
        for _ in 0..3 {
            let g = RigidTransform::random(&mut rng, 1.0);
            let (_, moved) = net.encode_traced::<f64>(&params, &obs.transformed(&g), &k).unwrap();
            assert_eq!(base.len(), moved.len());
            for ((name, pa, ta), (_, pb, tb)) in base.iter().zip(&moved) {
                assert!(pa.iter().zip(pb).all(|(p, q)| (0..3).all(|i| (g.apply(*p)[i] - q[i]).abs() < 1e-12)), "{name} positions");
                let dev = tb.max_relative_deviation(&ta.rotate(&g.rotation), 1e-12);
                assert!(dev < 1e-8, "{name}: {dev}");
            }
        }
    }

    #[test]
    fn condition_reaches_scalars() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Eptu::new(small_cfg()).unwrap();
        let mut params = ParamStore::new();
        net.init(&mut params, &mut rng).unwrap();
        let obs = observation(&mut rng, 30);
        let a = net.encode::<f64>(&params, &obs, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = net.encode::<f64>(&params, &obs, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        let n0 = a.features.spec().num_scalars();
        let d = (0..a.positions.len()).flat_map(|r| (0..n0).map(move |c| (r, c))).map(|(r, c)| (a.features.row(r)[c] - b.features.row(r)[c]).abs()).fold(0.0, f64::max);
        assert!(d > 1e-3, "{d}");
    }

    #[test]
    fn depth_zero_is_a_block_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = EptuConfig { level_sizes: vec![16], multiplicities: vec![2], ..small_cfg() };
        let net = Eptu::new(cfg).unwrap();
        let mut params = ParamStore::new();
        net.init(&mut params, &mut rng).unwrap();
        let (h, trace) = net.encode_traced::<f64>(&params, &observation(&mut rng, 20), &[0.0; 4]).unwrap();
        assert_eq!(trace.iter().map(|t| t.0.as_str()).collect::<Vec<_>>(), ["embed", "enc0.b0", "enc0.b1"]);
        assert_eq!(h.positions.len(), 16);
    }

    #[test]
    fn degenerate_cloud_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = Eptu::new(small_cfg()).unwrap();
        let obs = observation(&mut rng, 5);
        let mut params = ParamStore::new();
        net.init(&mut params, &mut rng).unwrap();
        assert!(matches!(net.encode::<f64>(&params, &obs, &[0.0; 4]), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = EptuConfig { level_sizes: vec![10, 10], multiplicities: vec![2, 2], ..small_cfg() };
        assert!(Eptu::new(bad).is_err());
        let bad = EptuConfig { multiplicities: vec![2], ..small_cfg() };
        assert!(Eptu::new(bad).is_err());
    }
}
