use std::sync::Arc;

use rand::Rng;

use super::{dense, init_dense};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::tensor::{IrrepsSpec, SphericalTensor};
use crate::{Real, Result};

/// Modulation flavour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilmKind {
    /// Scales `l > 0` channels, affine on type-0 channels.
    Invariant,
    /// Also shifts every coefficient of `l > 0` channels; not equivariant.
    Plain,
}

#[derive(Clone, Debug)]
pub struct IFilmConfig {
    pub spec: IrrepsSpec,
    pub d_k: usize,
    pub hidden: usize,
    pub kind: FilmKind,
    /// Share `α` across the channels of a degree.
    pub alpha_per_degree: bool,
}

/// Condition-driven feature-wise modulation of a spherical tensor.
pub struct IFilm {
    pub cfg: IFilmConfig,
    pub prefix: String,
}

impl IFilm {
    pub fn new(cfg: IFilmConfig, prefix: impl Into<String>) -> Self {
        Self { cfg, prefix: prefix.into() }
    }

    fn n_alpha(&self) -> usize {
        let s = &self.cfg.spec;
        if self.cfg.alpha_per_degree {
            s.irreps().iter().filter(|p| p.0 > 0).count()
        } else {
            s.num_gated()
        }
    }

    fn n_shift(&self) -> usize {
        match self.cfg.kind {
            FilmKind::Invariant => self.cfg.spec.num_scalars(),
            FilmKind::Plain => self.cfg.spec.num_channels(),
        }
    }

    /// MLP output width: `α` entries, then `β` (one per type-0 channel), then `γ`.
    pub fn out_width(&self) -> usize {
        self.n_alpha() + self.cfg.spec.num_scalars() + self.n_shift()
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamStore, rng: &mut R) -> Result<()> {
        let p = &self.prefix;
        init_dense(params, &format!("{p}.h"), self.cfg.d_k, self.cfg.hidden, 1.0, &[], rng)?;
        let n_scale = self.n_alpha() + self.cfg.spec.num_scalars();
        let mut bias = vec![1.0; n_scale];
        bias.resize(self.out_width(), 0.0);
        init_dense(params, &format!("{p}.o"), self.cfg.hidden, self.out_width(), 0.1, &bias, rng)
    }

    /// `cond` is a single row `[1 × d_k]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &ParamStore, x: Var, cond: Var) -> Result<Var> {
        let p = &self.prefix;
        let h = dense(tape, params, &format!("{p}.h"), cond)?;
        let h = tape.silu(h);
        let o = dense(tape, params, &format!("{p}.o"), h)?;
        let (scale_map, shift_map) = self.maps();
        let n = scale_map.len();
        let scale = tape.route(o, Arc::new(scale_map), 1, n)?;
        let m = shift_map.len();
        let shift = tape.route(o, Arc::new(shift_map), 1, m)?;
        tape.film(&self.cfg.spec, x, scale, shift, self.cfg.kind == FilmKind::Plain)
    }

    /// Indices of the MLP outputs feeding the per-channel scale and shift.
    fn maps(&self) -> (Vec<usize>, Vec<usize>) {
        let spec = &self.cfg.spec;
        let (na, n0) = (self.n_alpha(), spec.num_scalars());
        let mut scale = Vec::with_capacity(spec.num_channels());
        let mut alpha = 0;
        let mut degree = 0;
        let mut last_l = None;
        for (l, c, _) in spec.channels() {
            if l == 0 {
                scale.push(na + c);
                continue;
            }
            if self.cfg.alpha_per_degree {
                if last_l != Some(l) {
                    last_l = Some(l);
                    degree += 1;
                }
                scale.push(degree - 1);
            } else {
                scale.push(alpha);
                alpha += 1;
            }
        }
        let shift = (0..self.n_shift()).map(|k| na + n0 + k).collect();
        (scale, shift)
    }
}

/// Applies an [`IFilm`] to a value tensor with condition `k`.
pub fn ifilm_tensor(film: &IFilm, params: &ParamStore, x: &SphericalTensor<f64>, k: &[f64]) -> Result<SphericalTensor<f64>> {
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.rows(), x.spec().width(), x.data().to_vec())?;
    let kv = tape.constant(1, k.len(), k.to_vec())?;
    let y = film.forward(&mut tape, params, xv, kv)?;
    SphericalTensor::from_data(x.spec().clone(), x.rows(), tape.value(y).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::Rotation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(kind: FilmKind, per_degree: bool, seed: u64) -> (IFilm, ParamStore, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = IFilmConfig { spec: IrrepsSpec::uniform(3, 3), d_k: 8, hidden: 16, kind, alpha_per_degree: per_degree };
        let film = IFilm::new(cfg, "film");
        let mut params = ParamStore::new();
        film.init(&mut params, &mut rng).unwrap();
        (film, params, rng)
    }

    fn random_tensor(rng: &mut ChaCha8Rng, spec: &IrrepsSpec, rows: usize) -> SphericalTensor<f64> {
        let data = (0..rows * spec.width()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SphericalTensor::from_data(spec.clone(), rows, data).unwrap()
    }

    #[test]
    fn rigged_identity() {
        let (film, mut params, mut rng) = setup(FilmKind::Invariant, false, 1);
        params.get_mut("film.o.w").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        let x = random_tensor(&mut rng, &film.cfg.spec, 4);
        let k: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert_eq!(ifilm_tensor(&film, &params, &x, &k).unwrap(), x);
    }

    #[test]
    fn commutes_with_rotation() {
        for per_degree in [false, true] {
            let (film, params, mut rng) = setup(FilmKind::Invariant, per_degree, 2);
            for _ in 0..20 {
                let x = random_tensor(&mut rng, &film.cfg.spec, 3);
                let k: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let r = Rotation::random(&mut rng);
                let a = ifilm_tensor(&film, &params, &x.rotate(&r), &k).unwrap();
                let b = ifilm_tensor(&film, &params, &x, &k).unwrap().rotate(&r);
                assert!(a.max_relative_deviation(&b, 1e-12) < 1e-12);
            }
        }
    }

    #[test]
    fn plain_film_breaks_equivariance() {
        let (film, mut params, mut rng) = setup(FilmKind::Plain, false, 3);
        let b = params.get_mut("film.o.b").unwrap();
        let n = b.data.len();
        b.data[n - 1] = 0.5;
        let x = random_tensor(&mut rng, &film.cfg.spec, 3);
        let k = vec![0.1; 8];
        let r = Rotation::random(&mut rng);
        let a = ifilm_tensor(&film, &params, &x.rotate(&r), &k).unwrap();
        let b = ifilm_tensor(&film, &params, &x, &k).unwrap().rotate(&r);
        assert!(a.max_relative_deviation(&b, 1e-12) > 1e-3);
    }

    #[test]
    fn condition_changes_scalars() {
        let (film, params, mut rng) = setup(FilmKind::Invariant, false, 4);
        let x = random_tensor(&mut rng, &film.cfg.spec, 2);
        let k1 = vec![1.0; 8];
        let k2 = vec![-1.0; 8];
        let a = ifilm_tensor(&film, &params, &x, &k1).unwrap();
        let b = ifilm_tensor(&film, &params, &x, &k2).unwrap();
        let d = (0..2).map(|r| (a.row(r)[0] - b.row(r)[0]).abs()).fold(0.0, f64::max);
        assert!(d > 1e-3);
    }
}
