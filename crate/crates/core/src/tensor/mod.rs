//! Irreps-typed feature tensors and their equivariant elementwise algebra.

mod irreps;
pub mod kernels;
pub mod serialize;

pub use irreps::IrrepsSpec;

use crate::error::contract;
use crate::so3::{wigner_blocks, Rotation};
use crate::{Real, Result};

/// Denominator guard in [`SphericalTensor::equi_layernorm`].
pub const LAYERNORM_EPS: f64 = 1e-8;

/// Per-point stack of spherical Fourier coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SphericalTensor<T: Real = f64> {
    spec: IrrepsSpec,
    rows: usize,
    data: Vec<T>,
}

/// Rotation-invariant per-point summary: type-0 values, then the norm of
/// every `l > 0` channel, in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantVector<T: Real = f64> {
    pub width: usize,
    pub data: Vec<T>,
}

/// One `m_out × m_in` matrix per output degree.
#[derive(Clone, Debug, PartialEq)]
pub struct DegreewiseWeights<T: Real = f64> {
    pub spec_in: IrrepsSpec,
    pub spec_out: IrrepsSpec,
    pub blocks: Vec<Vec<T>>,
}

impl<T: Real> DegreewiseWeights<T> {
    pub fn new(spec_in: IrrepsSpec, spec_out: IrrepsSpec, blocks: Vec<Vec<T>>) -> Result<Self> {
        contract!(blocks.len() == spec_out.irreps().len(), "expected {} weight blocks, got {}", spec_out.irreps().len(), blocks.len());
        for (&(l, m_out), b) in spec_out.irreps().iter().zip(&blocks) {
            let m_in = spec_in.multiplicity(l);
            contract!(b.len() == m_out * m_in, "degree {l}: weight block has {} entries, expected {m_out}x{m_in}", b.len());
        }
        Ok(Self { spec_in, spec_out, blocks })
    }

    pub fn identity(spec: &IrrepsSpec) -> Self {
        let blocks = spec
            .irreps()
            .iter()
            .map(|&(_, m)| {
                let mut b = vec![T::zero(); m * m];
                for i in 0..m {
                    b[i * m + i] = T::one();
                }
                b
            })
            .collect();
        Self { spec_in: spec.clone(), spec_out: spec.clone(), blocks }
    }
}

impl<T: Real> SphericalTensor<T> {
    pub fn zeros(spec: IrrepsSpec, rows: usize) -> Self {
        let data = vec![T::zero(); rows * spec.width()];
        Self { spec, rows, data }
    }

    pub fn from_data(spec: IrrepsSpec, rows: usize, data: Vec<T>) -> Result<Self> {
        contract!(data.len() == rows * spec.width(), "data length {} does not match {rows} rows of width {}", data.len(), spec.width());
        Ok(Self { spec, rows, data })
    }

    pub fn spec(&self) -> &IrrepsSpec {
        &self.spec
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        let w = self.spec.width();
        &self.data[r * w..(r + 1) * w]
    }

    /// The `2l+1` coefficients of channel `c`, degree `l`, at point `p`.
    pub fn segment(&self, p: usize, l: usize, c: usize) -> &[T] {
        let start = p * self.spec.width() + self.spec.offset(l) + c * (2 * l + 1);
        &self.data[start..start + 2 * l + 1]
    }

    pub fn segment_mut(&mut self, p: usize, l: usize, c: usize) -> &mut [T] {
        let start = p * self.spec.width() + self.spec.offset(l) + c * (2 * l + 1);
        &mut self.data[start..start + 2 * l + 1]
    }

    /// Applies `D^l(r)` to every segment.
    pub fn rotate(&self, r: &Rotation) -> Self {
        let blocks = wigner_blocks_as::<T>(self.spec.lmax(), r);
        let mut out = vec![T::zero(); self.data.len()];
        kernels::rotate_rows(&self.spec, &blocks, &self.data, &mut out);
        Self { spec: self.spec.clone(), rows: self.rows, data: out }
    }

    /// Exact invariants: type-0 values and plain channel norms.
    pub fn invariants(&self) -> InvariantVector<T> {
        let width = self.spec.num_channels();
        let mut data = vec![T::zero(); self.rows * width];
        kernels::invariants(&self.spec, &self.data, T::zero(), &mut data);
        InvariantVector { width, data }
    }

    pub fn degreewise_linear(&self, w: &DegreewiseWeights<T>) -> Result<Self> {
        contract!(w.spec_in == self.spec, "weights expect input {}, tensor has {}", w.spec_in, self.spec);
        let mut out = vec![T::zero(); self.rows * w.spec_out.width()];
        let refs: Vec<&[T]> = w.blocks.iter().map(|b| b.as_slice()).collect();
        kernels::degreewise_linear(&self.spec, &w.spec_out, &refs, &self.data, self.rows, &mut out, false);
        Ok(Self { spec: w.spec_out.clone(), rows: self.rows, data: out })
    }

    /// Divides each degree by the RMS of its channel norms plus `1e-8`.
    pub fn equi_layernorm(&self) -> Self {
        let mut out = vec![T::zero(); self.data.len()];
        kernels::layernorm(&self.spec, &self.data, T::c(LAYERNORM_EPS), &mut out);
        Self { spec: self.spec.clone(), rows: self.rows, data: out }
    }

    /// Gates every `l > 0` channel by a sigmoid of its own scalar.
    ///
    /// `scalars` is `[rows × num_gated]`, typically derived from type-0 channels.
    pub fn gate(&self, scalars: &[T]) -> Result<Self> {
        contract!(
            scalars.len() == self.rows * self.spec.num_gated(),
            "gate needs {} scalars, got {}",
            self.rows * self.spec.num_gated(),
            scalars.len()
        );
        let mut out = vec![T::zero(); self.data.len()];
        kernels::gate(&self.spec, &self.data, scalars, &mut out);
        Ok(Self { spec: self.spec.clone(), rows: self.rows, data: out })
    }

    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        contract!(self.rows == other.rows, "row mismatch {} vs {}", self.rows, other.rows);
        let data = kernels::concat_channels(&self.spec, &self.data, &other.spec, &other.data, self.rows);
        Ok(Self { spec: self.spec.concat(&other.spec), rows: self.rows, data })
    }

    pub fn cast<U: Real>(&self) -> SphericalTensor<U> {
        SphericalTensor { spec: self.spec.clone(), rows: self.rows, data: self.data.iter().map(|v| U::c(v.as_f64())).collect() }
    }

    /// `max |a − b| / max(max |b|, floor)`.
    pub fn max_relative_deviation(&self, other: &Self, floor: f64) -> f64 {
        relative_deviation(&self.data, &other.data, floor)
    }
}

/// Largest absolute difference divided by the reference magnitude.
pub fn relative_deviation<T: Real>(a: &[T], reference: &[T], floor: f64) -> f64 {
    let scale = reference.iter().map(|v| v.as_f64().abs()).fold(floor, f64::max);
    let diff = a.iter().zip(reference).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max);
    if a.len() != reference.len() {
        return f64::INFINITY;
    }
    diff / scale
}

/// Wigner blocks for `0..=lmax`, cast to `T` and flattened row-major.
pub fn wigner_blocks_as<T: Real>(lmax: usize, r: &Rotation) -> Vec<Vec<T>> {
    wigner_blocks(lmax, r).iter().map(|b| b.as_slice().iter().map(|v| T::c(*v)).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut impl Rng, spec: &IrrepsSpec, rows: usize) -> SphericalTensor {
        let data = (0..rows * spec.width()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SphericalTensor::from_data(spec.clone(), rows, data).unwrap()
    }

    fn random_weights(rng: &mut impl Rng, a: &IrrepsSpec, b: &IrrepsSpec) -> DegreewiseWeights {
        let blocks = b.irreps().iter().map(|&(l, m)| (0..m * a.multiplicity(l)).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        DegreewiseWeights::new(a.clone(), b.clone(), blocks).unwrap()
    }

    #[test]
    fn rotate_identity_and_scalars() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = IrrepsSpec::uniform(3, 2);
        let t = random_tensor(&mut rng, &spec, 4);
        assert!(t.rotate(&Rotation::identity()).max_relative_deviation(&t, 1e-12) < 1e-15);
        let s = random_tensor(&mut rng, &IrrepsSpec::scalars(3), 5);
        assert_eq!(s.rotate(&Rotation::random(&mut rng)), s);
    }

    #[test]
    fn rotate_is_homomorphic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = IrrepsSpec::new(vec![(0, 1), (1, 2), (2, 1), (3, 2)]).unwrap();
        let t = random_tensor(&mut rng, &spec, 3);
        let (r1, r2) = (Rotation::random(&mut rng), Rotation::random(&mut rng));
        let lhs = t.rotate(&r1).rotate(&r2);
        let rhs = t.rotate(&r2.compose(&r1));
        assert!(lhs.max_relative_deviation(&rhs, 1e-12) < 1e-12);
    }

    #[test]
    fn invariants_examples() {
        let spec = IrrepsSpec::new(vec![(0, 1), (1, 1)]).unwrap();
        let t = SphericalTensor::from_data(spec.clone(), 1, vec![2.0, 3.0, 0.0, 4.0]).unwrap();
        assert_eq!(t.invariants().data, vec![2.0, 5.0]);
        let z = SphericalTensor::<f64>::zeros(spec, 2);
        assert!(z.invariants().data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = IrrepsSpec::uniform(2, 3);
        let t = random_tensor(&mut rng, &spec, 4);
        assert_eq!(t.degreewise_linear(&DegreewiseWeights::identity(&spec)).unwrap(), t);
        let zero = DegreewiseWeights::new(spec.clone(), spec.clone(), spec.irreps().iter().map(|&(_, m)| vec![0.0; m * m]).collect()).unwrap();
        assert!(t.degreewise_linear(&zero).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_shape_mismatch_is_contract_error() {
        let spec = IrrepsSpec::uniform(1, 2);
        assert!(DegreewiseWeights::<f64>::new(spec.clone(), spec.clone(), vec![vec![1.0; 4]]).is_err());
        let w = DegreewiseWeights::<f64>::identity(&IrrepsSpec::uniform(1, 3));
        assert!(SphericalTensor::<f64>::zeros(spec, 1).degreewise_linear(&w).is_err());
    }

    #[test]
    fn linear_reference_value() {
        // two channels of l=1 mixed by [[1, 2], [0, -1]]
        let spec = IrrepsSpec::new(vec![(1, 2)]).unwrap();
        let t = SphericalTensor::from_data(spec.clone(), 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = DegreewiseWeights::new(spec.clone(), spec, vec![vec![1.0, 2.0, 0.0, -1.0]]).unwrap();
        assert_eq!(t.degreewise_linear(&w).unwrap().data(), &[9.0, 12.0, 15.0, -4.0, -5.0, -6.0]);
    }

    #[test]
    fn layernorm_of_unit_rms_is_identity() {
        let spec = IrrepsSpec::new(vec![(0, 1), (1, 2)]).unwrap();
        // l=1 channel norms 1 and 1 → RMS 1; scalar |1| → RMS 1
        let t = SphericalTensor::from_data(spec, 1, vec![1.0, 0.6, 0.8, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(t.equi_layernorm().max_relative_deviation(&t, 1e-12) < 1e-7);
    }

    #[test]
    fn gate_saturated_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = IrrepsSpec::uniform(2, 2);
        let t = random_tensor(&mut rng, &spec, 3);
        let g = t.gate(&vec![1e3; 3 * spec.num_gated()]).unwrap();
        assert!(g.max_relative_deviation(&t, 1e-12) < 1e-15);
        assert!(t.gate(&[1.0]).is_err());
    }

    #[test]
    fn every_operation_commutes_with_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = IrrepsSpec::new(vec![(0, 3), (1, 2), (2, 2), (3, 1)]).unwrap();
        let out_spec = IrrepsSpec::new(vec![(0, 2), (1, 3), (2, 1), (3, 2)]).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let t = random_tensor(&mut rng, &spec, 4);
            let r = Rotation::random(&mut rng);
            let w = random_weights(&mut rng, &spec, &out_spec);
            let scalars: Vec<f64> = (0..4 * spec.num_gated()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let rt = t.rotate(&r);
            let pairs = [
                (rt.degreewise_linear(&w).unwrap(), t.degreewise_linear(&w).unwrap().rotate(&r)),
                (rt.equi_layernorm(), t.equi_layernorm().rotate(&r)),
                (rt.gate(&scalars).unwrap(), t.gate(&scalars).unwrap().rotate(&r)),
            ];
            for (a, b) in &pairs {
                worst = worst.max(a.max_relative_deviation(b, 1e-12));
            }
            let inv_a = rt.invariants();
            let inv_b = t.invariants();
            worst = worst.max(relative_deviation(&inv_a.data, &inv_b.data, 1e-12));
        }
        assert!(worst < 1e-9, "worst deviation {worst}");
    }

    #[test]
    fn concat_places_channels_degreewise() {
        let a_spec = IrrepsSpec::new(vec![(0, 1), (1, 1)]).unwrap();
        let b_spec = IrrepsSpec::new(vec![(1, 1)]).unwrap();
        let a = SphericalTensor::from_data(a_spec, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = SphericalTensor::from_data(b_spec, 1, vec![5.0, 6.0, 7.0]).unwrap();
        let c = a.concat_channels(&b).unwrap();
        assert_eq!(c.spec().irreps(), &[(0, 1), (1, 2)]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }
}
