//! Dense row-major tensors over f32 or f64.
//!
//! Every value the network touches lives in a [`Tensor`]. The element type is
//! selected once at the top of a run (`f32` for training speed, `f64` for
//! gradient checks) and threaded through as the `Scalar` type parameter.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Element type of all tensors: `f32` or `f64`.
///
/// Random draws and literals go through `f64` so that the same seed produces
/// the same numbers (up to rounding) in both precisions.
pub trait Scalar:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Display
    + std::fmt::Debug
    + Default
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(x: f32) -> Self;
    fn to_f32(self) -> f32;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(x: f32) -> Self {
        x
    }
    fn to_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// Deterministic RNG used everywhere. Seeded ChaCha so that runs are
/// bit-reproducible across platforms.
pub type Rand = ChaCha8Rng;

/// Build the crate-wide RNG from a u64 seed.
pub fn rng_from_seed(seed: u64) -> Rand {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream for (seed, stream knot) pairs, e.g. one per
/// sample per epoch. SplitMix64 finalizer over the combined words.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(b.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Dense rank-N array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![E::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: E) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::shape("from_vec data length", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64s(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| E::from_f64(x)).collect())
    }

    /// i.i.d. Normal(0, std^2) entries.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rand) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let x: f64 = StandardNormal.sample(rng);
                E::from_f64(x * std)
            })
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// i.i.d. Uniform(-bound, bound) entries; the fan-in init used for all
    /// convolution and affine weights.
    pub fn rand_uniform(shape: &[usize], bound: f64, rng: &mut Rand) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Extent of axis `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    /// Reinterpret as `shape` without moving data; element count must match.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, value: E) {
        for x in self.data.iter_mut() {
            *x = value;
        }
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn assert_finite(&self, context: &str) -> Result<()> {
        if self.is_all_finite() {
            Ok(())
        } else {
            Err(Error::numerical(format!(
                "non-finite value in {context} (shape {:?})",
                self.shape
            )))
        }
    }

    /// Cast to another element type.
    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| F::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|&x| x.to_f32()).collect()
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Largest absolute difference to `other`; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor<E>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Row-major flat offset for a 4D [d0,d1,d2,d3] tensor.
#[inline(always)]
pub fn idx4(shape: &[usize], a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * shape[1] + b) * shape[2] + c) * shape[3] + d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        let r = Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]);
        assert!(r.is_err());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::<f64>::from_vec(&[2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        let r = t.clone().reshaped(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(&[4, 2]).is_err());
    }

    #[test]
    fn randn_empirical_std() {
        let mut rng = rng_from_seed(1);
        let t = Tensor::<f64>::randn(&[100, 100], 0.2, &mut rng);
        let mean = t.data().iter().sum::<f64>() / t.numel() as f64;
        let var = t.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / t.numel() as f64;
        let std = var.sqrt();
        assert!((std - 0.2).abs() / 0.2 < 0.05, "std {std}");
    }

    #[test]
    fn same_seed_same_draws_across_precision() {
        let a = Tensor::<f32>::randn(&[16], 1.0, &mut rng_from_seed(7));
        let b = Tensor::<f64>::randn(&[16], 1.0, &mut rng_from_seed(7));
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert!((x.to_f64() - y).abs() < 1e-6);
        }
    }

    #[test]
    fn derive_seed_spreads() {
        let s = derive_seed(42, 1, 2);
        let t = derive_seed(42, 2, 1);
        assert_ne!(s, t);
        assert_eq!(s, derive_seed(42, 1, 2));
    }
}
