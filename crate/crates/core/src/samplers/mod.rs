//! Seeded random streams and the sampling primitives used by the Gibbs
//! engines, the bootstrap and the simulation harness.
//!
//! Every stream is a ChaCha8 generator keyed by `(seed, stream_id)`. Child
//! streams for chains, bootstrap replicates and simulation replicates are
//! derived deterministically, so results do not depend on thread scheduling.

mod truncated;

pub use truncated::draw_trunc_inverse_gamma;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal, StudentT};

use crate::error::{Result, SaeError};

/// A reproducible random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Independent child stream number `index`. Depends only on this
    /// stream's `(seed, stream_id)`, not on how many draws were consumed.
    pub fn child(&self, index: u64) -> RngStream {
        let key = splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0x5ae)));
        RngStream::new(key, index)
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn draw_normal(rng: &mut RngStream, mean: f64, variance: f64) -> Result<f64> {
    if !(variance >= 0.0) || !variance.is_finite() || !mean.is_finite() {
        return Err(SaeError::invalid(format!(
            "normal requires finite mean and variance >= 0 (mean {mean}, variance {variance})"
        )));
    }
    if variance == 0.0 {
        return Ok(mean);
    }
    Ok(mean + variance.sqrt() * rng.standard_normal())
}

/// Gamma variate with the given shape and rate (mean `shape / rate`).
pub fn draw_gamma(rng: &mut RngStream, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
        return Err(SaeError::invalid(format!(
            "gamma requires shape > 0 and rate > 0 (shape {shape}, rate {rate})"
        )));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| SaeError::invalid(e.to_string()))?;
    Ok(g.sample(rng))
}

/// Inverse-gamma variate, density ∝ t^(−shape−1) exp(−rate/t). Computed as
/// the reciprocal of a `Gamma(shape, rate)` draw.
pub fn draw_inverse_gamma(rng: &mut RngStream, shape: f64, rate: f64) -> Result<f64> {
    draw_gamma(rng, shape, rate).map(|g| 1.0 / g)
}

pub fn draw_beta(rng: &mut RngStream, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(SaeError::invalid(format!(
            "beta requires positive parameters (a {a}, b {b})"
        )));
    }
    let d = Beta::new(a, b).map_err(|e| SaeError::invalid(e.to_string()))?;
    Ok(d.sample(rng))
}

pub fn draw_bernoulli(rng: &mut RngStream, prob: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(SaeError::invalid(format!(
            "bernoulli probability {prob} outside [0, 1]"
        )));
    }
    Ok(rng.uniform() < prob)
}

pub fn draw_student_t(rng: &mut RngStream, dof: f64) -> Result<f64> {
    if !(dof > 0.0) || dof.is_nan() {
        return Err(SaeError::invalid(format!("student t requires dof > 0, got {dof}")));
    }
    let d = StudentT::new(dof).map_err(|e| SaeError::invalid(e.to_string()))?;
    Ok(d.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::ks_test;
    use statrs::distribution::{ContinuousCDF, Normal};

    const N: usize = 100_000;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn streams_are_reproducible() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        let xa: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert_eq!(xa, xb);
        let mut c = RngStream::new(42, 8);
        let xc: Vec<u64> = (0..64).map(|_| c.next_u64()).collect();
        assert_ne!(xa, xc);
    }

    #[test]
    fn child_ignores_consumed_state() {
        let a = RngStream::new(9, 1);
        let mut b = RngStream::new(9, 1);
        b.next_u64();
        assert_eq!(a.child(3).next_u64(), b.child(3).next_u64());
        assert_ne!(a.child(3).next_u64(), a.child(4).next_u64());
    }

    #[test]
    fn normal_degenerate_and_errors() {
        let mut rng = RngStream::new(1, 0);
        assert_eq!(draw_normal(&mut rng, 3.0, 0.0).unwrap(), 3.0);
        assert!(draw_normal(&mut rng, 0.0, -1.0).is_err());
        assert!(draw_normal(&mut rng, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn normal_moments_and_ks() {
        let mut rng = RngStream::new(2, 0);
        let xs: Vec<f64> = (0..N).map(|_| draw_normal(&mut rng, 0.0, 1.0).unwrap()).collect();
        let (mean, var) = moments(&xs);
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.03, "{var}");
        let ys: Vec<f64> = (0..N).map(|_| draw_normal(&mut rng, 1.0, 1.0).unwrap()).collect();
        let d = Normal::new(1.0, 1.0).unwrap();
        assert!(ks_test(&ys, |x| d.cdf(x)).p_value > 0.01);
    }

    #[test]
    fn inverse_gamma_mean() {
        let mut rng = RngStream::new(3, 0);
        let xs: Vec<f64> = (0..N)
            .map(|_| draw_inverse_gamma(&mut rng, 3.0, 2.0).unwrap())
            .collect();
        let (mean, _) = moments(&xs);
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(draw_inverse_gamma(&mut rng, 0.0, 1.0).is_err());
        assert!(draw_inverse_gamma(&mut rng, 1.0, -1.0).is_err());
    }

    #[test]
    fn inverse_gamma_is_reciprocal_gamma() {
        let mut a = RngStream::new(4, 0);
        let mut b = RngStream::new(4, 0);
        for _ in 0..100 {
            let g = draw_gamma(&mut a, 2.5, 1.5).unwrap();
            let ig = draw_inverse_gamma(&mut b, 2.5, 1.5).unwrap();
            assert_eq!(1.0 / g, ig);
        }
    }

    #[test]
    fn bernoulli_edges_and_frequency() {
        let mut rng = RngStream::new(5, 0);
        for _ in 0..1000 {
            assert!(draw_bernoulli(&mut rng, 1.0).unwrap());
            assert!(!draw_bernoulli(&mut rng, 0.0).unwrap());
        }
        let hits = (0..N).filter(|_| draw_bernoulli(&mut rng, 0.9).unwrap()).count();
        assert!((hits as f64 / N as f64 - 0.9).abs() < 0.005);
        assert!(draw_bernoulli(&mut rng, 1.5).is_err());
        assert!(draw_bernoulli(&mut rng, -0.1).is_err());
    }

    #[test]
    fn beta_checks() {
        let mut rng = RngStream::new(6, 0);
        let xs: Vec<f64> = (0..N).map(|_| draw_beta(&mut rng, 20.0, 20.0).unwrap()).collect();
        assert!((moments(&xs).0 - 0.5).abs() < 0.01);
        let xs: Vec<f64> = (0..N).map(|_| draw_beta(&mut rng, 20.0, 172.0).unwrap()).collect();
        assert!((moments(&xs).0 - 20.0 / 192.0).abs() < 0.002);
        assert!(draw_beta(&mut rng, 0.0, 1.0).is_err());
    }

    #[test]
    fn student_t_checks() {
        let mut rng = RngStream::new(7, 0);
        let xs: Vec<f64> = (0..N).map(|_| draw_student_t(&mut rng, 4.0).unwrap()).collect();
        let (mean, var) = moments(&xs);
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var / 2.0 - 1.0).abs() < 0.05, "{var}");
        assert!(draw_student_t(&mut rng, 0.0).is_err());
    }
}
