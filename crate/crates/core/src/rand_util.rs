//! Shared deterministic sampling helpers. All stochastic code in this
//! crate draws through these functions so that bit-for-bit reproducibility
//! holds across platforms.

use rand_core::RngCore;

/// Uniform double in [0, 1): the top 53 bits of one `next_u64` call.
#[inline]
pub(crate) fn uniform_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64)
}

/// Uniform double in (0, 1]; safe as a logarithm argument.
#[inline]
pub(crate) fn uniform_open_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (((rng.next_u64() >> 11) + 1) as f64) * (1.0 / (1u64 << 53) as f64)
}

/// One standard Gaussian deviate by the Box-Muller transform (two uniform
/// draws are consumed per call; the second variate is discarded to keep
/// the draw count per sample fixed).
#[inline]
pub(crate) fn gaussian_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    #[allow(unused_imports)]
    use num_traits::Float;
    let u1 = uniform_open_f64(rng);
    let u2 = uniform_f64(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * core::f64::consts::PI * u2).cos()
}

/// SplitMix64 scrambler for deriving independent sub-seeds from a master
/// seed and an index.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn uniform_in_range_and_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let a: alloc::vec::Vec<f64> = (0..100).map(|_| uniform_f64(&mut rng)).collect();
        assert!(a.iter().all(|&x| (0.0..1.0).contains(&x)));
        let mut rng2 = ChaCha12Rng::seed_from_u64(7);
        let b: alloc::vec::Vec<f64> = (0..100).map(|_| uniform_f64(&mut rng2)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 200_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let g = gaussian_f64(&mut rng);
            sum += g;
            sq += g * g;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "gaussian mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "gaussian variance {var}");
    }

    #[test]
    fn mix64_spreads_indices() {
        let a = mix64(1);
        let b = mix64(2);
        assert_ne!(a, b);
        assert_ne!(a & 0xFFFF_FFFF, b & 0xFFFF_FFFF);
    }
}
