//! Counter-based random numbers.
//!
//! Every random quantity in the crate is a pure function of a 64-bit key and
//! a 64-bit counter, so any draw can be replayed without materialising the
//! stream and parallel replicates never share state. Keys are split from a
//! master seed with [`derive_key`].

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const STREAM: u64 = 0xd1b5_4a32_d192_ed03;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream tags used when splitting keys. Distinct tags give independent lanes.
pub mod tag {
    pub const ENVIRONMENT: u64 = 1;
    pub const LATTICE_OFFSET: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const LAMBDA: u64 = 4;
    pub const BRIDGE: u64 = 5;
    pub const THINNING: u64 = 6;
    pub const REPLICATE: u64 = 7;
    pub const PERMUTATION: u64 = 8;
    pub const PARTNER: u64 = 9;
    pub const PROBE: u64 = 10;
}

/// Derive an independent key from `(seed, index, tag)`.
#[inline]
pub fn derive_key(seed: u64, index: u64, tag: u64) -> u64 {
    let a = mix64(seed ^ tag.wrapping_mul(STREAM));
    let b = mix64(a.wrapping_add(index.wrapping_mul(GOLDEN)));
    mix64(b ^ tag)
}

/// A stateless generator: output `i` is `f(key, i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Sub-stream for a given index (e.g. a replicate or a unit interval).
    pub fn split(&self, index: u64, tag: u64) -> Self {
        Self::new(derive_key(self.key, index, tag))
    }

    #[inline]
    pub fn bits(&self, counter: u64) -> u64 {
        let z = mix64(self.key ^ counter.wrapping_mul(GOLDEN));
        mix64(z.wrapping_add(counter).wrapping_add(STREAM))
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        ((self.bits(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on (-1, 1).
    #[inline]
    pub fn symmetric(&self, counter: u64) -> f64 {
        2.0 * self.uniform(counter) - 1.0
    }

    /// Standard normal via Box-Muller; consumes counters `2c` and `2c + 1`.
    #[inline]
    pub fn normal(&self, counter: u64) -> f64 {
        let u1 = self.uniform(counter.wrapping_mul(2));
        let u2 = self.uniform(counter.wrapping_mul(2).wrapping_add(1));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[inline]
    pub fn bernoulli(&self, counter: u64, p: f64) -> bool {
        self.uniform(counter) < p
    }

    /// Uniform index in `0..n` (n > 0).
    #[inline]
    pub fn below(&self, counter: u64, n: u64) -> u64 {
        ((self.bits(counter) as u128 * n as u128) >> 64) as u64
    }

    /// Fisher-Yates shuffle driven by counters `base..base + len`.
    pub fn shuffle<T>(&self, base: u64, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(base + i as u64, i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_is_exact() {
        let rng = CounterRng::new(derive_key(7, 3, tag::NOISE));
        let a: Vec<u64> = (0..100).map(|i| rng.bits(i)).collect();
        let b: Vec<u64> = (0..100).map(|i| rng.bits(i)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn split_keys_differ() {
        let k1 = derive_key(1, 0, tag::NOISE);
        let k2 = derive_key(1, 1, tag::NOISE);
        let k3 = derive_key(1, 0, tag::LAMBDA);
        assert_ne!(k1, k2);
        assert_ne!(k1, k3);
    }

    #[test]
    fn uniform_moments() {
        let rng = CounterRng::new(42);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|i| rng.uniform(i)).collect();
        assert!(xs.iter().all(|&x| x > 0.0 && x < 1.0));
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        // SE of the mean is sqrt(1/12/n) ~ 6.5e-4.
        assert!((mean - 0.5).abs() < 4.0 * (1.0 / 12.0 / n as f64).sqrt());
        assert!((var - 1.0 / 12.0).abs() < 2e-3);
    }

    #[test]
    fn normal_moments() {
        let rng = CounterRng::new(9);
        let n = 200_000u64;
        let xs: Vec<f64> = (0..n).map(|i| rng.normal(i)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let kurt = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64 / var.powi(2);
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.015);
        assert!((kurt - 3.0).abs() < 0.08);
    }

    #[test]
    fn adjacent_counters_uncorrelated() {
        let rng = CounterRng::new(123);
        let n = 100_000u64;
        let xs: Vec<f64> = (0..n).map(|i| rng.uniform(i) - 0.5).collect();
        let r = xs.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n as f64 / 12.0);
        assert!(r.abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn shuffle_is_permutation() {
        let rng = CounterRng::new(5);
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(0, &mut v);
        let mut s = v.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
        assert_ne!(v, (0..50).collect::<Vec<_>>());
    }
}
