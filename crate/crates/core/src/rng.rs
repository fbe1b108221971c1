//! Seeded, platform-independent random numbers.
//!
//! The generator is SplitMix64 run in counter mode: the `i`-th output
//! (counting from 1) of a stream with key `k` is `mix(k + i * GAMMA)` with
//! wrapping arithmetic, where
//!
//! ```text
//! GAMMA  = 0x9E3779B97F4A7C15
//! mix(z) = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!          z ^= z >> 27; z *= 0x94D049BB133111EB;
//!          z ^ (z >> 31)
//! ```
//!
//! Derived streams use `derive(k, tag) = mix(k ^ mix(tag ^ 0xD1B54A32D192ED03))`
//! applied once per tag, left to right.
//!
//! Conversions:
//! - `uniform()`   = `(x >> 11) * 2^-53`, in `[0, 1)`
//! - `open01()`    = `((x >> 11) + 0.5) * 2^-53`, in `(0, 1)`
//! - `below(n)`    = rejection: draw `x` until `x < n * floor(2^64-1 / n)`, return `x % n`
//! - `normal()`    = Box–Muller, cosine branch only:
//!   `sqrt(-2 ln u1) * cos(2 pi u2)` with `u1 = open01()`, `u2 = uniform()` drawn in that order
//! - `gumbel()`    = `-ln(-ln(open01()))`

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const DERIVE_SALT: u64 = 0xD1B5_4A32_D192_ED03;
const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream key from `key` and a sequence of tags.
pub fn derive(key: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(key, |acc, &t| mix(acc ^ mix(t ^ DERIVE_SALT)))
}

#[derive(Clone, Debug)]
pub struct Rng {
    key: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            key: seed,
            counter: 0,
        }
    }

    /// A fresh stream keyed by `derive(seed, tags)`.
    pub fn stream(seed: u64, tags: &[u64]) -> Self {
        Rng::new(derive(seed, tags))
    }

    /// Splits off a child stream without advancing this one.
    pub fn fork(&self, tag: u64) -> Self {
        Rng::new(derive(self.key, &[self.counter, tag]))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    #[inline]
    pub fn open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.open01();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn gumbel(&mut self) -> f64 {
        -(-self.open01().ln()).ln()
    }

    /// `k` distinct indices from `0..n`, uniformly, in selection order
    /// (partial Fisher–Yates).
    pub fn choose(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
