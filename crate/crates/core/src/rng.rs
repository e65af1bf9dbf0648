//! Deterministic random number generation with documented stream splitting.
//!
//! Every stochastic component of the simulator (payload bits, pilot values,
//! channel taps, noise, parameter init, ...) draws from its own stream derived
//! from a single master seed. Streams are split splitmix-style: the master
//! seed is mixed with a stream tag and an index through the splitmix64
//! finalizer, and the result seeds an xoshiro256++ generator. Same
//! `(master, tag, index)` always yields the same sequence, independent of
//! scheduling or thread count.

/// Stream tags. One per independent random consumer.
pub mod stream {
    pub const CODE: u64 = 0x01;
    pub const PILOTS: u64 = 0x02;
    pub const PAYLOAD_BITS: u64 = 0x03;
    pub const CHANNEL: u64 = 0x04;
    pub const NOISE: u64 = 0x05;
    pub const MODEL_INIT: u64 = 0x06;
    pub const TRAIN_DATA: u64 = 0x07;
    pub const VAL_DATA: u64 = 0x08;
    pub const EVAL_DATA: u64 = 0x09;
}

/// splitmix64 finalizer step. Advances `state` and returns the mixed output.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for stream `tag` at position `index` from a master seed.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut s = master;
    let a = splitmix64(&mut s);
    let mut s2 = a ^ tag.wrapping_mul(0xA076_1D64_78BD_642F);
    let b = splitmix64(&mut s2);
    let mut s3 = b ^ index.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    splitmix64(&mut s3)
}

/// xoshiro256++ generator. Small, fast, and reproducible across platforms.
#[derive(Clone, Debug)]
pub struct Rng {
    s: [u64; 4],
    gauss_cache: Option<f64>,
}

impl Rng {
    /// Seed via splitmix64 expansion of a single u64, as recommended by the
    /// xoshiro authors.
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s, gauss_cache: None }
    }

    /// Seed a stream split from a master seed.
    pub fn from_stream(master: u64, tag: u64, index: u64) -> Self {
        Self::new(derive_seed(master, tag, index))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is irrelevant at simulator scales (n << 2^64).
        (self.next_u64() % n as u64) as usize
    }

    /// A single random bit.
    #[inline]
    pub fn bit(&mut self) -> u8 {
        (self.next_u64() >> 63) as u8
    }

    /// Fill a buffer with random bits.
    pub fn bits(&mut self, len: usize) -> Vec<u8> {
        (0..len).map(|_| self.bit()).collect()
    }

    /// Standard normal via Box-Muller. Generates in pairs, caches the second.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(g) = self.gauss_cache.take() {
            return g;
        }
        // Guard against ln(0).
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.gauss_cache = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Circularly-symmetric complex Gaussian with E[|z|^2] = variance.
    pub fn complex_gaussian(&mut self, variance: f64) -> num_complex::Complex64 {
        let s = (variance * 0.5).sqrt();
        num_complex::Complex64::new(s * self.gaussian(), s * self.gaussian())
    }
}
