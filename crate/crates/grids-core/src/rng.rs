//! Seeded pseudo-random number generation.
//!
//! The whole crate draws randomness from [`Rng`], an xorshift64* generator:
//! the 64-bit state is advanced by three xor-shifts (`>>12`, `<<25`, `>>27`)
//! and the output is the state multiplied by `0x2545_F491_4F6C_DD1D`. Seeds
//! are conditioned through one round of splitmix64 so that small or zero
//! seeds still produce a well-mixed nonzero state. The algorithm is fixed
//! here on purpose: the same seed yields the same sequence on every platform
//! and in every future version of this crate, which is what makes run logs
//! and checkpoints reproducible byte for byte.
//!
//! Gaussian draws use the Box-Muller transform on top of uniform draws.
//! Integer and uniform draws are pure bit manipulation and therefore
//! bit-portable; Gaussian draws additionally go through `ln`/`cos`/`sqrt`
//! and are deterministic on a given platform.

/// Xorshift64* generator with splitmix64 seed conditioning.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    /// Spare Gaussian deviate cached by Box-Muller (it produces pairs).
    gauss_spare: Option<f64>,
}

const XORSHIFT_MULT: u64 = 0x2545_F491_4F6C_DD1D;

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string; used to derive labeled sub-streams.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl Rng {
    /// Creates a generator from a seed. Any seed is valid, including 0.
    pub fn new(seed: u64) -> Self {
        let mut state = splitmix64(seed);
        if state == 0 {
            // xorshift has a fixed point at 0; splitmix64(x) == 0 only for
            // one input, which we bump to an arbitrary odd constant.
            state = 0x9E37_79B9_7F4A_7C15;
        }
        Rng {
            state,
            gauss_spare: None,
        }
    }

    /// Derives an independent, labeled sub-stream from this generator's
    /// original seed material. Used so that e.g. parameter initialization,
    /// task data, and strategy-internal draws never share a stream: two
    /// training runs that differ only in strategy still see identical data.
    pub fn derive(&self, label: &str) -> Rng {
        Rng::new(self.state ^ fnv1a(label.as_bytes()))
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(XORSHIFT_MULT)
    }

    /// Uniform draw in `[0, 1)` with 24 bits of resolution.
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / 16_777_216.0
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / 9_007_199_254_740_992.0
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn range_f32(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.next_f32()
    }

    /// Unbiased uniform integer in `[0, n)` via rejection sampling.
    ///
    /// Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) has no valid output");
        // Reject draws from the final partial block so every residue is
        // equally likely.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Standard normal deviate (Box-Muller; pairs are generated and the
    /// second is cached).
    pub fn next_gaussian(&mut self) -> f32 {
        if let Some(spare) = self.gauss_spare.take() {
            return spare as f32;
        }
        // u1 in (0, 1] so ln never sees zero.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.gauss_spare = Some(r * theta.sin());
        (r * theta.cos()) as f32
    }

    /// First `k` elements of a Fisher-Yates shuffle of `0..n`: `k` distinct
    /// indices drawn uniformly without replacement.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} distinct values from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for slot in 0..k {
            let pick = slot + self.below((n - slot) as u64) as usize;
            pool.swap(slot, pick);
        }
        pool.truncate(k);
        pool
    }
}
