//! Deterministic random number generation.
//!
//! Seeding uses splitmix64; the stream generator is xoshiro256++. Both are
//! fixed-point integer algorithms, so the same seed produces the identical
//! value stream on every platform and in every implementation language.
//!
//! Distinct purposes draw from distinct streams derived from the run seed by
//! a fixed [`Stream`] offset, so e.g. projection sampling never interleaves
//! with data sampling.

/// Purpose-specific stream offsets mixed into the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Sparse projection matrix generation.
    Projection = 1,
    /// Weight initialization (B, W1, W0).
    WeightInit = 2,
    /// Dataset sampling.
    Data = 3,
    /// Mini-batch shuffling.
    Shuffle = 4,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// xoshiro256++ generator seeded with splitmix64.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
    /// Cached second output of the polar Box-Muller transform.
    gauss_spare: Option<f64>,
}

impl Rng {
    /// Generator for the raw seed (stream offset 0).
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng {
            s,
            gauss_spare: None,
        }
    }

    /// Generator for a purpose-specific stream of `seed`.
    pub fn for_stream(seed: u64, stream: Stream) -> Self {
        // Mixing the offset through splitmix64 decorrelates streams that
        // share a run seed.
        let mut sm = seed;
        let base = splitmix64(&mut sm);
        Rng::new(base ^ (stream as u64).wrapping_mul(0x9e3779b97f4a7c15))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_uniform() * n as f64) as usize % n
    }

    /// Standard normal draw via the polar Box-Muller (rejection) transform.
    ///
    /// The transform consumes uniforms in a fixed order and caches the
    /// second output, so the stream stays deterministic.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(v) = self.gauss_spare.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.next_uniform() - 1.0;
            let v = 2.0 * self.next_uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.gauss_spare = Some(v * factor);
                return u * factor;
            }
        }
    }

    /// Fisher-Yates shuffle, deterministic in the generator state.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}
