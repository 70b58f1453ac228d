//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, stream, counter)`, so any
//! implementation can reproduce a stream without sharing state:
//!
//! ```text
//! GAMMA   = 0x9E3779B97F4A7C15
//! mix(z)  = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!           z ^= z >> 27; z *= 0x94D049BB133111EB; z ^ (z >> 31)     (wrapping)
//! key     = mix(seed ^ mix(stream ^ 0x5851F42D4C957F2D))
//! draw(i) = mix(key + (i + 1) * GAMMA)                               (i = 0, 1, ...)
//! uniform = (draw >> 11) * 2^-53                                       in [0, 1)
//! open    = ((draw >> 11) + 0.5) * 2^-53                               in (0, 1)
//! normal  = sqrt(-2 ln open_a) * cos(2 pi open_b), two consecutive draws
//! ```

pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One SplitMix64 step applied to a state value.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    mix64(x.wrapping_add(GAMMA))
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        CounterRng {
            key: mix64(seed ^ mix64(stream ^ 0x5851_F42D_4C95_7F2D)),
            counter: 0,
        }
    }

    /// Draw at an absolute position, independent of the cursor.
    #[inline]
    pub fn at(&self, index: u64) -> u64 {
        mix64(self.key.wrapping_add(index.wrapping_add(1).wrapping_mul(GAMMA)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(0, 1)`.
    #[inline]
    pub fn open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller (cosine branch only).
    pub fn normal(&mut self) -> f64 {
        let a = self.open_uniform();
        let b = self.open_uniform();
        (-2.0 * a.ln()).sqrt() * (2.0 * std::f64::consts::PI * b).cos()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        // Multiply-shift; bias is below 2^-32 for the small n used here.
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
