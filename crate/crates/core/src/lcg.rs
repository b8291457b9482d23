//! Portable pseudo-random numbers and value noise for synthetic textures.
//!
//! The generator is the 64-bit linear congruential recurrence
//! `s <- s * 6364136223846793005 + 1442695040888963407 (mod 2^64)`, so a
//! texture seed reproduces the same image in any implementation.

use nalgebra::Vector3;

pub const LCG_MULTIPLIER: u64 = 6_364_136_223_846_793_005;
pub const LCG_INCREMENT: u64 = 1_442_695_040_888_963_407;

#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self
            .state
            .wrapping_mul(LCG_MULTIPLIER)
            .wrapping_add(LCG_INCREMENT);
        self.state
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `0..n` from the high 32 bits (`n` > 0).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() >> 32) % n as u64) as usize
    }
}

const TABLE: usize = 256;

/// Lattice value noise: random values at integer points, blended with the
/// quintic fade `6t^5 - 15t^4 + 10t^3`.
#[derive(Debug, Clone)]
pub struct ValueNoise {
    perm: [u8; TABLE],
    values: [f64; TABLE],
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

impl ValueNoise {
    /// Lattice values first, then a Fisher-Yates shuffle of `0..256`.
    pub fn new(seed: u64) -> Self {
        let mut rng = Lcg::new(seed);
        let mut values = [0.0; TABLE];
        for v in values.iter_mut() {
            *v = rng.next_f64();
        }
        let mut perm = [0u8; TABLE];
        for (i, p) in perm.iter_mut().enumerate() {
            *p = i as u8;
        }
        for i in (1..TABLE).rev() {
            let j = rng.below(i + 1);
            perm.swap(i, j);
        }
        ValueNoise { perm, values }
    }

    #[inline]
    fn lattice(&self, x: i64, y: i64, z: i64) -> f64 {
        let p = |v: i64| self.perm[(v & 255) as usize] as i64;
        self.values[p(p(p(x) + y) + z) as usize]
    }

    /// Single-octave noise in `[0, 1]`.
    pub fn sample(&self, p: &Vector3<f64>) -> f64 {
        let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
        let (x, y, z) = (fx as i64, fy as i64, fz as i64);
        let (u, v, w) = (fade(p.x - fx), fade(p.y - fy), fade(p.z - fz));
        let c = |dx, dy, dz| self.lattice(x + dx, y + dy, z + dz);
        let x00 = lerp(c(0, 0, 0), c(1, 0, 0), u);
        let x10 = lerp(c(0, 1, 0), c(1, 1, 0), u);
        let x01 = lerp(c(0, 0, 1), c(1, 0, 1), u);
        let x11 = lerp(c(0, 1, 1), c(1, 1, 1), u);
        lerp(lerp(x00, x10, v), lerp(x01, x11, v), w)
    }

    /// Octave sum with halving amplitude and doubling frequency, normalised
    /// back to `[0, 1]`.
    pub fn fractal(&self, p: &Vector3<f64>, octaves: u32) -> f64 {
        let (mut sum, mut norm, mut amp, mut freq) = (0.0, 0.0, 1.0, 1.0);
        for _ in 0..octaves.max(1) {
            sum += amp * self.sample(&(p * freq));
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        sum / norm
    }
}
