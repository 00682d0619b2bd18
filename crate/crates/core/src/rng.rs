//! Counter-based seeded randomness.
//!
//! Every draw is a pure function of `(seed, stream, counter)`, so panels,
//! network initializations, spatial samples, and particle paths can be
//! regenerated independently, in any order, and bit-identically across runs.

/// Stream labels deriving independent substreams from one root seed.
pub mod stream {
    /// Gaussian panel draws `xi_{i,j}(omega_m)`.
    pub const PANEL: u64 = 0x70616e656c;
    /// Frozen inner parameters of random-feature networks.
    pub const NET_INIT: u64 = 0x6e65745f696e6974;
    /// Deterministic-network parameter initialization.
    pub const NET_DET: u64 = 0x6e65745f646574;
    /// Spatial evaluation points `u_{m3}`.
    pub const SPATIAL: u64 = 0x7370617469616c;
    /// Particle paths of the filtering reference estimator.
    pub const PARTICLES: u64 = 0x706172746963;
    /// Initial signal states `Y_0` per scenario.
    pub const SIGNAL_INIT: u64 = 0x7369676e616c;
}

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Raw 64 random bits for `(seed, stream, counter)`.
#[inline]
pub fn bits(seed: u64, stream: u64, counter: u64) -> u64 {
    let s = mix(seed ^ mix(stream.wrapping_mul(GOLDEN)));
    mix(s.wrapping_add(counter.wrapping_mul(GOLDEN)))
}

/// Uniform draw in `[0, 1)`.
#[inline]
pub fn uniform(seed: u64, stream: u64, counter: u64) -> f64 {
    (bits(seed, stream, counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `(0, 1]`, safe as a logarithm argument.
#[inline]
fn uniform_open(seed: u64, stream: u64, counter: u64) -> f64 {
    ((bits(seed, stream, counter) >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw via Box-Muller on two independent uniforms.
#[inline]
pub fn normal(seed: u64, stream: u64, counter: u64) -> f64 {
    let u1 = uniform_open(seed, stream, counter.wrapping_mul(2));
    let u2 = uniform(seed, stream, counter.wrapping_mul(2).wrapping_add(1));
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

const FIELD: u64 = 0x100000001b3;

/// Packs up to four indices into one counter word by a polynomial hash, so
/// no field is silently truncated when an index exceeds a fixed bit width.
#[inline]
pub fn pack4(a: usize, b: usize, c: usize, d: usize) -> u64 {
    let mut h = a as u64;
    h = h.wrapping_mul(FIELD).wrapping_add(b as u64);
    h = h.wrapping_mul(FIELD).wrapping_add(c as u64);
    h.wrapping_mul(FIELD).wrapping_add(d as u64)
}

#[inline]
pub fn pack2(a: usize, b: usize) -> u64 {
    (a as u64).wrapping_mul(FIELD).wrapping_add(b as u64)
}
