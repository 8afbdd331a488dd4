//! Invertible base dynamics with counter-based randomness.
//!
//! A `BasePoint` is a pure coordinate: (system id, seed, integer time, aux).
//! The shift `theta` advances time, `sigma` rewinds it, and the two are exact
//! inverses because nothing is mutated: the auxiliary coordinate is always
//! recomputed as a function of time. Randomness is revealed on demand through
//! `draw(point, channel)`, a pure function of (seed, time, channel), so
//! forward and backward orbit traversals see identical data.

use serde::{Deserialize, Serialize};

/// A point of the base system. Equality is field-by-field; replaying an orbit
/// reproduces points bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasePoint {
    pub system_id: u64,
    pub seed: u64,
    pub time: i64,
    pub aux: f64,
}

/// The kind of base dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaseKind {
    /// Two-sided IID shift; coordinates are revealed through `draw`.
    IidShift,
    /// Rigid circle rotation by `alpha` starting from `origin`; `aux` holds
    /// the current circle coordinate in [0, 1).
    Rotation { alpha: f64, origin: f64 },
}

/// An invertible base system: a kind plus the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSystem {
    pub kind: BaseKind,
    pub seed: u64,
    id: u64,
}

const TIME_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const CHANNEL_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// SplitMix64 finalizer: full-avalanche 64-bit mixer.
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

/// Uniform draw in [0, 1) as a pure function of (seed, time, channel).
/// Distinct channels give decorrelated streams over the same orbit.
pub fn draw(p: &BasePoint, channel: u32) -> f64 {
    let t = mix64((p.time as u64).wrapping_add(TIME_SALT));
    let c = mix64((channel as u64).wrapping_add(CHANNEL_SALT));
    let z = mix64(mix64(p.seed ^ t) ^ c);
    // Top 53 bits give a dyadic rational in [0, 1).
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in [lo, hi).
pub fn draw_uniform(p: &BasePoint, channel: u32, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * draw(p, channel)
}

/// Equiprobable two-point draw.
pub fn draw_two_point(p: &BasePoint, channel: u32, lo: f64, hi: f64) -> f64 {
    if draw(p, channel) < 0.5 {
        lo
    } else {
        hi
    }
}

impl BaseSystem {
    pub fn iid_shift(seed: u64) -> Self {
        let id = mix64(mix64(seed) ^ 0x5a5a_0001);
        BaseSystem {
            kind: BaseKind::IidShift,
            seed,
            id,
        }
    }

    pub fn rotation(seed: u64, alpha: f64, origin: f64) -> Self {
        let id = mix64(
            mix64(seed) ^ mix64(alpha.to_bits()) ^ mix64(origin.to_bits()) ^ 0x5a5a_0002,
        );
        BaseSystem {
            kind: BaseKind::Rotation { alpha, origin },
            seed,
            id,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// The orbit's reference point at time 0.
    pub fn origin_point(&self) -> BasePoint {
        self.point_at(0)
    }

    /// The point at integer time `t`. `aux` is a pure function of `t`, which
    /// is what makes `theta` and `sigma` exact inverses.
    pub fn point_at(&self, t: i64) -> BasePoint {
        let aux = match &self.kind {
            BaseKind::IidShift => 0.0,
            BaseKind::Rotation { alpha, origin } => (origin + t as f64 * alpha).rem_euclid(1.0),
        };
        BasePoint {
            system_id: self.id,
            seed: self.seed,
            time: t,
            aux,
        }
    }

    /// Forward shift.
    pub fn theta(&self, p: &BasePoint) -> BasePoint {
        self.point_at(p.time + 1)
    }

    /// Backward shift, the exact inverse of `theta`.
    pub fn sigma(&self, p: &BasePoint) -> BasePoint {
        self.point_at(p.time - 1)
    }

    /// n-fold shift; negative n rewinds.
    pub fn shift(&self, p: &BasePoint, n: i64) -> BasePoint {
        self.point_at(p.time + n)
    }
}
