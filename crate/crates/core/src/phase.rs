//! Canonical phase wrapping. Every module wraps angles through these two
//! helpers so that a single convention holds across the crate.

use std::f64::consts::{PI, TAU};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Wraps an angle into `(0, 2π]`.
///
/// This is the phase-progression convention: a higher subcarrier is always
/// ahead of a lower one, so a measured difference of zero is read as one
/// full cycle.
pub fn wrap_progressive(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r == 0.0 {
        TAU
    } else {
        r
    }
}
