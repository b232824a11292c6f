//! Differential carrier-phase ranging.
//!
//! Two subcarriers `k` bins apart beat at `Δf = k·SCS`, which behaves like
//! a carrier of wavelength `λ_v = c/Δf`. The phase difference between them
//! measures the fractional part of `d/λ_v`; a coarse spacing with a long
//! virtual wavelength fixes the whole-cycle count for a finer one.
//!
//! Phases follow the channel convention `exp(-j2πfτ)`: the higher-frequency
//! subcarrier of a pair lags, so the progression `arg(v_i) - arg(v_{i+k})`
//! equals `2π·k·SCS·τ` modulo `2π`.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::phase::{wrap_pi, wrap_progressive};
use crate::signal::SubcarrierFrame;
use crate::SPEED_OF_LIGHT;

/// `c/Δf`.
pub fn virtual_wavelength(delta_f: f64) -> Result<f64> {
    if !(delta_f > 0.0) {
        return Err(Error::DegeneratePair(delta_f));
    }
    Ok(SPEED_OF_LIGHT / delta_f)
}

fn check_spacing(frame: &SubcarrierFrame, k: usize) -> Result<()> {
    let max = frame.len() / 2;
    if k == 0 || k > max {
        return Err(Error::SpacingOutOfRange { k, max });
    }
    Ok(())
}

/// Baseline estimator: the argument of `Σ (v_{i+k} - v_i)` over every
/// subcarrier, allocated or not.
///
/// Kept exactly as the vector-sum formulation is usually written, including
/// its sensitivity to whatever sits on unallocated bins.
pub fn avg_phase_diff_vector(frame: &SubcarrierFrame, k: usize) -> Result<f64> {
    check_spacing(frame, k)?;
    let v = &frame.values;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for i in 0..v.len() - k {
        let d = v[i + k] - v[i];
        sum += d;
        scale += d.norm();
    }
    if !(sum.norm() > 1e-12 * scale) {
        return Err(Error::DegenerateSpectrum);
    }
    Ok(sum.arg())
}

/// Robust estimator: per-pair progressions over allocated pairs only,
/// each in `(0, 2π]`, averaged arithmetically.
///
/// When the per-pair values straddle the `0/2π` seam (spread of at least
/// π) they are first unwrapped around their circular mean, so a true
/// progression near a full cycle does not average to π.
pub fn avg_phase_diff_robust(frame: &SubcarrierFrame, k: usize) -> Result<f64> {
    let diffs = pair_progressions(frame, k)?;
    Ok(average_progressions(&diffs))
}

/// Per-pair progressions `wrap_progressive(arg v_i - arg v_{i+k})`.
pub fn pair_progressions(frame: &SubcarrierFrame, k: usize) -> Result<Vec<f64>> {
    check_spacing(frame, k)?;
    if k % frame.comb_size != 0 {
        return Err(Error::CombMisalignment { k, comb: frame.comb_size });
    }
    let v = &frame.values;
    let diffs: Vec<f64> = frame
        .allocated_indices()
        .filter(|&i| i + k < v.len() && frame.allocation_mask[i + k])
        .map(|i| wrap_progressive(v[i].arg() - v[i + k].arg()))
        .collect();
    if diffs.is_empty() {
        return Err(Error::NoAllocatedPairs(k));
    }
    Ok(diffs)
}

fn average_progressions(diffs: &[f64]) -> f64 {
    let n = diffs.len() as f64;
    let (lo, hi) = diffs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if hi - lo < PI {
        return diffs.iter().sum::<f64>() / n;
    }
    let centre = diffs
        .iter()
        .map(|&d| Complex64::from_polar(1.0, d))
        .sum::<Complex64>()
        .arg();
    let mean = diffs.iter().map(|&d| centre + wrap_pi(d - centre)).sum::<f64>() / n;
    wrap_progressive(mean)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RangeEstimate {
    /// meters
    pub distance: f64,
    pub spacing: usize,
    /// meters
    pub virtual_wavelength: f64,
    /// radians, in `(0, 2π]`
    pub avg_phase_diff: f64,
    pub cycle_count: i64,
    pub trp_id: String,
}

impl RangeEstimate {
    fn new(spacing: usize, virtual_wavelength: f64, avg_phase_diff: f64, cycle_count: i64) -> Self {
        Self {
            distance: (avg_phase_diff / TAU + cycle_count as f64) * virtual_wavelength,
            spacing,
            virtual_wavelength,
            avg_phase_diff,
            cycle_count,
            trp_id: String::new(),
        }
    }

    pub fn with_trp(mut self, trp_id: &str) -> Self {
        self.trp_id = trp_id.to_string();
        self
    }
}

/// Range from one spacing with a given whole-cycle count.
pub fn range_single_k(frame: &SubcarrierFrame, k: usize, cycles: i64) -> Result<RangeEstimate> {
    let dphi = avg_phase_diff_robust(frame, k)?;
    let lambda = virtual_wavelength(k as f64 * frame.subcarrier_spacing)?;
    Ok(RangeEstimate::new(k, lambda, dphi, cycles))
}

/// Every level of a coarse-to-fine cascade, coarsest first.
#[derive(Clone, Debug, PartialEq)]
pub struct Cascade {
    pub levels: Vec<RangeEstimate>,
}

impl Cascade {
    /// The finest-level estimate.
    pub fn estimate(&self) -> &RangeEstimate {
        self.levels.last().expect("cascade has at least one level")
    }

    pub fn distance(&self) -> f64 {
        self.estimate().distance
    }

    pub fn with_trp(mut self, trp_id: &str) -> Self {
        for level in &mut self.levels {
            level.trp_id = trp_id.to_string();
        }
        self
    }

    /// Diagnostic CSV `trp_id,k,lambda_v_m,dphi_rad,N,d_m`, one row per level.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        for l in &self.levels {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                l.trp_id, l.spacing, l.virtual_wavelength, l.avg_phase_diff, l.cycle_count, l.distance
            )?;
        }
        Ok(())
    }
}

pub const DIAGNOSTIC_HEADER: &str = "trp_id,k,lambda_v_m,dphi_rad,N,d_m";

/// Nearest integer; an exact half rounds down.
fn round_half_down(x: f64) -> i64 {
    (x - 0.5).ceil() as i64
}

/// Coarse-to-fine ranging.
///
/// The first spacing must have a virtual wavelength of at least
/// `max_range` so its cycle count is zero. Each finer level takes
/// `N = round(d_prev/λ - Δφ/2π)`.
pub fn range_cascade(frame: &SubcarrierFrame, schedule: &[usize], max_range: f64) -> Result<Cascade> {
    let Some(&first) = schedule.first() else {
        return Err(Error::InvalidArgument("empty spacing schedule".into()));
    };
    if schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("spacing schedule must be strictly ascending".into()));
    }
    let coarse = range_single_k(frame, first, 0)?;
    if coarse.virtual_wavelength < max_range {
        return Err(Error::AmbiguityNotExcluded {
            lambda: coarse.virtual_wavelength,
            max_range,
        });
    }
    let mut levels = vec![coarse];
    for &k in &schedule[1..] {
        let prev = levels.last().unwrap().distance;
        let dphi = avg_phase_diff_robust(frame, k)?;
        let lambda = virtual_wavelength(k as f64 * frame.subcarrier_spacing)?;
        let n = round_half_down(prev / lambda - dphi / TAU);
        levels.push(RangeEstimate::new(k, lambda, dphi, n));
    }
    Ok(Cascade { levels })
}

/// Three-level schedule `n, n·⌈√(K/2n)⌉, largest multiple of n ≤ K/2`,
/// deduplicated.
pub fn default_schedule(num_subcarriers: usize, comb_size: usize) -> Vec<usize> {
    let n = comb_size.max(1);
    let half = num_subcarriers / 2;
    let mid = n * ((half as f64 / n as f64).sqrt().ceil() as usize);
    let fine = (half / n) * n;
    let mut s: Vec<usize> = [n, mid, fine].into_iter().filter(|&k| k > 0 && k <= half).collect();
    s.dedup();
    s
}

/// Longest range the first spacing of `schedule` can resolve.
pub fn unambiguous_range(schedule: &[usize], subcarrier_spacing: f64) -> f64 {
    schedule
        .first()
        .map_or(0.0, |&k| SPEED_OF_LIGHT / (k as f64 * subcarrier_spacing))
}

/// Analytic range std at spacing `k` under independent per-subcarrier
/// phase jitter `sigma`.
///
/// Linearized propagation through the pair average: each subcarrier
/// appears in the average with coefficient `(#pairs it opens - #pairs it
/// closes)/M`, so the phase variance is `σ²/M²·Σ coef²`. For disjoint
/// pairs this reduces to `2σ²/M`.
pub fn phase_noise_range_std(frame: &SubcarrierFrame, k: usize, sigma: f64) -> Result<f64> {
    check_spacing(frame, k)?;
    let mut coef = vec![0i64; frame.len()];
    let mut m = 0usize;
    for i in frame.allocated_indices() {
        if i + k < frame.len() && frame.allocation_mask[i + k] {
            coef[i] += 1;
            coef[i + k] -= 1;
            m += 1;
        }
    }
    if m == 0 {
        return Err(Error::NoAllocatedPairs(k));
    }
    let sum_sq: f64 = coef.iter().map(|&c| (c * c) as f64).sum();
    let phase_std = sigma * sum_sq.sqrt() / m as f64;
    let lambda = virtual_wavelength(k as f64 * frame.subcarrier_spacing)?;
    Ok(lambda * phase_std / TAU)
}

/// Median cascade range over several symbols of one link.
pub fn range_symbols(symbols: &[SubcarrierFrame], schedule: &[usize], max_range: f64) -> Result<f64> {
    if symbols.is_empty() {
        return Err(Error::Empty("no symbols to range".into()));
    }
    let mut d = symbols
        .iter()
        .map(|f| range_cascade(f, schedule, max_range).map(|c| c.distance()))
        .collect::<Result<Vec<_>>>()?;
    Ok(median(&mut d))
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
