//! Parametric multipath channel with ground-truth LOS state.
//!
//! Links are modelled as a tapped delay line. A LOS draw carries a unit
//! direct tap at the geometric delay plus weak Rayleigh scatter
//! (Rician K-factor); an NLOS draw has no direct path, its first arrival
//! is displaced by an exponentially distributed excess delay and later
//! taps decay exponentially in power.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand_distr::{Distribution, Exp, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{correct_phase_offsets, SubcarrierFrame};
use crate::{Vec3, SPEED_OF_LIGHT};

/// Ground-truth or classified propagation state of a link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkState {
    #[serde(rename = "LOS")]
    Los,
    #[serde(rename = "NLOS")]
    Nlos,
}

impl LinkState {
    pub fn is_los(self) -> bool {
        self == LinkState::Los
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LinkState::Los => "LOS",
            LinkState::Nlos => "NLOS",
        }
    }
}

impl std::str::FromStr for LinkState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "LOS" | "los" | "0" => Ok(LinkState::Los),
            "NLOS" | "nlos" | "1" => Ok(LinkState::Nlos),
            other => Err(Error::Parse(format!("unknown link state {other:?}"))),
        }
    }
}

/// Probability of a LOS draw as a function of horizontal distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LosProbabilityModel {
    /// Certain LOS up to `breakpoint`, then `b/d + exp(-d/decay)(1 - b/d)`.
    Umi { breakpoint: f64, decay: f64 },
    /// Distance-independent probability.
    Constant { probability: f64 },
}

impl Default for LosProbabilityModel {
    fn default() -> Self {
        LosProbabilityModel::Umi {
            breakpoint: 18.0,
            decay: 36.0,
        }
    }
}

impl LosProbabilityModel {
    pub fn probability(&self, horizontal_distance: f64) -> f64 {
        match *self {
            LosProbabilityModel::Umi { breakpoint, decay } => {
                let d = horizontal_distance;
                if d <= breakpoint {
                    1.0
                } else {
                    breakpoint / d + (-d / decay).exp() * (1.0 - breakpoint / d)
                }
            }
            LosProbabilityModel::Constant { probability } => probability.clamp(0.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-subcarrier SNR against a unit-power allocated subcarrier, dB.
    /// `inf` disables thermal noise.
    pub snr_db: f64,
    /// Std of the Gaussian phase jitter on each allocated subcarrier, rad.
    pub phase_noise_std: f64,
    /// Mean excess delay of the first NLOS arrival, seconds.
    pub nlos_excess_delay_scale: f64,
    pub nlos_tap_count: usize,
    pub los_probability_model: LosProbabilityModel,
    /// Direct-to-scatter power ratio of LOS draws, dB.
    pub los_k_factor_db: f64,
    pub los_scatter_tap_count: usize,
    /// Mean excess delay of LOS scatter taps, seconds.
    pub los_scatter_delay_scale: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            snr_db: 30.0,
            phase_noise_std: 0.0,
            nlos_excess_delay_scale: 100e-9,
            nlos_tap_count: 6,
            los_probability_model: LosProbabilityModel::default(),
            los_k_factor_db: 20.0,
            los_scatter_tap_count: 4,
            los_scatter_delay_scale: 30e-9,
        }
    }
}

impl NoiseConfig {
    /// No thermal noise, no phase jitter, no LOS scatter.
    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
            los_scatter_tap_count: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.nlos_tap_count < 1 {
            return bad("nlos_tap_count must be at least 1");
        }
        if !(self.phase_noise_std >= 0.0) {
            return bad("phase_noise_std must be non-negative");
        }
        if !(self.nlos_excess_delay_scale > 0.0) || !(self.los_scatter_delay_scale > 0.0) {
            return bad("delay scales must be positive");
        }
        if self.snr_db.is_nan() || self.los_k_factor_db.is_nan() {
            return bad("snr_db and los_k_factor_db must be numbers");
        }
        Ok(())
    }

    /// Complex noise variance per subcarrier.
    pub fn noise_variance(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    /// seconds
    pub delay: f64,
    pub gain: Complex64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    /// Sorted by ascending delay.
    pub taps: Vec<Tap>,
    pub is_los: bool,
    pub tx_pos: Vec3,
    pub rx_pos: Vec3,
    pub path_loss_db: f64,
}

impl ChannelRealization {
    /// A single unit tap at the geometric delay.
    pub fn line_of_sight(tx: Vec3, rx: Vec3) -> Self {
        let delay = (tx - rx).norm() / SPEED_OF_LIGHT;
        Self {
            taps: vec![Tap { delay, gain: Complex64::new(1.0, 0.0) }],
            is_los: true,
            tx_pos: tx,
            rx_pos: rx,
            path_loss_db: 0.0,
        }
    }

    pub fn distance(&self) -> f64 {
        (self.tx_pos - self.rx_pos).norm()
    }

    /// True propagation delay from geometry, seconds.
    pub fn true_delay(&self) -> f64 {
        self.distance() / SPEED_OF_LIGHT
    }

    pub fn strongest_tap(&self) -> Option<&Tap> {
        self.taps
            .iter()
            .max_by(|a, b| a.gain.norm_sqr().total_cmp(&b.gain.norm_sqr()))
    }

    /// Frequency response `Σ g·exp(-j2π f τ)` at subcarriers `0..n`.
    pub fn response(&self, n: usize, subcarrier_spacing: f64) -> Vec<Complex64> {
        (0..n)
            .map(|i| {
                let f = i as f64 * subcarrier_spacing;
                self.taps
                    .iter()
                    .map(|t| t.gain * Complex64::from_polar(1.0, -TAU * f * t.delay))
                    .sum()
            })
            .collect()
    }
}

/// Street-canyon microcell path loss, dB.
fn umi_path_loss(d3d: f64, carrier_frequency: f64, los: bool, ue_height: f64) -> f64 {
    let fc_ghz = carrier_frequency / 1e9;
    let d = d3d.max(1.0);
    let pl_los = 32.4 + 21.0 * d.log10() + 20.0 * fc_ghz.log10();
    if los {
        pl_los
    } else {
        let pl_nlos = 22.4 + 35.3 * d.log10() + 21.3 * fc_ghz.log10() - 0.3 * (ue_height - 1.5);
        pl_los.max(pl_nlos)
    }
}

fn complex_gaussian<R: rand::Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Draws a tapped-delay-line realization for the link `tx`–`rx`.
///
/// `force_state` overrides the distance-dependent LOS draw.
pub fn draw_channel<R: rand::Rng + ?Sized>(
    tx: Vec3,
    rx: Vec3,
    noise: &NoiseConfig,
    carrier_frequency: f64,
    force_state: Option<LinkState>,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let distance = (tx - rx).norm();
    if !(distance > 0.0) {
        return Err(Error::InvalidArgument("tx and rx coincide".into()));
    }
    let tau0 = distance / SPEED_OF_LIGHT;
    let state = match force_state {
        Some(s) => s,
        None => {
            let d2d = (tx - rx).xy().norm();
            if rng.random::<f64>() < noise.los_probability_model.probability(d2d) {
                LinkState::Los
            } else {
                LinkState::Nlos
            }
        }
    };

    let mut taps = Vec::new();
    match state {
        LinkState::Los => {
            taps.push(Tap { delay: tau0, gain: Complex64::new(1.0, 0.0) });
            let n = noise.los_scatter_tap_count;
            if n > 0 && noise.los_k_factor_db.is_finite() {
                let scatter_power = 10f64.powf(-noise.los_k_factor_db / 10.0);
                let excess = Exp::new(1.0 / noise.los_scatter_delay_scale).expect("positive scale");
                for _ in 0..n {
                    let e: f64 = excess.sample(rng);
                    taps.push(Tap {
                        delay: tau0 + e,
                        gain: complex_gaussian(rng, scatter_power / n as f64),
                    });
                }
            }
        }
        LinkState::Nlos => {
            let scale = noise.nlos_excess_delay_scale;
            let first = Exp::new(1.0 / scale).expect("positive scale");
            let spacing = Exp::new(2.0 / scale).expect("positive scale");
            let mut excess: f64 = first.sample(rng);
            let first_excess = excess;
            let mut total = 0.0;
            for j in 0..noise.nlos_tap_count {
                if j > 0 {
                    excess += spacing.sample(rng);
                }
                let mean_power = (-(excess - first_excess) / scale).exp();
                let gain = complex_gaussian(rng, mean_power);
                total += gain.norm_sqr();
                taps.push(Tap { delay: tau0 + excess, gain });
            }
            if total > 0.0 {
                let s = 1.0 / total.sqrt();
                for t in taps.iter_mut() {
                    t.gain *= s;
                }
            }
        }
    }
    taps.sort_by(|a, b| a.delay.total_cmp(&b.delay));
    Ok(ChannelRealization {
        taps,
        is_los: state.is_los(),
        tx_pos: tx,
        rx_pos: rx,
        path_loss_db: umi_path_loss(distance, carrier_frequency, state.is_los(), rx.z.min(tx.z)),
    })
}

/// Passes `frame` through `ch` and adds receiver impairments.
///
/// Allocated subcarriers are multiplied by the channel response and by a
/// Gaussian phase jitter; complex white noise at the configured SNR is
/// added on all K subcarriers, so unallocated bins carry the noise floor.
pub fn apply_channel<R: rand::Rng + ?Sized>(
    frame: &SubcarrierFrame,
    ch: &ChannelRealization,
    noise: &NoiseConfig,
    rng: &mut R,
) -> SubcarrierFrame {
    let response = ch.response(frame.len(), frame.subcarrier_spacing);
    apply_response(frame, &response, noise, rng)
}

/// [`apply_channel`] with a precomputed frequency response, for links
/// observed over several symbols.
pub fn apply_response<R: rand::Rng + ?Sized>(
    frame: &SubcarrierFrame,
    response: &[Complex64],
    noise: &NoiseConfig,
    rng: &mut R,
) -> SubcarrierFrame {
    let mut out = frame.clone();
    let var = noise.noise_variance();
    for i in 0..out.len() {
        if out.allocation_mask[i] {
            out.values[i] *= response[i];
            if noise.phase_noise_std > 0.0 {
                let jitter: f64 = rng.sample(StandardNormal);
                out.values[i] *= Complex64::from_polar(1.0, jitter * noise.phase_noise_std);
            }
        }
        if var > 0.0 {
            out.values[i] += complex_gaussian(rng, var);
        }
    }
    out
}

/// A link observed over several OFDM symbols, phase-corrected.
#[derive(Clone, Debug)]
pub struct ObservedLink {
    pub channel: ChannelRealization,
    /// One corrected frame per symbol.
    pub symbols: Vec<SubcarrierFrame>,
}

/// Draws a channel for `tx`–`rx` and returns `symbols` corrected received
/// frames of `reference`. The channel is static across the symbols; noise
/// is drawn independently per symbol.
#[allow(clippy::too_many_arguments)]
pub fn observe_link<R: rand::Rng + ?Sized>(
    reference: &SubcarrierFrame,
    tx: Vec3,
    rx: Vec3,
    noise: &NoiseConfig,
    carrier_frequency: f64,
    force_state: Option<LinkState>,
    symbols: usize,
    rng: &mut R,
) -> Result<ObservedLink> {
    let channel = draw_channel(tx, rx, noise, carrier_frequency, force_state, rng)?;
    let response = channel.response(reference.len(), reference.subcarrier_spacing);
    let symbols = (0..symbols.max(1))
        .map(|_| {
            let rx_frame = apply_response(reference, &response, noise, rng);
            correct_phase_offsets(&rx_frame, reference)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ObservedLink { channel, symbols })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerDelayProfile {
    /// `(delay seconds, linear power)`, ascending delay.
    pub bins: Vec<(f64, f64)>,
}

impl PowerDelayProfile {
    pub fn delay_resolution(&self) -> f64 {
        self.bins.get(1).map_or(0.0, |b| b.0)
    }

    pub fn total_power(&self) -> f64 {
        self.bins.iter().map(|b| b.1).sum()
    }

    /// Index and delay of the strongest bin; the earliest one on ties.
    pub fn argmax(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, &(d, p)) in self.bins.iter().enumerate() {
            if best.is_none_or(|b| p > b.2) {
                best = Some((i, d, p));
            }
        }
        best.map(|(i, d, _)| (i, d))
    }
}

/// Power delay profile from the allocated subcarriers.
///
/// The `M` allocated values (spacing `n·SCS`) go through a unitary
/// `M`-point inverse DFT, so total PDP power equals allocated spectral
/// power. Delay spacing is `1/(M·n·SCS)`, i.e. `1/(K·SCS)` whenever the comb
/// size divides K, and the unambiguous span is `1/(n·SCS)`.
pub fn compute_pdp(frame: &SubcarrierFrame) -> PowerDelayProfile {
    let mut buf: Vec<Complex64> = frame.allocated_indices().map(|i| frame.values[i]).collect();
    let m = buf.len();
    if m == 0 {
        return PowerDelayProfile { bins: Vec::new() };
    }
    FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
    let scale = 1.0 / m as f64;
    let step = 1.0 / (m as f64 * frame.comb_size as f64 * frame.subcarrier_spacing);
    PowerDelayProfile {
        bins: buf
            .iter()
            .enumerate()
            .map(|(t, c)| (t as f64 * step, c.norm_sqr() * scale))
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkLabel {
    pub state: LinkState,
    pub tau_est: f64,
    pub tau_true: f64,
    pub tau_diff: f64,
}

/// Delay-threshold labeling: NLOS iff the PDP peak delay deviates from the
/// geometric delay by more than `threshold` seconds.
pub fn label_link(
    ch: &ChannelRealization,
    pdp: &PowerDelayProfile,
    threshold: f64,
) -> Result<LinkLabel> {
    let (_, tau_est) = pdp
        .argmax()
        .ok_or_else(|| Error::Empty("power delay profile".into()))?;
    Ok(label_from_delays(tau_est, ch.true_delay(), threshold))
}

/// The threshold rule on its own.
pub fn label_from_delays(tau_est: f64, tau_true: f64, threshold: f64) -> LinkLabel {
    let tau_diff = (tau_est - tau_true).abs();
    LinkLabel {
        state: if tau_diff > threshold { LinkState::Nlos } else { LinkState::Los },
        tau_est,
        tau_true,
        tau_diff,
    }
}

/// Default labeling threshold, seconds.
pub const LABEL_THRESHOLD: f64 = 10e-9;
