//! Comb-allocated reference-signal frames in the subcarrier domain.
//!
//! A frame holds one complex value per subcarrier. Subcarrier `i` sits at
//! baseband offset `i * subcarrier_spacing`; the carrier itself contributes
//! a phase common to every subcarrier, which cancels in all differential
//! quantities and is therefore not modelled.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::Rng as _;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::phase::wrap_pi;
use crate::rng::substream;
use crate::scenario::ScenarioConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct SubcarrierFrame {
    pub values: Vec<Complex64>,
    pub allocation_mask: Vec<bool>,
    /// Hz
    pub subcarrier_spacing: f64,
    pub comb_size: usize,
    pub comb_offset: usize,
    /// Radians in `(-π, π]`; zero on unallocated subcarriers.
    pub reference_phases: Vec<f64>,
}

/// Allocation mask of a comb: true exactly at indices `≡ offset (mod comb)`.
pub fn comb_mask(num_subcarriers: usize, comb_size: usize, comb_offset: usize) -> Vec<bool> {
    (0..num_subcarriers)
        .map(|i| i % comb_size == comb_offset)
        .collect()
}

impl SubcarrierFrame {
    /// An all-zero frame on the configured comb.
    pub fn empty(config: &ScenarioConfig) -> Self {
        let k = config.num_subcarriers;
        Self {
            values: vec![Complex64::new(0.0, 0.0); k],
            allocation_mask: comb_mask(k, config.comb_size, config.comb_offset),
            subcarrier_spacing: config.subcarrier_spacing,
            comb_size: config.comb_size,
            comb_offset: config.comb_offset,
            reference_phases: vec![0.0; k],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_allocated(&self, i: usize) -> bool {
        self.allocation_mask[i]
    }

    pub fn allocated_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.allocation_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
    }

    pub fn allocated_count(&self) -> usize {
        self.allocation_mask.iter().filter(|&&a| a).count()
    }

    /// Baseband offset frequency of subcarrier `i`, Hz.
    pub fn frequency(&self, i: usize) -> f64 {
        i as f64 * self.subcarrier_spacing
    }

    fn check_compatible(&self, other: &SubcarrierFrame) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::FrameMismatch(format!(
                "{} vs {} subcarriers",
                self.len(),
                other.len()
            )));
        }
        if self.allocation_mask != other.allocation_mask {
            return Err(Error::FrameMismatch("allocation masks differ".into()));
        }
        Ok(())
    }

    /// Time-domain magnitude profile: `|IDFT_K(values)|` with unitary
    /// scaling, over all K subcarriers including unallocated ones.
    pub fn time_domain_magnitude(&self) -> Vec<f64> {
        let n = self.len();
        let mut buf = self.values.clone();
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        let scale = 1.0 / (n as f64).sqrt();
        buf.iter().map(|c| c.norm() * scale).collect()
    }

    /// Writes `index,re,im,allocated` rows (with a header line).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,re,im,allocated")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{i},{:?},{:?},{}", v.re, v.im, u8::from(self.allocation_mask[i]))?;
        }
        Ok(())
    }

    /// Reads values and mask back from [`write_csv`](Self::write_csv)
    /// output. Spacing and comb parameters are not part of the format and
    /// must be supplied; reference phases are reset to zero.
    pub fn read_csv<R: BufRead>(
        r: R,
        subcarrier_spacing: f64,
        comb_size: usize,
        comb_offset: usize,
    ) -> Result<Self> {
        let mut values = Vec::new();
        let mut mask = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 && line.starts_with("index") || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse(format!("frame csv line {}: {line}", lineno + 1));
            if cols.len() != 4 {
                return Err(bad());
            }
            let idx: usize = cols[0].trim().parse().map_err(|_| bad())?;
            if idx != values.len() {
                return Err(bad());
            }
            let re: f64 = cols[1].trim().parse().map_err(|_| bad())?;
            let im: f64 = cols[2].trim().parse().map_err(|_| bad())?;
            let alloc = match cols[3].trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                _ => return Err(bad()),
            };
            values.push(Complex64::new(re, im));
            mask.push(alloc);
        }
        let n = values.len();
        Ok(Self {
            values,
            allocation_mask: mask,
            subcarrier_spacing,
            comb_size,
            comb_offset,
            reference_phases: vec![0.0; n],
        })
    }
}

/// Builds a reference frame with unit-modulus, seeded pseudo-random phases
/// on the allocated comb and exact zeros elsewhere.
pub fn generate_reference_frame(config: &ScenarioConfig, sequence_seed: u64) -> SubcarrierFrame {
    let mut frame = SubcarrierFrame::empty(config);
    let mut rng = substream(sequence_seed, 0x5eed);
    for i in 0..frame.len() {
        if frame.allocation_mask[i] {
            // (-π, π]
            let theta = PI - rng.random_range(0.0..2.0 * PI);
            frame.reference_phases[i] = theta;
            frame.values[i] = Complex64::from_polar(1.0, theta);
        }
    }
    frame
}

/// Removes the known code phase from every allocated subcarrier.
///
/// Magnitudes are untouched and unallocated entries pass through. The
/// returned frame carries zero reference phases.
pub fn correct_phase_offsets(
    rx: &SubcarrierFrame,
    reference: &SubcarrierFrame,
) -> Result<SubcarrierFrame> {
    rx.check_compatible(reference)?;
    let mut out = rx.clone();
    for i in 0..out.len() {
        if out.allocation_mask[i] {
            let v = out.values[i];
            out.values[i] = Complex64::from_polar(v.norm(), wrap_pi(v.arg() - reference.reference_phases[i]));
        }
    }
    out.reference_phases = vec![0.0; out.len()];
    Ok(out)
}

/// Inverse of [`correct_phase_offsets`]: adds the reference phases back.
pub fn apply_phase_offsets(
    frame: &SubcarrierFrame,
    reference: &SubcarrierFrame,
) -> Result<SubcarrierFrame> {
    frame.check_compatible(reference)?;
    let mut out = frame.clone();
    for i in 0..out.len() {
        if out.allocation_mask[i] {
            out.values[i] *= Complex64::from_polar(1.0, reference.reference_phases[i]);
        }
    }
    out.reference_phases = reference.reference_phases.clone();
    Ok(out)
}
