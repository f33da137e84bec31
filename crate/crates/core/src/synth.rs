//! Synthetic periodic frame stacks with a known phase per frame.
//!
//! Frame `t` is `1 + a·[sin φ_t · P₁ + cos φ_t · P₂] + noise`, where `P₁` and
//! `P₂` are orthogonal, zero-mean, unit-RMS travelling-wave patterns and
//! `φ_t = 2π · n_periods · t / n_frames`. With the DC level removed, the
//! noiseless frames lie on a circle, so the angular distance between frames
//! `i` and `j` is exactly `|sin((φ_i − φ_j)/2)|`.
//!
//! Signal-to-noise is RMS based: the signal part has RMS `amplitude` over
//! pixels and time, so `noise_sigma == amplitude` means SNR = 1.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub n_periods: f64,
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_frames: 270,
            height: 64,
            width: 64,
            // non-integer so that frames do not repeat phases
            n_periods: 10.1,
            amplitude: 0.02,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::InvalidArgument("need at least 2 frames".into()));
        }
        if self.height < 1 || self.width < 3 {
            return Err(Error::InvalidArgument(format!(
                "frame {}x{} too small; width must be at least 3",
                self.height, self.width
            )));
        }
        if !(self.n_periods > 0.0 && self.n_periods.is_finite()) {
            return Err(Error::InvalidArgument("n_periods must be positive".into()));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidArgument("amplitude must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(
                "noise_sigma must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// True phase of every frame, in `[0, 2π)`.
    pub fn phases(&self) -> Vec<f64> {
        (0..self.n_frames)
            .map(|t| (TAU * self.n_periods * t as f64 / self.n_frames as f64).rem_euclid(TAU))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub phases: Vec<f64>,
    /// The same frames without noise.
    pub clean: Dataset,
}

/// The two spatial patterns, each of length `height·width`, row-major.
pub fn patterns(height: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let m = height * width;
    let envelope = |y: usize| 1.0 + 0.5 * (TAU * (y as f64 + 0.5) / height as f64).cos();
    let wave = |f: fn(f64) -> f64| -> Vec<f64> {
        (0..m)
            .map(|p| {
                let (y, x) = (p / width, p % width);
                envelope(y) * f(TAU * (x as f64 + 0.5) / width as f64)
            })
            .collect()
    };
    let mut p1 = wave(f64::sin);
    let mut p2 = wave(f64::cos);
    // Exact zero mean, orthogonality and unit RMS on the discrete grid.
    let center = |p: &mut Vec<f64>| {
        let mean = p.iter().sum::<f64>() / m as f64;
        p.iter_mut().for_each(|v| *v -= mean);
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let unit_rms = |p: &mut Vec<f64>| {
        let rms = (dot(p, p) / m as f64).sqrt();
        p.iter_mut().for_each(|v| *v /= rms);
    };
    center(&mut p1);
    unit_rms(&mut p1);
    center(&mut p2);
    let proj = dot(&p1, &p2) / dot(&p1, &p1);
    p2.iter_mut().zip(&p1).for_each(|(b, a)| *b -= proj * a);
    unit_rms(&mut p2);
    (p1, p2)
}

/// Frames plus their true phases and noiseless counterparts. Noise for frame
/// `t` comes from its own seeded stream, so output does not depend on thread count.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let (n, m) = (spec.n_frames, spec.height * spec.width);
    let (p1, p2) = patterns(spec.height, spec.width);
    let phases = spec.phases();
    let normal = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise: {e}")))?;

    let frames: Vec<(Vec<f64>, Vec<f64>)> = phases
        .par_iter()
        .enumerate()
        .map(|(t, &phi)| {
            let (s, c) = phi.sin_cos();
            let clean: Vec<f64> = p1
                .iter()
                .zip(&p2)
                .map(|(a, b)| 1.0 + spec.amplitude * (s * a + c * b))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(t as u64);
            let noisy = if spec.noise_sigma > 0.0 {
                clean.iter().map(|v| v + normal.sample(&mut rng)).collect()
            } else {
                clean.clone()
            };
            (noisy, clean)
        })
        .collect();

    let noisy = DMatrix::from_fn(n, m, |t, p| frames[t].0[p]);
    let clean = DMatrix::from_fn(n, m, |t, p| frames[t].1[p]);
    let shape = Some((spec.height, spec.width));
    Ok(SynthOutput {
        dataset: Dataset::new(noisy, None, shape)?,
        phases,
        clean: Dataset::new(clean, None, shape)?,
    })
}
