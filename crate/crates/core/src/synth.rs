//! Seeded synthetic six-axis IMU recordings for the seven activities and
//! dataset assembly on top of them.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frontend::{
    denoise, pseudoimage_set, segment_windows, standardize, ChannelStats, ImuSample, PseudoImageSet, SampleWindow,
    CHANNELS, WINDOW_LEN,
};
use crate::labels::FineLabel;

pub const GRAVITY: f64 = 9.8;
pub const SUPPORTED_RATES: [u32; 3] = [10, 25, 50];
pub const BASE_RATE: u32 = 50;
/// Windows generated per continuous recording segment; every segment draws
/// its own subject variation.
const WINDOWS_PER_SEGMENT: usize = 8;

/// Generative parameters of one activity. Channel order is
/// `ax, ay, az, gx, gy, gz`; accelerations in m/s², rotation rates in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityProfile {
    pub label: FineLabel,
    pub offset: [f64; CHANNELS],
    pub freq_hz: f64,
    pub amplitude: [f64; CHANNELS],
    /// Number of harmonics including the fundamental; harmonic `h` has
    /// amplitude `amplitude / h`.
    pub harmonics: usize,
    /// Gaussian impact pulses per second (0 disables).
    pub burst_rate_hz: f64,
    pub burst_amplitude: [f64; CHANNELS],
    pub burst_width_s: f64,
    pub noise_std: [f64; CHANNELS],
    /// Relative per-segment jitter of frequency and amplitude.
    pub jitter: f64,
}

impl ActivityProfile {
    fn still(label: FineLabel, offset: [f64; CHANNELS]) -> Self {
        Self {
            label,
            offset,
            freq_hz: 0.0,
            amplitude: [0.0; CHANNELS],
            harmonics: 0,
            burst_rate_hz: 0.0,
            burst_amplitude: [0.0; CHANNELS],
            burst_width_s: 0.05,
            noise_std: [0.02, 0.02, 0.02, 0.01, 0.01, 0.01],
            jitter: 0.0,
        }
    }

    pub fn default_for(label: FineLabel) -> Self {
        let upright = [GRAVITY, 0.0, 0.0, 0.0, 0.0, 0.0];
        let moving_noise = [0.12, 0.12, 0.12, 0.06, 0.06, 0.06];
        let base = Self {
            noise_std: moving_noise,
            jitter: 0.1,
            ..Self::still(label, upright)
        };
        match label {
            FineLabel::A1 => Self {
                freq_hz: 1.8,
                amplitude: [2.0, 1.0, 0.4, 0.2, 0.2, 0.8],
                harmonics: 2,
                ..base
            },
            FineLabel::A2 => Self {
                freq_hz: 2.8,
                amplitude: [5.5, 2.8, 1.0, 0.5, 0.5, 1.8],
                harmonics: 3,
                ..base
            },
            FineLabel::A3 => Self {
                offset: [GRAVITY, 0.0, 1.2, 0.0, 0.0, 0.0],
                freq_hz: 1.5,
                amplitude: [1.2, 0.6, 0.4, 0.2, 0.2, 0.5],
                harmonics: 1,
                burst_rate_hz: 1.5,
                burst_amplitude: [0.0, 2.5, 2.0, 0.0, 0.0, 0.0],
                burst_width_s: 0.08,
                ..base
            },
            FineLabel::A4 => Self {
                offset: [GRAVITY, 0.0, -1.2, 0.0, 0.0, 0.0],
                freq_hz: 1.7,
                amplitude: [1.4, 0.6, 0.4, 0.2, 0.2, 0.5],
                harmonics: 1,
                burst_rate_hz: 1.7,
                burst_amplitude: [0.0, 3.5, -2.0, 0.0, 0.0, 0.0],
                burst_width_s: 0.06,
                ..base
            },
            FineLabel::B1 => Self::still(label, [0.0, 0.0, GRAVITY, 0.0, 0.0, 0.0]),
            FineLabel::B2 => Self::still(label, upright),
            FineLabel::C1 => Self {
                offset: [0.9 * GRAVITY, 0.0, 0.4 * GRAVITY, 0.0, 0.0, 0.0],
                freq_hz: 1.2,
                amplitude: [0.35, 0.35, 0.35, 0.1, 0.1, 2.5],
                harmonics: 1,
                ..base
            },
        }
    }

    pub fn validate(&self, rate_hz: u32) -> Result<()> {
        if self.noise_std.iter().any(|&s| !(s >= 0.0)) || !(self.jitter >= 0.0) || !(self.burst_width_s > 0.0) {
            return Err(Error::InvalidArgument(format!("profile {}: negative spread", self.label)));
        }
        let nyquist = rate_hz as f64 / 2.0;
        if self.freq_hz >= nyquist || self.burst_rate_hz >= nyquist {
            return Err(Error::InvalidArgument(format!(
                "profile {}: frequency above the {nyquist} Hz Nyquist limit",
                self.label
            )));
        }
        Ok(())
    }
}

/// Default profiles for every activity, indexed by [`FineLabel::index`].
pub fn default_profiles() -> Vec<ActivityProfile> {
    FineLabel::ALL.iter().map(|&l| ActivityProfile::default_for(l)).collect()
}

pub fn check_rate(rate_hz: u32) -> Result<()> {
    if SUPPORTED_RATES.contains(&rate_hz) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sampling rate {rate_hz} Hz is not one of 10, 25, 50")))
    }
}

/// `samples` readings of one activity at `rate_hz`, starting at time `t0`.
pub fn generate_profile_stream(
    profile: &ActivityProfile,
    samples: usize,
    rate_hz: u32,
    t0: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ImuSample>> {
    check_rate(rate_hz)?;
    profile.validate(rate_hz)?;
    let jitter = |rng: &mut ChaCha8Rng| 1.0 + profile.jitter * rng.random_range(-1.0..1.0);
    let freq = profile.freq_hz * jitter(rng);
    let amp: [f64; CHANNELS] = std::array::from_fn(|_| jitter(rng));
    let amp = std::array::from_fn::<f64, CHANNELS, _>(|c| profile.amplitude[c] * amp[c]);
    let burst_rate = profile.burst_rate_hz * jitter(rng);
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let burst_phase: f64 = rng.random_range(0.0..1.0);
    let nyquist = rate_hz as f64 / 2.0;
    let noise: Vec<Normal<f64>> = profile
        .noise_std
        .iter()
        .map(|&s| Normal::new(0.0, s).expect("validated std"))
        .collect();
    let mut out = Vec::with_capacity(samples);
    for n in 0..samples {
        let t = t0 + n as f64 / rate_hz as f64;
        let mut periodic = [0.0; 3];
        for h in 1..=profile.harmonics {
            let f = freq * h as f64;
            if f >= nyquist {
                break;
            }
            // three phase-shifted carriers so the axes are not collinear
            for (k, p) in periodic.iter_mut().enumerate() {
                *p += (2.0 * PI * f * t + phase + k as f64 * PI / 3.0).sin() / h as f64;
            }
        }
        let burst = if burst_rate > 0.0 {
            let u = t * burst_rate + burst_phase;
            let d = (u - u.round()) / burst_rate;
            (-0.5 * (d / profile.burst_width_s).powi(2)).exp()
        } else {
            0.0
        };
        let ch: [f64; CHANNELS] = std::array::from_fn(|c| {
            profile.offset[c]
                + amp[c] * periodic[c % 3]
                + profile.burst_amplitude[c] * burst
                + noise[c].sample(rng)
        });
        out.push(ImuSample {
            t,
            ax: ch[0],
            ay: ch[1],
            az: ch[2],
            gx: ch[3],
            gy: ch[4],
            gz: ch[5],
            label: profile.label,
        });
    }
    Ok(out)
}

/// A recording of one activity with the default profile.
pub fn generate_activity_stream(label: FineLabel, duration_s: f64, rate_hz: u32, seed: u64) -> Result<Vec<ImuSample>> {
    check_rate(rate_hz)?;
    if !(duration_s > 0.0) {
        return Err(Error::InvalidArgument("duration must be positive".into()));
    }
    let n = (duration_s * rate_hz as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_profile_stream(&ActivityProfile::default_for(label), n, rate_hz, 0.0, &mut rng)
}

/// A window ready for the classifiers: its standardized samples and the
/// three pseudo-images.
#[derive(Debug, Clone)]
pub struct Example {
    pub window: SampleWindow,
    pub images: PseudoImageSet,
}

impl Example {
    pub fn label(&self) -> FineLabel {
        self.window.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.7, val: 0.15, test: 0.15 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || ((all.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios {}/{}/{} must be in [0, 1] and sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }

    /// Per-split counts for `n` items: train and val are floored, test takes
    /// the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let tr = (self.train * n as f64 + 1e-9).floor() as usize;
        let va = ((self.val * n as f64 + 1e-9).floor() as usize).min(n - tr);
        (tr, va, n - tr - va)
    }
}

/// Filtered, unstandardized windows of every class, split by class.
#[derive(Debug, Clone, Default)]
pub struct RawSplit {
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    pub stats: ChannelStats,
    pub ratios: SplitRatios,
    pub seed: u64,
    pub raw: RawSplit,
}

/// Median-filtered 16-sample windows of one activity, generated in segments
/// with independent subject variation.
pub fn activity_windows(profile: &ActivityProfile, count: usize, rate_hz: u32, rng: &mut ChaCha8Rng) -> Result<Vec<SampleWindow>> {
    let mut windows = Vec::with_capacity(count);
    while windows.len() < count {
        let n = WINDOWS_PER_SEGMENT.min(count - windows.len());
        let t0 = rng.random_range(0.0..60.0);
        let stream = generate_profile_stream(profile, n * WINDOW_LEN, rate_hz, t0, rng)?;
        windows.extend(segment_windows(&denoise(&stream)?));
    }
    Ok(windows)
}

/// Converts filtered windows into examples using the given statistics.
pub fn to_examples(windows: &[SampleWindow], stats: &ChannelStats) -> Result<Vec<Example>> {
    windows
        .iter()
        .map(|w| {
            let window = standardize(w, stats)?;
            let images = pseudoimage_set(&window)?;
            Ok(Example { window, images })
        })
        .collect()
}

/// Assembles a stratified split from pre-split raw windows; statistics come
/// from the training windows only.
pub fn assemble(raw: RawSplit, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    let stats = ChannelStats::from_windows(&raw.train)?;
    Ok(DatasetSplit {
        train: to_examples(&raw.train, &stats)?,
        val: to_examples(&raw.val, &stats)?,
        test: to_examples(&raw.test, &stats)?,
        stats,
        ratios,
        seed,
        raw,
    })
}

/// Balanced dataset with `windows_per_class` windows of every profile,
/// generated at the base rate and split per class.
pub fn make_dataset(
    profiles: &[ActivityProfile],
    windows_per_class: usize,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit> {
    ratios.validate()?;
    if profiles.is_empty() || windows_per_class == 0 {
        return Err(Error::Empty("dataset needs profiles and windows"));
    }
    let (tr, va, _) = ratios.counts(windows_per_class);
    let mut raw = RawSplit::default();
    for (k, profile) in profiles.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
        let mut windows = activity_windows(profile, windows_per_class, BASE_RATE, &mut rng)?;
        windows.shuffle(&mut rng);
        let test = windows.split_off(tr + va);
        let val = windows.split_off(tr);
        raw.train.extend(windows);
        raw.val.extend(val);
        raw.test.extend(test);
    }
    assemble(raw, ratios, seed)
}

impl DatasetSplit {
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "ratios: {}/{}/{}", self.ratios.train, self.ratios.val, self.ratios.test);
        for (name, split) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            let _ = write!(s, "{name}: {}", split.len());
            for l in FineLabel::ALL {
                let n = split.iter().filter(|e| e.label() == l).count();
                let _ = write!(s, " {l}={n}");
            }
            let _ = writeln!(s);
        }
        s
    }
}

/// Flattens windows back into a sample stream (for CSV export).
pub fn windows_to_stream(windows: &[SampleWindow], rate_hz: u32) -> Vec<ImuSample> {
    let dt = 1.0 / rate_hz as f64;
    windows
        .iter()
        .flat_map(|w| w.samples.iter().map(move |row| (row, w.label)))
        .enumerate()
        .map(|(i, (row, label))| ImuSample {
            t: i as f64 * dt,
            ax: row[0],
            ay: row[1],
            az: row[2],
            gx: row[3],
            gy: row[4],
            gz: row[5],
            label,
        })
        .collect()
}

/// A stream of consecutive activity segments at the base rate, e.g. for
/// runtime simulation. Each segment is `(label, windows)`.
pub fn generate_mixed_stream(segments: &[(FineLabel, usize)], seed: u64) -> Result<Vec<ImuSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<ImuSample> = Vec::new();
    for &(label, windows) in segments {
        let t0 = out.last().map_or(0.0, |s| s.t + 1.0 / BASE_RATE as f64);
        let profile = ActivityProfile::default_for(label);
        out.extend(generate_profile_stream(&profile, windows * WINDOW_LEN, BASE_RATE, t0, &mut rng)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::dft_magnitude;

    fn std_of(xs: impl Iterator<Item = f64> + Clone) -> f64 {
        let v: Vec<f64> = xs.collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn deterministic() {
        let a = generate_activity_stream(FineLabel::A3, 4.0, 25, 7).unwrap();
        let b = generate_activity_stream(FineLabel::A3, 4.0, 25, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert!(generate_activity_stream(FineLabel::A3, 4.0, 30, 7).is_err());
        assert!(generate_activity_stream(FineLabel::A3, 0.0, 25, 7).is_err());
    }

    #[test]
    fn stationary_is_quiet() {
        let b1 = generate_activity_stream(FineLabel::B1, 10.0, 50, 1).unwrap();
        let a2 = generate_activity_stream(FineLabel::A2, 10.0, 50, 1).unwrap();
        assert!(std_of(b1.iter().map(|s| s.ax)) < 0.1 * std_of(a2.iter().map(|s| s.ax)));
        let mean_az = b1.iter().map(|s| s.az).sum::<f64>() / b1.len() as f64;
        assert!((mean_az - GRAVITY).abs() < 0.05);
    }

    #[test]
    fn cycling_gz_peaks_at_pedal_frequency() {
        let rate = 25;
        let n = 256;
        let s = generate_activity_stream(FineLabel::C1, n as f64 / rate as f64, rate, 3).unwrap();
        let gz: Vec<f64> = s.iter().map(|x| x.gz).collect();
        let mag = dft_magnitude(&gz);
        let peak = (1..n / 2).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
        let expected = 1.2 * n as f64 / rate as f64;
        // jitter is at most 10 %
        assert!((peak as f64 - expected).abs() <= 0.1 * expected + 1.0, "{peak} vs {expected}");
    }

    #[test]
    fn split_counts() {
        assert_eq!(SplitRatios::default().counts(100), (70, 15, 15));
        assert!(SplitRatios { train: 0.5, val: 0.2, test: 0.2 }.validate().is_err());
        let d = make_dataset(&default_profiles(), 100, SplitRatios::default(), 4).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (490, 105, 105));
        let val_mean: f64 = d.val.iter().map(|e| e.window.samples[0][0]).sum::<f64>() / d.val.len() as f64;
        assert_ne!(val_mean, 0.0);
    }
}
