//! IMU preprocessing and spectral pseudo-image generation.
//!
//! Raw six-axis streams are median filtered, cut into non-overlapping
//! 16-sample windows, standardized with training-split statistics and turned
//! into three 16×6 images: DFT magnitude, 4-level Haar coefficients and a
//! Gabor magnitude slice.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{CoarseLabel, FineLabel};
use crate::tensor::Tensor;

pub const WINDOW_LEN: usize = 16;
pub const CHANNELS: usize = 6;
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["ax", "ay", "az", "gx", "gy", "gz"];
pub const DEFAULT_GABOR_SIGMA: f64 = 4.0;
pub const GABOR_CENTER: f64 = 7.5;
pub const STD_FLOOR: f64 = 1e-6;

/// `WINDOW_LEN × CHANNELS` matrix, rows are time steps (or feature index for
/// transformed images), columns are channels in `ax, ay, az, gx, gy, gz` order.
pub type Grid = [[f64; CHANNELS]; WINDOW_LEN];

/// One unit-converted IMU reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    pub gx: f64,
    pub gy: f64,
    pub gz: f64,
    pub label: FineLabel,
}

impl ImuSample {
    pub fn channels(&self) -> [f64; CHANNELS] {
        [self.ax, self.ay, self.az, self.gx, self.gy, self.gz]
    }

    pub fn with_channels(&self, ch: [f64; CHANNELS]) -> Self {
        Self {
            t: self.t,
            ax: ch[0],
            ay: ch[1],
            az: ch[2],
            gx: ch[3],
            gy: ch[4],
            gz: ch[5],
            label: self.label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub samples: Grid,
    pub label: FineLabel,
}

impl SampleWindow {
    pub fn coarse(&self) -> CoarseLabel {
        self.label.coarse()
    }

    pub fn column(&self, c: usize) -> [f64; WINDOW_LEN] {
        std::array::from_fn(|n| self.samples[n][c])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoImageSet {
    pub fft: Grid,
    pub wt: Grid,
    pub gt: Grid,
    pub source_label: FineLabel,
}

impl PseudoImageSet {
    pub fn branch(&self, b: Branch) -> &Grid {
        match b {
            Branch::Fft => &self.fft,
            Branch::Wt => &self.wt,
            Branch::Gt => &self.gt,
        }
    }

    pub fn branch_mut(&mut self, b: Branch) -> &mut Grid {
        match b {
            Branch::Fft => &mut self.fft,
            Branch::Wt => &mut self.wt,
            Branch::Gt => &mut self.gt,
        }
    }
}

/// The three spectral views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    Fft,
    Wt,
    Gt,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Fft, Branch::Wt, Branch::Gt];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Fft => "FFT",
            Branch::Wt => "WT",
            Branch::Gt => "GT",
        }
    }
}

/// Grid as a `16 × 6` tensor.
pub fn grid_tensor(g: &Grid) -> Tensor {
    let data = g.iter().flat_map(|row| row.iter().copied()).collect();
    Tensor::new(vec![WINDOW_LEN, CHANNELS], data).expect("grid is 16×6")
}

/// Per-channel standardization statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl ChannelStats {
    /// Population mean/std over every sample of every window; std is floored
    /// at [`STD_FLOOR`].
    pub fn from_windows(windows: &[SampleWindow]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Empty("no windows to compute channel statistics"));
        }
        let n = (windows.len() * WINDOW_LEN) as f64;
        let mut mean = [0.0; CHANNELS];
        for w in windows {
            for row in &w.samples {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; CHANNELS];
        for w in windows {
            for row in &w.samples {
                for c in 0..CHANNELS {
                    var[c] += (row[c] - mean[c]).powi(2);
                }
            }
        }
        let std = var.map(|v| (v / n).sqrt().max(STD_FLOOR));
        Ok(Self { mean, std })
    }

    pub fn identity() -> Self {
        Self {
            mean: [0.0; CHANNELS],
            std: [1.0; CHANNELS],
        }
    }
}

/// 3-point median with replicate padding at both ends.
pub fn median_filter3(series: &[f64]) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Empty("median filter input"));
    }
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let a = series[i.saturating_sub(1)];
            let b = series[i];
            let c = series[(i + 1).min(n - 1)];
            median3(a, b, c)
        })
        .collect())
}

fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// Checks the stream invariants: strictly increasing time, finite channels.
pub fn validate_stream(stream: &[ImuSample]) -> Result<()> {
    for (i, s) in stream.iter().enumerate() {
        if !s.t.is_finite() || s.channels().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        if i > 0 && s.t <= stream[i - 1].t {
            return Err(Error::InvalidArgument(format!(
                "timestamps not strictly increasing at sample {i}"
            )));
        }
    }
    Ok(())
}

/// Median filters every channel of the stream independently.
pub fn denoise(stream: &[ImuSample]) -> Result<Vec<ImuSample>> {
    if stream.is_empty() {
        return Ok(Vec::new());
    }
    let filtered: Vec<Vec<f64>> = (0..CHANNELS)
        .map(|c| {
            let col: Vec<f64> = stream.iter().map(|s| s.channels()[c]).collect();
            median_filter3(&col)
        })
        .collect::<Result<_>>()?;
    Ok(stream
        .iter()
        .enumerate()
        .map(|(i, s)| s.with_channels(std::array::from_fn(|c| filtered[c][i])))
        .collect())
}

/// Most frequent label; ties go to the label that sorts first.
pub fn majority_label(labels: impl IntoIterator<Item = FineLabel>) -> Option<FineLabel> {
    let mut counts = [0usize; FineLabel::ALL.len()];
    let mut any = false;
    for l in labels {
        counts[l.index()] += 1;
        any = true;
    }
    if !any {
        return None;
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    FineLabel::from_index(best)
}

/// Non-overlapping 16-sample windows; the trailing remainder is dropped.
pub fn segment_windows(stream: &[ImuSample]) -> Vec<SampleWindow> {
    stream
        .chunks_exact(WINDOW_LEN)
        .map(|chunk| SampleWindow {
            samples: std::array::from_fn(|n| chunk[n].channels()),
            label: majority_label(chunk.iter().map(|s| s.label)).expect("non-empty chunk"),
        })
        .collect()
}

pub fn standardize(window: &SampleWindow, stats: &ChannelStats) -> Result<SampleWindow> {
    let finite = stats.mean.iter().chain(&stats.std).all(|v| v.is_finite());
    if !finite || stats.std.iter().any(|&s| s <= 0.0) {
        return Err(Error::NonFinite("channel statistics".into()));
    }
    let mut out = window.clone();
    for row in &mut out.samples {
        for c in 0..CHANNELS {
            row[c] = (row[c] - stats.mean[c]) / stats.std[c];
        }
    }
    Ok(out)
}

fn fft16() -> &'static Arc<dyn Fft<f64>> {
    static PLAN: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    PLAN.get_or_init(|| FftPlanner::new().plan_fft_forward(WINDOW_LEN))
}

/// Unnormalized two-sided DFT magnitude of an arbitrary-length signal.
pub fn dft_magnitude(signal: &[f64]) -> Vec<f64> {
    if signal.is_empty() {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    if signal.len() == WINDOW_LEN {
        fft16().process(&mut buf);
    } else {
        FftPlanner::new()
            .plan_fft_forward(signal.len())
            .process(&mut buf);
    }
    buf.iter().map(|z| z.norm()).collect()
}

fn map_columns(window: &SampleWindow, f: impl Fn(&[f64; WINDOW_LEN]) -> [f64; WINDOW_LEN]) -> Grid {
    let mut out = [[0.0; CHANNELS]; WINDOW_LEN];
    for c in 0..CHANNELS {
        let col = f(&window.column(c));
        for (row, v) in out.iter_mut().zip(col) {
            row[c] = v;
        }
    }
    out
}

/// Column `c` holds `|X(k)|`, `k = 0..15`, of channel `c`.
pub fn fft_spectrogram(window: &SampleWindow) -> Grid {
    map_columns(window, |col| {
        let mag = dft_magnitude(col);
        std::array::from_fn(|k| mag[k])
    })
}

/// Full-depth orthonormal Haar analysis of a 16-sample signal, ordered
/// `[a4, d4, d3(2), d2(4), d1(8)]`.
pub fn haar_dwt16(x: &[f64; WINDOW_LEN]) -> [f64; WINDOW_LEN] {
    let mut out = [0.0; WINDOW_LEN];
    let mut approx = x.to_vec();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    while approx.len() > 1 {
        let half = approx.len() / 2;
        let (a, d): (Vec<f64>, Vec<f64>) = approx
            .chunks_exact(2)
            .map(|p| ((p[0] + p[1]) * s, (p[0] - p[1]) * s))
            .unzip();
        // detail coefficients of this level occupy [half, 2·half)
        out[half..2 * half].copy_from_slice(&d);
        approx = a;
    }
    out[0] = approx[0];
    out
}

pub fn haar_dwt_spectrogram(window: &SampleWindow) -> Grid {
    map_columns(window, haar_dwt16)
}

fn gabor_window(sigma: f64) -> [f64; WINDOW_LEN] {
    std::array::from_fn(|tau| {
        let d = tau as f64 - GABOR_CENTER;
        (-std::f64::consts::PI * d * d / (sigma * sigma)).exp()
    })
}

/// `|G(t_c, k/16)|` for the Gaussian centered at `t_c = 7.5`, truncated to
/// the window.
pub fn gabor_spectrogram(window: &SampleWindow, sigma: f64) -> Result<Grid> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("gabor sigma must be > 0, got {sigma}")));
    }
    let g = gabor_window(sigma);
    Ok(map_columns(window, |col| {
        let windowed: Vec<f64> = col.iter().zip(&g).map(|(x, w)| x * w).collect();
        let mag = dft_magnitude(&windowed);
        std::array::from_fn(|k| mag[k])
    }))
}

pub fn pseudoimage_set(window: &SampleWindow) -> Result<PseudoImageSet> {
    pseudoimage_set_with_sigma(window, DEFAULT_GABOR_SIGMA)
}

pub fn pseudoimage_set_with_sigma(window: &SampleWindow, sigma: f64) -> Result<PseudoImageSet> {
    Ok(PseudoImageSet {
        fft: fft_spectrogram(window),
        wt: haar_dwt_spectrogram(window),
        gt: gabor_spectrogram(window, sigma)?,
        source_label: window.label,
    })
}

/// Reads a `t,ax,ay,az,gx,gy,gz,label` stream file.
pub fn read_stream_csv(path: impl AsRef<Path>) -> Result<Vec<ImuSample>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let stream = rdr.deserialize().collect::<Result<Vec<ImuSample>, _>>()?;
    validate_stream(&stream)?;
    Ok(stream)
}

pub fn write_stream_csv(path: impl AsRef<Path>, stream: &[ImuSample]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    for s in stream {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window_from_column(col: [f64; WINDOW_LEN]) -> SampleWindow {
        let mut samples = [[0.0; CHANNELS]; WINDOW_LEN];
        for (row, v) in samples.iter_mut().zip(col) {
            row[0] = v;
        }
        SampleWindow {
            samples,
            label: FineLabel::A1,
        }
    }

    fn sample(t: f64, label: FineLabel) -> ImuSample {
        ImuSample {
            t,
            ax: t,
            ay: 0.0,
            az: 0.0,
            gx: 0.0,
            gy: 0.0,
            gz: 0.0,
            label,
        }
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_filter3(&[5.0; 4]).unwrap(), vec![5.0; 4]);
        assert_eq!(median_filter3(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(median_filter3(&[1.0, 9.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0, 3.0]);
        assert!(median_filter3(&[]).is_err());
        assert_eq!(median_filter3(&[7.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn segmentation_counts() {
        let s: Vec<_> = (0..40).map(|i| sample(i as f64, FineLabel::B1)).collect();
        assert_eq!(segment_windows(&s).len(), 2);
        assert!(segment_windows(&s[..15]).is_empty());
    }

    #[test]
    fn majority_with_tie_break() {
        let mut labels = vec![FineLabel::A1; 9];
        labels.extend([FineLabel::A2; 7]);
        assert_eq!(majority_label(labels), Some(FineLabel::A1));
        let tie = [FineLabel::B2, FineLabel::A3, FineLabel::A3, FineLabel::B2];
        assert_eq!(majority_label(tie), Some(FineLabel::A3));
        assert_eq!(majority_label([]), None);
    }

    #[test]
    fn standardize_arithmetic() {
        let mut w = window_from_column([3.0; WINDOW_LEN]);
        w.samples[0][1] = 5.0;
        let mut stats = ChannelStats::identity();
        assert_eq!(standardize(&w, &stats).unwrap(), w);
        stats.mean[0] = 1.0;
        stats.std[0] = 2.0;
        let z = standardize(&w, &stats).unwrap();
        assert_eq!(z.samples[3][0], 1.0);
        stats.std[2] = f64::NAN;
        assert!(standardize(&w, &stats).is_err());
    }

    #[test]
    fn fft_constant_and_zero() {
        let z = fft_spectrogram(&window_from_column([0.0; WINDOW_LEN]));
        assert!(z.iter().flatten().all(|&v| v == 0.0));
        let c = fft_spectrogram(&window_from_column([-2.0; WINDOW_LEN]));
        assert!((c[0][0] - 32.0).abs() < 1e-12);
        for row in &c[1..] {
            assert!(row[0].abs() < 1e-12);
        }
    }

    #[test]
    fn fft_cosine_bins() {
        let col = std::array::from_fn(|n| (2.0 * std::f64::consts::PI * n as f64 / 16.0).cos());
        let f = fft_spectrogram(&window_from_column(col));
        for (k, row) in f.iter().enumerate() {
            let expected = if k == 1 || k == 15 { 8.0 } else { 0.0 };
            assert!((row[0] - expected).abs() < 1e-9, "bin {k}: {}", row[0]);
        }
    }

    #[test]
    fn haar_examples() {
        let c = haar_dwt16(&[2.5; WINDOW_LEN]);
        assert!((c[0] - 10.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
        let mut x = [0.0; WINDOW_LEN];
        x[0] = 1.0;
        x[1] = 3.0;
        let c = haar_dwt16(&x);
        // d1 starts at index 8
        assert!((c[8] + std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn gabor_rejects_bad_sigma() {
        let w = window_from_column([1.0; WINDOW_LEN]);
        assert!(gabor_spectrogram(&w, 0.0).is_err());
        assert!(gabor_spectrogram(&w, -1.0).is_err());
    }

    #[test]
    fn gabor_impulse_is_flat() {
        let mut col = [0.0; WINDOW_LEN];
        col[3] = 1.0;
        let g = gabor_spectrogram(&window_from_column(col), 4.0).unwrap();
        let expected = (-std::f64::consts::PI * (3.0f64 - 7.5).powi(2) / 16.0).exp();
        for row in &g {
            assert!((row[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gabor_cosine_peaks_at_its_bin() {
        let col = std::array::from_fn(|n| (2.0 * std::f64::consts::PI * 2.0 * n as f64 / 16.0).cos());
        let g = gabor_spectrogram(&window_from_column(col), 4.0).unwrap();
        let mags: Vec<f64> = g.iter().map(|r| r[0]).collect();
        let k = crate::tensor::argmax(&mags);
        assert!(k == 2 || k == 14, "argmax {k}");
    }

    #[test]
    fn stream_validation() {
        let mut s: Vec<_> = (0..3).map(|i| sample(i as f64, FineLabel::C1)).collect();
        assert!(validate_stream(&s).is_ok());
        s[2].t = 1.0;
        assert!(validate_stream(&s).is_err());
        s[2].t = 2.0;
        s[1].gz = f64::INFINITY;
        assert!(validate_stream(&s).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s: Vec<_> = (0..5).map(|i| sample(0.02 * i as f64 + 0.1, FineLabel::A4)).collect();
        write_stream_csv(&path, &s).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,ax,ay,az,gx,gy,gz,label\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_stream_csv(&path).unwrap(), s);
    }
}
