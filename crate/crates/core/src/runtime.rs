//! Two-stage dispatch, module residency and adaptive sampling-rate control
//! over a stream of windows.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frontend::{denoise, pseudoimage_set, segment_windows, standardize, ChannelStats, ImuSample, PseudoImageSet, WINDOW_LEN};
use crate::graph::ModelGraph;
use crate::labels::{CoarseLabel, FineLabel};
use crate::synth::{check_rate, generate_profile_stream, ActivityProfile, BASE_RATE};
use crate::tensor::argmax;

/// Anything that scores a pseudo-image set.
pub trait Classifier {
    fn classify(&self, images: &PseudoImageSet) -> Result<Vec<f64>>;
}

impl Classifier for ModelGraph {
    fn classify(&self, images: &PseudoImageSet) -> Result<Vec<f64>> {
        self.predict_images(images)
    }
}

pub struct Models<'a> {
    pub first_layer: &'a dyn Classifier,
    pub plmn: &'a dyn Classifier,
    pub stationary: &'a dyn Classifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub coarse: CoarseLabel,
    pub fine: FineLabel,
    pub coarse_probs: Vec<f64>,
    /// Second-stage output; `None` for cycling windows.
    pub fine_probs: Option<Vec<f64>>,
}

fn check_width(probs: Vec<f64>, width: usize, what: &str) -> Result<Vec<f64>> {
    if probs.len() != width {
        return Err(Error::Shape(format!("{what} returned {} scores, expected {width}", probs.len())));
    }
    Ok(probs)
}

/// Coarse classification, then the second stage selected by the coarse
/// label. Cycling windows are final after the first stage.
pub fn dispatch_window(images: &PseudoImageSet, models: &Models) -> Result<Dispatch> {
    let coarse_probs = check_width(models.first_layer.classify(images)?, CoarseLabel::ALL.len(), "first layer")?;
    let coarse = CoarseLabel::from_index(argmax(&coarse_probs)).expect("three coarse classes");
    let (fine, fine_probs) = match coarse {
        CoarseLabel::A => {
            let p = check_width(models.plmn.classify(images)?, FineLabel::MOVING.len(), "PLMN")?;
            (FineLabel::MOVING[argmax(&p)], Some(p))
        }
        CoarseLabel::B => {
            let p = check_width(models.stationary.classify(images)?, FineLabel::STATIONARY.len(), "stationary")?;
            (FineLabel::STATIONARY[argmax(&p)], Some(p))
        }
        CoarseLabel::C => (FineLabel::C1, None),
    };
    Ok(Dispatch { coarse, fine, coarse_probs, fine_probs })
}

/// Sampling rate chosen after a window of the given coarse class.
pub fn asra_rate(coarse: CoarseLabel) -> u32 {
    match coarse {
        CoarseLabel::A => 50,
        CoarseLabel::B => 10,
        CoarseLabel::C => 25,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModuleId {
    FirstLayer,
    Plmn,
    Stationary,
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModuleId::FirstLayer => "First_Layer",
            ModuleId::Plmn => "PLMN",
            ModuleId::Stationary => "Stationary",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RamTable {
    pub first_layer: f64,
    pub plmn: f64,
    pub stationary: f64,
}

impl RamTable {
    pub fn of(&self, m: ModuleId) -> f64 {
        match m {
            ModuleId::FirstLayer => self.first_layer,
            ModuleId::Plmn => self.plmn,
            ModuleId::Stationary => self.stationary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidencyEvent {
    Load(ModuleId),
    Unload(ModuleId),
}

/// Loaded modules. The first layer is always resident; at most one
/// second-stage module is.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidencyState {
    second: Option<ModuleId>,
    pub peak_ram_kib: f64,
    pub events: Vec<ResidencyEvent>,
}

impl ResidencyState {
    pub fn new(table: &RamTable) -> Self {
        Self { second: None, peak_ram_kib: table.first_layer, events: Vec::new() }
    }

    pub fn resident(&self) -> Vec<ModuleId> {
        std::iter::once(ModuleId::FirstLayer).chain(self.second).collect()
    }

    pub fn resident_ram_kib(&self, table: &RamTable) -> f64 {
        self.resident().into_iter().map(|m| table.of(m)).sum()
    }
}

/// Makes the second-stage module for `coarse` resident, unloading the other
/// one first. Cycling needs no second stage and leaves residency unchanged.
pub fn residency_step(state: &mut ResidencyState, coarse: CoarseLabel, table: &RamTable) {
    let wanted = match coarse {
        CoarseLabel::A => ModuleId::Plmn,
        CoarseLabel::B => ModuleId::Stationary,
        CoarseLabel::C => return,
    };
    if state.second == Some(wanted) {
        return;
    }
    if let Some(old) = state.second.take() {
        state.events.push(ResidencyEvent::Unload(old));
    }
    state.second = Some(wanted);
    state.events.push(ResidencyEvent::Load(wanted));
    state.peak_ram_kib = state.peak_ram_kib.max(state.resident_ram_kib(table));
}

/// Produces consecutive raw windows at a requested sampling rate.
pub trait WindowSource {
    /// The next `WINDOW_LEN` samples at `rate_hz`, or `None` when exhausted.
    fn next_window(&mut self, rate_hz: u32) -> Result<Option<Vec<ImuSample>>>;
}

/// Replays a recording made at the base rate, decimating it to the
/// requested rate.
pub struct DecimatingSource {
    samples: Vec<ImuSample>,
    pos: usize,
}

impl DecimatingSource {
    pub fn new(samples: Vec<ImuSample>) -> Self {
        Self { samples, pos: 0 }
    }
}

impl WindowSource for DecimatingSource {
    fn next_window(&mut self, rate_hz: u32) -> Result<Option<Vec<ImuSample>>> {
        check_rate(rate_hz)?;
        let step = (BASE_RATE / rate_hz) as usize;
        let span = WINDOW_LEN * step;
        if self.pos + span > self.samples.len() {
            return Ok(None);
        }
        let w = (0..WINDOW_LEN).map(|i| self.samples[self.pos + i * step]).collect();
        self.pos += span;
        Ok(Some(w))
    }
}

/// Generates windows on demand from a schedule of `(activity, windows)`
/// segments, directly at the requested rate.
pub struct ScheduledSource {
    schedule: Vec<FineLabel>,
    next: usize,
    t: f64,
    rng: ChaCha8Rng,
}

impl ScheduledSource {
    pub fn new(segments: &[(FineLabel, usize)], seed: u64) -> Self {
        let schedule = segments.iter().flat_map(|&(l, n)| std::iter::repeat_n(l, n)).collect();
        Self { schedule, next: 0, t: 0.0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl WindowSource for ScheduledSource {
    fn next_window(&mut self, rate_hz: u32) -> Result<Option<Vec<ImuSample>>> {
        let Some(&label) = self.schedule.get(self.next) else {
            return Ok(None);
        };
        self.next += 1;
        let w = generate_profile_stream(&ActivityProfile::default_for(label), WINDOW_LEN, rate_hz, self.t, &mut self.rng)?;
        self.t += WINDOW_LEN as f64 / rate_hz as f64;
        Ok(Some(w))
    }
}

/// Random activity segments of 4 to 24 windows totalling `windows`.
pub fn random_schedule(windows: usize, seed: u64) -> Vec<(FineLabel, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut left = windows;
    while left > 0 {
        let label = FineLabel::ALL[rng.random_range(0..FineLabel::ALL.len())];
        let n = rng.random_range(4..=24).min(left);
        out.push((label, n));
        left -= n;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamEvent {
    pub window: usize,
    /// Majority label of the raw samples.
    pub truth: FineLabel,
    pub coarse: CoarseLabel,
    pub fine: FineLabel,
    /// Rate the window was sampled at.
    pub sampled_hz: u32,
    /// Rate selected for the next window.
    pub rate_hz: u32,
    pub resident_ram_kib: f64,
    pub resident: Vec<ModuleId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamLog {
    pub events: Vec<StreamEvent>,
    pub residency: ResidencyState,
    pub table: RamTable,
}

/// Runs the full pipeline window by window: filter, standardize, transform,
/// dispatch, update residency, pick the next rate.
pub fn stream_run(
    source: &mut dyn WindowSource,
    models: &Models,
    stats: &ChannelStats,
    table: RamTable,
) -> Result<StreamLog> {
    let mut residency = ResidencyState::new(&table);
    let mut rate = BASE_RATE;
    let mut events = Vec::new();
    while let Some(raw) = source.next_window(rate)? {
        let filtered = denoise(&raw)?;
        let window = segment_windows(&filtered)
            .into_iter()
            .next()
            .ok_or_else(|| Error::Shape(format!("source produced {} samples, need {WINDOW_LEN}", raw.len())))?;
        let images = pseudoimage_set(&standardize(&window, stats)?)?;
        let d = dispatch_window(&images, models)?;
        residency_step(&mut residency, d.coarse, &table);
        let next = asra_rate(d.coarse);
        events.push(StreamEvent {
            window: events.len(),
            truth: window.label,
            coarse: d.coarse,
            fine: d.fine,
            sampled_hz: rate,
            rate_hz: next,
            resident_ram_kib: residency.resident_ram_kib(&table),
            resident: residency.resident(),
        });
        rate = next;
    }
    Ok(StreamLog { events, residency, table })
}

/// Summary statistics of a stream run.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSummary {
    pub windows: usize,
    pub routed_plmn: usize,
    pub routed_stationary: usize,
    pub accuracy: f64,
    /// Fraction of second-stage windows routed to PLMN.
    pub p_hat: f64,
    /// Mean resident RAM over windows that ran a second stage.
    pub mean_resident_ram_kib: f64,
    pub expected_ram_kib: f64,
    pub peak_ram_kib: f64,
}

impl StreamLog {
    pub fn summary(&self) -> StreamSummary {
        let routed: Vec<&StreamEvent> = self.events.iter().filter(|e| e.coarse != CoarseLabel::C).collect();
        let plmn = routed.iter().filter(|e| e.coarse == CoarseLabel::A).count();
        let n = routed.len().max(1) as f64;
        let p_hat = if routed.is_empty() { 0.0 } else { plmn as f64 / n };
        let t = &self.table;
        StreamSummary {
            windows: self.events.len(),
            routed_plmn: plmn,
            routed_stationary: routed.len() - plmn,
            accuracy: self.events.iter().filter(|e| e.fine == e.truth).count() as f64 / self.events.len().max(1) as f64,
            p_hat,
            mean_resident_ram_kib: routed.iter().map(|e| e.resident_ram_kib).sum::<f64>() / n,
            expected_ram_kib: t.first_layer + p_hat * t.plmn + (1.0 - p_hat) * t.stationary,
            peak_ram_kib: self.residency.peak_ram_kib,
        }
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "window,coarse,fine,rate_hz,resident_ram_kib")?;
        for e in &self.events {
            writeln!(w, "{},{},{},{},{}", e.window, e.coarse, e.fine, e.rate_hz, e.resident_ram_kib)?;
        }
        Ok(())
    }
}

impl StreamSummary {
    pub fn to_text(&self) -> String {
        format!(
            "windows: {}\nrouted to PLMN: {}\nrouted to Stationary: {}\naccuracy: {:.4}\np_hat: {:.4}\nmean resident RAM: {:.3} KiB\nexpected RAM: {:.3} KiB\npeak RAM: {:.3} KiB\n",
            self.windows,
            self.routed_plmn,
            self.routed_stationary,
            self.accuracy,
            self.p_hat,
            self.mean_resident_ram_kib,
            self.expected_ram_kib,
            self.peak_ram_kib
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    struct Fixed(Vec<f64>, Cell<usize>);

    impl Fixed {
        fn new(p: &[f64]) -> Self {
            Self(p.to_vec(), Cell::new(0))
        }
    }

    impl Classifier for Fixed {
        fn classify(&self, _: &PseudoImageSet) -> Result<Vec<f64>> {
            self.1.set(self.1.get() + 1);
            Ok(self.0.clone())
        }
    }

    fn images() -> PseudoImageSet {
        let g = [[0.0; 6]; 16];
        PseudoImageSet { fft: g, wt: g, gt: g, source_label: FineLabel::A1 }
    }

    const TABLE: RamTable = RamTable { first_layer: 87.2, plmn: 25.9, stationary: 87.2 };

    #[test]
    fn routes_stationary() {
        let (fl, pl, st) = (Fixed::new(&[0.1, 0.8, 0.1]), Fixed::new(&[1.0, 0.0, 0.0, 0.0]), Fixed::new(&[0.2, 0.8]));
        let d = dispatch_window(&images(), &Models { first_layer: &fl, plmn: &pl, stationary: &st }).unwrap();
        assert_eq!((d.coarse, d.fine), (CoarseLabel::B, FineLabel::B2));
        assert_eq!((pl.1.get(), st.1.get()), (0, 1));
    }

    #[test]
    fn cycling_skips_second_stage() {
        let (fl, pl, st) = (Fixed::new(&[0.1, 0.1, 0.8]), Fixed::new(&[1.0, 0.0, 0.0, 0.0]), Fixed::new(&[0.2, 0.8]));
        let d = dispatch_window(&images(), &Models { first_layer: &fl, plmn: &pl, stationary: &st }).unwrap();
        assert_eq!(d.fine, FineLabel::C1);
        assert_eq!((pl.1.get(), st.1.get()), (0, 0));
    }

    #[test]
    fn width_mismatch_errors() {
        let (fl, pl, st) = (Fixed::new(&[0.9, 0.1, 0.0]), Fixed::new(&[1.0, 0.0]), Fixed::new(&[0.2, 0.8]));
        assert!(dispatch_window(&images(), &Models { first_layer: &fl, plmn: &pl, stationary: &st }).is_err());
    }

    #[test]
    fn asra_mapping() {
        assert_eq!(asra_rate(CoarseLabel::B), 10);
        assert_eq!(asra_rate(CoarseLabel::C), 25);
        assert_eq!(asra_rate(CoarseLabel::A), 50);
    }

    #[test]
    fn residency_is_idempotent_and_exclusive() {
        let mut s = ResidencyState::new(&TABLE);
        for _ in 0..3 {
            residency_step(&mut s, CoarseLabel::B, &TABLE);
        }
        assert_eq!(s.events, vec![ResidencyEvent::Load(ModuleId::Stationary)]);
        residency_step(&mut s, CoarseLabel::A, &TABLE);
        assert_eq!(
            s.events[1..],
            [ResidencyEvent::Unload(ModuleId::Stationary), ResidencyEvent::Load(ModuleId::Plmn)]
        );
        assert_eq!(s.resident(), vec![ModuleId::FirstLayer, ModuleId::Plmn]);
        residency_step(&mut s, CoarseLabel::C, &TABLE);
        assert_eq!(s.resident(), vec![ModuleId::FirstLayer, ModuleId::Plmn]);
        assert!((s.peak_ram_kib - 174.4).abs() < 1e-9);
    }

    #[test]
    fn decimation_takes_every_fifth_sample() {
        let samples: Vec<ImuSample> = (0..170)
            .map(|i| ImuSample { t: i as f64, ax: i as f64, ay: 0.0, az: 0.0, gx: 0.0, gy: 0.0, gz: 0.0, label: FineLabel::B1 })
            .collect();
        let mut src = DecimatingSource::new(samples);
        let w = src.next_window(10).unwrap().unwrap();
        assert_eq!(w.iter().map(|s| s.ax as usize).collect::<Vec<_>>(), (0..80).step_by(5).collect::<Vec<_>>());
        assert_eq!(src.next_window(50).unwrap().unwrap()[0].ax, 80.0);
        assert!(src.next_window(10).unwrap().is_none());
    }

    #[test]
    fn stationary_stream_settles_at_ten_hertz() {
        let (fl, pl, st) = (Fixed::new(&[0.0, 1.0, 0.0]), Fixed::new(&[1.0, 0.0, 0.0, 0.0]), Fixed::new(&[1.0, 0.0]));
        let mut src = ScheduledSource::new(&[(FineLabel::B1, 20)], 1);
        let models = Models { first_layer: &fl, plmn: &pl, stationary: &st };
        let log = stream_run(&mut src, &models, &ChannelStats::identity(), TABLE).unwrap();
        assert_eq!(log.events.len(), 20);
        assert_eq!(log.events[0].sampled_hz, 50);
        assert!(log.events[1..].iter().all(|e| e.sampled_hz == 10));
    }
}
