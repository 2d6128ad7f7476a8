use hppi_core::frontend::{ChannelStats, PseudoImageSet};
use hppi_core::labels::{CoarseLabel, FineLabel};
use hppi_core::runtime::{
    asra_rate, random_schedule, residency_step, stream_run, Classifier, ModuleId, Models, RamTable, ResidencyState,
    ScheduledSource,
};
use hppi_core::Result;

/// Answers from the window's ground-truth label.
struct Oracle(fn(FineLabel) -> Vec<f64>);

impl Classifier for Oracle {
    fn classify(&self, images: &PseudoImageSet) -> Result<Vec<f64>> {
        Ok((self.0)(images.source_label))
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

const TABLE: RamTable = RamTable { first_layer: 12.0, plmn: 30.0, stationary: 2.0 };

#[test]
fn oracle_models_route_every_window_correctly() {
    let first = Oracle(|l| one_hot(3, l.coarse().index()));
    let plmn = Oracle(|l| one_hot(4, if l.coarse() == CoarseLabel::A { l.index_in_group() } else { 0 }));
    let st = Oracle(|l| one_hot(2, if l.coarse() == CoarseLabel::B { l.index_in_group() } else { 0 }));
    let models = Models { first_layer: &first, plmn: &plmn, stationary: &st };
    let schedule = random_schedule(300, 11);
    assert_eq!(schedule.iter().map(|s| s.1).sum::<usize>(), 300);
    let mut src = ScheduledSource::new(&schedule, 11);
    let log = stream_run(&mut src, &models, &ChannelStats::identity(), TABLE).unwrap();
    assert_eq!(log.events.len(), 300);
    let mut prev_rate = 50;
    for e in &log.events {
        assert_eq!(e.fine, e.truth);
        assert_eq!(e.sampled_hz, prev_rate);
        assert_eq!(e.rate_hz, asra_rate(e.coarse));
        assert!(!(e.resident.contains(&ModuleId::Plmn) && e.resident.contains(&ModuleId::Stationary)));
        prev_rate = e.rate_hz;
    }
    let s = log.summary();
    assert_eq!(s.accuracy, 1.0);
    assert!((s.mean_resident_ram_kib - s.expected_ram_kib).abs() < 1e-9);
    assert!(s.peak_ram_kib <= TABLE.first_layer + TABLE.plmn);
}

#[test]
fn residency_swaps_only_on_coarse_change() {
    let mut st = ResidencyState::new(&TABLE);
    assert_eq!(st.resident(), vec![ModuleId::FirstLayer]);
    residency_step(&mut st, CoarseLabel::C, &TABLE);
    assert_eq!(st.resident_ram_kib(&TABLE), 12.0);
    residency_step(&mut st, CoarseLabel::A, &TABLE);
    residency_step(&mut st, CoarseLabel::A, &TABLE);
    assert_eq!(st.resident_ram_kib(&TABLE), 42.0);
    residency_step(&mut st, CoarseLabel::C, &TABLE);
    assert_eq!(st.resident(), vec![ModuleId::FirstLayer, ModuleId::Plmn]);
    residency_step(&mut st, CoarseLabel::B, &TABLE);
    assert_eq!(st.resident(), vec![ModuleId::FirstLayer, ModuleId::Stationary]);
    assert_eq!(st.resident_ram_kib(&TABLE), 14.0);
}
