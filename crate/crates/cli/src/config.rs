//! `key=value` run configuration. Blank lines and `#` comments are ignored;
//! unknown keys are rejected.

use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use hppi_core::labels::FineLabel;
use hppi_core::resources::ModuleMetrics;
use hppi_core::synth::{default_profiles, ActivityProfile, SplitRatios};
use hppi_core::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub windows_per_class: usize,
    pub ratios: SplitRatios,
    pub train: TrainConfig,
    /// Learning rate of the head-only stationary training.
    pub stationary_learning_rate: f64,
    pub p: f64,
    pub stream_windows: usize,
    pub mlp_hidden: usize,
    pub mlp_epochs: usize,
    pub mlp_learning_rate: f64,
    pub profiles: Vec<ActivityProfile>,
    /// Module metrics given directly instead of measured (first, plmn,
    /// stationary).
    pub metrics: [MetricOverride; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricOverride {
    pub acc: Option<f64>,
    pub ram_kib: Option<f64>,
    pub rom_kib: Option<f64>,
    pub macc: Option<u64>,
}

impl MetricOverride {
    pub fn complete(&self) -> Option<Result<ModuleMetrics>> {
        Some(
            ModuleMetrics::new(self.acc?, self.ram_kib?, self.rom_kib?, self.macc?)
                .map_err(anyhow::Error::from),
        )
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            windows_per_class: 100,
            ratios: SplitRatios::default(),
            train: TrainConfig { seed: 42, learning_rate: 1e-3, ..TrainConfig::default() },
            stationary_learning_rate: 3e-2,
            p: 0.5,
            stream_windows: 1000,
            mlp_hidden: 32,
            mlp_epochs: 200,
            mlp_learning_rate: 1e-3,
            profiles: default_profiles(),
            metrics: [MetricOverride::default(); 3],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow::anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

impl RunConfig {
    pub fn train_config(&self, role: hppi_core::tasks::Role) -> TrainConfig {
        match role {
            hppi_core::tasks::Role::Stationary => TrainConfig { learning_rate: self.stationary_learning_rate, ..self.train },
            _ => self.train,
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            cfg.apply(&text)?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key=value", n + 1);
            };
            self.set(key.trim(), value.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        self.ratios.validate()?;
        self.train.validate()?;
        if !(self.stationary_learning_rate > 0.0) {
            bail!("stationary_learning_rate must be positive");
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => {
                self.seed = parse(key, v)?;
                self.train.seed = self.seed;
            }
            "windows_per_class" => self.windows_per_class = parse(key, v)?,
            "train_ratio" => self.ratios.train = parse(key, v)?,
            "val_ratio" => self.ratios.val = parse(key, v)?,
            "test_ratio" => self.ratios.test = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "stationary_learning_rate" => self.stationary_learning_rate = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "max_epochs" => self.train.max_epochs = parse(key, v)?,
            "patience" => self.train.early_stop_patience = parse(key, v)?,
            "p" => self.p = parse(key, v)?,
            "stream_windows" => self.stream_windows = parse(key, v)?,
            "mlp_hidden" => self.mlp_hidden = parse(key, v)?,
            "mlp_epochs" => self.mlp_epochs = parse(key, v)?,
            "mlp_learning_rate" => self.mlp_learning_rate = parse(key, v)?,
            _ if key.starts_with("profile.") => self.set_profile(key, v)?,
            _ if key.starts_with("metrics.") => self.set_metric(key, v)?,
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    fn set_profile(&mut self, key: &str, v: &str) -> Result<()> {
        let mut parts = key.splitn(3, '.').skip(1);
        let (Some(label), Some(field)) = (parts.next(), parts.next()) else {
            bail!("unknown config key `{key}`");
        };
        let label: FineLabel = label.parse().map_err(|_| anyhow::anyhow!("unknown config key `{key}`"))?;
        let p = &mut self.profiles[label.index()];
        match field {
            "freq_hz" => p.freq_hz = parse(key, v)?,
            "burst_rate_hz" => p.burst_rate_hz = parse(key, v)?,
            "jitter" => p.jitter = parse(key, v)?,
            "amplitude_scale" => {
                let s: f64 = parse(key, v)?;
                p.amplitude.iter_mut().for_each(|a| *a *= s);
                p.burst_amplitude.iter_mut().for_each(|a| *a *= s);
            }
            "noise_scale" => {
                let s: f64 = parse(key, v)?;
                p.noise_std.iter_mut().for_each(|a| *a *= s);
            }
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    fn set_metric(&mut self, key: &str, v: &str) -> Result<()> {
        let mut parts = key.splitn(3, '.').skip(1);
        let (Some(module), Some(field)) = (parts.next(), parts.next()) else {
            bail!("unknown config key `{key}`");
        };
        let slot = match module {
            "first" => 0,
            "plmn" => 1,
            "stationary" => 2,
            _ => bail!("unknown config key `{key}`"),
        };
        let m = &mut self.metrics[slot];
        match field {
            "acc" => m.acc = Some(parse(key, v)?),
            "ram_kib" => m.ram_kib = Some(parse(key, v)?),
            "rom_kib" => m.rom_kib = Some(parse(key, v)?),
            "macc" => m.macc = Some(parse(key, v)?),
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }
}
