//! Run configuration: a single TOML file per run covering the study period,
//! file locations, loading parameters and estimation knobs. Every command
//! reads the sections it needs; missing optional values fall back to the
//! defaults documented in the README.

use pathchoice::domain::{build_time_grid, BetaVector, ClockTime, DistanceMode, TimeGrid};
use pathchoice::error::{Error, Result};
use pathchoice::estimator::{AlcCfg, RunConfig};
use pathchoice::qp::QpWeights;
use pathchoice::sim::SimConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Config {
    pub seed: Option<u64>,
    #[serde(default)]
    pub period: PeriodSection,
    #[serde(default)]
    pub files: FilesSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub estimation: EstimationSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodSection {
    pub start: String,
    pub end: String,
    pub tau_s: u32,
}

impl Default for PeriodSection {
    fn default() -> Self {
        PeriodSection {
            start: "18:00:00".into(),
            end: "19:00:00".into(),
            tau_s: 900,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct FilesSection {
    pub network: Option<PathBuf>,
    pub paths: Option<PathBuf>,
    pub timetable: Option<PathBuf>,
    pub afc: Option<PathBuf>,
    /// Share table for the simulate command: a CSV path or the literal
    /// string "uniform".
    pub shares: Option<String>,
    pub reference_shares: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSection {
    pub capacity_per_car: u32,
    pub warmup_s: u32,
    pub cooldown_s: u32,
    pub probes: bool,
    pub probe_count: u32,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        SimSection {
            capacity_per_car: d.capacity_per_car,
            warmup_s: d.warmup_s,
            cooldown_s: d.cooldown_s,
            probes: d.probes,
            probe_count: d.probe_count,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationSection {
    pub k_total: u32,
    pub k_burnin: u32,
    pub w1: f64,
    pub w2: f64,
    pub beta_init: [f64; 4],
    pub beta_prior: [f64; 4],
    pub gamma: f64,
    pub distance_mode: DistanceMode,
    pub alc_samples: usize,
    pub alc_tolerance: f64,
    pub beta_lower: [f64; 4],
    pub beta_upper: [f64; 4],
    pub cross_interval_equalities: bool,
    pub signature_prefilter: bool,
    /// Extra pairwise constraints merged into the constructed ALC
    /// (JSON file, see README).
    pub alc_override: Option<PathBuf>,
}

impl Default for EstimationSection {
    fn default() -> Self {
        let alc = AlcCfg::default();
        EstimationSection {
            k_total: 15,
            k_burnin: 13,
            w1: 1.0,
            w2: 0.0,
            beta_init: [0.0; 4],
            beta_prior: [0.0; 4],
            gamma: 5.0,
            distance_mode: DistanceMode::StationCount,
            alc_samples: alc.samples,
            alc_tolerance: alc.tolerance,
            beta_lower: alc.lower.as_array(),
            beta_upper: alc.upper.as_array(),
            cross_interval_equalities: alc.cross_interval,
            signature_prefilter: alc.signature_prefilter,
            alc_override: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub preset: String,
    pub beta_true: [f64; 4],
    pub demand_scale: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            preset: "grid_small".into(),
            beta_true: [-0.147, -0.573, -1.271, -3.679],
            demand_scale: 1.0,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Internal(format!("config serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        build_time_grid(
            ClockTime::parse(&self.period.start)?,
            ClockTime::parse(&self.period.end)?,
            self.period.tau_s,
        )
    }

    pub fn seed(&self, cli_override: Option<u64>) -> u64 {
        cli_override.or(self.seed).unwrap_or(1)
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            capacity_per_car: self.sim.capacity_per_car,
            warmup_s: self.sim.warmup_s,
            cooldown_s: self.sim.cooldown_s,
            seed,
            probes: self.sim.probes,
            probe_count: self.sim.probe_count,
        }
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        let e = &self.estimation;
        RunConfig {
            k_total: e.k_total,
            k_burnin: e.k_burnin,
            beta_init: BetaVector::from_array(e.beta_init),
            beta_prior: BetaVector::from_array(e.beta_prior),
            weights: QpWeights { w1: e.w1, w2: e.w2 },
            alc: AlcCfg {
                samples: e.alc_samples,
                tolerance: e.alc_tolerance,
                lower: BetaVector::from_array(e.beta_lower),
                upper: BetaVector::from_array(e.beta_upper),
                cross_interval: e.cross_interval_equalities,
                signature_prefilter: e.signature_prefilter,
            },
            sim: self.sim_config(seed),
            ..RunConfig::default()
        }
    }

    /// Resolve a configured path relative to the config file's directory.
    pub fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    pub fn required_file(&self, base: &Path, which: &str) -> Result<PathBuf> {
        let p = match which {
            "network" => &self.files.network,
            "paths" => &self.files.paths,
            "timetable" => &self.files.timetable,
            "afc" => &self.files.afc,
            _ => &None,
        };
        let p = p
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing files.{which} in config")))?;
        let resolved = self.resolve(base, p);
        if !resolved.exists() {
            return Err(Error::Config(format!(
                "files.{which} does not exist: {}",
                resolved.display()
            )));
        }
        Ok(resolved)
    }
}
