//! Simulation configuration: a TOML file, defaults for everything it omits,
//! and the checks a sweep needs before it starts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::channel::DopplerScenario;
use crate::ddmath::PHI_SIZE_LIMIT;
use crate::equalization::EqualizerConfig;
use crate::error::{Error, Result};
use crate::estimation::EstimatorConfig;
use crate::grid::FrameParams;
use crate::harness::qam::Qam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    /// Ground-truth taps.
    Ideal,
    Proposed,
    Pn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EqualizerKind {
    Wiener,
    Mmse,
    /// Per-symbol MMSE of a plain OFDM frame carrying the same bits.
    OfdmMmse,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Ideal => "ideal",
            EstimatorKind::Proposed => "proposed",
            EstimatorKind::Pn => "pn",
        }
    }
}

impl EqualizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EqualizerKind::Wiener => "wiener",
            EqualizerKind::Mmse => "mmse",
            EqualizerKind::OfdmMmse => "ofdm-mmse",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for EqualizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(EstimatorKind::Ideal),
            "proposed" => Ok(EstimatorKind::Proposed),
            "pn" => Ok(EstimatorKind::Pn),
            _ => Err(Error::config(format!(
                "unknown estimator '{s}', expected ideal, proposed or pn"
            ))),
        }
    }
}

impl FromStr for EqualizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wiener" => Ok(EqualizerKind::Wiener),
            "mmse" => Ok(EqualizerKind::Mmse),
            "ofdm-mmse" => Ok(EqualizerKind::OfdmMmse),
            _ => Err(Error::config(format!(
                "unknown equalizer '{s}', expected wiener, mmse or ofdm-mmse"
            ))),
        }
    }
}

/// One estimator/equalizer pairing of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Combo {
    pub estimator: EstimatorKind,
    pub equalizer: EqualizerKind,
}

impl Combo {
    /// The OFDM reference only runs with ground-truth channel knowledge.
    pub fn is_supported(&self) -> bool {
        self.equalizer != EqualizerKind::OfdmMmse || self.estimator == EstimatorKind::Ideal
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.estimator, self.equalizer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub frame: FrameParams,
    pub scenario: DopplerScenario,
    /// QAM order: 4, 16 or 64.
    pub modulation: usize,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub estimators: Vec<EstimatorKind>,
    pub equalizers: Vec<EqualizerKind>,
    pub estimator: EstimatorConfig,
    pub equalizer: EqualizerConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Amplitude of the pilot impulse; `None` means `sqrt(MN)`, the energy
    /// of a data frame.
    pub pilot_amplitude: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let frame = FrameParams::reference();
        SimConfig {
            scenario: DopplerScenario::eva(500.0, frame.carrier_freq),
            frame,
            modulation: 16,
            snr_db: (0..=6).map(|i| 5.0 * i as f64).collect(),
            trials: 100,
            estimators: vec![EstimatorKind::Proposed],
            equalizers: vec![EqualizerKind::Wiener],
            estimator: EstimatorConfig::default(),
            equalizer: EqualizerConfig::default(),
            seed: 0,
            out: None,
            pilot_amplitude: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    num_delay_bins: Option<usize>,
    num_doppler_bins: Option<usize>,
    subcarrier_spacing: Option<f64>,
    cp_len: Option<usize>,
    carrier_freq: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    /// Built-in profile name; only "eva" exists.
    preset: Option<String>,
    /// Scenario TOML, relative to the config file.
    file: Option<PathBuf>,
    speed_kmh: Option<f64>,
    max_doppler_hz: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    frame: RawFrame,
    #[serde(default)]
    scenario: RawScenario,
    modulation: Option<usize>,
    snr_db: Option<Vec<f64>>,
    trials: Option<usize>,
    estimators: Option<Vec<String>>,
    equalizers: Option<Vec<String>>,
    estimator: Option<EstimatorConfig>,
    equalizer: Option<EqualizerConfig>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    pilot_amplitude: Option<f64>,
}

fn parse_list<T: FromStr<Err = Error>>(items: &[String]) -> Result<Vec<T>> {
    items.iter().map(|s| s.parse()).collect()
}

impl SimConfig {
    /// Parses a config file body. Relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config file: {e}")))?;
        let d = SimConfig::default();
        let frame = FrameParams {
            num_delay_bins: raw.frame.num_delay_bins.unwrap_or(d.frame.num_delay_bins),
            num_doppler_bins: raw.frame.num_doppler_bins.unwrap_or(d.frame.num_doppler_bins),
            subcarrier_spacing: raw.frame.subcarrier_spacing.unwrap_or(d.frame.subcarrier_spacing),
            cp_len: raw.frame.cp_len.unwrap_or(d.frame.cp_len),
            carrier_freq: raw.frame.carrier_freq.unwrap_or(d.frame.carrier_freq),
        };
        frame.validate().map_err(|e| Error::config(format!("frame: {e}")))?;

        let sc = raw.scenario;
        let mut scenario = match (sc.preset.as_deref(), &sc.file) {
            (Some(_), Some(_)) => {
                return Err(Error::config("scenario: give either preset or file, not both"))
            }
            (None, Some(file)) => DopplerScenario::from_file(&base_dir.join(file), frame.carrier_freq)
                .map_err(|e| match e {
                    Error::Io { .. } => Error::config(e.to_string()),
                    other => other,
                })?,
            (Some(name), None) if !name.eq_ignore_ascii_case("eva") => {
                return Err(Error::config(format!("unknown scenario preset '{name}'")))
            }
            _ => DopplerScenario::eva(500.0, frame.carrier_freq),
        };
        match (sc.max_doppler_hz, sc.speed_kmh) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "scenario: give either speed_kmh or max_doppler_hz, not both",
                ))
            }
            (Some(v), None) => scenario.max_doppler_hz = v,
            (None, Some(v)) => {
                scenario.max_doppler_hz = crate::channel::max_doppler_from_speed(v, frame.carrier_freq)
            }
            (None, None) => {}
        }

        let cfg = SimConfig {
            frame,
            scenario,
            modulation: raw.modulation.unwrap_or(d.modulation),
            snr_db: raw.snr_db.unwrap_or(d.snr_db),
            trials: raw.trials.unwrap_or(d.trials),
            estimators: match raw.estimators {
                Some(v) => parse_list(&v)?,
                None => d.estimators,
            },
            equalizers: match raw.equalizers {
                Some(v) => parse_list(&v)?,
                None => d.equalizers,
            },
            estimator: raw.estimator.unwrap_or_default(),
            equalizer: raw.equalizer.unwrap_or_default(),
            seed: raw.seed.unwrap_or(d.seed),
            out: raw.out.map(|o| base_dir.join(o)),
            pilot_amplitude: raw.pilot_amplitude,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base)
    }

    /// The pairs a sweep runs: estimators times equalizers, minus OFDM
    /// reference pairs without ground-truth channel knowledge.
    pub fn combos(&self) -> Vec<Combo> {
        let mut out = Vec::new();
        for &estimator in &self.estimators {
            for &equalizer in &self.equalizers {
                let c = Combo { estimator, equalizer };
                if c.is_supported() && !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        out
    }

    pub fn pilot_amplitude(&self) -> f64 {
        self.pilot_amplitude
            .unwrap_or_else(|| (self.frame.grid_len() as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        self.frame
            .validate()
            .map_err(|e| Error::config(format!("frame: {e}")))?;
        self.scenario.validate()?;
        self.scenario.check_fits(&self.frame)?;
        Qam::new(self.modulation)?;
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.snr_db.is_empty() {
            return Err(Error::config("the SNR grid is empty"));
        }
        if let Some(v) = self.snr_db.iter().find(|v| !v.is_finite()) {
            return Err(Error::config(format!("SNR value {v} is not finite")));
        }
        if self.estimators.is_empty() || self.equalizers.is_empty() {
            return Err(Error::config("at least one estimator and one equalizer are required"));
        }
        if self.combos().is_empty() {
            return Err(Error::config(
                "no runnable combination: ofdm-mmse needs the ideal estimator",
            ));
        }
        self.estimator.validate()?;
        self.equalizer.validate()?;
        if let Some(a) = self.pilot_amplitude {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::config("pilot_amplitude must be positive"));
            }
        }
        let (m, mn) = (self.frame.m(), self.frame.grid_len());
        if self.equalizers.contains(&EqualizerKind::Mmse) && mn > PHI_SIZE_LIMIT {
            return Err(Error::Guard(format!(
                "mmse needs a {mn}x{mn} operator, limit is {PHI_SIZE_LIMIT}"
            )));
        }
        if self.equalizers.contains(&EqualizerKind::OfdmMmse) && m > PHI_SIZE_LIMIT {
            return Err(Error::Guard(format!(
                "ofdm-mmse needs {m}x{m} solves, limit is {PHI_SIZE_LIMIT}"
            )));
        }
        Ok(())
    }
}

/// Parses `a:step:b` (inclusive, `step > 0`) or a single value.
pub fn parse_snr_range(s: &str) -> Result<Vec<f64>> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| Error::config(format!("bad number '{t}' in SNR range '{s}'")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [v] => Ok(vec![num(v)?]),
        [a, step, b] => {
            let (a, step, b) = (num(a)?, num(step)?, num(b)?);
            if !(step > 0.0) || !a.is_finite() || !b.is_finite() || b < a {
                return Err(Error::config(format!(
                    "SNR range '{s}' needs a <= b and a positive step"
                )));
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| a + step * i as f64).collect())
        }
        _ => Err(Error::config(format!("SNR range '{s}' is not a:step:b"))),
    }
}
