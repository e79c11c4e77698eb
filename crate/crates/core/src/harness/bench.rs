//! Wall-clock complexity benchmark of the estimators and equalizers over a
//! ladder of delay-bin counts.

use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{add_noise, apply_channel, ChannelRealization, PathSpec};
use crate::ddmath::{build_phi_from_taps, DdTap, PHI_SIZE_LIMIT};
use crate::equalization::{mmse_equalize, wiener_equalize, EqualizerConfig};
use crate::error::{Error, Result};
use crate::estimation::{estimate_paths, pn_estimate, pn_frame, EstimatorConfig};
use crate::grid::{demodulate, modulate, vectorize, DDGrid, FrameParams};
use crate::util::random_grid;

/// EVA relative powers in dB, one per bench path.
const EVA_POWER_DB: [f64; 9] = [0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9];

pub const METHODS: [&str; 4] = ["proposed_ce", "pn_ce", "proposed_eq", "mmse_eq"];

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub num_doppler_bins: usize,
    pub reps: usize,
    /// Number of paths, each on its own integer delay.
    pub paths: usize,
    pub snr_db: f64,
    pub max_doppler_hz: f64,
    pub estimator: EstimatorConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![32, 64, 128],
            num_doppler_bins: 14,
            reps: 5,
            paths: 9,
            snr_db: 30.0,
            max_doppler_hz: crate::channel::max_doppler_from_speed(500.0, 0.8e9),
            estimator: EstimatorConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    /// NaN when a size guard skipped the cell.
    pub median_seconds: f64,
    pub reps: usize,
    #[serde(skip)]
    pub skipped: bool,
}

/// Υ-correlation count of one proposed-estimator run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpCount {
    pub m: usize,
    pub doppler_resolution: usize,
    pub paths: usize,
    pub correlations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub op_counts: Vec<OpCount>,
}

impl BenchReport {
    pub fn median(&self, method: &str, m: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.m == m && !r.skipped)
            .map(|r| r.median_seconds)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn time_reps(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut t = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        t.push(start.elapsed().as_secs_f64());
    }
    Ok(median(t))
}

/// Frame used for delay-bin count `m`: the CP covers every bench path.
pub fn bench_frame(m: usize, n: usize, paths: usize) -> Result<FrameParams> {
    FrameParams::new(m, n, 15e3, paths + crate::channel::FARROW_HALF_SPAN, 0.8e9)
}

/// Paths on delays `0..paths` with EVA-like powers and Dopplers on the `1/D`
/// grid within `±ν_max`.
pub fn bench_channel<R: Rng + ?Sized>(
    p: &FrameParams,
    paths: usize,
    max_doppler_hz: f64,
    d: usize,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let lin: Vec<f64> = (0..paths)
        .map(|i| 10f64.powf(EVA_POWER_DB[i % EVA_POWER_DB.len()] / 10.0))
        .collect();
    let total: f64 = lin.iter().sum();
    let max_bins = max_doppler_hz / p.doppler_bin_hz();
    let specs = (0..paths)
        .map(|i| {
            let x = (max_bins * rng.random_range(-1.0..=1.0) * d as f64).round() / d as f64;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            PathSpec::from_indices(p, (lin[i] / total).sqrt(), i as f64, x, phase)
        })
        .collect();
    ChannelRealization::new(specs, *p)
}

/// Times every method at every size. Size-guarded cells are skipped with a
/// NaN median.
pub fn bench_complexity(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.sizes.is_empty() {
        return Err(Error::config("bench needs at least one size"));
    }
    if cfg.reps == 0 || cfg.paths == 0 {
        return Err(Error::config("bench needs reps >= 1 and paths >= 1"));
    }
    cfg.estimator.validate()?;
    let mut report = BenchReport {
        rows: Vec::new(),
        op_counts: Vec::new(),
    };
    let noise_var = 10f64.powf(-cfg.snr_db / 10.0);
    for &m in &cfg.sizes {
        if m <= cfg.paths + crate::channel::FARROW_HALF_SPAN {
            return Err(Error::config(format!(
                "size {m} is too small for {} paths",
                cfg.paths
            )));
        }
        let p = bench_frame(m, cfg.num_doppler_bins, cfg.paths)?;
        let n = p.n();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ m as u64);
        let ch = bench_channel(&p, cfg.paths, cfg.max_doppler_hz, cfg.estimator.doppler_resolution, &mut rng)?;
        let taps: Vec<DdTap> = ch.dd_taps();

        let amp = (p.grid_len() as f64).sqrt();
        let mut pilot = DDGrid::impulse(&p, 0, 0);
        *pilot.values_mut() *= Complex64::from(amp);
        let rx = add_noise(&apply_channel(&modulate(&pilot, &p)?, &ch)?, noise_var, &mut rng)?;
        let mut resp = demodulate(&rx, &p)?;
        *resp.values_mut() /= Complex64::from(amp);

        let pn = pn_frame(&p, &mut rng);
        let pn_rx = add_noise(&apply_channel(&pn, &ch)?, noise_var, &mut rng)?;

        let x = random_grid(&p, &mut rng);
        let y = demodulate(&add_noise(&apply_channel(&modulate(&x, &p)?, &ch)?, noise_var, &mut rng)?, &p)?;

        let mut push = |method: &str, secs: Option<f64>| {
            report.rows.push(BenchRow {
                method: method.to_string(),
                m,
                n,
                median_seconds: secs.unwrap_or(f64::NAN),
                reps: if secs.is_some() { cfg.reps } else { 0 },
                skipped: secs.is_none(),
            })
        };

        let mut last = None;
        let secs = time_reps(cfg.reps, || {
            last = Some(estimate_paths(&resp, (0, 0), &cfg.estimator, noise_var, &p)?);
            Ok(())
        })?;
        push(METHODS[0], Some(secs));
        let est = last.expect("at least one rep ran");

        let secs = time_reps(cfg.reps, || {
            pn_estimate(&pn_rx, &pn, &cfg.estimator, cfg.paths, cfg.max_doppler_hz, noise_var, &p)?;
            Ok(())
        })?;
        push(METHODS[1], Some(secs));

        let eq_cfg = EqualizerConfig::default();
        let secs = time_reps(cfg.reps, || {
            wiener_equalize(&y, &taps, noise_var, &eq_cfg, &p)?;
            Ok(())
        })?;
        push(METHODS[2], Some(secs));

        if p.grid_len() <= PHI_SIZE_LIMIT {
            let phi = build_phi_from_taps(&taps, &p)?;
            let yv = DVector::from_vec(vectorize(&y));
            let secs = time_reps(cfg.reps, || {
                mmse_equalize(&yv, &phi, noise_var)?;
                Ok(())
            })?;
            push(METHODS[3], Some(secs));
        } else {
            push(METHODS[3], None);
        }
        report.op_counts.push(OpCount {
            m,
            doppler_resolution: cfg.estimator.doppler_resolution,
            paths: est.paths.len(),
            correlations: est.correlations,
        });
    }
    Ok(report)
}
