//! Monte Carlo trials and SNR sweeps.
//!
//! SNR is `1/σ²` with `σ²` the complex noise variance per time-domain
//! sample. Data symbols have unit mean energy, the transforms are unitary
//! and every channel profile is normalized to unit power, so this is the
//! mean received symbol energy over the noise variance.
//!
//! Each trial owns its random streams. Stream `(trial, purpose)` is a
//! ChaCha8 generator seeded with [`stream_seed`], so trials can run in any
//! order, or in parallel, and still produce the same counts.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{add_noise, apply_channel, build_hn, draw_channel, ChannelRealization};
use crate::ddmath::{pilot_response_synthetic, DdTap};
use crate::equalization::{mmse_equalize_blockwise, ofdm_mmse_reference, wiener_equalize};
use crate::error::{Error, Result};
use crate::estimation::{estimate_paths, pn_estimate, pn_frame};
use crate::grid::{demodulate, modulate, ofdm_modulate, DDGrid, FTGrid, TimeSignal};
use crate::harness::config::{Combo, EqualizerKind, EstimatorKind, SimConfig};
use crate::harness::qam::Qam;
use crate::util::nmse;

const PURPOSE_CHANNEL: u64 = 1;
const PURPOSE_BITS: u64 = 2;
const PURPOSE_PN: u64 = 3;
/// Noise streams: `PURPOSE_NOISE + 4 * snr_index + frame`.
const PURPOSE_NOISE: u64 = 16;

const FRAME_PILOT: u64 = 0;
const FRAME_DATA: u64 = 1;
const FRAME_PN: u64 = 2;
const FRAME_OFDM: u64 = 3;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(splitmix64(master) ^ trial) ^ purpose)`.
pub fn stream_seed(master: u64, trial: u64, purpose: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ trial) ^ purpose)
}

fn stream(master: u64, trial: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, trial, purpose))
}

/// Outcome of one data frame for one combo at one SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialCounts {
    pub bits: u64,
    pub bit_errors: u64,
    pub frame_error: bool,
    /// Linear pilot-response NMSE of the channel estimate.
    pub nmse: f64,
    /// Taps handed to the equalizer.
    pub paths: usize,
}

/// Per-trial counts indexed `[snr_index][combo_index]`.
pub type TrialResult = Vec<Vec<TrialCounts>>;

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub estimator: String,
    pub equalizer: String,
    pub trials: u64,
    pub bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub frames: u64,
    pub frame_errors: u64,
    pub fer: f64,
    /// dB of the mean linear NMSE over trials.
    pub mean_nmse_db: f64,
    pub mean_paths: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub wall_seconds: f64,
}

impl SweepResult {
    pub fn row(&self, snr_db: f64, combo: &Combo) -> Option<&SweepRow> {
        self.rows.iter().find(|r| {
            r.snr_db == snr_db
                && r.estimator == combo.estimator.as_str()
                && r.equalizer == combo.equalizer.as_str()
        })
    }

    /// Rows of one combo in SNR order.
    pub fn series(&self, combo: &Combo) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| {
                r.estimator == combo.estimator.as_str() && r.equalizer == combo.equalizer.as_str()
            })
            .collect()
    }
}

fn random_bits<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

fn count_errors(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

struct Frames {
    ch: ChannelRealization,
    bits: Vec<u8>,
    data_rx: TimeSignal,
    pilot_rx: TimeSignal,
    pn: Option<(TimeSignal, TimeSignal)>,
    ofdm_rx: Option<TimeSignal>,
    truth: DDGrid,
}

fn transmit(cfg: &SimConfig, qam: &Qam, trial: u64, combos: &[Combo]) -> Result<Frames> {
    let p = &cfg.frame;
    let ch = draw_channel(&cfg.scenario, p, &mut stream(cfg.seed, trial, PURPOSE_CHANNEL))?;
    let bits = random_bits(
        p.grid_len() * qam.bits_per_symbol(),
        &mut stream(cfg.seed, trial, PURPOSE_BITS),
    );
    let x = qam.map_grid(&bits, p)?;
    let data_rx = apply_channel(&modulate(&x, p)?, &ch)?;

    let mut pilot = DDGrid::impulse(p, 0, 0);
    *pilot.values_mut() *= Complex64::from(cfg.pilot_amplitude());
    let pilot_rx = apply_channel(&modulate(&pilot, p)?, &ch)?;

    let pn = if combos.iter().any(|c| c.estimator == EstimatorKind::Pn) {
        let seq = pn_frame(p, &mut stream(cfg.seed, trial, PURPOSE_PN));
        let rx = apply_channel(&seq, &ch)?;
        Some((seq, rx))
    } else {
        None
    };
    let ofdm_rx = if combos.iter().any(|c| c.equalizer == EqualizerKind::OfdmMmse) {
        let ft = FTGrid::new(x.values().clone());
        Some(apply_channel(&ofdm_modulate(&ft, p)?, &ch)?)
    } else {
        None
    };
    let truth = pilot_response_synthetic(&ch.dd_taps(), (0, 0), p)?;
    Ok(Frames {
        ch,
        bits,
        data_rx,
        pilot_rx,
        pn,
        ofdm_rx,
        truth,
    })
}

struct ChannelEstimate {
    taps: Vec<DdTap>,
    nmse: f64,
}

fn estimate_all(
    cfg: &SimConfig,
    frames: &Frames,
    combos: &[Combo],
    trial: u64,
    snr_index: usize,
    noise_var: f64,
) -> Result<Vec<(EstimatorKind, ChannelEstimate)>> {
    let p = &cfg.frame;
    let noise = |frame: u64| stream(cfg.seed, trial, PURPOSE_NOISE + 4 * snr_index as u64 + frame);
    let wanted = |k: EstimatorKind| combos.iter().any(|c| c.estimator == k);
    let score = |taps: Vec<DdTap>| -> Result<ChannelEstimate> {
        let nmse = if taps.is_empty() {
            1.0
        } else {
            nmse(
                pilot_response_synthetic(&taps, (0, 0), p)?.values(),
                frames.truth.values(),
            )
        };
        Ok(ChannelEstimate { taps, nmse })
    };

    let mut out = Vec::new();
    if wanted(EstimatorKind::Ideal) {
        out.push((EstimatorKind::Ideal, score(frames.ch.dd_taps())?));
    }
    if !(wanted(EstimatorKind::Proposed) || wanted(EstimatorKind::Pn)) {
        return Ok(out);
    }
    // the PN baseline is allowed as many paths as the proposed method found
    let rx = add_noise(&frames.pilot_rx, noise_var, &mut noise(FRAME_PILOT))?;
    let mut resp = demodulate(&rx, p)?;
    *resp.values_mut() /= Complex64::from(cfg.pilot_amplitude());
    let proposed = estimate_paths(&resp, (0, 0), &cfg.estimator, noise_var, p)?;
    let matched = proposed.paths.len();
    if wanted(EstimatorKind::Proposed) {
        out.push((EstimatorKind::Proposed, score(proposed.taps())?));
    }
    if let Some((seq, clean)) = &frames.pn {
        let rx = add_noise(clean, noise_var, &mut noise(FRAME_PN))?;
        let est = pn_estimate(
            &rx,
            seq,
            &cfg.estimator,
            matched,
            cfg.scenario.max_doppler_hz,
            noise_var,
            p,
        )?;
        out.push((EstimatorKind::Pn, score(est.taps())?));
    }
    Ok(out)
}

/// Runs one trial over every SNR point and combo of `cfg`.
pub fn run_trial(cfg: &SimConfig, trial: u64) -> Result<TrialResult> {
    run_trial_inner(cfg, trial).map_err(|e| Error::Trial {
        index: trial,
        source: Box::new(e),
    })
}

fn run_trial_inner(cfg: &SimConfig, trial: u64) -> Result<TrialResult> {
    let p = &cfg.frame;
    let qam = Qam::new(cfg.modulation)?;
    let combos = cfg.combos();
    let frames = transmit(cfg, &qam, trial, &combos)?;

    let mut result = Vec::with_capacity(cfg.snr_db.len());
    for (si, &snr) in cfg.snr_db.iter().enumerate() {
        let noise_var = 10f64.powf(-snr / 10.0);
        let noise = |frame: u64| stream(cfg.seed, trial, PURPOSE_NOISE + 4 * si as u64 + frame);
        let estimates = estimate_all(cfg, &frames, &combos, trial, si, noise_var)?;
        let y = demodulate(&add_noise(&frames.data_rx, noise_var, &mut noise(FRAME_DATA))?, p)?;
        let ofdm_rx = match &frames.ofdm_rx {
            Some(s) => Some(add_noise(s, noise_var, &mut noise(FRAME_OFDM))?),
            None => None,
        };

        let mut row = Vec::with_capacity(combos.len());
        for combo in &combos {
            let est = &estimates
                .iter()
                .find(|(k, _)| *k == combo.estimator)
                .expect("every combo estimator was run")
                .1;
            let x_hat = match combo.equalizer {
                // no detected path means no channel knowledge at all
                _ if est.taps.is_empty() => DDGrid::zeros(p),
                EqualizerKind::Wiener => wiener_equalize(&y, &est.taps, noise_var, &cfg.equalizer, p)?,
                EqualizerKind::Mmse => mmse_equalize_blockwise(&y, &est.taps, noise_var, p)?,
                EqualizerKind::OfdmMmse => {
                    let rx = ofdm_rx.as_ref().expect("OFDM frame was transmitted");
                    let mut x = DMatrix::zeros(p.m(), p.n());
                    for n in 0..p.n() {
                        let h = build_hn(&frames.ch, n + 1)?;
                        x.set_column(n, &ofdm_mmse_reference(rx.block(p, n), &h, noise_var)?);
                    }
                    DDGrid::new(x)
                }
            };
            let bits_hat = qam.demap_grid(&x_hat);
            let bit_errors = count_errors(&bits_hat, &frames.bits);
            row.push(TrialCounts {
                bits: frames.bits.len() as u64,
                bit_errors,
                frame_error: bit_errors > 0,
                nmse: est.nmse,
                paths: est.taps.len(),
            });
        }
        result.push(row);
    }
    Ok(result)
}

/// Sums trial results in the order given.
pub fn aggregate(cfg: &SimConfig, trials: &[TrialResult]) -> Vec<SweepRow> {
    let combos = cfg.combos();
    let mut rows = Vec::with_capacity(cfg.snr_db.len() * combos.len());
    for (si, &snr) in cfg.snr_db.iter().enumerate() {
        for (ci, combo) in combos.iter().enumerate() {
            let mut r = SweepRow {
                snr_db: snr,
                estimator: combo.estimator.to_string(),
                equalizer: combo.equalizer.to_string(),
                trials: 0,
                bits: 0,
                bit_errors: 0,
                ber: 0.0,
                frames: 0,
                frame_errors: 0,
                fer: 0.0,
                mean_nmse_db: 0.0,
                mean_paths: 0.0,
                seed: cfg.seed,
            };
            let (mut nmse_sum, mut path_sum) = (0.0, 0usize);
            for t in trials {
                let c = &t[si][ci];
                r.trials += 1;
                r.bits += c.bits;
                r.bit_errors += c.bit_errors;
                r.frames += 1;
                r.frame_errors += c.frame_error as u64;
                nmse_sum += c.nmse;
                path_sum += c.paths;
            }
            if r.trials > 0 {
                r.ber = r.bit_errors as f64 / r.bits as f64;
                r.fer = r.frame_errors as f64 / r.frames as f64;
                r.mean_nmse_db = 10.0 * (nmse_sum / r.trials as f64).log10();
                r.mean_paths = path_sum as f64 / r.trials as f64;
            }
            rows.push(r);
        }
    }
    rows
}

/// Runs every trial (in parallel), aggregates, and writes the CSV when
/// `cfg.out` is set.
pub fn run_sweep(cfg: &SimConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let start = Instant::now();
    let trials: Vec<TrialResult> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect::<Result<_>>()?;
    let rows = aggregate(cfg, &trials);
    let result = SweepResult {
        rows,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(path) = &cfg.out {
        write_csv(path, &result.rows)?;
    }
    Ok(result)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_csv_to(file, rows)
}

/// Header row plus one record per row.
pub fn write_csv_to<T: Serialize, W: std::io::Write>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
