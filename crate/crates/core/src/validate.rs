//! Self-check suite behind the `validate` command: each check compares an
//! implementation against an independent reference on small inputs.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{apply_channel, ChannelRealization, PathSpec};
use crate::ddmath::{build_phi_from_taps, pilot_response_synthetic, upsilon, upsilon_direct, DdTap};
use crate::equalization::{
    mmse_equalize, mmse_equalize_blockwise, wiener_equalize, wiener_equalize_direct, EqualizerConfig,
};
use crate::error::Result;
use crate::estimation::{estimate_paths, EstimatorConfig};
use crate::grid::{demodulate, isfft, modulate, sfft, vectorize, DDGrid, FrameParams};
use crate::harness::{run_sweep, Qam, SimConfig};
use crate::util::{max_abs_diff, max_abs_diff_slice, random_grid};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, tol: f64) -> Check {
    Check {
        name,
        passed: value <= tol,
        detail: format!("{value:.3e} (tolerance {tol:.0e})"),
    }
}

fn params(m: usize, n: usize, cp: usize) -> FrameParams {
    FrameParams::new(m, n, 15e3, cp, 0.8e9).expect("valid test numerology")
}

/// Random channel with integer delays below the CP and fractional Dopplers.
pub fn random_integer_delay_channel<R: Rng + ?Sized>(
    p: &FrameParams,
    paths: usize,
    rng: &mut R,
) -> ChannelRealization {
    let max_bins = p.n() as f64 / 2.0 - 0.5;
    let specs = (0..paths)
        .map(|_| {
            PathSpec::from_indices(
                p,
                rng.random_range(0.1..1.0),
                rng.random_range(0..p.cp_len) as f64,
                rng.random_range(-max_bins..max_bins),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    ChannelRealization::new(specs, *p).expect("delays fit the CP")
}

/// `Y[l,k] = 1/c Σ_p g_p ψ_p[l] Σ_k' X[(l - l_p)_M, k'] Υ_N(x_p - (k - k'))`,
/// summed term by term.
pub fn dd_double_sum(x: &DDGrid, taps: &[DdTap], p: &FrameParams) -> DDGrid {
    let (m, n) = (p.m(), p.n());
    let c = p.calibration();
    let frame_len = p.samples_per_frame() as f64;
    DDGrid::from_fn(p, |l, k| {
        let mut acc = Complex64::default();
        for t in taps {
            let psi = Complex64::from_polar(
                1.0,
                2.0 * PI * t.doppler_index * (p.cp_len as f64 - t.delay_index as f64 + l as f64) / frame_len,
            );
            let src = (l + m - t.delay_index) % m;
            let mut inner = Complex64::default();
            for kp in 0..n {
                inner += x[(src, kp)] * upsilon_direct(n, t.doppler_index - (k as f64 - kp as f64));
            }
            acc += t.coeff * psi * inner;
        }
        acc / c
    })
}

fn pipeline(x: &DDGrid, ch: &ChannelRealization) -> Result<DDGrid> {
    demodulate(&apply_channel(&modulate(x, &ch.params)?, ch)?, &ch.params)
}

fn transforms(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (m, n, cp) in [(4, 2, 1), (8, 4, 2), (16, 8, 4), (256, 14, 17)] {
        let p = params(m, n, cp);
        let x = random_grid(&p, rng);
        worst = worst.max(max_abs_diff(sfft(&isfft(&x)).values(), x.values()));
        worst = worst.max(max_abs_diff(demodulate(&modulate(&x, &p)?, &p)?.values(), x.values()));
    }
    Ok(worst)
}

fn dd_relation(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (m, n, cp) in [(8, 4, 3), (16, 8, 4)] {
        let p = params(m, n, cp);
        for _ in 0..5 {
            let ch = random_integer_delay_channel(&p, 3, rng);
            let x = random_grid(&p, rng);
            let want = dd_double_sum(&x, &ch.dd_taps(), &p);
            worst = worst.max(max_abs_diff(pipeline(&x, &ch)?.values(), want.values()));
        }
    }
    Ok(worst)
}

fn vectorized_relation(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (m, n, cp) in [(4, 2, 2), (8, 4, 3)] {
        let p = params(m, n, cp);
        let ch = random_integer_delay_channel(&p, 2, rng);
        let x = random_grid(&p, rng);
        let phi = build_phi_from_taps(&ch.dd_taps(), &p)?;
        let y = &phi * DVector::from_vec(vectorize(&x));
        worst = worst.max(max_abs_diff_slice(y.as_slice(), &vectorize(&pipeline(&x, &ch)?)));
    }
    Ok(worst)
}

fn upsilon_closed_form(rng: &mut ChaCha8Rng) -> f64 {
    (0..1000)
        .map(|_| {
            let n = rng.random_range(2..33);
            let x = rng.random_range(-40.0..40.0);
            (upsilon(n, x) - upsilon_direct(n, x)).norm()
        })
        .fold(0.0, f64::max)
}

fn upsilon_energy(rng: &mut ChaCha8Rng) -> f64 {
    let n = 14;
    (0..100)
        .map(|_| {
            let kappa: f64 = rng.random_range(-1.0..1.0);
            let e: f64 = (0..n).map(|k| upsilon(n, k as f64 + kappa).norm_sqr()).sum();
            (e / (n * n) as f64 - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

fn single_path_estimate() -> Result<f64> {
    let p = params(16, 8, 4);
    let tap = DdTap::new(3, 1.3, 0.8, 1.1);
    let resp = pilot_response_synthetic(&[tap], (0, 0), &p)?;
    let est = estimate_paths(&resp, (0, 0), &EstimatorConfig::default(), 0.0, &p)?;
    if est.paths.len() != 1 || est.paths[0].delay_index != 3 {
        return Ok(f64::INFINITY);
    }
    let got = est.paths[0].to_tap();
    Ok((got.coeff - tap.coeff).norm().max((got.doppler_index - 1.3).abs()))
}

fn equalizer_forms(rng: &mut ChaCha8Rng) -> Result<f64> {
    let p = params(8, 4, 3);
    let ch = random_integer_delay_channel(&p, 3, rng);
    let taps = ch.dd_taps();
    let x = random_grid(&p, rng);
    let y = pipeline(&x, &ch)?;
    let cfg = EqualizerConfig::default();
    let a = wiener_equalize(&y, &taps, 0.01, &cfg, &p)?;
    let b = wiener_equalize_direct(&y, &taps, 0.01, &cfg, &p)?;
    let dense = mmse_equalize(
        &DVector::from_vec(vectorize(&y)),
        &build_phi_from_taps(&taps, &p)?,
        0.01,
    )?;
    let block = mmse_equalize_blockwise(&y, &taps, 0.01, &p)?;
    Ok(max_abs_diff(a.values(), b.values())
        .max(max_abs_diff_slice(dense.as_slice(), &vectorize(&block))))
}

fn qam_round_trip(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut errors = 0usize;
    for order in [4, 16, 64] {
        let q = Qam::new(order)?;
        let bits: Vec<u8> = (0..q.bits_per_symbol() * 256).map(|_| rng.random_range(0..2u8)).collect();
        errors += q
            .demap(&q.map(&bits)?)
            .iter()
            .zip(&bits)
            .filter(|(a, b)| a != b)
            .count();
    }
    Ok(errors as f64)
}

fn sweep_determinism() -> Result<f64> {
    let frame = params(16, 8, 4);
    let cfg = SimConfig {
        frame,
        scenario: crate::channel::DopplerScenario::eva(500.0, frame.carrier_freq),
        snr_db: vec![15.0],
        trials: 4,
        estimators: vec!["ideal".parse()?, "proposed".parse()?, "pn".parse()?],
        equalizers: vec!["wiener".parse()?, "mmse".parse()?],
        seed: 11,
        ..SimConfig::default()
    };
    let (a, b) = (run_sweep(&cfg)?, run_sweep(&cfg)?);
    Ok(if a.rows == b.rows { 0.0 } else { 1.0 })
}

/// Runs every check. Errors inside a check count as a failure of that check.
pub fn run_all() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut out = Vec::new();
    let mut push = |name: &'static str, r: Result<f64>, tol: f64| {
        out.push(match r {
            Ok(v) => check(name, v, tol),
            Err(e) => Check {
                name,
                passed: false,
                detail: e.to_string(),
            },
        })
    };
    push("transform round trips", transforms(&mut rng), 1e-12);
    push("delay-Doppler input-output relation", dd_relation(&mut rng), 1e-9);
    push("vectorized channel operator", vectorized_relation(&mut rng), 1e-9);
    push("Doppler kernel closed form", Ok(upsilon_closed_form(&mut rng)), 1e-9);
    push("Doppler kernel energy", Ok(upsilon_energy(&mut rng)), 1e-10);
    push("single-path estimate", single_path_estimate(), 1e-6);
    push("equalizer factorizations", equalizer_forms(&mut rng), 1e-9);
    push("QAM round trip", qam_round_trip(&mut rng), 0.0);
    push("sweep determinism", sweep_determinism(), 0.0);
    out
}
