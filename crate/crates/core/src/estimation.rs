//! Channel estimation from a pilot response.
//!
//! The proposed estimator works row by row on the delay-Doppler response to
//! an impulse pilot. Each row is correlated against the Doppler kernel `Υ_N`
//! at every integer bin and every fractional offset on a `1/D` grid; the
//! strongest match becomes a path and its reconstructed contribution is
//! subtracted before the next search.
//!
//! The PN baseline instead correlates the received time-domain frame against
//! delayed, Doppler-rotated copies of a known pseudo-noise frame.
//!
//! Both return [`EstimatedPath`]s whose `gain e^{j phase}` is the complex
//! coefficient of an integer-delay [`DdTap`].

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ddmath::{psi, upsilon, DdTap};
use crate::error::{Error, Result};
use crate::fft;
use crate::grid::{DDGrid, FrameParams, TimeSignal};

/// Peaks below this fraction of the strongest response entry are treated as
/// round-off, so noiseless inputs do not grow paths out of residue.
const NUMERICAL_FLOOR: f64 = 1e-10;

/// Relative tolerance under which two correlation peaks count as a tie.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatedPath {
    /// `k̂ + κ̂` in Doppler bins, signed.
    pub doppler_index: f64,
    pub delay_index: usize,
    pub gain: f64,
    pub phase: f64,
    /// Phase term at the row where the path was observed.
    pub psi_hat: Complex64,
}

impl EstimatedPath {
    pub fn to_tap(&self) -> DdTap {
        DdTap::new(self.delay_index, self.doppler_index, self.gain, self.phase)
    }
}

pub fn to_taps(paths: &[EstimatedPath]) -> Vec<DdTap> {
    paths.iter().map(EstimatedPath::to_tap).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub alpha: f64,
    pub beta: f64,
    /// `D`: fractional Doppler steps per bin.
    pub doppler_resolution: usize,
    /// Cap on detections per delay row.
    pub max_paths_per_delay: usize,
    /// Restrict the search to `|k + κ| <= halfwidth` bins around the pilot.
    pub doppler_search_halfwidth: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            alpha: 1.0 / 50.0,
            beta: 1.0 / 10.0,
            doppler_resolution: 10,
            max_paths_per_delay: 16,
            doppler_search_halfwidth: None,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("estimator alpha must be positive"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("estimator beta must be positive"));
        }
        if self.doppler_resolution == 0 {
            return Err(Error::config("doppler_resolution must be at least 1"));
        }
        if self.max_paths_per_delay == 0 {
            return Err(Error::config("max_paths_per_delay must be at least 1"));
        }
        if let Some(hw) = self.doppler_search_halfwidth {
            if !(hw >= 0.0 && hw.is_finite()) {
                return Err(Error::config("doppler_search_halfwidth must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Output of an estimator run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Estimate {
    pub paths: Vec<EstimatedPath>,
    /// Delay rows (proposed) that hit the per-row path cap, or `[0]` when
    /// the PN search hit its total cap.
    pub truncated_rows: Vec<usize>,
    /// Correlation vectors evaluated: length-`N` Doppler correlations for
    /// the proposed method, full-frame hypotheses for PN.
    pub correlations: usize,
}

impl Estimate {
    pub fn taps(&self) -> Vec<DdTap> {
        to_taps(&self.paths)
    }
}

/// Wraps a Doppler offset into `[-N/2, N/2)`.
fn wrap_doppler(x: f64, n: usize) -> f64 {
    let nf = n as f64;
    x - nf * (x / nf + 0.5).floor()
}

/// FFT-domain correlators against `Υ_N(· + κ)` for every `κ = d/D`.
struct Correlator {
    n: usize,
    /// DFT of `conj Υ_N(κ + m)`, `m = 0..N`, one vector per `κ`.
    spectra: Vec<Vec<Complex64>>,
}

impl Correlator {
    fn new(n: usize, d: usize) -> Self {
        let spectra = (0..d)
            .map(|i| kernel_spectrum(n, i as f64 / d as f64))
            .collect();
        Correlator { n, spectra }
    }

    /// `R[k] = 1/N² Σ_k' row[k'] conj Υ_N(k + κ - k')` given `DFT(row)`.
    fn correlate(&self, row_spectrum: &[Complex64], kappa: usize, out: &mut [Complex64]) {
        let s = &self.spectra[kappa];
        for ((o, a), b) in out.iter_mut().zip(row_spectrum).zip(s) {
            *o = a * b;
        }
        fft::inverse(out);
        fft::scale(out, 1.0 / (self.n as f64).powi(3));
    }
}

fn kernel_spectrum(n: usize, kappa: f64) -> Vec<Complex64> {
    let mut a: Vec<Complex64> = (0..n).map(|m| upsilon(n, kappa + m as f64).conj()).collect();
    fft::forward(&mut a);
    a
}

/// Normalized Doppler cross-correlation of one delay row at fractional
/// offset `κ`, for all integer bins `k` at once:
/// `R(k + κ) = 1/N² Σ_k' row[k'] conj Υ_N(k + κ - k')`.
///
/// The kernel is conjugated so that `R` is the matched filter of a path
/// response `g Υ_N(x - k')`, which gives `|R(x)| = |g|` at the true `x`.
pub fn xcorr_doppler(row: &[Complex64], kappa: f64) -> Vec<Complex64> {
    let n = row.len();
    if n == 0 {
        return Vec::new();
    }
    let spectrum = kernel_spectrum(n, kappa);
    let mut buf = row.to_vec();
    fft::forward(&mut buf);
    for (b, s) in buf.iter_mut().zip(&spectrum) {
        *b *= s;
    }
    fft::inverse(&mut buf);
    fft::scale(&mut buf, 1.0 / (n as f64).powi(3));
    buf
}

struct Peak {
    mag: f64,
    value: Complex64,
    /// Absolute position `k + κ` in `[0, N)`.
    abs_x: f64,
    /// Offset from the pilot column, wrapped.
    rel_x: f64,
    kappa: usize,
}

impl Peak {
    fn beats(&self, other: &Peak) -> bool {
        let tol = TIE_TOL * other.mag.max(self.mag);
        if self.mag > other.mag + tol {
            return true;
        }
        if self.mag < other.mag - tol {
            return false;
        }
        let (a, b) = (self.rel_x.abs(), other.rel_x.abs());
        if a != b {
            return a < b;
        }
        self.kappa < other.kappa
    }
}

struct RowResult {
    paths: Vec<EstimatedPath>,
    truncated: bool,
    correlations: usize,
    residual_energy: Vec<f64>,
}

struct RowContext<'a> {
    p: &'a FrameParams,
    cfg: &'a EstimatorConfig,
    corr: &'a Correlator,
    pilot: (usize, usize),
    noise_sigma: f64,
    floor: f64,
}

fn estimate_row(ctx: &RowContext, l: usize, row: &[Complex64]) -> RowResult {
    let (p, cfg) = (ctx.p, ctx.cfg);
    let n = p.n();
    let d = cfg.doppler_resolution;
    let mut h = row.to_vec();
    let alpha_thr = cfg.alpha * row.iter().sum::<Complex64>().norm();
    let beta_thr = cfg.beta * ctx.noise_sigma;
    let delay_index = (l + p.m() - ctx.pilot.0) % p.m();

    let mut out = RowResult {
        paths: Vec::new(),
        truncated: false,
        correlations: 0,
        residual_energy: vec![energy(&h)],
    };
    // (grid position k*D + κ, relative Doppler, accumulated R)
    let mut found: Vec<(usize, f64, Complex64)> = Vec::new();
    let mut detections = 0;
    let mut prev = f64::INFINITY;
    let mut spec = vec![Complex64::default(); n];
    let mut r = vec![Complex64::default(); n];
    loop {
        if detections == cfg.max_paths_per_delay {
            out.truncated = true;
            break;
        }
        spec.copy_from_slice(&h);
        fft::forward(&mut spec);
        let mut best: Option<Peak> = None;
        for kappa in 0..d {
            ctx.corr.correlate(&spec, kappa, &mut r);
            out.correlations += 1;
            for (k, v) in r.iter().enumerate() {
                let abs_x = (k * d + kappa) as f64 / d as f64;
                let rel_x = wrap_doppler(abs_x - ctx.pilot.1 as f64, n);
                if let Some(hw) = cfg.doppler_search_halfwidth {
                    if rel_x.abs() > hw + 1e-12 {
                        continue;
                    }
                }
                let cand = Peak {
                    mag: v.norm(),
                    value: *v,
                    abs_x,
                    rel_x,
                    kappa,
                };
                if best.as_ref().is_none_or(|b| cand.beats(b)) {
                    best = Some(cand);
                }
            }
        }
        let Some(peak) = best else { break };
        if peak.mag > prev {
            break;
        }
        if peak.mag < alpha_thr || peak.mag < beta_thr || peak.mag <= ctx.floor {
            break;
        }
        // a repeat hit on a known Doppler refines that path instead of adding one
        let key = (peak.abs_x * d as f64).round() as usize;
        match found.iter_mut().find(|f| f.0 == key) {
            Some(f) => f.2 += peak.value,
            None => found.push((key, peak.rel_x, peak.value)),
        }
        detections += 1;
        for (k, v) in h.iter_mut().enumerate() {
            *v -= peak.value * upsilon(n, peak.abs_x - k as f64);
        }
        out.residual_energy.push(energy(&h));
        prev = peak.mag;
    }
    out.paths = found
        .into_iter()
        .map(|(_, x, value)| {
            let psi_hat = psi(x, delay_index, l, p);
            EstimatedPath {
                doppler_index: x,
                delay_index,
                gain: value.norm(),
                phase: (value * psi_hat.conj()).arg(),
                psi_hat,
            }
        })
        .collect();
    out.paths.sort_by(|a, b| b.gain.total_cmp(&a.gain));
    out
}

fn energy(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum()
}

/// Successive-cancellation estimator over a pilot response.
///
/// `pilot_resp` is the measured grid for a unit-amplitude impulse at
/// `pilot` (divide by the amplitude first when a stronger pilot was sent).
/// `noise_var` is the per-entry noise variance the `β σ` threshold is
/// compared against, in the same units as the path gains.
pub fn estimate_paths(
    pilot_resp: &DDGrid,
    pilot: (usize, usize),
    cfg: &EstimatorConfig,
    noise_var: f64,
    p: &FrameParams,
) -> Result<Estimate> {
    cfg.validate()?;
    pilot_resp.check_dims(p)?;
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::invalid(format!("noise variance {noise_var} must be finite and >= 0")));
    }
    if pilot.0 >= p.m() || pilot.1 >= p.n() {
        return Err(Error::invalid(format!("pilot {pilot:?} outside the grid")));
    }
    let c = p.calibration();
    let vals = pilot_resp.values();
    let max_entry = vals.iter().map(|v| v.norm()).fold(0.0, f64::max) * c;
    let corr = Correlator::new(p.n(), cfg.doppler_resolution);
    let ctx = RowContext {
        p,
        cfg,
        corr: &corr,
        pilot,
        noise_sigma: noise_var.sqrt(),
        floor: NUMERICAL_FLOOR * max_entry,
    };
    let mut est = Estimate::default();
    let mut row = vec![Complex64::default(); p.n()];
    for l in 0..p.m() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = vals[(l, k)] * c;
        }
        let res = estimate_row(&ctx, l, &row);
        est.paths.extend(res.paths);
        est.correlations += res.correlations;
        if res.truncated {
            est.truncated_rows.push(l);
        }
    }
    Ok(est)
}

/// A pseudo-noise frame: `N` blocks of `M` random QPSK samples of unit
/// modulus, each with its cyclic prefix.
pub fn pn_frame<R: Rng + ?Sized>(p: &FrameParams, rng: &mut R) -> TimeSignal {
    let (m, cp) = (p.m(), p.cp_len);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut samples = Vec::with_capacity(p.samples_per_frame());
    let mut block = vec![Complex64::default(); m];
    for _ in 0..p.n() {
        for v in block.iter_mut() {
            let re = if rng.random::<bool>() { s } else { -s };
            let im = if rng.random::<bool>() { s } else { -s };
            *v = Complex64::new(re, im);
        }
        samples.extend_from_slice(&block[m - cp..]);
        samples.extend_from_slice(&block);
    }
    TimeSignal {
        samples,
        sample_rate: p.sample_rate(),
    }
}

/// Doppler hypotheses of the PN search: the `1/D` grid covering `±ν_max`.
pub fn pn_doppler_grid(nu_max_hz: f64, d: usize, p: &FrameParams) -> Vec<f64> {
    let bins = (nu_max_hz / p.doppler_bin_hz()).abs();
    let steps = (bins * d as f64 - 1e-9).ceil().max(0.0) as i64;
    (-steps..=steps).map(|i| i as f64 / d as f64).collect()
}

/// PN-sequence baseline: greedy correlation search over integer delays in
/// `[0, N_CP)` and Doppler hypotheses on the `1/D` grid within `±ν_max`,
/// stopping at `β σ`, on a non-decreasing peak, or after `max_paths` paths.
pub fn pn_estimate(
    rx: &TimeSignal,
    pn: &TimeSignal,
    cfg: &EstimatorConfig,
    max_paths: usize,
    nu_max_hz: f64,
    noise_var: f64,
    p: &FrameParams,
) -> Result<Estimate> {
    cfg.validate()?;
    rx.check_frame(p)?;
    pn.check_frame(p)?;
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::invalid(format!("noise variance {noise_var} must be finite and >= 0")));
    }
    if !nu_max_hz.is_finite() {
        return Err(Error::invalid("maximum Doppler must be finite"));
    }
    let (m, n, cp, blk) = (p.m(), p.n(), p.cp_len, p.block_len());
    let frame_len = p.samples_per_frame() as f64;
    let mn = m * n;

    // post-CP samples only: that is where the block-cyclic model holds
    let mut resid: Vec<Complex64> = (0..n).flat_map(|b| rx.block(p, b).to_vec()).collect();
    let pn_post: Vec<Complex64> = (0..n).flat_map(|b| pn.block(p, b).to_vec()).collect();
    let times: Vec<f64> = (0..mn)
        .map(|i| ((i / m) * blk + cp + i % m) as f64)
        .collect();

    let dopplers = pn_doppler_grid(nu_max_hz, cfg.doppler_resolution, p);
    let delays: Vec<usize> = (0..cp.max(1)).collect();
    // conj templates u_{d,x}[t] = e^{j2πx(t-d)/L} pn_n[(q-d) mod M]
    let templates: Vec<(usize, f64, Vec<Complex64>)> = delays
        .iter()
        .flat_map(|&d| dopplers.iter().map(move |&x| (d, x)))
        .map(|(d, x)| {
            let u = (0..mn)
                .map(|i| {
                    let (b, q) = (i / m, i % m);
                    let src = b * m + (q + m - d) % m;
                    let rot = Complex64::from_polar(1.0, 2.0 * PI * x * (times[i] - d as f64) / frame_len);
                    (rot * pn_post[src]).conj()
                })
                .collect();
            (d, x, u)
        })
        .collect();
    let norm: Vec<f64> = templates
        .iter()
        .map(|(_, _, u)| u.iter().map(|v| v.norm_sqr()).sum())
        .collect();

    let rms = (energy(&resid) / mn as f64).sqrt();
    let floor = NUMERICAL_FLOOR * rms;
    let beta_thr = cfg.beta * noise_var.sqrt();
    let mut est = Estimate::default();
    let mut prev = f64::INFINITY;
    loop {
        if est.paths.len() >= max_paths {
            est.truncated_rows.push(0);
            break;
        }
        let mut best: Option<(usize, Complex64, f64)> = None;
        for (h, (_, x, u)) in templates.iter().enumerate() {
            est.correlations += 1;
            let g: Complex64 = u.iter().zip(&resid).map(|(a, b)| a * b).sum::<Complex64>() / norm[h];
            let mag = g.norm();
            let better = match &best {
                None => true,
                Some((bh, _, bmag)) => {
                    let tol = TIE_TOL * bmag.max(mag);
                    mag > bmag + tol
                        || ((mag - bmag).abs() <= tol && x.abs() < templates[*bh].1.abs())
                }
            };
            if better {
                best = Some((h, g, mag));
            }
        }
        let Some((h, g, mag)) = best else { break };
        if mag > prev || mag < beta_thr || mag <= floor {
            break;
        }
        let (d, x, u) = &templates[h];
        for (r, t) in resid.iter_mut().zip(u) {
            *r -= g * t.conj();
        }
        est.paths.push(EstimatedPath {
            doppler_index: *x,
            delay_index: *d,
            gain: mag,
            phase: g.arg(),
            psi_hat: psi(*x, *d, *d, p),
        });
        prev = mag;
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{add_noise, apply_channel, ChannelRealization, PathSpec};
    use crate::ddmath::pilot_response_synthetic;
    use crate::grid::{demodulate, modulate};
    use crate::util::{complex_gaussian, db, nmse};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(m: usize, n: usize, cp: usize) -> FrameParams {
        FrameParams::new(m, n, 15e3, cp, 0.8e9).unwrap()
    }

    fn xcorr_direct(row: &[Complex64], x: f64) -> Complex64 {
        let n = row.len();
        row.iter()
            .enumerate()
            .map(|(k, v)| v * upsilon(n, x - k as f64).conj())
            .sum::<Complex64>()
            / (n * n) as f64
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(2.0 * PI);
        d.min(2.0 * PI - d)
    }

    #[test]
    fn xcorr_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for n in [2, 5, 8, 14] {
            let row: Vec<Complex64> = (0..n).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
            for kappa in [0.0, 0.1, 0.37, 0.9] {
                let r = xcorr_doppler(&row, kappa);
                for (k, v) in r.iter().enumerate() {
                    assert!((v - xcorr_direct(&row, k as f64 + kappa)).norm() < 1e-10);
                }
            }
        }
        assert!(xcorr_doppler(&[Complex64::default(); 8], 0.3).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn xcorr_peak_is_unity_on_kernel() {
        let n = 14;
        for (a, kappa) in [(0usize, 0.0), (3, 0.4), (9, 0.75)] {
            let x = a as f64 + kappa;
            let row: Vec<Complex64> = (0..n).map(|k| upsilon(n, x - k as f64)).collect();
            let r = xcorr_doppler(&row, kappa);
            assert!((r[a].norm() - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|v| v.norm() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn xcorr_on_measured_integer_doppler_row() {
        let p = params(8, 6, 2);
        let ch = ChannelRealization::new(vec![PathSpec::from_indices(&p, 0.7, 1.0, 2.0, 0.5)], p).unwrap();
        let y = demodulate(&apply_channel(&modulate(&DDGrid::impulse(&p, 0, 0), &p).unwrap(), &ch).unwrap(), &p)
            .unwrap();
        let row: Vec<Complex64> = (0..6).map(|k| y[(1, k)] * p.calibration()).collect();
        let r = xcorr_doppler(&row, 0.0);
        let (k, mag) = r
            .iter()
            .map(|v| v.norm())
            .enumerate()
            .fold((0, 0.0), |acc, (k, m)| if m > acc.1 { (k, m) } else { acc });
        assert_eq!(k, 2);
        assert!((mag - 0.7).abs() < 1e-9);
    }

    #[test]
    fn single_path_exact_recovery() {
        let p = params(16, 8, 4);
        let truth = DdTap::new(2, 1.3, 0.8, PI / 3.0);
        let y = pilot_response_synthetic(&[truth], (0, 0), &p).unwrap();
        let est = estimate_paths(&y, (0, 0), &EstimatorConfig::default(), 0.0, &p).unwrap();
        assert_eq!(est.paths.len(), 1);
        let e = est.paths[0];
        assert_eq!(e.delay_index, 2);
        assert_eq!(e.doppler_index, 1.3);
        assert!((e.gain - 0.8).abs() < 1e-6);
        assert!(angle_diff(e.phase, PI / 3.0) < 1e-6);
        assert!((e.psi_hat.norm() - 1.0).abs() < 1e-12);
        assert!(est.truncated_rows.is_empty());
    }

    #[test]
    fn zero_response_gives_no_paths() {
        let p = params(8, 4, 2);
        let est = estimate_paths(&DDGrid::zeros(&p), (0, 0), &EstimatorConfig::default(), 0.01, &p).unwrap();
        assert!(est.paths.is_empty());
        let est = estimate_paths(&DDGrid::zeros(&p), (0, 0), &EstimatorConfig::default(), 0.0, &p).unwrap();
        assert!(est.paths.is_empty());
        // one scan per row, D correlations each
        assert_eq!(est.correlations, 8 * 10);
    }

    fn two_path_row(n: usize) -> (FrameParams, DDGrid) {
        let p = params(16, n, 4);
        let taps = [DdTap::new(3, 0.2, 1.0, 0.3), DdTap::new(3, 2.7, 0.3, 2.0)];
        (p, pilot_response_synthetic(&taps, (0, 0), &p).unwrap())
    }

    #[test]
    fn two_paths_on_one_row() {
        // small α lets cancellation iterate below the cross-leakage level
        let cfg = EstimatorConfig {
            alpha: 1e-3,
            ..Default::default()
        };
        for n in [8, 14] {
            let (p, y) = two_path_row(n);
            let est = estimate_paths(&y, (0, 0), &cfg, 0.0, &p).unwrap();
            assert_eq!(est.paths.len(), 2);
            assert_eq!(est.paths[0].doppler_index, 0.2);
            assert_eq!(est.paths[1].doppler_index, 2.7);
            assert!((est.paths[0].gain - 1.0).abs() <= 0.02);
            assert!((est.paths[1].gain - 0.3).abs() <= 0.02);
        }
    }

    #[test]
    fn two_paths_single_pass_leakage() {
        // at the default α the row stops after one hit per path, and the
        // strong path keeps the weak one's leakage 0.3 |Υ_N(2.5)| / N
        let n = 14;
        let (p, y) = two_path_row(n);
        let est = estimate_paths(&y, (0, 0), &EstimatorConfig::default(), 0.0, &p).unwrap();
        assert_eq!(est.paths.len(), 2);
        let leak = 0.3 * upsilon(n, 2.5).norm() / n as f64;
        assert!((est.paths[0].gain - 1.0).abs() <= leak + 1e-9);
        assert!((est.paths[1].gain - 0.3).abs() <= 0.02);
    }

    #[test]
    fn residual_energy_never_grows() {
        let p = params(8, 14, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let row: Vec<Complex64> = (0..14)
            .map(|k| {
                upsilon(14, 0.33 - k as f64) * 0.9 + upsilon(14, 4.61 - k as f64) * 0.4
                    + complex_gaussian(&mut rng, 0.01)
            })
            .collect();
        let corr = Correlator::new(14, 10);
        let cfg = EstimatorConfig::default();
        let ctx = RowContext {
            p: &p,
            cfg: &cfg,
            corr: &corr,
            pilot: (0, 0),
            noise_sigma: 0.0,
            floor: 0.0,
        };
        let res = estimate_row(&ctx, 0, &row);
        assert!(res.paths.len() >= 2);
        for w in res.residual_energy.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn pilot_position_equivariance() {
        let p = params(16, 8, 4);
        let taps = [
            DdTap::new(0, 0.4, 0.9, 0.2),
            DdTap::new(3, -1.7, 0.5, 1.9),
            DdTap::new(5, 2.0, 0.3, 4.0),
        ];
        let cfg = EstimatorConfig::default();
        let base = estimate_paths(&pilot_response_synthetic(&taps, (0, 0), &p).unwrap(), (0, 0), &cfg, 0.0, &p).unwrap();
        assert_eq!(base.paths.len(), 3);
        for pilot in [(4, 2), (13, 7)] {
            let y = pilot_response_synthetic(&taps, pilot, &p).unwrap();
            let est = estimate_paths(&y, pilot, &cfg, 0.0, &p).unwrap();
            let mut a = base.paths.clone();
            let mut b = est.paths.clone();
            a.sort_by_key(|e| e.delay_index);
            b.sort_by_key(|e| e.delay_index);
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.delay_index, y.delay_index);
                assert!((x.doppler_index - y.doppler_index).abs() < 1e-9);
                assert!((x.gain - y.gain).abs() < 1e-9);
                assert!(angle_diff(x.phase, y.phase) < 1e-9);
            }
        }
    }

    #[test]
    fn search_halfwidth_and_path_cap() {
        let p = params(8, 14, 2);
        let taps = [DdTap::new(1, 0.3, 1.0, 0.0), DdTap::new(1, 5.0, 0.6, 0.0)];
        let y = pilot_response_synthetic(&taps, (0, 0), &p).unwrap();
        let cfg = EstimatorConfig {
            doppler_search_halfwidth: Some(2.0),
            ..Default::default()
        };
        let est = estimate_paths(&y, (0, 0), &cfg, 0.0, &p).unwrap();
        assert!(est.paths.iter().all(|e| e.doppler_index.abs() <= 2.0));
        let cfg = EstimatorConfig {
            max_paths_per_delay: 1,
            ..Default::default()
        };
        let est = estimate_paths(&y, (0, 0), &cfg, 0.0, &p).unwrap();
        assert_eq!(est.paths.len(), 1);
        assert_eq!(est.truncated_rows, vec![1]);
    }

    #[test]
    fn correlation_count() {
        let p = params(16, 8, 4);
        let taps = [DdTap::new(0, 0.0, 1.0, 0.0), DdTap::new(2, 0.5, 0.5, 1.0)];
        let y = pilot_response_synthetic(&taps, (0, 0), &p).unwrap();
        let cfg = EstimatorConfig {
            doppler_resolution: 4,
            ..Default::default()
        };
        let est = estimate_paths(&y, (0, 0), &cfg, 0.0, &p).unwrap();
        assert_eq!(est.correlations, 4 * (16 + est.paths.len()));
    }

    #[test]
    fn rejects_bad_input() {
        let p = params(8, 4, 2);
        let y = DDGrid::zeros(&p);
        let cfg = EstimatorConfig::default();
        assert!(estimate_paths(&y, (0, 0), &cfg, -1.0, &p).is_err());
        assert!(estimate_paths(&y, (8, 0), &cfg, 0.0, &p).is_err());
        let bad = EstimatorConfig {
            doppler_resolution: 0,
            ..Default::default()
        };
        assert!(estimate_paths(&y, (0, 0), &bad, 0.0, &p).unwrap_err().is_config());
        assert!(estimate_paths(&DDGrid::zeros(&params(4, 4, 2)), (0, 0), &cfg, 0.0, &p).is_err());
    }

    #[test]
    fn noisy_estimate_is_deterministic() {
        let p = params(16, 8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut y = pilot_response_synthetic(&[DdTap::new(1, 0.6, 1.0, 0.0)], (0, 0), &p).unwrap();
        for v in y.values_mut().iter_mut() {
            *v += complex_gaussian(&mut rng, 1e-4);
        }
        let cfg = EstimatorConfig::default();
        let a = estimate_paths(&y, (0, 0), &cfg, 1e-4, &p).unwrap();
        let b = estimate_paths(&y, (0, 0), &cfg, 1e-4, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn measured_response_reconstruction() {
        let p = params(32, 14, 6);
        let ch = ChannelRealization::new(
            vec![
                PathSpec::from_indices(&p, 0.8, 0.0, 0.3, 0.1),
                PathSpec::from_indices(&p, 0.5, 2.0, -0.2, 1.5),
                PathSpec::from_indices(&p, 0.33, 5.0, 0.1, 3.0),
            ],
            p,
        )
        .unwrap();
        let y = demodulate(&apply_channel(&modulate(&DDGrid::impulse(&p, 0, 0), &p).unwrap(), &ch).unwrap(), &p)
            .unwrap();
        let est = estimate_paths(&y, (0, 0), &EstimatorConfig::default(), 0.0, &p).unwrap();
        assert_eq!(est.paths.len(), 3);
        let rebuilt = pilot_response_synthetic(&est.taps(), (0, 0), &p).unwrap();
        assert!(db(nmse(rebuilt.values(), y.values())) < -100.0);
    }

    fn pn_received(ch: &ChannelRealization, seed: u64, noise_var: f64) -> (TimeSignal, TimeSignal) {
        let p = &ch.params;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pn = pn_frame(p, &mut rng);
        let rx = add_noise(&apply_channel(&pn, ch).unwrap(), noise_var, &mut rng).unwrap();
        (pn, rx)
    }

    #[test]
    fn pn_frame_shape() {
        let p = params(16, 4, 3);
        let pn = pn_frame(&p, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(pn.len(), p.samples_per_frame());
        assert!(pn.samples.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        for n in 0..4 {
            let start = n * p.block_len();
            assert_eq!(&pn.samples[start..start + 3], &pn.samples[start + 16..start + 19]);
        }
    }

    #[test]
    fn pn_doppler_grid_covers_max() {
        let p = params(64, 14, 6);
        let g = pn_doppler_grid(0.378 * p.doppler_bin_hz(), 10, &p);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], -0.4);
        assert_eq!(pn_doppler_grid(0.0, 10, &p), vec![0.0]);
    }

    #[test]
    fn pn_identity_channel() {
        let p = params(32, 8, 4);
        let (pn, rx) = pn_received(&ChannelRealization::identity(p), 2, 0.0);
        let est = pn_estimate(&rx, &pn, &EstimatorConfig::default(), 16, 300.0, 0.0, &p).unwrap();
        assert_eq!(est.paths.len(), 1);
        let e = est.paths[0];
        assert_eq!((e.delay_index, e.doppler_index), (0, 0.0));
        assert!((e.gain - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pn_single_fractional_doppler_path() {
        let p = params(32, 8, 4);
        let ch = ChannelRealization::new(vec![PathSpec::from_indices(&p, 0.9, 3.0, 0.5, 1.2)], p).unwrap();
        let (pn, rx) = pn_received(&ch, 3, 0.0);
        let nu_max = 0.6 * p.doppler_bin_hz();
        let est = pn_estimate(&rx, &pn, &EstimatorConfig::default(), 1, nu_max, 0.0, &p).unwrap();
        let e = est.paths[0];
        assert_eq!(e.delay_index, 3);
        assert!((e.doppler_index - 0.5).abs() <= 0.05 + 1e-12);
        assert!((e.gain - 0.9).abs() < 1e-6);
        assert!(angle_diff(e.phase, 1.2) < 1e-6);
        assert_eq!(est.truncated_rows, vec![0]);
    }

    #[test]
    fn pn_false_alarms_on_noise() {
        let p = params(64, 14, 6);
        let cfg = EstimatorConfig::default();
        let mut quiet = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let pn = pn_frame(&p, &mut rng);
            let rx = add_noise(&TimeSignal::zeros(&p), 1.0, &mut rng).unwrap();
            let est = pn_estimate(&rx, &pn, &cfg, 16, 370.6, 1.0, &p).unwrap();
            if est.paths.len() <= 1 {
                quiet += 1;
            }
        }
        assert!(quiet >= 95, "{quiet}");
    }

    #[test]
    fn pn_rejects_mismatched_lengths() {
        let p = params(16, 4, 2);
        let short = TimeSignal {
            samples: vec![Complex64::default(); 5],
            sample_rate: p.sample_rate(),
        };
        let ok = TimeSignal::zeros(&p);
        let cfg = EstimatorConfig::default();
        assert!(pn_estimate(&short, &ok, &cfg, 4, 100.0, 0.0, &p).is_err());
        assert!(pn_estimate(&ok, &short, &cfg, 4, 100.0, 0.0, &p).is_err());
    }
}
