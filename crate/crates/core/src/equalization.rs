//! Equalizers: per-delay-row 2D Wiener deconvolution, linear MMSE on the
//! vectorized channel, and the per-symbol OFDM MMSE reference.
//!
//! Apart from the slowly varying phase `ψ`, the received grid is the 2D
//! circular convolution of the data with a delay-Doppler kernel. Row `l` is
//! recovered by a 2D Wiener deconvolution with `ψ` frozen at row `l` (the
//! kernel `Λ'_l` of [`build_lambda`]); only row `l` of each deconvolution is
//! kept. The kernel spectrum factorizes over paths,
//!
//! ```text
//! F(Λ'_l)[η,ξ] = 1/c Σ_p g_p ψ_p[l] e^{-j2πη l_p/M} U_p[ξ],   U_p = DFT_k Υ_N(x_p - k)
//! ```
//!
//! which avoids a 2D transform per row.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::ddmath::{build_lambda, psi, upsilon, DdTap, PHI_SIZE_LIMIT};
use crate::error::{Error, Result};
use crate::fft;
use crate::grid::{dft_matrix, DDGrid, FrameParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqualizerConfig {
    /// `ε` in the `max(σ², ε)` Wiener denominator.
    pub regularization_floor: f64,
    /// Replaces the noise variance handed to the equalizer.
    pub noise_var_override: Option<f64>,
}

impl Default for EqualizerConfig {
    fn default() -> Self {
        EqualizerConfig {
            regularization_floor: 1e-6,
            noise_var_override: None,
        }
    }
}

impl EqualizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.regularization_floor >= 0.0 && self.regularization_floor.is_finite()) {
            return Err(Error::config("regularization_floor must be finite and >= 0"));
        }
        if let Some(v) = self.noise_var_override {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config("noise_var_override must be finite and >= 0"));
            }
        }
        Ok(())
    }

    fn regularizer(&self, noise_var: f64) -> f64 {
        self.noise_var_override
            .unwrap_or(noise_var)
            .max(self.regularization_floor)
    }
}

fn check_noise(noise_var: f64) -> Result<()> {
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::invalid(format!("noise variance {noise_var} must be finite and >= 0")));
    }
    Ok(())
}

fn check_wiener_inputs(y: &DDGrid, taps: &[DdTap], noise_var: f64, cfg: &EqualizerConfig, p: &FrameParams) -> Result<()> {
    cfg.validate()?;
    y.check_dims(p)?;
    check_noise(noise_var)?;
    if taps.is_empty() {
        return Err(Error::invalid("no channel paths: the channel is unidentifiable"));
    }
    if let Some(t) = taps.iter().find(|t| t.delay_index >= p.m()) {
        return Err(Error::invalid(format!("tap delay {} outside 0..{}", t.delay_index, p.m())));
    }
    Ok(())
}

fn wiener_ratio(lam: Complex64, y: Complex64, reg: f64) -> Complex64 {
    let den = lam.norm_sqr() + reg;
    if den == 0.0 {
        Complex64::default()
    } else {
        lam.conj() * y / den
    }
}

/// Per-row 2D Wiener deconvolution with the factorized kernel spectrum.
pub fn wiener_equalize(
    y: &DDGrid,
    taps: &[DdTap],
    noise_var: f64,
    cfg: &EqualizerConfig,
    p: &FrameParams,
) -> Result<DDGrid> {
    check_wiener_inputs(y, taps, noise_var, cfg, p)?;
    let (m, n) = (p.m(), p.n());
    let reg = cfg.regularizer(noise_var);
    let c = p.calibration();

    let mut fy = y.values().clone();
    fft::forward_2d(fy.as_mut_slice(), m);

    // per-tap pieces that do not depend on the row
    let doppler_spectra: Vec<Vec<Complex64>> = taps
        .iter()
        .map(|t| {
            let mut u: Vec<Complex64> = (0..n).map(|k| upsilon(n, t.doppler_index - k as f64)).collect();
            fft::forward(&mut u);
            u
        })
        .collect();
    let delay_phasors: Vec<Vec<Complex64>> = taps
        .iter()
        .map(|t| {
            (0..m)
                .map(|eta| Complex64::from_polar(1.0, -2.0 * PI * ((eta * t.delay_index) % m) as f64 / m as f64))
                .collect()
        })
        .collect();
    let out_phasors: Vec<Complex64> = (0..m)
        .map(|eta| Complex64::from_polar(1.0, 2.0 * PI * eta as f64 / m as f64))
        .collect();

    let mut x = DDGrid::zeros(p);
    let mut weights = vec![Complex64::default(); taps.len()];
    let mut w = vec![Complex64::default(); n];
    let fy = fy.as_slice();
    for l in 0..m {
        for (wt, t) in weights.iter_mut().zip(taps) {
            *wt = t.coeff * psi(t.doppler_index, t.delay_index, l, p) / c;
        }
        w.fill(Complex64::default());
        for eta in 0..m {
            // e^{j2π η l / M}
            let back = out_phasors[(eta * l) % m];
            for (xi, wx) in w.iter_mut().enumerate() {
                let mut lam = Complex64::default();
                for (i, wt) in weights.iter().enumerate() {
                    lam += wt * delay_phasors[i][eta] * doppler_spectra[i][xi];
                }
                *wx += wiener_ratio(lam, fy[xi * m + eta], reg) * back;
            }
        }
        fft::inverse(&mut w);
        let s = 1.0 / (m * n) as f64;
        for (k, v) in w.iter().enumerate() {
            x[(l, k)] = v * s;
        }
    }
    Ok(x)
}

/// The same deconvolution done literally: build each `Λ'_l`, take its full
/// 2D transform, divide, inverse-transform, keep row `l`.
pub fn wiener_equalize_direct(
    y: &DDGrid,
    taps: &[DdTap],
    noise_var: f64,
    cfg: &EqualizerConfig,
    p: &FrameParams,
) -> Result<DDGrid> {
    check_wiener_inputs(y, taps, noise_var, cfg, p)?;
    let (m, n) = (p.m(), p.n());
    let reg = cfg.regularizer(noise_var);
    let mut fy = y.values().clone();
    fft::forward_2d(fy.as_mut_slice(), m);
    let mut x = DDGrid::zeros(p);
    for l in 0..m {
        let mut lam = build_lambda(taps, l, p)?;
        fft::forward_2d(lam.as_mut_slice(), m);
        let mut z = lam.zip_map(&fy, |a, b| wiener_ratio(a, b, reg));
        fft::inverse_2d(z.as_mut_slice(), m);
        for k in 0..n {
            x[(l, k)] = z[(l, k)] / (m * n) as f64;
        }
    }
    Ok(x)
}

/// Solves `(A A^H + σ² I) z = b` and returns `A^H z`.
fn regularized_solve(a: &DMatrix<Complex64>, noise_var: f64, b: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    if noise_var == 0.0 {
        // zero-forcing limit: A^H (A A^H)^{-1} = A^{-1} for square invertible A
        let x = a
            .clone()
            .lu()
            .solve(b)
            .ok_or_else(|| Error::Solver("channel matrix is singular".into()))?;
        return finite(x);
    }
    let mut gram = a * a.adjoint();
    for i in 0..gram.nrows() {
        gram[(i, i)] += Complex64::new(noise_var, 0.0);
    }
    let z = match gram.clone().cholesky() {
        Some(ch) => ch.solve(b),
        None => gram
            .lu()
            .solve(b)
            .ok_or_else(|| Error::Solver("regularized Gram matrix is singular".into()))?,
    };
    finite(a.adjoint() * z)
}

fn finite(x: DVector<Complex64>) -> Result<DVector<Complex64>> {
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Solver("solution is not finite".into()));
    }
    Ok(x)
}

/// Linear MMSE on the vectorized model: `x̂ = Φ^H (Φ Φ^H + σ² I)^{-1} y`.
pub fn mmse_equalize(y: &DVector<Complex64>, phi: &DMatrix<Complex64>, noise_var: f64) -> Result<DVector<Complex64>> {
    check_noise(noise_var)?;
    if phi.nrows() != phi.ncols() || phi.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "operator is {}x{}, observation has length {}",
            phi.nrows(),
            phi.ncols(),
            y.len()
        )));
    }
    if phi.nrows() > PHI_SIZE_LIMIT {
        return Err(Error::Guard(format!(
            "refusing a dense solve of size {} (limit {PHI_SIZE_LIMIT})",
            phi.nrows()
        )));
    }
    regularized_solve(phi, noise_var, y)
}

/// The same estimator as [`mmse_equalize`] on `Φ` built from `taps`, solved
/// per OFDM symbol. `Φ` is block-diagonal up to the unitary `F_N ⊗ I_M`
/// factors, so `x̂ = vec(Ŝ F_N)` with `ŝ_n = H_n^H (H_n H_n^H + σ² I)^{-1} r_n`.
pub fn mmse_equalize_blockwise(y: &DDGrid, taps: &[DdTap], noise_var: f64, p: &FrameParams) -> Result<DDGrid> {
    y.check_dims(p)?;
    check_noise(noise_var)?;
    let f = dft_matrix(p.n());
    let r = y.values() * f.adjoint();
    let mut s_hat = DMatrix::zeros(p.m(), p.n());
    for n in 0..p.n() {
        let h = crate::channel::build_hn_from_taps(taps, p, n + 1)?;
        let rn = r.column(n).into_owned();
        s_hat.set_column(n, &regularized_solve(&h, noise_var, &rn)?);
    }
    Ok(DDGrid::new(s_hat * f))
}

/// OFDM one-symbol MMSE with known `H_n`: `G = F_M H_n F_M^H`,
/// `x̂ = G^H (G G^H + σ² I)^{-1} F_M r_n`.
pub fn ofdm_mmse_reference(r_n: &[Complex64], h_n: &DMatrix<Complex64>, noise_var: f64) -> Result<DVector<Complex64>> {
    check_noise(noise_var)?;
    let m = r_n.len();
    if h_n.nrows() != m || h_n.ncols() != m {
        return Err(Error::invalid(format!(
            "H_n is {}x{}, block has {m} samples",
            h_n.nrows(),
            h_n.ncols()
        )));
    }
    if m > PHI_SIZE_LIMIT {
        return Err(Error::Guard(format!("refusing a dense solve of size {m}")));
    }
    let f = dft_matrix(m);
    let g = &f * h_n * f.adjoint();
    let mut ft = r_n.to_vec();
    fft::forward(&mut ft);
    fft::scale(&mut ft, 1.0 / (m as f64).sqrt());
    regularized_solve(&g, noise_var, &DVector::from_vec(ft))
}
