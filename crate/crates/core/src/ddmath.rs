//! Closed-form delay-Doppler kernels.
//!
//! Everything here works on integer-delay taps ([`DdTap`]). A ground-truth
//! path with a fractional delay is first expanded into its interpolator taps
//! (see [`crate::channel::PathSpec::dd_taps`]), estimated paths are integer
//! by construction.
//!
//! For a tap with complex coefficient `g`, delay `l_p` and Doppler `x_p`
//! (in bins), transmitting `X` yields
//!
//! ```text
//! Y[l,k] = 1/c Σ_p g ψ_p[l] Σ_k' X[(l - l_p)_M, k'] Υ_N(x_p - (k - k'))
//! ```
//!
//! with `c = N` the receiver calibration constant.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::{build_hn_from_taps, ChannelRealization};
use crate::error::{Error, Result};
use crate::grid::{dft_matrix, DDGrid, FrameParams};

/// Largest `MN` for which [`build_phi`] will materialize the dense operator.
pub const PHI_SIZE_LIMIT: usize = 4096;

const SINGULAR_TOL: f64 = 1e-9;

/// One integer-delay channel component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdTap {
    pub delay_index: usize,
    /// `k + κ` in Doppler bins, signed.
    pub doppler_index: f64,
    /// `h e^{jφ}`.
    pub coeff: Complex64,
}

impl DdTap {
    pub fn new(delay_index: usize, doppler_index: f64, gain: f64, phase: f64) -> Self {
        DdTap {
            delay_index,
            doppler_index,
            coeff: Complex64::from_polar(gain, phase),
        }
    }
}

/// `sin(πx)` for large `x` without losing the fractional part.
fn sin_pi(x: f64) -> f64 {
    let k = x.round();
    let s = (PI * (x - k)).sin();
    if k.rem_euclid(2.0) == 0.0 {
        s
    } else {
        -s
    }
}

/// `Υ_N(x) = Σ_{n=0}^{N-1} e^{j2πnx/N} = sin(πx)/sin(πx/N) e^{jπx(N-1)/N}`.
pub fn upsilon(n: usize, x: f64) -> Complex64 {
    let nf = n as f64;
    let rot = Complex64::from_polar(1.0, PI * x * (nf - 1.0) / nf);
    let den = sin_pi(x / nf);
    let mag = if den.abs() < SINGULAR_TOL {
        // x is a multiple of N: the ratio tends to N cos(πx)/cos(πx/N), i.e. ±N
        nf * cos_pi(x) / cos_pi(x / nf)
    } else {
        sin_pi(x) / den
    };
    rot * mag
}

fn cos_pi(x: f64) -> f64 {
    sin_pi(x + 0.5)
}

/// Direct `N`-term sum, the reference for [`upsilon`].
pub fn upsilon_direct(n: usize, x: f64) -> Complex64 {
    (0..n)
        .map(|i| Complex64::from_polar(1.0, 2.0 * PI * i as f64 * x / n as f64))
        .sum()
}

/// `ψ_p[l] = e^{j2π x_p (N_CP - l_p + l)/((M + N_CP) N)}`.
pub fn psi(doppler_index: f64, delay_index: usize, l: usize, p: &FrameParams) -> Complex64 {
    let expo = p.cp_len as f64 - delay_index as f64 + l as f64;
    Complex64::from_polar(1.0, 2.0 * PI * doppler_index * expo / p.samples_per_frame() as f64)
}

/// Effective channel `Λ'_l` seen by receive delay row `l`:
/// `Λ'_l[d,k] = 1/c Σ_p g_p ψ_p[l] δ(d - l_p) Υ_N(x_p - k)`.
///
/// For output row `l` itself this is exact; using it for other rows freezes
/// `ψ` at `l`.
pub fn build_lambda(taps: &[DdTap], l: usize, p: &FrameParams) -> Result<DMatrix<Complex64>> {
    check_taps(taps, p)?;
    if l >= p.m() {
        return Err(Error::invalid(format!("delay row {l} outside 0..{}", p.m())));
    }
    let (m, n) = (p.m(), p.n());
    let c = p.calibration();
    let mut lam = DMatrix::zeros(m, n);
    for tap in taps {
        let w = tap.coeff * psi(tap.doppler_index, tap.delay_index, l, p) / c;
        for k in 0..n {
            lam[(tap.delay_index, k)] += w * upsilon(n, tap.doppler_index - k as f64);
        }
    }
    Ok(lam)
}

fn check_taps(taps: &[DdTap], p: &FrameParams) -> Result<()> {
    for (i, t) in taps.iter().enumerate() {
        if t.delay_index >= p.m() {
            return Err(Error::invalid(format!(
                "tap {i}: delay index {} outside 0..{}",
                t.delay_index,
                p.m()
            )));
        }
        if !t.doppler_index.is_finite() || !t.coeff.re.is_finite() || !t.coeff.im.is_finite() {
            return Err(Error::invalid(format!("tap {i} has non-finite parameters")));
        }
    }
    Ok(())
}

/// Noiseless response to a unit impulse at `(i, j)`.
pub fn pilot_response_synthetic(
    taps: &[DdTap],
    pilot: (usize, usize),
    p: &FrameParams,
) -> Result<DDGrid> {
    check_taps(taps, p)?;
    let (i, j) = pilot;
    let (m, n) = (p.m(), p.n());
    if i >= m || j >= n {
        return Err(Error::invalid(format!(
            "pilot ({i},{j}) outside the {m}x{n} grid"
        )));
    }
    let c = p.calibration();
    let mut y = DDGrid::zeros(p);
    for tap in taps {
        let l = (i + tap.delay_index) % m;
        let w = tap.coeff * psi(tap.doppler_index, tap.delay_index, l, p) / c;
        for k in 0..n {
            let shift = k as f64 - j as f64;
            y[(l, k)] += w * upsilon(n, tap.doppler_index - shift);
        }
    }
    Ok(y)
}

/// Dense `Φ = (F_N ⊗ I_M) blkdiag(H_n) (F_N^H ⊗ I_M)` of a tap set.
pub fn build_phi_from_taps(taps: &[DdTap], p: &FrameParams) -> Result<DMatrix<Complex64>> {
    check_taps(taps, p)?;
    let (m, n) = (p.m(), p.n());
    let mn = m * n;
    if mn > PHI_SIZE_LIMIT {
        return Err(Error::Guard(format!(
            "refusing to build a dense {mn}x{mn} operator (limit MN <= {PHI_SIZE_LIMIT})"
        )));
    }
    let f = dft_matrix(n);
    let hs = (1..=n)
        .map(|i| build_hn_from_taps(taps, p, i))
        .collect::<Result<Vec<_>>>()?;
    let mut phi = DMatrix::zeros(mn, mn);
    // Φ[(l,k),(l',k')] = Σ_n F[k,n] H_n[l,l'] conj(F[k',n])
    for k in 0..n {
        for kp in 0..n {
            let mut block = DMatrix::<Complex64>::zeros(m, m);
            for (t, h) in hs.iter().enumerate() {
                let w = f[(k, t)] * f[(kp, t)].conj();
                block.zip_apply(h, |b, v| *b += w * v);
            }
            phi.view_mut((k * m, kp * m), (m, m)).copy_from(&block);
        }
    }
    Ok(phi)
}

/// [`build_phi_from_taps`] for a ground-truth channel.
pub fn build_phi(ch: &ChannelRealization, p: &FrameParams) -> Result<DMatrix<Complex64>> {
    if ch.params != *p {
        return Err(Error::invalid("channel was built for a different frame"));
    }
    build_phi_from_taps(&ch.dd_taps(), p)
}

/// 2D circular convolution `Σ_{l',k'} X[l',k'] K[(l-l')_M,(k-k')_N]`.
pub fn circular_convolve(x: &DMatrix<Complex64>, kernel: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (m, n) = x.shape();
    DMatrix::from_fn(m, n, |l, k| {
        let mut acc = Complex64::default();
        for kp in 0..n {
            for lp in 0..m {
                let v = x[(lp, kp)];
                if v != Complex64::default() {
                    acc += v * kernel[((l + m - lp) % m, (k + n - kp) % n)];
                }
            }
        }
        acc
    })
}
