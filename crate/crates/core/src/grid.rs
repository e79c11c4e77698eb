//! Frame numerology, the delay-Doppler / frequency-time / time domains, and
//! the lossless transforms between them.
//!
//! Conventions:
//! * grids are `M x N` column-major matrices: rows index delay (DD) or
//!   subcarrier (FT), columns index Doppler (DD) or OFDM symbol (FT);
//! * every DFT is unitary, so `demodulate(modulate(x)) == x` exactly;
//! * the analog `1/sqrt(T)` pulse amplitude is dropped, time is measured in
//!   samples of period `1/(M Δf)`.
//!
//! With unitary transforms the measured delay-Doppler channel is the
//! textbook double sum (with an unnormalized Doppler kernel) divided by `N`.
//! That single real factor is exposed as [`FrameParams::calibration`].

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

/// Static OFDM/OTFS numerology shared by every transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    /// `M`: delay bins, equal to the number of subcarriers.
    pub num_delay_bins: usize,
    /// `N`: Doppler bins, equal to the number of OFDM symbols per frame.
    pub num_doppler_bins: usize,
    /// `Δf` in Hz.
    pub subcarrier_spacing: f64,
    /// Cyclic prefix length in samples.
    pub cp_len: usize,
    /// Carrier frequency in Hz.
    pub carrier_freq: f64,
}

impl FrameParams {
    pub fn new(
        num_delay_bins: usize,
        num_doppler_bins: usize,
        subcarrier_spacing: f64,
        cp_len: usize,
        carrier_freq: f64,
    ) -> Result<Self> {
        let p = FrameParams {
            num_delay_bins,
            num_doppler_bins,
            subcarrier_spacing,
            cp_len,
            carrier_freq,
        };
        p.validate()?;
        Ok(p)
    }

    /// 256 subcarriers, 14 symbols, 15 kHz spacing, 17-sample CP at 0.8 GHz.
    pub fn reference() -> Self {
        FrameParams {
            num_delay_bins: 256,
            num_doppler_bins: 14,
            subcarrier_spacing: 15e3,
            cp_len: 17,
            carrier_freq: 0.8e9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_delay_bins < 2 || self.num_doppler_bins < 2 {
            return Err(Error::config(format!(
                "frame needs M >= 2 and N >= 2, got M={} N={}",
                self.num_delay_bins, self.num_doppler_bins
            )));
        }
        if self.cp_len >= self.num_delay_bins {
            return Err(Error::config(format!(
                "cp_len {} must be shorter than M={}",
                self.cp_len, self.num_delay_bins
            )));
        }
        if !(self.subcarrier_spacing > 0.0 && self.subcarrier_spacing.is_finite()) {
            return Err(Error::config("subcarrier_spacing must be positive"));
        }
        if !(self.carrier_freq > 0.0 && self.carrier_freq.is_finite()) {
            return Err(Error::config("carrier_freq must be positive"));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.num_delay_bins
    }

    pub fn n(&self) -> usize {
        self.num_doppler_bins
    }

    /// `M Δf`, in samples per second.
    pub fn sample_rate(&self) -> f64 {
        self.num_delay_bins as f64 * self.subcarrier_spacing
    }

    /// `M + N_CP`.
    pub fn block_len(&self) -> usize {
        self.num_delay_bins + self.cp_len
    }

    /// `(M + N_CP) N`.
    pub fn samples_per_frame(&self) -> usize {
        self.block_len() * self.num_doppler_bins
    }

    /// Width of one Doppler bin in Hz: `M Δf / ((M + N_CP) N)`.
    pub fn doppler_bin_hz(&self) -> f64 {
        self.sample_rate() / self.samples_per_frame() as f64
    }

    /// Width of one delay bin in seconds.
    pub fn delay_bin_s(&self) -> f64 {
        1.0 / self.sample_rate()
    }

    /// Ratio between the closed-form delay-Doppler response and what the
    /// unitary receiver measures. Always `N`.
    pub fn calibration(&self) -> f64 {
        self.num_doppler_bins as f64
    }

    pub fn grid_len(&self) -> usize {
        self.num_delay_bins * self.num_doppler_bins
    }
}

macro_rules! grid_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(DMatrix<Complex64>);

        impl $name {
            pub fn new(values: DMatrix<Complex64>) -> Self {
                $name(values)
            }

            pub fn zeros(p: &FrameParams) -> Self {
                $name(DMatrix::zeros(p.m(), p.n()))
            }

            pub fn from_fn(p: &FrameParams, f: impl FnMut(usize, usize) -> Complex64) -> Self {
                $name(DMatrix::from_fn(p.m(), p.n(), f))
            }

            pub fn values(&self) -> &DMatrix<Complex64> {
                &self.0
            }

            pub fn values_mut(&mut self) -> &mut DMatrix<Complex64> {
                &mut self.0
            }

            pub fn into_inner(self) -> DMatrix<Complex64> {
                self.0
            }

            pub fn rows(&self) -> usize {
                self.0.nrows()
            }

            pub fn cols(&self) -> usize {
                self.0.ncols()
            }

            /// Squared Frobenius norm.
            pub fn energy(&self) -> f64 {
                self.0.iter().map(|v| v.norm_sqr()).sum()
            }

            pub fn check_dims(&self, p: &FrameParams) -> Result<()> {
                if self.rows() != p.m() || self.cols() != p.n() {
                    return Err(Error::invalid(format!(
                        "{} is {}x{}, frame expects {}x{}",
                        stringify!($name),
                        self.rows(),
                        self.cols(),
                        p.m(),
                        p.n()
                    )));
                }
                Ok(())
            }
        }

        impl std::ops::Index<(usize, usize)> for $name {
            type Output = Complex64;
            fn index(&self, idx: (usize, usize)) -> &Complex64 {
                &self.0[idx]
            }
        }

        impl std::ops::IndexMut<(usize, usize)> for $name {
            fn index_mut(&mut self, idx: (usize, usize)) -> &mut Complex64 {
                &mut self.0[idx]
            }
        }
    };
}

grid_type!(
    /// Delay-Doppler grid: row `l` is the delay index, column `k` the Doppler index.
    DDGrid
);
grid_type!(
    /// Frequency-time grid: row `m` is the subcarrier, column `n` the OFDM symbol.
    FTGrid
);

impl DDGrid {
    /// Unit impulse at delay `l`, Doppler `k`.
    pub fn impulse(p: &FrameParams, l: usize, k: usize) -> Self {
        let mut g = DDGrid::zeros(p);
        g[(l, k)] = Complex64::new(1.0, 0.0);
        g
    }
}

/// A frame-aligned baseband sample stream with cyclic prefixes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

impl TimeSignal {
    pub fn zeros(p: &FrameParams) -> Self {
        TimeSignal {
            samples: vec![Complex64::default(); p.samples_per_frame()],
            sample_rate: p.sample_rate(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn check_frame(&self, p: &FrameParams) -> Result<()> {
        if self.samples.len() != p.samples_per_frame() {
            return Err(Error::invalid(format!(
                "signal has {} samples, frame expects {}",
                self.samples.len(),
                p.samples_per_frame()
            )));
        }
        Ok(())
    }

    /// Post-CP samples of block `n` (0-based).
    pub fn block(&self, p: &FrameParams, n: usize) -> &[Complex64] {
        let start = n * p.block_len() + p.cp_len;
        &self.samples[start..start + p.m()]
    }
}

fn unitary(op: fn(&mut [Complex64])) -> impl Fn(&mut [Complex64]) {
    move |buf: &mut [Complex64]| {
        let s = 1.0 / (buf.len() as f64).sqrt();
        op(buf);
        fft::scale(buf, s);
    }
}

fn unitary_forward(buf: &mut [Complex64]) {
    unitary(fft::forward)(buf)
}

fn unitary_inverse(buf: &mut [Complex64]) {
    unitary(fft::inverse)(buf)
}

/// Inverse symplectic finite Fourier transform, DD to FT.
///
/// `X_ft[m,n] = 1/sqrt(MN) Σ_k Σ_l X_dd[l,k] e^{-j2π(ml/M - nk/N)}`.
pub fn isfft(x_dd: &DDGrid) -> FTGrid {
    let rows = x_dd.rows();
    let mut data = x_dd.values().clone();
    fft::along_columns(data.as_mut_slice(), rows, unitary_forward);
    fft::along_rows(data.as_mut_slice(), rows, unitary_inverse);
    FTGrid(data)
}

/// Symplectic finite Fourier transform, FT to DD. Exact inverse of [`isfft`].
pub fn sfft(y_ft: &FTGrid) -> DDGrid {
    let rows = y_ft.rows();
    let mut data = y_ft.values().clone();
    fft::along_columns(data.as_mut_slice(), rows, unitary_inverse);
    fft::along_rows(data.as_mut_slice(), rows, unitary_forward);
    DDGrid(data)
}

/// OFDM modulator: unitary inverse M-point DFT per symbol, CP = block tail.
pub fn ofdm_modulate(x_ft: &FTGrid, p: &FrameParams) -> Result<TimeSignal> {
    x_ft.check_dims(p)?;
    let (m, cp) = (p.m(), p.cp_len);
    let mut out = Vec::with_capacity(p.samples_per_frame());
    let mut block = vec![Complex64::default(); m];
    for col in x_ft.values().as_slice().chunks_exact(m) {
        block.copy_from_slice(col);
        unitary_inverse(&mut block);
        out.extend_from_slice(&block[m - cp..]);
        out.extend_from_slice(&block);
    }
    Ok(TimeSignal {
        samples: out,
        sample_rate: p.sample_rate(),
    })
}

/// OFDM demodulator: drops each CP and applies the unitary M-point DFT.
pub fn ofdm_demodulate(r: &TimeSignal, p: &FrameParams) -> Result<FTGrid> {
    r.check_frame(p)?;
    let m = p.m();
    let mut data = DMatrix::zeros(m, p.n());
    for (n, col) in data.as_mut_slice().chunks_exact_mut(m).enumerate() {
        col.copy_from_slice(r.block(p, n));
        unitary_forward(col);
    }
    Ok(FTGrid(data))
}

/// CP-OFDM-based OTFS transmitter: ISFFT followed by OFDM modulation.
pub fn modulate(x_dd: &DDGrid, p: &FrameParams) -> Result<TimeSignal> {
    x_dd.check_dims(p)?;
    ofdm_modulate(&isfft(x_dd), p)
}

/// CP-OFDM-based OTFS receiver: OFDM demodulation followed by SFFT.
pub fn demodulate(r: &TimeSignal, p: &FrameParams) -> Result<DDGrid> {
    Ok(sfft(&ofdm_demodulate(r, p)?))
}

/// Column-major (delay-fastest) stacking.
pub fn vectorize(g: &DDGrid) -> Vec<Complex64> {
    g.values().as_slice().to_vec()
}

pub fn devectorize(v: &[Complex64], p: &FrameParams) -> Result<DDGrid> {
    if v.len() != p.grid_len() {
        return Err(Error::invalid(format!(
            "vector length {} does not match M*N = {}",
            v.len(),
            p.grid_len()
        )));
    }
    Ok(DDGrid(DMatrix::from_column_slice(p.m(), p.n(), v)))
}

/// Unitary DFT matrix `F[q,k] = e^{-j2πqk/n}/sqrt(n)`.
pub fn dft_matrix(n: usize) -> DMatrix<Complex64> {
    let s = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |q, k| {
        let ang = -2.0 * std::f64::consts::PI * ((q * k) % n) as f64 / n as f64;
        Complex64::from_polar(s, ang)
    })
}
