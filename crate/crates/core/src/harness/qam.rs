//! Gray-coded square QAM with unit average symbol energy.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{DDGrid, FrameParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Qam {
    order: usize,
    /// Levels per axis.
    side: usize,
    bits_per_axis: usize,
    scale: f64,
    /// Gray label of each level index.
    gray: Vec<usize>,
    /// Level index of each Gray label.
    index_of: Vec<usize>,
}

impl Qam {
    /// Supported orders are 4, 16 and 64.
    pub fn new(order: usize) -> Result<Self> {
        let bits_per_axis = match order {
            4 => 1,
            16 => 2,
            64 => 3,
            _ => return Err(Error::config(format!("unsupported QAM order {order}, use 4, 16 or 64"))),
        };
        let side = 1 << bits_per_axis;
        let gray: Vec<usize> = (0..side).map(|i| i ^ (i >> 1)).collect();
        let mut index_of = vec![0; side];
        for (i, g) in gray.iter().enumerate() {
            index_of[*g] = i;
        }
        let s = side as f64;
        Ok(Qam {
            order,
            side,
            bits_per_axis,
            scale: (2.0 * (s * s - 1.0) / 3.0).sqrt().recip(),
            gray,
            index_of,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        2 * self.bits_per_axis
    }

    fn level(&self, idx: usize) -> f64 {
        (2.0 * idx as f64 - (self.side as f64 - 1.0)) * self.scale
    }

    fn axis_bits(&self, bits: &[u8]) -> usize {
        bits.iter().fold(0, |acc, b| (acc << 1) | (*b as usize & 1))
    }

    fn push_axis(&self, label: usize, out: &mut Vec<u8>) {
        for i in (0..self.bits_per_axis).rev() {
            out.push(((label >> i) & 1) as u8);
        }
    }

    fn decide(&self, v: f64) -> usize {
        let idx = (v / self.scale + (self.side as f64 - 1.0)) / 2.0;
        idx.round().clamp(0.0, (self.side - 1) as f64) as usize
    }

    /// Maps bits (first half of each group on I, second on Q) to symbols.
    pub fn map(&self, bits: &[u8]) -> Result<Vec<Complex64>> {
        let b = self.bits_per_symbol();
        if !bits.len().is_multiple_of(b) {
            return Err(Error::invalid(format!(
                "{} bits is not a multiple of {b} bits per symbol",
                bits.len()
            )));
        }
        Ok(bits
            .chunks_exact(b)
            .map(|g| {
                let (i_bits, q_bits) = g.split_at(self.bits_per_axis);
                let i = self.index_of[self.axis_bits(i_bits)];
                let q = self.index_of[self.axis_bits(q_bits)];
                Complex64::new(self.level(i), self.level(q))
            })
            .collect())
    }

    /// Minimum-distance hard decision back to bits.
    pub fn demap(&self, symbols: &[Complex64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(symbols.len() * self.bits_per_symbol());
        for s in symbols {
            self.push_axis(self.gray[self.decide(s.re)], &mut out);
            self.push_axis(self.gray[self.decide(s.im)], &mut out);
        }
        out
    }

    /// Maps exactly `M N log2(order)` bits onto a grid, delay index fastest.
    pub fn map_grid(&self, bits: &[u8], p: &FrameParams) -> Result<DDGrid> {
        let want = p.grid_len() * self.bits_per_symbol();
        if bits.len() != want {
            return Err(Error::invalid(format!(
                "frame takes {want} bits, got {}",
                bits.len()
            )));
        }
        let syms = self.map(bits)?;
        crate::grid::devectorize(&syms, p)
    }

    pub fn demap_grid(&self, g: &DDGrid) -> Vec<u8> {
        self.demap(g.values().as_slice())
    }

    pub fn constellation(&self) -> Vec<Complex64> {
        let mut pts = Vec::with_capacity(self.order);
        for q in 0..self.side {
            for i in 0..self.side {
                pts.push(Complex64::new(self.level(i), self.level(q)));
            }
        }
        pts
    }

    /// Smallest distance between two constellation points.
    pub fn min_distance(&self) -> f64 {
        2.0 * self.scale
    }
}
