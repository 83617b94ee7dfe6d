//! Edge maps from the annihilating subspace of a filter bank.
//!
//! Each null-space filter `b` defines a trigonometric polynomial
//! `phi_b(x) = sum_k b(k) exp(-2 pi i k.x)` that vanishes on the edge set.
//! The map is the root-sum-square of these polynomials over an orthonormal
//! basis of the null space, so it does not depend on the choice of basis.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::framebank::FilterBank;
use crate::grid::IndexGrid;
use crate::hankel::CMatrix;
use crate::image::Image;

/// `phi(x)` sampled at `x = (j1/p1 - 1/2, j2/p2 - 1/2)`, row-major in `j1`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap {
    p1: usize,
    p2: usize,
    values: Vec<f64>,
}

impl EdgeMap {
    pub fn resolution(&self) -> (usize, usize) {
        (self.p1, self.p2)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, j1: usize, j2: usize) -> f64 {
        self.values[j1 * self.p2 + j2]
    }

    /// Location of pixel `(j1, j2)` in the unit cell.
    pub fn point(&self, j1: usize, j2: usize) -> [f64; 2] {
        [j1 as f64 / self.p1 as f64 - 0.5, j2 as f64 / self.p2 as f64 - 0.5]
    }

    pub fn to_image(&self) -> Image {
        Image::new(self.p1, self.p2, self.values.clone()).expect("positive resolution")
    }

    pub fn write_png<W: Write>(&self, w: W) -> Result<()> {
        self.to_image().write_png(w)
    }

    pub fn write_spc1<W: Write>(&self, w: &mut W) -> Result<()> {
        self.to_image().write_spc1(w)
    }
}

/// Columns `rank..m2` of the bank rescaled to unit norm.
fn null_basis(bank: &FilterBank, rank: usize) -> Result<CMatrix> {
    let m2 = bank.m2();
    if rank >= m2 {
        return Err(Error::invalid(format!(
            "rank {rank} leaves no annihilating filters among {m2}"
        )));
    }
    Ok(bank.filters().columns(rank, m2 - rank) * Complex64::new((m2 as f64).sqrt(), 0.0))
}

/// Edge map of the null space of `bank` beyond `rank`, on a `p1 x p2` lattice.
pub fn pseudospectrum(bank: &FilterBank, rank: usize, resolution: (usize, usize)) -> Result<EdgeMap> {
    let basis = null_basis(bank, rank)?;
    lattice_values(bank.filter_grid(), &basis, resolution)
}

/// The same quantity at arbitrary points `x` of the unit cell.
pub fn pseudospectrum_at(bank: &FilterBank, rank: usize, points: &[[f64; 2]]) -> Result<Vec<f64>> {
    let basis = null_basis(bank, rank)?;
    let kg = bank.filter_grid();
    Ok(points
        .iter()
        .map(|x| {
            let mut total = 0.0;
            for col in basis.column_iter() {
                let mut s = Complex64::new(0.0, 0.0);
                for (k, b) in kg.iter().zip(col.iter()) {
                    let ph = -2.0 * PI * (k.0 as f64 * x[0] + k.1 as f64 * x[1]);
                    s += b * Complex64::from_polar(1.0, ph);
                }
                total += s.norm_sqr();
            }
            total.sqrt()
        })
        .collect())
}

/// Separable evaluation: first over `k1` for every row, then over `k2`.
fn lattice_values(kg: &IndexGrid, basis: &CMatrix, (p1, p2): (usize, usize)) -> Result<EdgeMap> {
    if p1 == 0 || p2 == 0 {
        return Err(Error::invalid("edge map resolution must be positive"));
    }
    let (k1n, k2n) = kg.dims();
    let phase = |p: usize, lo: i64, n: usize| -> Vec<Complex64> {
        let mut e = Vec::with_capacity(p * n);
        for j in 0..p {
            let x = j as f64 / p as f64 - 0.5;
            for t in 0..n {
                e.push(Complex64::from_polar(1.0, -2.0 * PI * (lo + t as i64) as f64 * x));
            }
        }
        e
    };
    let e1 = phase(p1, kg.lo(0), k1n);
    let e2 = phase(p2, kg.lo(1), k2n);
    let mut power = vec![0.0; p1 * p2];
    let mut partial = vec![Complex64::new(0.0, 0.0); p1 * k2n];
    for col in basis.column_iter() {
        // partial[j1][t2] = sum_t1 b(t1, t2) e1[j1][t1]
        for j1 in 0..p1 {
            let row = &e1[j1 * k1n..(j1 + 1) * k1n];
            for t2 in 0..k2n {
                let mut s = Complex64::new(0.0, 0.0);
                for (t1, e) in row.iter().enumerate() {
                    s += col[t1 * k2n + t2] * e;
                }
                partial[j1 * k2n + t2] = s;
            }
        }
        for j1 in 0..p1 {
            let pr = &partial[j1 * k2n..(j1 + 1) * k2n];
            for j2 in 0..p2 {
                let er = &e2[j2 * k2n..(j2 + 1) * k2n];
                let s: Complex64 = pr.iter().zip(er).map(|(a, b)| a * b).sum();
                power[j1 * p2 + j2] += s.norm_sqr();
            }
        }
    }
    Ok(EdgeMap {
        p1,
        p2,
        values: power.into_iter().map(f64::sqrt).collect(),
    })
}

/// True where the map is at or below its `quantile` value (nearest-rank,
/// inclusive), so ties at the threshold are all selected.
pub fn edge_mask(map: &EdgeMap, quantile: f64) -> Result<Vec<bool>> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::invalid(format!("quantile {quantile} not in (0, 1]")));
    }
    let mut sorted = map.values.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((quantile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let t = sorted[rank - 1];
    Ok(map.values.iter().map(|&v| v <= t).collect())
}
