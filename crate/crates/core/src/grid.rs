//! Integer index grids and the complex sample containers defined on them.
//!
//! A grid is a rectangular block of integer frequencies `(k1, k2)`. Grids built
//! with [`IndexGrid::centered`] follow the floor convention: an axis of length
//! `n` spans `-floor(n/2) ..= floor((n-1)/2)`, so index 0 is always present and
//! odd lengths are symmetric. Contractions and Minkowski sums of centered grids
//! are not necessarily centered, so a grid stores its per-axis lower corner.
//!
//! Samples are stored row-major: `(k1, k2)` lives at offset
//! `(k1 - lo1) * n2 + (k2 - lo2)`, which for centered grids is
//! `(k1 + floor(n1/2)) * n2 + (k2 + floor(n2/2))`.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::binio;
use crate::error::{Error, Result};

/// A 2-D integer frequency index `(k1, k2)`.
pub type Index2 = (i64, i64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct IndexGrid {
    lo: [i64; 2],
    len: [usize; 2],
}

impl IndexGrid {
    /// The centered `n1 x n2` grid.
    pub fn centered(n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {n1}x{n2}"
            )));
        }
        Ok(Self {
            lo: [-((n1 / 2) as i64), -((n2 / 2) as i64)],
            len: [n1, n2],
        })
    }

    /// A grid with explicit lower corner and side lengths.
    pub fn from_corner(lo: [i64; 2], len: [usize; 2]) -> Result<Self> {
        if len[0] == 0 || len[1] == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        Ok(Self { lo, len })
    }

    pub fn n1(&self) -> usize {
        self.len[0]
    }

    pub fn n2(&self) -> usize {
        self.len[1]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.len[0], self.len[1])
    }

    /// Number of indices, `n1 * n2`.
    pub fn cardinality(&self) -> usize {
        self.len[0] * self.len[1]
    }

    pub fn lo(&self, axis: usize) -> i64 {
        self.lo[axis]
    }

    pub fn hi(&self, axis: usize) -> i64 {
        self.lo[axis] + self.len[axis] as i64 - 1
    }

    pub fn axis_range(&self, axis: usize) -> std::ops::RangeInclusive<i64> {
        self.lo(axis)..=self.hi(axis)
    }

    pub fn is_centered(&self) -> bool {
        self.lo[0] == -((self.len[0] / 2) as i64) && self.lo[1] == -((self.len[1] / 2) as i64)
    }

    /// True when every axis range is symmetric about zero (odd centered grid).
    pub fn is_symmetric(&self) -> bool {
        self.lo(0) == -self.hi(0) && self.lo(1) == -self.hi(1)
    }

    pub fn contains(&self, k: Index2) -> bool {
        self.axis_range(0).contains(&k.0) && self.axis_range(1).contains(&k.1)
    }

    pub fn offset(&self, k: Index2) -> Option<usize> {
        if !self.contains(k) {
            return None;
        }
        let r = (k.0 - self.lo[0]) as usize;
        let c = (k.1 - self.lo[1]) as usize;
        Some(r * self.len[1] + c)
    }

    /// Inverse of [`offset`](Self::offset).
    pub fn index(&self, offset: usize) -> Index2 {
        debug_assert!(offset < self.cardinality());
        let r = offset / self.len[1];
        let c = offset % self.len[1];
        (self.lo[0] + r as i64, self.lo[1] + c as i64)
    }

    /// Indices in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = Index2> + '_ {
        (0..self.cardinality()).map(move |o| self.index(o))
    }

    /// The contraction `self : inner`, i.e. all `k` in `self` with `k + inner` inside `self`.
    pub fn contract(&self, inner: &IndexGrid) -> Result<IndexGrid> {
        let mut lo = [0i64; 2];
        let mut len = [0usize; 2];
        for axis in 0..2 {
            let a = self.lo(axis) - inner.lo(axis);
            let b = self.hi(axis) - inner.hi(axis);
            if b < a {
                return Err(Error::EmptyResult(format!(
                    "contraction of {}x{} by {}x{} is empty",
                    self.len[0], self.len[1], inner.len[0], inner.len[1]
                )));
            }
            lo[axis] = a;
            len[axis] = (b - a + 1) as usize;
        }
        Ok(IndexGrid { lo, len })
    }

    /// The Minkowski sum `self + other`.
    pub fn minkowski(&self, other: &IndexGrid) -> IndexGrid {
        let mut lo = [0i64; 2];
        let mut len = [0usize; 2];
        for axis in 0..2 {
            lo[axis] = self.lo(axis) + other.lo(axis);
            len[axis] = self.len[axis] + other.len[axis] - 1;
        }
        IndexGrid { lo, len }
    }

    /// The reflected grid `-self`.
    pub fn negated(&self) -> IndexGrid {
        IndexGrid {
            lo: [-self.hi(0), -self.hi(1)],
            len: self.len,
        }
    }

    /// Whether `self` is a subset of `outer`.
    pub fn is_subset_of(&self, outer: &IndexGrid) -> bool {
        (0..2).all(|a| self.lo(a) >= outer.lo(a) && self.hi(a) <= outer.hi(a))
    }

    pub(crate) fn describe(&self) -> String {
        format!(
            "{}x{} [{}..{}]x[{}..{}]",
            self.len[0],
            self.len[1],
            self.lo(0),
            self.hi(0),
            self.lo(1),
            self.hi(1)
        )
    }
}

/// Shorthand for [`IndexGrid::centered`].
pub fn make_grid(n1: usize, n2: usize) -> Result<IndexGrid> {
    IndexGrid::centered(n1, n2)
}

pub(crate) fn ensure_same_grid(expected: &IndexGrid, actual: &IndexGrid) -> Result<()> {
    if expected != actual {
        return Err(Error::GridMismatch {
            expected: expected.describe(),
            actual: actual.describe(),
        });
    }
    Ok(())
}

/// Complex samples on an [`IndexGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralImage {
    grid: IndexGrid,
    values: Vec<Complex64>,
}

impl SpectralImage {
    pub fn new(grid: IndexGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.cardinality() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a grid of {} indices",
                values.len(),
                grid.cardinality()
            )));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("spectral samples must be finite"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: IndexGrid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.cardinality()],
        }
    }

    pub fn from_fn(grid: IndexGrid, mut f: impl FnMut(Index2) -> Complex64) -> Self {
        let values = grid.iter().map(&mut f).collect();
        Self { grid, values }
    }

    /// Builds without the finiteness scan. Callers guarantee the invariant.
    pub(crate) fn from_raw(grid: IndexGrid, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.cardinality());
        Self { grid, values }
    }

    pub fn grid(&self) -> &IndexGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn get(&self, k: Index2) -> Option<Complex64> {
        self.grid.offset(k).map(|o| self.values[o])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `<self, other> = sum self(k) * conj(other(k))`.
    pub fn inner(&self, other: &SpectralImage) -> Result<Complex64> {
        ensure_same_grid(&self.grid, &other.grid)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum())
    }

    pub fn sub(&self, other: &SpectralImage) -> Result<SpectralImage> {
        ensure_same_grid(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self::from_raw(self.grid, values))
    }

    /// Restricts to a sub-grid.
    pub fn restrict(&self, sub: &IndexGrid) -> Result<SpectralImage> {
        if !sub.is_subset_of(&self.grid) {
            return Err(Error::invalid(format!(
                "grid {} is not inside {}",
                sub.describe(),
                self.grid.describe()
            )));
        }
        let values = sub
            .iter()
            .map(|k| self.values[self.grid.offset(k).expect("subset")])
            .collect();
        Ok(Self::from_raw(*sub, values))
    }

    /// Zero-extends onto a larger grid.
    pub fn embed(&self, outer: &IndexGrid) -> Result<SpectralImage> {
        if !self.grid.is_subset_of(outer) {
            return Err(Error::invalid(format!(
                "grid {} is not inside {}",
                self.grid.describe(),
                outer.describe()
            )));
        }
        let mut out = SpectralImage::zeros(*outer);
        for (o, k) in self.grid.iter().enumerate() {
            let t = outer.offset(k).expect("subset");
            out.values[t] = self.values[o];
        }
        Ok(out)
    }

    /// Writes the SPC1 binary format.
    pub fn write_spc1<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, b"SPC1")?;
        binio::write_u32(w, binio::dim_to_u32(self.grid.n1(), "n1")?)?;
        binio::write_u32(w, binio::dim_to_u32(self.grid.n2(), "n2")?)?;
        let mut buf = Vec::with_capacity(self.values.len() * 16);
        for z in &self.values {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads the SPC1 binary format. The grid is the centered `n1 x n2` grid.
    pub fn read_spc1<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, b"SPC1", "SPC1")?;
        let n1 = binio::read_u32(r, "SPC1")? as usize;
        let n2 = binio::read_u32(r, "SPC1")? as usize;
        let grid = IndexGrid::centered(n1, n2).map_err(|e| Error::format("SPC1", e.to_string()))?;
        let mut values = Vec::with_capacity(grid.cardinality());
        for _ in 0..grid.cardinality() {
            let re = binio::read_f64(r, "SPC1")?;
            let im = binio::read_f64(r, "SPC1")?;
            values.push(Complex64::new(re, im));
        }
        Self::new(grid, values).map_err(|e| Error::format("SPC1", e.to_string()))
    }
}

/// The pair of derivative spectra `(2 pi i k1 v, 2 pi i k2 v)`, or any pair of
/// spectra on one grid that plays that role.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSpectrum {
    first: SpectralImage,
    second: SpectralImage,
}

impl GradientSpectrum {
    pub fn new(first: SpectralImage, second: SpectralImage) -> Result<Self> {
        ensure_same_grid(first.grid(), second.grid())?;
        Ok(Self { first, second })
    }

    pub fn zeros(grid: IndexGrid) -> Self {
        Self {
            first: SpectralImage::zeros(grid),
            second: SpectralImage::zeros(grid),
        }
    }

    pub fn grid(&self) -> &IndexGrid {
        self.first.grid()
    }

    pub fn first(&self) -> &SpectralImage {
        &self.first
    }

    pub fn second(&self) -> &SpectralImage {
        &self.second
    }

    pub fn component(&self, l: usize) -> &SpectralImage {
        match l {
            0 => &self.first,
            _ => &self.second,
        }
    }

    pub(crate) fn component_values_mut(&mut self, l: usize) -> &mut [Complex64] {
        match l {
            0 => self.first.values_mut(),
            _ => self.second.values_mut(),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.first.norm_sqr() + self.second.norm_sqr()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn inner(&self, other: &GradientSpectrum) -> Result<Complex64> {
        Ok(self.first.inner(&other.first)? + self.second.inner(&other.second)?)
    }

    pub fn sub(&self, other: &GradientSpectrum) -> Result<GradientSpectrum> {
        Ok(Self {
            first: self.first.sub(&other.first)?,
            second: self.second.sub(&other.second)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_contract(outer: &IndexGrid, inner: &IndexGrid) -> Vec<Index2> {
        outer
            .iter()
            .filter(|&(a, b)| inner.iter().all(|(c, d)| outer.contains((a + c, b + d))))
            .collect()
    }

    #[test]
    fn centered_axis_ranges() {
        let g = make_grid(8, 8).unwrap();
        assert_eq!(g.axis_range(0), -4..=3);
        let g = make_grid(5, 5).unwrap();
        assert_eq!(g.axis_range(1), -2..=2);
        assert!(g.is_symmetric());
        let g = make_grid(256, 256).unwrap();
        assert_eq!(g.axis_range(0), -128..=127);
        assert_eq!(g.cardinality(), 65536);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(make_grid(0, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn contraction_examples() {
        let c = make_grid(8, 8).unwrap().contract(&make_grid(3, 3).unwrap()).unwrap();
        assert_eq!(c.axis_range(0), -3..=2);
        assert_eq!(c.dims(), (6, 6));

        let five = make_grid(5, 5).unwrap();
        let c = five.contract(&five).unwrap();
        assert_eq!(c.iter().collect::<Vec<_>>(), vec![(0, 0)]);

        let outer = make_grid(65, 65).unwrap();
        let inner = make_grid(25, 25).unwrap();
        let c = outer.contract(&inner).unwrap();
        let brute = brute_contract(&outer, &inner);
        assert_eq!(brute.len(), 41 * 41);
        assert_eq!(c.iter().collect::<Vec<_>>(), brute);
    }

    #[test]
    fn contraction_of_larger_inner_is_empty() {
        let r = make_grid(3, 3).unwrap().contract(&make_grid(5, 5).unwrap());
        assert!(matches!(r, Err(Error::EmptyResult(_))));
    }

    #[test]
    fn minkowski_examples() {
        let k = make_grid(3, 3).unwrap();
        let s = k.minkowski(&k);
        assert_eq!(s.axis_range(0), -2..=2);
        assert_eq!(s.axis_range(1), -2..=2);

        let g = make_grid(6, 4).unwrap();
        assert_eq!(g.minkowski(&make_grid(1, 1).unwrap()), g);

        let a = make_grid(4, 1).unwrap(); // {-2..1}
        let b = make_grid(3, 1).unwrap(); // {-1..1}
        let s = a.minkowski(&b);
        let mut sums: Vec<i64> = a
            .axis_range(0)
            .flat_map(|x| b.axis_range(0).map(move |y| x + y))
            .collect();
        sums.sort();
        sums.dedup();
        assert_eq!(s.axis_range(0).collect::<Vec<_>>(), sums);
        assert_eq!(s.axis_range(0), -3..=2);
    }

    #[test]
    fn spc1_rejects_bad_magic() {
        let bytes = b"SPC2\x01\0\0\0\x01\0\0\0".to_vec();
        let r = SpectralImage::read_spc1(&mut bytes.as_slice());
        assert!(matches!(r, Err(Error::Format { .. })));
    }

    #[test]
    fn spc1_layout_is_row_major() {
        let g = make_grid(2, 3).unwrap();
        let v = SpectralImage::from_fn(g, |(a, b)| Complex64::new(a as f64, b as f64));
        let mut buf = Vec::new();
        v.write_spc1(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SPC1");
        assert_eq!(buf.len(), 12 + 6 * 16);
        // first entry is (k1, k2) = (-1, -1)
        assert_eq!(f64::from_le_bytes(buf[12..20].try_into().unwrap()), -1.0);
        assert_eq!(f64::from_le_bytes(buf[20..28].try_into().unwrap()), -1.0);
        let back = SpectralImage::read_spc1(&mut buf.as_slice()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn non_finite_samples_rejected() {
        let g = make_grid(1, 2).unwrap();
        let r = SpectralImage::new(g, vec![Complex64::new(f64::NAN, 0.0), Complex64::new(0.0, 0.0)]);
        assert!(r.is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn contract_then_minkowski_stays_inside(
                n1 in 1usize..=16, n2 in 1usize..=16, m1 in 1usize..=16, m2 in 1usize..=16
            ) {
                let outer = make_grid(n1, n2).unwrap();
                let inner = make_grid(m1, m2).unwrap();
                match outer.contract(&inner) {
                    Ok(c) => {
                        prop_assert_eq!(c.iter().collect::<Vec<_>>(), brute_contract(&outer, &inner));
                        prop_assert!(c.minkowski(&inner).is_subset_of(&outer));
                    }
                    Err(_) => prop_assert!(brute_contract(&outer, &inner).is_empty()),
                }
            }

            #[test]
            fn offset_is_bijective(n1 in 1usize..=16, n2 in 1usize..=16) {
                let g = make_grid(n1, n2).unwrap();
                let mut seen = vec![false; g.cardinality()];
                for k in g.iter() {
                    let o = g.offset(k).unwrap();
                    prop_assert!(!seen[o]);
                    seen[o] = true;
                    prop_assert_eq!(g.index(o), k);
                }
                prop_assert!(seen.iter().all(|&s| s));
            }
        }
    }
}
