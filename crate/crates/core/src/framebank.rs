//! Tight-frame filter banks from the SVD of the lifted gradient spectrum.
//!
//! With `H = U S Y*`, the filters are the columns of `A = Y / sqrt(m2)`, so
//! `A A* = I / m2` and the periodic analysis/synthesis pair built from them is
//! a Parseval frame: `synthesis(analysis(g)) = g`.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::binio;
use crate::error::{Error, Result};
use crate::fft::{embed_periodic, Fft2};
use crate::forward::deriv;
use crate::grid::{ensure_same_grid, GradientSpectrum, IndexGrid, SpectralImage};
use crate::hankel::{numerical_rank, CMatrix, FastHankel, HankelShape};

/// Default relative threshold used when a bank picks its own rank.
pub const AUTO_RANK_REL_TOL: f64 = 1e-3;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    filter_grid: IndexGrid,
    sample_grid: IndexGrid,
    /// `m2 x m2`, one filter per column, rows in filter-grid row-major order.
    filters: CMatrix,
    singular_values: Vec<f64>,
    rank: usize,
}

impl FilterBank {
    /// Assembles a bank from its parts, checking shapes and ordering.
    pub fn from_parts(
        filter_grid: IndexGrid,
        sample_grid: IndexGrid,
        filters: CMatrix,
        singular_values: Vec<f64>,
        rank: usize,
    ) -> Result<Self> {
        let m2 = filter_grid.cardinality();
        if filters.nrows() != m2 || filters.ncols() != m2 || singular_values.len() != m2 {
            return Err(Error::DimensionMismatch(format!(
                "a {}-tap filter grid needs a {m2}x{m2} filter matrix and {m2} singular values",
                m2
            )));
        }
        if rank > m2 {
            return Err(Error::invalid(format!("rank {rank} exceeds {m2} filters")));
        }
        if singular_values.windows(2).any(|w| w[0] < w[1]) || singular_values.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("singular values must be nonnegative and descending"));
        }
        HankelShape::new(sample_grid, filter_grid)?;
        Ok(Self {
            filter_grid,
            sample_grid,
            filters,
            singular_values,
            rank,
        })
    }

    /// `m2^{-1/2} e_l`: the trivially tight bank of shifted deltas.
    pub fn delta_bank(filter_grid: IndexGrid, sample_grid: IndexGrid) -> Result<Self> {
        let m2 = filter_grid.cardinality();
        let filters = CMatrix::identity(m2, m2) * Complex64::new(1.0 / (m2 as f64).sqrt(), 0.0);
        Self::from_parts(filter_grid, sample_grid, filters, vec![0.0; m2], m2)
    }

    pub fn filter_grid(&self) -> &IndexGrid {
        &self.filter_grid
    }

    pub fn sample_grid(&self) -> &IndexGrid {
        &self.sample_grid
    }

    pub fn filters(&self) -> &CMatrix {
        &self.filters
    }

    pub fn m2(&self) -> usize {
        self.filter_grid.cardinality()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn with_rank(mut self, rank: usize) -> Result<Self> {
        if rank > self.m2() {
            return Err(Error::invalid(format!("rank {rank} exceeds {} filters", self.m2())));
        }
        self.rank = rank;
        Ok(self)
    }

    /// The same filters acting on another sample grid.
    pub fn with_sample_grid(mut self, grid: IndexGrid) -> Result<Self> {
        HankelShape::new(grid, self.filter_grid)?;
        self.sample_grid = grid;
        Ok(self)
    }

    /// `||A A* - I/m2||_max`.
    pub fn unitarity_defect(&self) -> f64 {
        scaled_unitary_defect(&self.filters)
    }

    /// Writes the FBK1 format.
    pub fn write_fbk1<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, b"FBK1")?;
        binio::write_u32(w, binio::dim_to_u32(self.filter_grid.n1(), "k1")?)?;
        binio::write_u32(w, binio::dim_to_u32(self.filter_grid.n2(), "k2")?)?;
        binio::write_u32(w, binio::dim_to_u32(self.m2(), "m2")?)?;
        binio::write_u32(w, binio::dim_to_u32(self.rank, "rank")?)?;
        let mut buf = Vec::with_capacity(8 * self.m2() * (1 + 2 * self.m2()));
        for s in &self.singular_values {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        for m in 0..self.m2() {
            for z in self.filters.column(m).iter() {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads the FBK1 format. The file does not record the sample grid.
    pub fn read_fbk1<R: Read>(r: &mut R, sample_grid: IndexGrid) -> Result<Self> {
        const F: &str = "FBK1";
        binio::read_magic(r, b"FBK1", F)?;
        let k1 = binio::read_u32(r, F)? as usize;
        let k2 = binio::read_u32(r, F)? as usize;
        let m2 = binio::read_u32(r, F)? as usize;
        let rank = binio::read_u32(r, F)? as usize;
        if k1.checked_mul(k2) != Some(m2) {
            return Err(Error::format(F, format!("m2 = {m2} does not equal {k1} x {k2}")));
        }
        let filter_grid = IndexGrid::centered(k1, k2).map_err(|e| Error::format(F, e.to_string()))?;
        let sv = (0..m2).map(|_| binio::read_f64(r, F)).collect::<Result<Vec<_>>>()?;
        let mut filters = CMatrix::zeros(m2, m2);
        for m in 0..m2 {
            for l in 0..m2 {
                let re = binio::read_f64(r, F)?;
                let im = binio::read_f64(r, F)?;
                filters[(l, m)] = Complex64::new(re, im);
            }
        }
        Self::from_parts(filter_grid, sample_grid, filters, sv, rank).map_err(|e| Error::format(F, e.to_string()))
    }
}

/// `max |A A* - I/m2|` entrywise.
pub(crate) fn scaled_unitary_defect(a: &CMatrix) -> f64 {
    let m2 = a.nrows();
    let p = a * a.adjoint();
    let mut worst = 0.0f64;
    for i in 0..m2 {
        for j in 0..m2 {
            let want = if i == j { 1.0 / m2 as f64 } else { 0.0 };
            worst = worst.max((p[(i, j)] - want).norm());
        }
    }
    worst
}

/// Full right singular basis of `h`, singular values descending.
///
/// When `h` has fewer rows than columns it is padded with zero rows so the
/// basis is complete.
pub(crate) fn right_singular_basis(h: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let m2 = h.ncols();
    let padded;
    let h = if h.nrows() < m2 {
        let mut p = CMatrix::zeros(m2, m2);
        p.rows_mut(0, h.nrows()).copy_from(h);
        padded = p;
        &padded
    } else {
        h
    };
    let svd = h
        .clone()
        .try_svd(false, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD returned no right vectors".into()))?;
    let sv = svd.singular_values;
    if sv.iter().any(|s| !s.is_finite()) || v_t.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("SVD produced non-finite values".into()));
    }
    let mut order: Vec<usize> = (0..m2).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let mut basis = CMatrix::zeros(m2, m2);
    for (dst, &src) in order.iter().enumerate() {
        for l in 0..m2 {
            basis[(l, dst)] = v_t[(src, l)].conj();
        }
    }
    Ok((order.iter().map(|&i| sv[i]).collect(), basis))
}

/// Bank from the SVD of the lifting of `deriv(v)` over `filter_grid`.
///
/// The rank is preset to the number of singular values above
/// [`AUTO_RANK_REL_TOL`] `* sigma_1`; callers may override it with
/// [`FilterBank::with_rank`].
pub fn bank_from_spectrum(v: &SpectralImage, filter_grid: &IndexGrid) -> Result<FilterBank> {
    let shape = HankelShape::new(*v.grid(), *filter_grid)?;
    let g = deriv(v);
    let m2 = shape.m2();
    let h = FastHankel::new(&g, &shape)?.lift_times_filters(&CMatrix::identity(m2, m2))?;
    let (sv, y) = right_singular_basis(&h)?;
    let filters = y * Complex64::new(1.0 / (m2 as f64).sqrt(), 0.0);
    let rank = numerical_rank(&sv, AUTO_RANK_REL_TOL).max(1).min(m2);
    FilterBank::from_parts(*filter_grid, *v.grid(), filters, sv, rank)
}

/// `gamma_m = nu / (sigma_m + eps)`.
pub fn weights(bank: &FilterBank, nu: f64, eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) || !(nu >= 0.0) {
        return Err(Error::invalid("weights need nu >= 0 and eps > 0"));
    }
    Ok(bank.singular_values.iter().map(|s| nu / (s + eps)).collect())
}

/// Unitary extension principle defect:
/// `max_k |sum_m sum_l a_m(k + l) conj(a_m(l)) - delta(k)|` over `k in K - K`.
pub fn uep_residual(bank: &FilterBank) -> f64 {
    let kg = bank.filter_grid;
    let p = &bank.filters * bank.filters.adjoint();
    let shifts = kg.minkowski(&kg.negated());
    let mut worst = 0.0f64;
    for k in shifts.iter() {
        let mut s = ZERO;
        for (j, l) in kg.iter().enumerate() {
            if let Some(i) = kg.offset((k.0 + l.0, k.1 + l.1)) {
                s += p[(i, j)];
            }
        }
        if k == (0, 0) {
            s -= 1.0;
        }
        worst = worst.max(s.norm());
    }
    worst
}

/// Frame coefficients: for each gradient component and filter, an array on the
/// sample grid in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientStack {
    grid: IndexGrid,
    m2: usize,
    data: Vec<Complex64>,
}

impl CoefficientStack {
    pub fn zeros(grid: IndexGrid, m2: usize) -> Self {
        Self {
            grid,
            m2,
            data: vec![ZERO; 2 * m2 * grid.cardinality()],
        }
    }

    pub fn grid(&self) -> &IndexGrid {
        &self.grid
    }

    pub fn m2(&self) -> usize {
        self.m2
    }

    fn range(&self, comp: usize, m: usize) -> std::ops::Range<usize> {
        let n = self.grid.cardinality();
        let start = (comp * self.m2 + m) * n;
        start..start + n
    }

    /// Coefficients of gradient component `comp` (0 or 1) against filter `m`.
    pub fn band(&self, comp: usize, m: usize) -> &[Complex64] {
        &self.data[self.range(comp, m)]
    }

    pub fn band_mut(&mut self, comp: usize, m: usize) -> &mut [Complex64] {
        let r = self.range(comp, m);
        &mut self.data[r]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn inner(&self, other: &CoefficientStack) -> Result<Complex64> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b.conj()).sum())
    }

    fn check_same(&self, other: &CoefficientStack) -> Result<()> {
        ensure_same_grid(&self.grid, &other.grid)?;
        if self.m2 != other.m2 {
            return Err(Error::DimensionMismatch(format!("{} vs {} filters", self.m2, other.m2)));
        }
        Ok(())
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &CoefficientStack) -> Result<CoefficientStack> {
        self.check_same(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b * alpha).collect();
        Ok(Self { data, ..*self })
    }
}

/// Periodic analysis and synthesis operators of one bank.
pub struct FrameTransform {
    grid: IndexGrid,
    m2: usize,
    fft: Fft2,
    filters: CMatrix,
    filter_grid: IndexGrid,
    responses: Option<Vec<Vec<Complex64>>>,
}

/// Per-filter frequency responses are cached below this many stored values.
const RESPONSE_CACHE_LIMIT: usize = 1 << 23;

impl FrameTransform {
    pub fn new(bank: &FilterBank) -> Self {
        let (n1, n2) = bank.sample_grid.dims();
        let mut t = Self {
            grid: bank.sample_grid,
            m2: bank.m2(),
            fft: Fft2::new(n1, n2),
            filters: bank.filters.clone(),
            filter_grid: bank.filter_grid,
            responses: None,
        };
        if t.m2 * t.fft.len() <= RESPONSE_CACHE_LIMIT {
            t.responses = Some((0..t.m2).map(|m| t.response(m)).collect());
        }
        t
    }

    pub fn grid(&self) -> &IndexGrid {
        &self.grid
    }

    pub fn m2(&self) -> usize {
        self.m2
    }

    /// `conj(FFT(conj a_m))`, the multiplier of correlation with `a_m`.
    fn response(&self, m: usize) -> Vec<Complex64> {
        let (n1, n2) = self.grid.dims();
        let mut x = embed_periodic(
            n1,
            n2,
            self.filter_grid
                .iter()
                .zip(self.filters.column(m).iter().map(|z| z.conj())),
        );
        self.fft.forward(&mut x);
        x.iter_mut().for_each(|z| *z = z.conj());
        x
    }

    fn with_response<T>(&self, m: usize, f: impl FnOnce(&[Complex64]) -> T) -> T {
        match &self.responses {
            Some(r) => f(&r[m]),
            None => f(&self.response(m)),
        }
    }

    /// Coefficient `(l, m)` at `k` is `sum_j g_l(k + j) a_m(j)`, indices taken periodically.
    pub fn analysis(&self, g: &GradientSpectrum) -> Result<CoefficientStack> {
        let mut out = CoefficientStack::zeros(self.grid, self.m2);
        self.analysis_into(g, &mut out)?;
        Ok(out)
    }

    /// [`FrameTransform::analysis`] into an existing stack.
    pub fn analysis_into(&self, g: &GradientSpectrum, out: &mut CoefficientStack) -> Result<()> {
        ensure_same_grid(&self.grid, g.grid())?;
        self.check_stack(out)?;
        let spectra = [0, 1].map(|b| {
            let mut buf = g.component(b).values().to_vec();
            self.fft.forward(&mut buf);
            buf
        });
        for m in 0..self.m2 {
            self.with_response(m, |resp| {
                for (b, spec) in spectra.iter().enumerate() {
                    let band = out.band_mut(b, m);
                    for ((o, s), r) in band.iter_mut().zip(spec).zip(resp) {
                        *o = s * r;
                    }
                    self.fft.inverse_normalized(band);
                }
            });
        }
        Ok(())
    }

    fn check_stack(&self, c: &CoefficientStack) -> Result<()> {
        ensure_same_grid(&self.grid, c.grid())?;
        if c.m2() != self.m2 {
            return Err(Error::DimensionMismatch(format!(
                "stack has {} filters, bank has {}",
                c.m2(),
                self.m2
            )));
        }
        Ok(())
    }

    /// Adjoint of [`FrameTransform::analysis`].
    pub fn synthesis(&self, c: &CoefficientStack) -> Result<GradientSpectrum> {
        self.check_stack(c)?;
        self.synthesize(|b, m, work| work.copy_from_slice(c.band(b, m)))
    }

    /// `W* (a - b)` without forming the difference stack.
    pub fn synthesis_diff(&self, a: &CoefficientStack, b: &CoefficientStack) -> Result<GradientSpectrum> {
        self.check_stack(a)?;
        self.check_stack(b)?;
        self.synthesize(|comp, m, work| {
            for ((w, x), y) in work.iter_mut().zip(a.band(comp, m)).zip(b.band(comp, m)) {
                *w = x - y;
            }
        })
    }

    fn synthesize(&self, mut fill: impl FnMut(usize, usize, &mut [Complex64])) -> Result<GradientSpectrum> {
        let n = self.fft.len();
        let mut acc = [vec![ZERO; n], vec![ZERO; n]];
        let mut work = vec![ZERO; n];
        for m in 0..self.m2 {
            self.with_response(m, |resp| {
                for (b, a) in acc.iter_mut().enumerate() {
                    fill(b, m, &mut work);
                    self.fft.forward(&mut work);
                    for ((s, w), r) in a.iter_mut().zip(&work).zip(resp) {
                        *s += w * r.conj();
                    }
                }
            });
        }
        let [first, second] = acc.map(|mut a| {
            self.fft.inverse_normalized(&mut a);
            SpectralImage::from_raw(self.grid, a)
        });
        GradientSpectrum::new(first, second)
    }
}

pub fn analysis(bank: &FilterBank, g: &GradientSpectrum) -> Result<CoefficientStack> {
    FrameTransform::new(bank).analysis(g)
}

pub fn synthesis(bank: &FilterBank, c: &CoefficientStack) -> Result<GradientSpectrum> {
    FrameTransform::new(bank).synthesis(c)
}
