//! Two-fold Hankel lifting of gradient spectra and its fast products.
//!
//! For a sample grid `O` and a filter grid `K`, the lifted matrix has rows
//! indexed by the valid region `O:K` (once per gradient component, component 1
//! on top) and columns by `K`, with entry `w(k + l)`. Rows and columns follow
//! the row-major order of their index grids.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{embed_periodic, Fft2};
use crate::grid::{ensure_same_grid, GradientSpectrum, IndexGrid, SpectralImage};

pub type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Index bookkeeping for one (sample grid, filter grid) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HankelShape {
    sample_grid: IndexGrid,
    filter_grid: IndexGrid,
    valid_grid: IndexGrid,
}

impl HankelShape {
    /// Filter grids must be centered with odd sides so they are symmetric.
    pub fn new(sample_grid: IndexGrid, filter_grid: IndexGrid) -> Result<Self> {
        if filter_grid.n1().is_multiple_of(2) || filter_grid.n2().is_multiple_of(2) || !filter_grid.is_centered() {
            return Err(Error::invalid(format!(
                "filter grid {} must be centered with odd sides",
                filter_grid.describe()
            )));
        }
        let valid_grid = sample_grid.contract(&filter_grid)?;
        Ok(Self {
            sample_grid,
            filter_grid,
            valid_grid,
        })
    }

    pub fn sample_grid(&self) -> &IndexGrid {
        &self.sample_grid
    }

    pub fn filter_grid(&self) -> &IndexGrid {
        &self.filter_grid
    }

    /// The valid region `O:K`.
    pub fn valid_grid(&self) -> &IndexGrid {
        &self.valid_grid
    }

    pub fn m1(&self) -> usize {
        self.valid_grid.cardinality()
    }

    pub fn m2(&self) -> usize {
        self.filter_grid.cardinality()
    }

    /// `(2 m1, m2)`.
    pub fn matrix_dims(&self) -> (usize, usize) {
        (2 * self.m1(), self.m2())
    }
}

/// Dense lifted matrix. Quadratic memory; the fast products below avoid it.
pub fn build_dense(g: &GradientSpectrum, shape: &HankelShape) -> Result<CMatrix> {
    ensure_same_grid(shape.sample_grid(), g.grid())?;
    let (m1, m2) = (shape.m1(), shape.m2());
    let mut h = CMatrix::zeros(2 * m1, m2);
    for b in 0..2 {
        let comp = g.component(b);
        for (row, k) in shape.valid_grid.iter().enumerate() {
            for (col, l) in shape.filter_grid.iter().enumerate() {
                h[(b * m1 + row, col)] = comp.get((k.0 + l.0, k.1 + l.1)).expect("valid region");
            }
        }
    }
    Ok(h)
}

/// Adjoint of the lifting: accumulates each entry of a `2 m1 x m2` matrix onto
/// grid position `k + l` of its component.
pub fn unlift_dense(z: &CMatrix, shape: &HankelShape) -> Result<GradientSpectrum> {
    let (rows, cols) = shape.matrix_dims();
    if z.nrows() != rows || z.ncols() != cols {
        return Err(Error::DimensionMismatch(format!(
            "expected a {rows}x{cols} matrix, got {}x{}",
            z.nrows(),
            z.ncols()
        )));
    }
    let grid = shape.sample_grid;
    let m1 = shape.m1();
    let mut out = GradientSpectrum::zeros(grid);
    for b in 0..2 {
        let vals = out.component_values_mut(b);
        for (row, k) in shape.valid_grid.iter().enumerate() {
            for (col, l) in shape.filter_grid.iter().enumerate() {
                let o = grid.offset((k.0 + l.0, k.1 + l.1)).expect("valid region");
                vals[o] += z[(b * m1 + row, col)];
            }
        }
    }
    Ok(out)
}

/// Number of (row, column) pairs of the lifting that read grid index `k`.
/// The normal operator `H* H` is multiplication by this count.
pub fn patch_count_weights(shape: &HankelShape) -> Vec<f64> {
    let axis = |a: usize| -> Vec<f64> {
        shape
            .sample_grid
            .axis_range(a)
            .map(|k| {
                shape
                    .filter_grid
                    .axis_range(a)
                    .filter(|l| shape.valid_grid.axis_range(a).contains(&(k - l)))
                    .count() as f64
            })
            .collect()
    };
    let (w1, w2) = (axis(0), axis(1));
    w1.iter().flat_map(|a| w2.iter().map(move |b| a * b)).collect()
}

/// FFT-based products with the lifted matrix of one gradient spectrum.
///
/// All correlations are circular over the sample grid. Reads are restricted to
/// the valid region, where no index wraps, so the results are exact.
pub struct FastHankel {
    shape: HankelShape,
    fft: Fft2,
    spectra: [Vec<Complex64>; 2],
    frob_sqr: f64,
}

impl FastHankel {
    pub fn new(g: &GradientSpectrum, shape: &HankelShape) -> Result<Self> {
        ensure_same_grid(shape.sample_grid(), g.grid())?;
        let (n1, n2) = shape.sample_grid.dims();
        let fft = Fft2::new(n1, n2);
        let spectra = [0, 1].map(|b| {
            let mut buf = g.component(b).values().to_vec();
            fft.forward(&mut buf);
            buf
        });
        let weights = patch_count_weights(shape);
        let frob_sqr = (0..2)
            .map(|b| {
                g.component(b)
                    .values()
                    .iter()
                    .zip(&weights)
                    .map(|(z, w)| w * z.norm_sqr())
                    .sum::<f64>()
            })
            .sum();
        Ok(Self {
            shape: *shape,
            fft,
            spectra,
            frob_sqr,
        })
    }

    pub fn shape(&self) -> &HankelShape {
        &self.shape
    }

    /// `||H||_F^2`, from the patch counts.
    pub fn frobenius_sqr(&self) -> f64 {
        self.frob_sqr
    }

    fn natural_pos(&self, k: (i64, i64)) -> usize {
        let g = &self.shape.sample_grid;
        let p1 = (k.0 - g.lo(0)) as usize;
        let p2 = (k.1 - g.lo(1)) as usize;
        p1 * g.n2() + p2
    }

    fn embed_filter(&self, column: impl Iterator<Item = Complex64>) -> Vec<Complex64> {
        let (n1, n2) = self.shape.sample_grid.dims();
        embed_periodic(n1, n2, self.shape.filter_grid.iter().zip(column))
    }

    /// Embeds a block of `m1` values at the natural positions of the valid region.
    fn embed_valid(&self, block: impl Iterator<Item = Complex64>) -> Vec<Complex64> {
        let mut buf = vec![ZERO; self.fft.len()];
        for (k, z) in self.shape.valid_grid.iter().zip(block) {
            buf[self.natural_pos(k)] = z;
        }
        buf
    }

    /// `H(g) B` for an `m2 x p` matrix `B`.
    pub fn lift_times_filters(&self, bank: &CMatrix) -> Result<CMatrix> {
        self.check_rows(bank.nrows(), self.shape.m2(), "filter matrix")?;
        let m1 = self.shape.m1();
        let mut out = CMatrix::zeros(2 * m1, bank.ncols());
        let mut work = vec![ZERO; self.fft.len()];
        for j in 0..bank.ncols() {
            let mut x = self.embed_filter(bank.column(j).iter().map(|z| z.conj()));
            self.fft.forward(&mut x);
            for (b, spec) in self.spectra.iter().enumerate() {
                for ((w, s), f) in work.iter_mut().zip(spec).zip(&x) {
                    *w = s * f.conj();
                }
                self.fft.inverse_normalized(&mut work);
                for (row, k) in self.shape.valid_grid.iter().enumerate() {
                    out[(b * m1 + row, j)] = work[self.natural_pos(k)];
                }
            }
        }
        Ok(out)
    }

    /// `H(g)* C` for a `2 m1 x p` matrix `C`.
    pub fn lift_adjoint_times(&self, c: &CMatrix) -> Result<CMatrix> {
        let m1 = self.shape.m1();
        self.check_rows(c.nrows(), 2 * m1, "coefficient matrix")?;
        let (n1, n2) = self.shape.sample_grid.dims();
        let mut out = CMatrix::zeros(self.shape.m2(), c.ncols());
        let mut acc = vec![ZERO; self.fft.len()];
        for j in 0..c.ncols() {
            acc.iter_mut().for_each(|z| *z = ZERO);
            for (b, spec) in self.spectra.iter().enumerate() {
                let mut y = self.embed_valid(c.column(j).rows(b * m1, m1).iter().copied());
                self.fft.forward(&mut y);
                for ((a, s), f) in acc.iter_mut().zip(spec).zip(&y) {
                    *a += s * f.conj();
                }
            }
            self.fft.inverse_normalized(&mut acc);
            for (row, l) in self.shape.filter_grid.iter().enumerate() {
                let q1 = l.0.rem_euclid(n1 as i64) as usize;
                let q2 = l.1.rem_euclid(n2 as i64) as usize;
                out[(row, j)] = acc[q1 * n2 + q2].conj();
            }
        }
        Ok(out)
    }

    fn check_rows(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return Err(Error::DimensionMismatch(format!(
                "{what} has {got} rows, expected {want}"
            )));
        }
        Ok(())
    }
}

/// Adjoint of `g -> H(g) B` applied to `C`: component `b` at `j` is
/// `sum_m sum_{k + l = j} C_b(k, m) conj(B(l, m))`.
pub fn unlift_product(c: &CMatrix, bank: &CMatrix, shape: &HankelShape) -> Result<GradientSpectrum> {
    let m1 = shape.m1();
    if c.nrows() != 2 * m1 || bank.nrows() != shape.m2() || c.ncols() != bank.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients {}x{} and filters {}x{} do not fit a {}x{} lifting",
            c.nrows(),
            c.ncols(),
            bank.nrows(),
            bank.ncols(),
            2 * m1,
            shape.m2()
        )));
    }
    let grid = shape.sample_grid;
    let (n1, n2) = grid.dims();
    let fft = Fft2::new(n1, n2);
    let mut acc = [vec![ZERO; n1 * n2], vec![ZERO; n1 * n2]];
    for j in 0..bank.ncols() {
        let mut f = embed_periodic(
            n1,
            n2,
            shape.filter_grid.iter().zip(bank.column(j).iter().map(|z| z.conj())),
        );
        fft.forward(&mut f);
        for (b, a) in acc.iter_mut().enumerate() {
            let mut y = vec![ZERO; n1 * n2];
            for (k, &z) in shape.valid_grid.iter().zip(c.column(j).rows(b * m1, m1).iter()) {
                let p1 = (k.0 - grid.lo(0)) as usize;
                let p2 = (k.1 - grid.lo(1)) as usize;
                y[p1 * n2 + p2] = z;
            }
            fft.forward(&mut y);
            for ((s, u), w) in a.iter_mut().zip(&y).zip(&f) {
                *s += u * w;
            }
        }
    }
    let comps = acc.map(|mut a| {
        fft.inverse_normalized(&mut a);
        SpectralImage::from_raw(grid, a)
    });
    let [first, second] = comps;
    GradientSpectrum::new(first, second)
}

/// `||H(g) a|| / (||H(g)||_F ||a|| + tiny)`, a scale-free annihilation measure.
pub fn annihilation_residual(g: &GradientSpectrum, filter: &[Complex64], shape: &HankelShape) -> Result<f64> {
    if filter.len() != shape.m2() {
        return Err(Error::DimensionMismatch(format!(
            "filter has {} taps, filter grid has {}",
            filter.len(),
            shape.m2()
        )));
    }
    let fast = FastHankel::new(g, shape)?;
    let a = CMatrix::from_column_slice(filter.len(), 1, filter);
    let ha = fast.lift_times_filters(&a)?;
    let denom = fast.frobenius_sqr().sqrt() * a.norm() + f64::MIN_POSITIVE;
    Ok(ha.norm() / denom)
}

/// `|K'| - |K':K|`, an upper bound on the rank of the lifting with filter grid
/// `K'` when a filter on `K` annihilates the data.
pub fn rank_upper_bound(extended: &IndexGrid, minimal: &IndexGrid) -> Result<usize> {
    let inner = extended.contract(minimal)?;
    Ok(extended.cardinality() - inner.cardinality())
}

/// Whether the lifting has at least as many rows as the annihilating subspace
/// dimension: `2 (N - K1)(N - K2) >= (K1 + 1)(K2 + 1) - 1`.
pub fn necessary_condition(n: usize, k1: usize, k2: usize) -> bool {
    let rows = 2 * n.saturating_sub(k1) * n.saturating_sub(k2);
    rows + 1 >= (k1 + 1) * (k2 + 1)
}

/// Number of singular values above `rel_tol * sigma_1`.
pub fn numerical_rank(singular_values: &[f64], rel_tol: f64) -> usize {
    let s1 = singular_values.iter().copied().fold(0.0, f64::max);
    if s1 == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > rel_tol * s1).count()
}
