//! Degradation operators on Fourier samples and the spectral derivative.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::binio;
use crate::error::{Error, Result};
use crate::grid::{ensure_same_grid, GradientSpectrum, IndexGrid, SpectralImage};

#[derive(Clone, Debug, PartialEq)]
enum OpKind {
    Mask(Vec<bool>),
    Diagonal(Vec<Complex64>),
}

/// A diagonal operator on the Fourier samples of one grid: either a sampling
/// mask or a general pointwise complex multiplier. The DC sample always passes.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOp {
    grid: IndexGrid,
    kind: OpKind,
}

impl ForwardOp {
    pub fn from_mask(grid: IndexGrid, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.cardinality() {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} entries, grid has {}",
                mask.len(),
                grid.cardinality()
            )));
        }
        let dc = grid
            .offset((0, 0))
            .ok_or_else(|| Error::invalid("grid does not contain the DC index"))?;
        if !mask[dc] {
            return Err(Error::invalid("the DC sample must be measured"));
        }
        Ok(Self {
            grid,
            kind: OpKind::Mask(mask),
        })
    }

    /// A pointwise multiplier `(A v)(k) = m(k) v(k)`, e.g. a blur transfer function.
    pub fn diagonal(grid: IndexGrid, multiplier: Vec<Complex64>) -> Result<Self> {
        if multiplier.len() != grid.cardinality() {
            return Err(Error::DimensionMismatch(format!(
                "multiplier has {} entries, grid has {}",
                multiplier.len(),
                grid.cardinality()
            )));
        }
        if multiplier.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("multiplier must be finite"));
        }
        let dc = grid
            .offset((0, 0))
            .ok_or_else(|| Error::invalid("grid does not contain the DC index"))?;
        if multiplier[dc].norm() == 0.0 {
            return Err(Error::invalid("the multiplier must not vanish at DC"));
        }
        Ok(Self {
            grid,
            kind: OpKind::Diagonal(multiplier),
        })
    }

    pub fn identity(grid: IndexGrid) -> Result<Self> {
        Self::from_mask(grid, vec![true; grid.cardinality()])
    }

    pub fn grid(&self) -> &IndexGrid {
        &self.grid
    }

    /// The sampling mask, or `None` for a general multiplier.
    pub fn mask(&self) -> Option<&[bool]> {
        match &self.kind {
            OpKind::Mask(m) => Some(m),
            OpKind::Diagonal(_) => None,
        }
    }

    /// Number of entries with a nonzero multiplier.
    pub fn sampled_count(&self) -> usize {
        match &self.kind {
            OpKind::Mask(m) => m.iter().filter(|&&b| b).count(),
            OpKind::Diagonal(d) => d.iter().filter(|z| z.norm() != 0.0).count(),
        }
    }

    /// The pointwise multiplier `m(k)`.
    pub fn multiplier(&self, offset: usize) -> Complex64 {
        match &self.kind {
            OpKind::Mask(m) => Complex64::new(if m[offset] { 1.0 } else { 0.0 }, 0.0),
            OpKind::Diagonal(d) => d[offset],
        }
    }

    /// `|m(k)|^2`, the diagonal of `A* A`.
    pub fn gain_sqr(&self) -> Vec<f64> {
        match &self.kind {
            OpKind::Mask(m) => m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            OpKind::Diagonal(d) => d.iter().map(|z| z.norm_sqr()).collect(),
        }
    }

    pub fn apply(&self, v: &SpectralImage) -> Result<SpectralImage> {
        self.pointwise(v, false)
    }

    pub fn adjoint(&self, v: &SpectralImage) -> Result<SpectralImage> {
        self.pointwise(v, true)
    }

    fn pointwise(&self, v: &SpectralImage, conj: bool) -> Result<SpectralImage> {
        ensure_same_grid(&self.grid, v.grid())?;
        let values = match &self.kind {
            OpKind::Mask(m) => v
                .values()
                .iter()
                .zip(m)
                .map(|(&z, &b)| if b { z } else { Complex64::new(0.0, 0.0) })
                .collect(),
            OpKind::Diagonal(d) => v
                .values()
                .iter()
                .zip(d)
                .map(|(&z, &w)| if conj { z * w.conj() } else { z * w })
                .collect(),
        };
        Ok(SpectralImage::from_raw(self.grid, values))
    }

    /// The same operator on a sub-grid, e.g. the low-frequency block used for learning.
    pub fn restrict(&self, sub: &IndexGrid) -> Result<ForwardOp> {
        if !sub.is_subset_of(&self.grid) {
            return Err(Error::invalid(format!(
                "grid {} is not inside {}",
                sub.describe(),
                self.grid.describe()
            )));
        }
        let pick = |k| self.grid.offset(k).expect("subset");
        match &self.kind {
            OpKind::Mask(m) => Self::from_mask(*sub, sub.iter().map(|k| m[pick(k)]).collect()),
            OpKind::Diagonal(d) => Self::diagonal(*sub, sub.iter().map(|k| d[pick(k)]).collect()),
        }
    }

    /// Writes the MSK1 format. Only masks are representable.
    pub fn write_msk1<W: Write>(&self, w: &mut W) -> Result<()> {
        let mask = self
            .mask()
            .ok_or_else(|| Error::invalid("only sampling masks can be written as MSK1"))?;
        binio::write_magic(w, b"MSK1")?;
        binio::write_u32(w, binio::dim_to_u32(self.grid.n1(), "n1")?)?;
        binio::write_u32(w, binio::dim_to_u32(self.grid.n2(), "n2")?)?;
        let bytes: Vec<u8> = mask.iter().map(|&b| b as u8).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_msk1<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, b"MSK1", "MSK1")?;
        let n1 = binio::read_u32(r, "MSK1")? as usize;
        let n2 = binio::read_u32(r, "MSK1")? as usize;
        let grid = IndexGrid::centered(n1, n2).map_err(|e| Error::format("MSK1", e.to_string()))?;
        let mut bytes = vec![0u8; grid.cardinality()];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::format("MSK1", format!("truncated payload: {e}")))?;
        let mask = bytes
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::format("MSK1", format!("mask byte {other} is not 0/1"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        Self::from_mask(grid, mask).map_err(|e| Error::format("MSK1", e.to_string()))
    }
}

/// Samples exactly the centered `inner` block of `grid`.
pub fn lowpass_op(grid: &IndexGrid, inner: (usize, usize)) -> Result<ForwardOp> {
    let block = centered_block(grid, inner)?;
    let mask = grid.iter().map(|k| block.contains(k)).collect();
    ForwardOp::from_mask(*grid, mask)
}

fn centered_block(grid: &IndexGrid, inner: (usize, usize)) -> Result<IndexGrid> {
    if inner.0 > grid.n1() || inner.1 > grid.n2() {
        return Err(Error::invalid(format!(
            "inner block {}x{} exceeds the {}x{} grid",
            inner.0,
            inner.1,
            grid.n1(),
            grid.n2()
        )));
    }
    let block = IndexGrid::centered(inner.0, inner.1)?;
    if !block.is_subset_of(grid) {
        return Err(Error::invalid("inner block is not inside the grid"));
    }
    Ok(block)
}

/// Variable-density random sampling.
///
/// The centered `calib x calib` block is always sampled. The rest of the
/// budget `round(fraction * |grid|)` is drawn without replacement with weight
/// `(1 - r / r_max)^density_power`, `r = |k|`, `r_max = max |k| + 1`, using a
/// ChaCha20 stream seeded with `seed`.
pub fn random_mask(grid: &IndexGrid, fraction: f64, density_power: f64, calib: usize, seed: u64) -> Result<ForwardOp> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("sampling fraction {fraction} not in (0, 1]")));
    }
    if !(density_power >= 0.0) || !density_power.is_finite() {
        return Err(Error::invalid("density power must be finite and >= 0"));
    }
    if calib == 0 {
        return Err(Error::invalid("calibration size must be positive"));
    }
    let total = grid.cardinality();
    let budget = (fraction * total as f64).round() as usize;
    if budget < calib * calib {
        return Err(Error::invalid(format!(
            "budget of {budget} samples cannot hold a {calib}x{calib} calibration block"
        )));
    }
    if budget >= total {
        return ForwardOp::identity(*grid);
    }
    let block = centered_block(grid, (calib, calib))?;
    let mut mask: Vec<bool> = grid.iter().map(|k| block.contains(k)).collect();
    let remaining: Vec<usize> = (0..total).filter(|&o| !mask[o]).collect();
    let radius = |o: usize| {
        let (a, b) = grid.index(o);
        ((a * a + b * b) as f64).sqrt()
    };
    let r_max = (0..total).map(radius).fold(0.0, f64::max) + 1.0;
    let weights: Vec<f64> = remaining
        .iter()
        .map(|&o| (1.0 - radius(o) / r_max).powf(density_power))
        .collect();
    let amount = budget - calib * calib;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample_weighted(&mut rng, remaining.len(), |i| weights[i], amount)
        .map_err(|e| Error::invalid(format!("weighted sampling failed: {e}")))?;
    for i in picked {
        mask[remaining[i]] = true;
    }
    ForwardOp::from_mask(*grid, mask)
}

/// `(2 pi i k1 v, 2 pi i k2 v)`.
pub fn deriv(v: &SpectralImage) -> GradientSpectrum {
    let grid = *v.grid();
    let mut first = Vec::with_capacity(grid.cardinality());
    let mut second = Vec::with_capacity(grid.cardinality());
    for (k, &z) in grid.iter().zip(v.values()) {
        first.push(z * Complex64::new(0.0, 2.0 * PI * k.0 as f64));
        second.push(z * Complex64::new(0.0, 2.0 * PI * k.1 as f64));
    }
    GradientSpectrum::new(
        SpectralImage::from_raw(grid, first),
        SpectralImage::from_raw(grid, second),
    )
    .expect("same grid")
}

/// Adjoint of [`deriv`]: `-2 pi i k1 g1 - 2 pi i k2 g2`.
pub fn deriv_adjoint(g: &GradientSpectrum) -> SpectralImage {
    let grid = *g.grid();
    let values = grid
        .iter()
        .zip(g.first().values().iter().zip(g.second().values()))
        .map(|(k, (&a, &b))| {
            a * Complex64::new(0.0, -2.0 * PI * k.0 as f64) + b * Complex64::new(0.0, -2.0 * PI * k.1 as f64)
        })
        .collect();
    SpectralImage::from_raw(grid, values)
}

/// Diagonal of `D* D`: `4 pi^2 |k|^2` per grid index.
pub fn deriv_normal_diagonal(grid: &IndexGrid) -> Vec<f64> {
    grid.iter()
        .map(|(a, b)| 4.0 * PI * PI * ((a * a + b * b) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use proptest::prelude::*;

    fn pseudo_random(grid: IndexGrid, seed: f64) -> SpectralImage {
        SpectralImage::from_fn(grid, |(a, b)| {
            let t = seed + a as f64 * 1.3 + b as f64 * 0.7;
            Complex64::new((t * 2.1).sin(), (t * 0.9 + 0.5).cos())
        })
    }

    #[test]
    fn lowpass_examples() {
        let g = make_grid(256, 256).unwrap();
        assert_eq!(lowpass_op(&g, (65, 65)).unwrap().sampled_count(), 4225);
        assert_eq!(lowpass_op(&g, (256, 256)).unwrap().sampled_count(), g.cardinality());
        let dc = lowpass_op(&g, (1, 1)).unwrap();
        assert_eq!(dc.sampled_count(), 1);
        assert!(dc.mask().unwrap()[g.offset((0, 0)).unwrap()]);
        assert!(lowpass_op(&g, (257, 3)).is_err());
    }

    #[test]
    fn random_mask_examples() {
        let g = make_grid(256, 256).unwrap();
        let m = random_mask(&g, 0.2, 3.0, 12, 5).unwrap();
        assert_eq!(m.sampled_count(), 13107);
        let calib = make_grid(12, 12).unwrap();
        for k in calib.iter() {
            assert!(m.mask().unwrap()[g.offset(k).unwrap()]);
        }
        assert_eq!(m, random_mask(&g, 0.2, 3.0, 12, 5).unwrap());
        assert_ne!(m, random_mask(&g, 0.2, 3.0, 12, 6).unwrap());
        assert_eq!(
            random_mask(&g, 1.0, 3.0, 12, 5).unwrap().sampled_count(),
            g.cardinality()
        );
        assert!(random_mask(&make_grid(16, 16).unwrap(), 0.1, 3.0, 12, 0).is_err());
    }

    #[test]
    fn random_mask_prefers_low_frequencies() {
        let g = make_grid(64, 64).unwrap();
        let m = random_mask(&g, 0.3, 3.0, 12, 1).unwrap();
        let mask = m.mask().unwrap();
        let inner = g.iter().zip(mask).filter(|((a, b), _)| a.abs() < 16 && b.abs() < 16);
        let (hit, n) = inner.fold((0, 0), |(h, n), (_, &s)| (h + s as usize, n + 1));
        assert!(hit as f64 / n as f64 > 0.3);
    }

    #[test]
    fn projection_properties() {
        let g = make_grid(9, 8).unwrap();
        let op = random_mask(&g, 0.5, 2.0, 3, 11).unwrap();
        let u = pseudo_random(g, 0.3);
        let w = pseudo_random(g, 1.9);
        let once = op.apply(&u).unwrap();
        assert_eq!(op.apply(&once).unwrap(), once);
        let lhs = op.apply(&u).unwrap().inner(&w).unwrap();
        let rhs = u.inner(&op.apply(&w).unwrap()).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);
        let id = ForwardOp::identity(g).unwrap();
        assert_eq!(id.apply(&u).unwrap(), u);
    }

    #[test]
    fn diagonal_adjoint() {
        let g = make_grid(7, 7).unwrap();
        let m = pseudo_random(g, 4.0).into_values();
        let op = ForwardOp::diagonal(g, m).unwrap();
        let u = pseudo_random(g, 0.1);
        let w = pseudo_random(g, 2.2);
        let lhs = op.apply(&u).unwrap().inner(&w).unwrap();
        let rhs = u.inner(&op.adjoint(&w).unwrap()).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);
        let mut zero_dc = vec![Complex64::new(1.0, 0.0); g.cardinality()];
        zero_dc[g.offset((0, 0)).unwrap()] = Complex64::new(0.0, 0.0);
        assert!(ForwardOp::diagonal(g, zero_dc).is_err());
    }

    #[test]
    fn dc_must_be_sampled() {
        let g = make_grid(4, 4).unwrap();
        let mut mask = vec![true; 16];
        mask[g.offset((0, 0)).unwrap()] = false;
        assert!(ForwardOp::from_mask(g, mask).is_err());
    }

    #[test]
    fn deriv_examples() {
        let g = make_grid(5, 5).unwrap();
        let delta = SpectralImage::from_fn(g, |k| Complex64::new(if k == (0, 0) { 1.0 } else { 0.0 }, 0.0));
        assert_eq!(deriv(&delta).norm_sqr(), 0.0);
        let ones = SpectralImage::from_fn(g, |_| Complex64::new(1.0, 0.0));
        let d = deriv(&ones);
        assert_eq!(d.first().get((1, 2)).unwrap(), Complex64::new(0.0, 2.0 * PI));
        assert_eq!(d.second().get((1, 2)).unwrap(), Complex64::new(0.0, 4.0 * PI));
        let dd = deriv_adjoint(&deriv(&ones));
        assert!((dd.get((1, 1)).unwrap().re - 8.0 * PI * PI).abs() < 1e-12);
        assert_eq!(dd.get((0, 0)).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn deriv_norm_and_adjoint() {
        let g = make_grid(8, 7).unwrap();
        let v = pseudo_random(g, 0.2);
        let expected: f64 = g
            .iter()
            .zip(v.values())
            .map(|((a, b), z)| 4.0 * PI * PI * ((a * a + b * b) as f64) * z.norm_sqr())
            .sum();
        assert!((deriv(&v).norm_sqr() - expected).abs() < 1e-10 * expected);
        let w = GradientSpectrum::new(pseudo_random(g, 1.0), pseudo_random(g, 3.0)).unwrap();
        let lhs = deriv(&v).inner(&w).unwrap();
        let rhs = v.inner(&deriv_adjoint(&w)).unwrap();
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn msk1_round_trip_and_errors() {
        let g = make_grid(6, 5).unwrap();
        let op = random_mask(&g, 0.6, 1.0, 2, 3).unwrap();
        let mut buf = Vec::new();
        op.write_msk1(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MSK1");
        assert_eq!(buf.len(), 12 + 30);
        assert_eq!(ForwardOp::read_msk1(&mut buf.as_slice()).unwrap(), op);
        let mut bad = buf.clone();
        bad[12] = 7;
        assert!(ForwardOp::read_msk1(&mut bad.as_slice()).is_err());
        assert!(ForwardOp::read_msk1(&mut &buf[..20]).is_err());
    }

    proptest! {
        #[test]
        fn normal_operator_is_diagonal(n1 in 1usize..10, n2 in 1usize..10, s in 0.0f64..10.0) {
            let g = make_grid(n1, n2).unwrap();
            let v = pseudo_random(g, s);
            let dd = deriv_adjoint(&deriv(&v));
            let diag = deriv_normal_diagonal(&g);
            for i in 0..g.cardinality() {
                let want = v.values()[i] * diag[i];
                prop_assert!((dd.values()[i] - want).norm() <= 1e-12 * want.norm().max(1.0));
            }
        }
    }
}
