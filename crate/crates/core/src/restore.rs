//! Stage two: restoration of the full set of Fourier samples.
//!
//! [`split_bregman`] solves `min 1/2 ||A v - f||^2 + ||gamma . W(D v)||_1`
//! with the learned tight frame `W`. [`lslp`] is the quadratic baseline that
//! penalizes only the annihilating bands, and [`ifft_baseline`] zero-fills.

use std::fmt::Write as _;
use std::time::Instant;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::forward::{deriv, deriv_adjoint, deriv_normal_diagonal, ForwardOp};
use crate::framebank::{weights, CoefficientStack, FilterBank, FrameTransform};
use crate::grid::{ensure_same_grid, IndexGrid, SpectralImage};
use crate::image::Image;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Thresholding {
    Soft,
    Hard,
}

/// Where the coefficient penalty applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyRegion {
    /// Every index of the periodic coefficient grid.
    Full,
    /// Only indices `k` with `k + K` inside the sample grid. The wrap-around
    /// band mixes opposite ends of the spectrum, where annihilation does not hold.
    Valid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestoreConfig {
    pub beta: f64,
    pub nu: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Required relative constraint residual `||W(D v) - c|| / ||W(D v)||` at termination.
    pub constraint_tol: f64,
    pub thresholding: Thresholding,
    pub region: PenaltyRegion,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            beta: 1e-3,
            nu: 1e-6,
            eps: 1e-3,
            max_iters: 300,
            rel_tol: 1e-5,
            constraint_tol: 1e-4,
            thresholding: Thresholding::Soft,
            region: PenaltyRegion::Valid,
        }
    }
}

impl RestoreConfig {
    fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.eps > 0.0) || !(self.nu >= 0.0) {
            return Err(Error::invalid("need nu >= 0 and eps > 0"));
        }
        if !(self.rel_tol >= 0.0) || !(self.constraint_tol >= 0.0) {
            return Err(Error::invalid("tolerances must be >= 0"));
        }
        Ok(())
    }
}

/// `max(|z| - t_m, 0) z / |z|` per entry, with `0/0 = 0`. `t` has one entry per filter.
pub fn soft_threshold(c: &CoefficientStack, t: &[f64]) -> Result<CoefficientStack> {
    shrink(c, t, None, soft)
}

/// Keeps entries with `|z| > t_m` and zeroes the rest.
pub fn hard_threshold(c: &CoefficientStack, t: &[f64]) -> Result<CoefficientStack> {
    shrink(c, t, None, hard)
}

/// `|z|` without the overflow guard of `hypot`; coefficients are far from the range limits.
fn abs(z: Complex64) -> f64 {
    z.norm_sqr().sqrt()
}

fn soft(z: Complex64, t: f64) -> Complex64 {
    let a = abs(z);
    if a > t {
        z * ((a - t) / a)
    } else {
        ZERO
    }
}

fn hard(z: Complex64, t: f64) -> Complex64 {
    if abs(z) > t {
        z
    } else {
        ZERO
    }
}

/// Applies `f` per entry; with a mask, unmasked positions pass through unchanged.
fn shrink(
    c: &CoefficientStack,
    t: &[f64],
    mask: Option<&[bool]>,
    f: impl Fn(Complex64, f64) -> Complex64,
) -> Result<CoefficientStack> {
    if t.len() != c.m2() {
        return Err(Error::DimensionMismatch(format!(
            "{} thresholds for {} filters",
            t.len(),
            c.m2()
        )));
    }
    let mut out = c.clone();
    for b in 0..2 {
        for (m, &tm) in t.iter().enumerate() {
            let band = out.band_mut(b, m);
            match mask {
                None => band.iter_mut().for_each(|z| *z = f(*z, tm)),
                Some(mask) => band
                    .iter_mut()
                    .zip(mask)
                    .filter(|(_, &keep)| keep)
                    .for_each(|(z, _)| *z = f(*z, tm)),
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestoreRecord {
    pub iter: usize,
    pub objective: f64,
    pub data_misfit: f64,
    pub l1_term: f64,
    /// `||W(D v) - c|| / ||W(D v)||`.
    pub constraint_residual: f64,
    pub rel_change: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RestoreTrace {
    pub records: Vec<RestoreRecord>,
}

impl RestoreTrace {
    /// With `timing` off the time column is written as 0 so output is reproducible.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s = String::from("iter,objective,data_misfit,l1_term,constraint_residual,rel_change,wall_ms\n");
        for r in &self.records {
            let ms = if timing { r.wall_ms } else { 0.0 };
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{:.3}",
                r.iter, r.objective, r.data_misfit, r.l1_term, r.constraint_residual, r.rel_change, ms
            );
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct RestoreOutput {
    pub v: SpectralImage,
    pub iters: usize,
    pub converged: bool,
    pub trace: RestoreTrace,
}

/// Split Bregman iteration state, exposed so individual updates can be checked.
pub struct SplitBregman<'a> {
    f: &'a SpectralImage,
    op: &'a ForwardOp,
    cfg: RestoreConfig,
    transform: FrameTransform,
    gamma: Vec<f64>,
    thresholds: Vec<f64>,
    /// Penalized coefficient positions; `None` means all.
    region: Option<Vec<bool>>,
    adj_f: SpectralImage,
    denom: Vec<f64>,
    v: SpectralImage,
    c: CoefficientStack,
    d: CoefficientStack,
    /// Reused buffer for `W(D v)`.
    wdv: CoefficientStack,
}

impl<'a> SplitBregman<'a> {
    /// Starts from `v = A* f`, `c = W(D v)`, `d = 0`.
    pub fn new(f: &'a SpectralImage, op: &'a ForwardOp, bank: &FilterBank, cfg: &RestoreConfig) -> Result<Self> {
        cfg.validate()?;
        ensure_same_grid(op.grid(), f.grid())?;
        ensure_same_grid(bank.sample_grid(), f.grid())?;
        if !f.is_finite() {
            return Err(Error::invalid("measurements must be finite"));
        }
        let transform = FrameTransform::new(bank);
        let gamma = weights(bank, cfg.nu, cfg.eps)?;
        let thresholds = gamma.iter().map(|g| g / cfg.beta).collect();
        let region = penalty_mask(f.grid(), bank.filter_grid(), cfg.region)?;
        let adj_f = op.adjoint(f)?;
        let denom = op
            .gain_sqr()
            .iter()
            .zip(deriv_normal_diagonal(f.grid()))
            .map(|(a, d)| a + cfg.beta * d)
            .collect();
        let v = adj_f.clone();
        let c = transform.analysis(&deriv(&v))?;
        let d = CoefficientStack::zeros(*f.grid(), bank.m2());
        let wdv = c.clone();
        Ok(Self {
            f,
            op,
            cfg: cfg.clone(),
            transform,
            gamma,
            thresholds,
            region,
            adj_f,
            denom,
            v,
            c,
            d,
            wdv,
        })
    }

    pub fn v(&self) -> &SpectralImage {
        &self.v
    }

    pub fn c(&self) -> &CoefficientStack {
        &self.c
    }

    pub fn d(&self) -> &CoefficientStack {
        &self.d
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn transform(&self) -> &FrameTransform {
        &self.transform
    }

    /// `v = (A*A + beta D*D)^{-1} (A* f + beta D* W* (c - d))`, pointwise.
    pub fn v_update(&self) -> Result<SpectralImage> {
        let back = deriv_adjoint(&self.transform.synthesis_diff(&self.c, &self.d)?);
        let values = (0..self.denom.len())
            .map(|i| (self.adj_f.values()[i] + back.values()[i] * self.cfg.beta) / self.denom[i])
            .collect();
        Ok(SpectralImage::from_raw(*self.v.grid(), values))
    }

    /// Thresholding of `W(D v) + d`.
    pub fn c_update(&self, wdv: &CoefficientStack) -> Result<CoefficientStack> {
        let z = wdv.add_scaled(1.0, &self.d)?;
        let mask = self.region.as_deref();
        match self.cfg.thresholding {
            Thresholding::Soft => shrink(&z, &self.thresholds, mask, soft),
            Thresholding::Hard => shrink(&z, &self.thresholds, mask, hard),
        }
    }

    /// `sum_m gamma_m sum |c_{l,m}(k)|` over the penalized positions.
    pub fn l1_term(&self, c: &CoefficientStack) -> f64 {
        let mut s = 0.0;
        for b in 0..2 {
            for (m, g) in self.gamma.iter().enumerate() {
                let band = c.band(b, m);
                let sum: f64 = match &self.region {
                    None => band.iter().map(|z| z.norm()).sum(),
                    Some(mask) => band.iter().zip(mask).filter(|(_, &k)| k).map(|(z, _)| z.norm()).sum(),
                };
                s += g * sum;
            }
        }
        s
    }

    /// One full sweep. Returns the trace record without timing.
    pub fn step(&mut self, iter: usize) -> Result<RestoreRecord> {
        let v_new = self.v_update()?;
        if !v_new.is_finite() {
            return Err(Error::Numerical(format!("restoration diverged at iteration {iter}")));
        }
        self.transform.analysis_into(&deriv(&v_new), &mut self.wdv)?;
        let n = self.v.grid().cardinality();
        let m2 = self.gamma.len();
        let f = match self.cfg.thresholding {
            Thresholding::Soft => soft,
            Thresholding::Hard => hard,
        };
        // c-step, d-step and bookkeeping in one pass over the stack.
        let (mut viol_sqr, mut wdv_sqr, mut l1) = (0.0, 0.0, 0.0);
        let chunks = self
            .wdv
            .as_slice()
            .chunks(n)
            .zip(self.c.as_mut_slice().chunks_mut(n))
            .zip(self.d.as_mut_slice().chunks_mut(n));
        for (band, ((w, c), d)) in chunks.enumerate() {
            let m = band % m2;
            let (gamma, t) = (self.gamma[m], self.thresholds[m]);
            let mut band_l1 = 0.0;
            for (p, ((&x, c), d)) in w.iter().zip(c).zip(d).enumerate() {
                let z = x + *d;
                let c_new = if self.region.as_ref().is_none_or(|mask| mask[p]) {
                    band_l1 += abs(x);
                    f(z, t)
                } else {
                    z
                };
                let viol = x - c_new;
                *d += viol;
                *c = c_new;
                viol_sqr += viol.norm_sqr();
                wdv_sqr += x.norm_sqr();
            }
            l1 += gamma * band_l1;
        }
        let diff = v_new.sub(&self.v)?.norm();
        let vn = v_new.norm();
        let rel_change = if vn > 0.0 { diff / vn } else { 0.0 };
        let data_misfit = 0.5 * self.op.apply(&v_new)?.sub(self.f)?.norm_sqr();
        let constraint_residual = if wdv_sqr > 0.0 {
            (viol_sqr / wdv_sqr).sqrt()
        } else {
            viol_sqr.sqrt()
        };
        self.v = v_new;
        Ok(RestoreRecord {
            iter,
            objective: data_misfit + l1,
            data_misfit,
            l1_term: l1,
            constraint_residual,
            rel_change,
            wall_ms: 0.0,
        })
    }

    pub fn into_v(self) -> SpectralImage {
        self.v
    }
}

fn penalty_mask(grid: &IndexGrid, filter_grid: &IndexGrid, region: PenaltyRegion) -> Result<Option<Vec<bool>>> {
    match region {
        PenaltyRegion::Full => Ok(None),
        PenaltyRegion::Valid => {
            let valid = grid.contract(filter_grid)?;
            Ok(Some(grid.iter().map(|k| valid.contains(k)).collect()))
        }
    }
}

/// Weighted-l1 analysis restoration by split Bregman.
///
/// Stops when the relative change of `v` drops to `rel_tol` and the relative
/// constraint residual is at most `constraint_tol`, or after `max_iters`.
/// The first condition alone is met almost immediately when starting from
/// the zero-filled data, so both are required.
pub fn split_bregman(
    f: &SpectralImage,
    op: &ForwardOp,
    bank: &FilterBank,
    cfg: &RestoreConfig,
) -> Result<RestoreOutput> {
    let mut sb = SplitBregman::new(f, op, bank, cfg)?;
    let mut trace = RestoreTrace::default();
    let mut converged = false;
    let mut iters = 0;
    for it in 1..=cfg.max_iters {
        let t0 = Instant::now();
        let mut rec = sb.step(it)?;
        rec.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        iters = it;
        let done = rec.rel_change <= cfg.rel_tol && rec.constraint_residual <= cfg.constraint_tol;
        trace.records.push(rec);
        if done {
            converged = true;
            break;
        }
    }
    Ok(RestoreOutput {
        v: sb.into_v(),
        iters,
        converged,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LslpConfig {
    /// Filters `rank+1..m2` are penalized.
    pub rank: usize,
    pub gamma: f64,
    pub cg_tol: f64,
    pub cg_max: usize,
    pub region: PenaltyRegion,
}

#[derive(Clone, Debug)]
pub struct LslpOutput {
    pub v: SpectralImage,
    pub iterations: usize,
    /// Final `||b - M v|| / ||b||`.
    pub residual: f64,
    pub converged: bool,
}

/// The normal operator `A*A + gamma D* (sum_{m>r} W_m* P W_m) D`, where `P`
/// restricts to the penalty region.
pub struct LslpOperator {
    grid: IndexGrid,
    gain: Vec<f64>,
    gamma: f64,
    fft: Fft2,
    penalty: NullPenalty,
}

enum NullPenalty {
    /// `sum_{m>r} |response_m|^2` at natural DFT positions; `W_m* W_m` is diagonal there.
    Full(Vec<f64>),
    /// Per-filter responses and the mask of penalized positions.
    Masked {
        responses: Vec<Vec<Complex64>>,
        mask: Vec<bool>,
    },
}

impl LslpOperator {
    pub fn new(op: &ForwardOp, bank: &FilterBank, rank: usize, gamma: f64, region: PenaltyRegion) -> Result<Self> {
        ensure_same_grid(op.grid(), bank.sample_grid())?;
        if rank > bank.m2() {
            return Err(Error::invalid(format!("rank {rank} exceeds {} filters", bank.m2())));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::invalid("gamma must be finite and >= 0"));
        }
        let grid = *bank.sample_grid();
        let (n1, n2) = grid.dims();
        let fft = Fft2::new(n1, n2);
        // Multiplier of correlation with a_m: conj(FFT(conj a_m)).
        let responses: Vec<Vec<Complex64>> = (rank..bank.m2())
            .map(|m| {
                let mut x = crate::fft::embed_periodic(
                    n1,
                    n2,
                    bank.filter_grid()
                        .iter()
                        .zip(bank.filters().column(m).iter().map(|z| z.conj())),
                );
                fft.forward(&mut x);
                x.iter_mut().for_each(|z| *z = z.conj());
                x
            })
            .collect();
        let penalty = match penalty_mask(&grid, bank.filter_grid(), region)? {
            None => {
                let mut power = vec![0.0; n1 * n2];
                for r in &responses {
                    power.iter_mut().zip(r).for_each(|(p, z)| *p += z.norm_sqr());
                }
                NullPenalty::Full(power)
            }
            Some(mask) => NullPenalty::Masked { responses, mask },
        };
        Ok(Self {
            grid,
            gain: op.gain_sqr(),
            gamma,
            fft,
            penalty,
        })
    }

    fn penalize(&self, c: &mut [Complex64]) {
        self.fft.forward(c);
        match &self.penalty {
            NullPenalty::Full(power) => c.iter_mut().zip(power).for_each(|(z, p)| *z *= *p),
            NullPenalty::Masked { responses, mask } => {
                let mut acc = vec![ZERO; c.len()];
                let mut band = vec![ZERO; c.len()];
                for r in responses {
                    band.iter_mut().zip(c.iter()).zip(r).for_each(|((b, x), h)| *b = x * h);
                    self.fft.inverse_normalized(&mut band);
                    band.iter_mut()
                        .zip(mask)
                        .filter(|(_, &keep)| !keep)
                        .for_each(|(b, _)| *b = ZERO);
                    self.fft.forward(&mut band);
                    acc.iter_mut()
                        .zip(&band)
                        .zip(r)
                        .for_each(|((a, b), h)| *a += b * h.conj());
                }
                c.copy_from_slice(&acc);
            }
        }
        self.fft.inverse_normalized(c);
    }

    pub fn apply(&self, v: &SpectralImage) -> Result<SpectralImage> {
        ensure_same_grid(&self.grid, v.grid())?;
        let g = deriv(v);
        let mut comps = [g.first().values().to_vec(), g.second().values().to_vec()];
        for c in comps.iter_mut() {
            self.penalize(c);
        }
        let [a, b] = comps;
        let filtered = crate::grid::GradientSpectrum::new(
            SpectralImage::from_raw(self.grid, a),
            SpectralImage::from_raw(self.grid, b),
        )?;
        let pen = deriv_adjoint(&filtered);
        let values = (0..self.gain.len())
            .map(|i| v.values()[i] * self.gain[i] + pen.values()[i] * self.gamma)
            .collect();
        Ok(SpectralImage::from_raw(self.grid, values))
    }
}

/// Least-squares linear prediction baseline, solved by conjugate gradients.
/// Failure to reach `cg_tol` is reported through `converged`, not as an error.
pub fn lslp(f: &SpectralImage, op: &ForwardOp, bank: &FilterBank, cfg: &LslpConfig) -> Result<LslpOutput> {
    ensure_same_grid(op.grid(), f.grid())?;
    let m = LslpOperator::new(op, bank, cfg.rank, cfg.gamma, cfg.region)?;
    let b = op.adjoint(f)?;
    let bn = b.norm();
    let grid = *f.grid();
    let mut x = SpectralImage::zeros(grid);
    if bn == 0.0 {
        return Ok(LslpOutput {
            v: x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_sqr();
    let mut iterations = 0;
    while iterations < cfg.cg_max && rs.sqrt() > cfg.cg_tol * bn {
        let mp = m.apply(&p)?;
        let pmp = p.inner(&mp)?.re;
        if !(pmp > 0.0) {
            break;
        }
        let alpha = rs / pmp;
        let xv: Vec<Complex64> = x.values().iter().zip(p.values()).map(|(a, b)| a + b * alpha).collect();
        let rv: Vec<Complex64> = r.values().iter().zip(mp.values()).map(|(a, b)| a - b * alpha).collect();
        x = SpectralImage::from_raw(grid, xv);
        r = SpectralImage::from_raw(grid, rv);
        let rs_new = r.norm_sqr();
        let beta = rs_new / rs;
        let pv = r.values().iter().zip(p.values()).map(|(a, b)| a + b * beta).collect();
        p = SpectralImage::from_raw(grid, pv);
        rs = rs_new;
        iterations += 1;
    }
    if !x.is_finite() {
        return Err(Error::Numerical("conjugate gradients diverged".into()));
    }
    let residual = b.sub(&m.apply(&x)?)?.norm() / bn;
    Ok(LslpOutput {
        v: x,
        iterations,
        residual,
        converged: residual <= cfg.cg_tol,
    })
}

/// Real part of the centered inverse DFT, `u(j) = 1/(n1 n2) sum_k v(k) exp(2 pi i k.j / n)`,
/// together with the largest discarded imaginary magnitude.
pub fn to_image(v: &SpectralImage) -> Result<(Image, f64)> {
    let grid = v.grid();
    if !grid.is_centered() {
        return Err(Error::invalid("images are only defined for centered grids"));
    }
    let (n1, n2) = grid.dims();
    let mut buf = crate::fft::embed_periodic(n1, n2, grid.iter().zip(v.values().iter().copied()));
    Fft2::new(n1, n2).inverse_normalized(&mut buf);
    let mut re = Vec::with_capacity(n1 * n2);
    let mut max_imag = 0.0f64;
    for (j1, j2) in grid.iter() {
        let q1 = j1.rem_euclid(n1 as i64) as usize;
        let q2 = j2.rem_euclid(n2 as i64) as usize;
        let z = buf[q1 * n2 + q2];
        re.push(z.re);
        max_imag = max_imag.max(z.im.abs());
    }
    Ok((Image::new(n1, n2, re)?, max_imag))
}

/// `n1 n2 * to_image(v)`: the partial Fourier sum, which approximates the
/// underlying function at `x = j / n` when `v` holds its Fourier samples.
pub fn to_function_image(v: &SpectralImage) -> Result<Image> {
    let scale = v.grid().cardinality() as f64;
    Ok(to_image(v)?.0.map(|x| x * scale))
}

/// Zero-fills unmeasured entries and inverts.
pub fn ifft_baseline(f: &SpectralImage, op: &ForwardOp) -> Result<Image> {
    ensure_same_grid(op.grid(), f.grid())?;
    let values = f
        .values()
        .iter()
        .enumerate()
        .map(|(i, &z)| if op.multiplier(i).norm() == 0.0 { ZERO } else { z })
        .collect();
    to_function_image(&SpectralImage::from_raw(*f.grid(), values))
}
