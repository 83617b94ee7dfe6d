//! Analytic piecewise-constant scenes with exact Fourier samples.
//!
//! A scene is a sum of weighted indicator functions of rectangles and ellipses
//! inside `[-1/2, 1/2)^2`. Its Fourier transform
//! `F(u)(k) = integral u(x) exp(-2 pi i k.x) dx` is evaluated in closed form, so
//! edges need not align with any pixel grid.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{Index2, IndexGrid, SpectralImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub center: (f64, f64),
    /// Rectangle half-widths or ellipse semi-axes, along `x1` then `x2`.
    pub half_sizes: (f64, f64),
    /// Counter-clockwise rotation in radians.
    pub rotation: f64,
    pub amplitude: Complex64,
}

impl Shape {
    pub fn new(
        kind: ShapeKind,
        center: (f64, f64),
        half_sizes: (f64, f64),
        rotation: f64,
        amplitude: Complex64,
    ) -> Result<Self> {
        let s = Self {
            kind,
            center,
            half_sizes,
            rotation,
            amplitude,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn rectangle(center: (f64, f64), half_sizes: (f64, f64), amplitude: f64) -> Result<Self> {
        Self::new(
            ShapeKind::Rectangle,
            center,
            half_sizes,
            0.0,
            Complex64::new(amplitude, 0.0),
        )
    }

    pub fn ellipse(center: (f64, f64), half_sizes: (f64, f64), rotation: f64, amplitude: f64) -> Result<Self> {
        Self::new(
            ShapeKind::Ellipse,
            center,
            half_sizes,
            rotation,
            Complex64::new(amplitude, 0.0),
        )
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.half_sizes;
        let finite = [
            self.center.0,
            self.center.1,
            a,
            b,
            self.rotation,
            self.amplitude.re,
            self.amplitude.im,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("shape parameters must be finite"));
        }
        if a <= 0.0 || b <= 0.0 {
            return Err(Error::invalid("shape half sizes must be positive"));
        }
        let (e1, e2) = self.half_extent();
        let (c1, c2) = self.center;
        if c1 - e1 < -0.5 || c1 + e1 > 0.5 || c2 - e2 < -0.5 || c2 + e2 > 0.5 {
            return Err(Error::invalid(format!(
                "shape centered at ({c1}, {c2}) leaves [-1/2, 1/2)^2"
            )));
        }
        Ok(())
    }

    /// Half-width of the axis-aligned bounding box.
    fn half_extent(&self) -> (f64, f64) {
        let (a, b) = self.half_sizes;
        let (s, c) = self.rotation.sin_cos();
        match self.kind {
            ShapeKind::Rectangle => (a * c.abs() + b * s.abs(), a * s.abs() + b * c.abs()),
            ShapeKind::Ellipse => (
                (a * a * c * c + b * b * s * s).sqrt(),
                (a * a * s * s + b * b * c * c).sqrt(),
            ),
        }
    }

    /// Whether the point `x` lies inside the shape (boundary included).
    pub fn contains(&self, x: (f64, f64)) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let d1 = x.0 - self.center.0;
        let d2 = x.1 - self.center.1;
        // rotate back into the shape frame
        let y1 = c * d1 + s * d2;
        let y2 = -s * d1 + c * d2;
        let (a, b) = self.half_sizes;
        match self.kind {
            ShapeKind::Rectangle => y1.abs() <= a && y2.abs() <= b,
            ShapeKind::Ellipse => (y1 / a).powi(2) + (y2 / b).powi(2) <= 1.0,
        }
    }

    /// Area of the shape.
    pub fn area(&self) -> f64 {
        let (a, b) = self.half_sizes;
        match self.kind {
            ShapeKind::Rectangle => 4.0 * a * b,
            ShapeKind::Ellipse => PI * a * b,
        }
    }

    pub fn fourier(&self, k: Index2) -> Result<Complex64> {
        match self.kind {
            ShapeKind::Rectangle => rect_fourier(self, k),
            ShapeKind::Ellipse => ellipse_fourier(self, k),
        }
    }

    fn phase(&self, k: Index2) -> Complex64 {
        let ph = -2.0 * PI * (k.0 as f64 * self.center.0 + k.1 as f64 * self.center.1);
        Complex64::from_polar(1.0, ph)
    }
}

/// `integral_{-h}^{h} exp(-2 pi i k x) dx`.
fn box_transform(k: f64, h: f64) -> f64 {
    if k == 0.0 {
        2.0 * h
    } else {
        (2.0 * PI * k * h).sin() / (PI * k)
    }
}

/// Closed-form transform of an axis-aligned rectangle.
pub fn rect_fourier(shape: &Shape, k: Index2) -> Result<Complex64> {
    if shape.kind != ShapeKind::Rectangle {
        return Err(Error::UnsupportedShape("rect_fourier called on an ellipse".into()));
    }
    if shape.rotation != 0.0 {
        return Err(Error::UnsupportedShape(
            "rotated rectangles have no closed-form sampler".into(),
        ));
    }
    let (a, b) = shape.half_sizes;
    let s = box_transform(k.0 as f64, a) * box_transform(k.1 as f64, b);
    Ok(shape.amplitude * shape.phase(k) * s)
}

/// Closed-form transform of a (possibly rotated) ellipse via the order-1 Bessel function.
pub fn ellipse_fourier(shape: &Shape, k: Index2) -> Result<Complex64> {
    if shape.kind != ShapeKind::Ellipse {
        return Err(Error::UnsupportedShape("ellipse_fourier called on a rectangle".into()));
    }
    let (a, b) = shape.half_sizes;
    let (s, c) = shape.rotation.sin_cos();
    let (k1, k2) = (k.0 as f64, k.1 as f64);
    let kr1 = c * k1 + s * k2;
    let kr2 = -s * k1 + c * k2;
    let rho = ((a * kr1).powi(2) + (b * kr2).powi(2)).sqrt();
    let mag = if rho == 0.0 {
        PI * a * b
    } else {
        a * b * puruspe::Jn(1, 2.0 * PI * rho) / rho
    };
    Ok(shape.amplitude * shape.phase(k) * mag)
}

/// An ordered list of shapes. Overlaps add their amplitudes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    pub shapes: Vec<Shape>,
}

impl Scene {
    pub fn new(shapes: Vec<Shape>) -> Self {
        Self { shapes }
    }

    /// `[-1/4, 1/4)^2` with unit amplitude.
    pub fn square() -> Self {
        Self::new(vec![Shape::rectangle((0.0, 0.0), (0.25, 0.25), 1.0).expect("valid")])
    }

    /// A rectangle and a disk with edges off the pixel lattice.
    pub fn square_disk() -> Self {
        Self::new(vec![
            Shape::rectangle((-0.18, -0.16), (0.14, 0.2), 1.0).expect("valid"),
            Shape::ellipse((0.17, 0.18), (0.17, 0.17), 0.0, 0.7).expect("valid"),
        ])
    }

    /// Built-in scenes by name: `square`, `square_disk`.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "square" => Some(Self::square()),
            "square_disk" => Some(Self::square_disk()),
            _ => None,
        }
    }

    pub fn fourier_at(&self, k: Index2) -> Result<Complex64> {
        self.shapes.iter().map(|s| s.fourier(k)).sum()
    }

    /// Pointwise value of the scene function.
    pub fn value_at(&self, x: (f64, f64)) -> Complex64 {
        self.shapes.iter().filter(|s| s.contains(x)).map(|s| s.amplitude).sum()
    }

    /// Real part of the scene sampled at `x = (j1/n1, j2/n2)` over a centered grid,
    /// the same lattice [`crate::restore::to_image`] uses.
    pub fn rasterize(&self, grid: &IndexGrid) -> Vec<f64> {
        let (n1, n2) = (grid.n1() as f64, grid.n2() as f64);
        grid.iter()
            .map(|(j1, j2)| self.value_at((j1 as f64 / n1, j2 as f64 / n2)).re)
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        text.parse()
    }
}

impl FromStr for Scene {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut shapes = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |why: &str| Error::Config(format!("scene line {}: {why}", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(bad("expected `rect|ellipse c1 c2 a b rot re im`"));
            }
            let kind = match fields[0] {
                "rect" => ShapeKind::Rectangle,
                "ellipse" => ShapeKind::Ellipse,
                other => return Err(bad(&format!("unknown shape kind `{other}`"))),
            };
            let nums = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| bad(&format!("not a number: `{f}`"))))
                .collect::<Result<Vec<f64>>>()?;
            let shape = Shape::new(
                kind,
                (nums[0], nums[1]),
                (nums[2], nums[3]),
                nums[4],
                Complex64::new(nums[5], nums[6]),
            )
            .map_err(|e| bad(&e.to_string()))?;
            shapes.push(shape);
        }
        Ok(Scene { shapes })
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.shapes {
            let kind = match s.kind {
                ShapeKind::Rectangle => "rect",
                ShapeKind::Ellipse => "ellipse",
            };
            writeln!(
                f,
                "{kind} {} {} {} {} {} {} {}",
                s.center.0, s.center.1, s.half_sizes.0, s.half_sizes.1, s.rotation, s.amplitude.re, s.amplitude.im
            )?;
        }
        Ok(())
    }
}

/// Exact Fourier samples of `scene` on `grid`.
pub fn scene_fourier(scene: &Scene, grid: &IndexGrid) -> Result<SpectralImage> {
    let values = grid.iter().map(|k| scene.fourier_at(k)).collect::<Result<Vec<_>>>()?;
    SpectralImage::new(*grid, values)
}

/// Adds i.i.d. circular complex Gaussian noise with `E|z|^2 = sigma^2`.
///
/// Real and imaginary parts are independent `N(0, sigma^2/2)` draws from a
/// ChaCha20 stream seeded with `seed`, consumed in row-major sample order.
pub fn add_noise(v: &SpectralImage, sigma: f64, seed: u64) -> Result<SpectralImage> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "noise level must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(v.clone());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal =
        Normal::new(0.0, sigma / 2f64.sqrt()).map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
    let values = v
        .values()
        .iter()
        .map(|z| z + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    Ok(SpectralImage::from_raw(*v.grid(), values))
}
