//! Image quality indices: SNR, HFEN and SSIM.

use std::fmt::Write as _;

use crate::error::Result;
use crate::image::Image;

/// `20 log10(||ref|| / ||ref - rec||)` in dB, without mean removal.
/// Returns `+inf` when the images are identical.
pub fn snr(reference: &Image, rec: &Image) -> Result<f64> {
    reference.ensure_same_dims(rec)?;
    let err = reference
        .data()
        .iter()
        .zip(rec.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (reference.norm() / err).log10())
}

/// Laplacian-of-Gaussian taps, 15x15 with sigma 1.5, shifted to zero mean so
/// constants are annihilated exactly.
pub fn log_kernel() -> Vec<f64> {
    let (size, sigma) = (15usize, 1.5f64);
    let half = (size / 2) as f64;
    let s2 = sigma * sigma;
    let mut g = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (x, y) = (i as f64 - half, j as f64 - half);
            g.push((-(x * x + y * y) / (2.0 * s2)).exp());
        }
    }
    let total: f64 = g.iter().sum();
    let mut h: Vec<f64> = (0..size * size)
        .map(|p| {
            let (x, y) = ((p / size) as f64 - half, (p % size) as f64 - half);
            g[p] / total * (x * x + y * y - 2.0 * s2) / (s2 * s2)
        })
        .collect();
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    h.iter_mut().for_each(|v| *v -= mean);
    h
}

/// Normalized 11x11 Gaussian window, sigma 1.5.
pub fn ssim_window() -> Vec<f64> {
    let (size, sigma) = (11usize, 1.5f64);
    let half = (size / 2) as f64;
    let mut w: Vec<f64> = (0..size * size)
        .map(|p| {
            let (x, y) = ((p / size) as f64 - half, (p % size) as f64 - half);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Mirror an index into `0..n` with half-sample symmetry (`-1 -> 0`, `n -> n-1`).
fn reflect(mut i: i64, n: i64) -> usize {
    let period = 2 * n;
    i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Correlates with a square odd-sized kernel under symmetric boundary extension.
pub(crate) fn filter_symmetric(img: &Image, kernel: &[f64]) -> Image {
    let size = (kernel.len() as f64).sqrt().round() as usize;
    debug_assert_eq!(size * size, kernel.len());
    let half = (size / 2) as i64;
    let (n1, n2) = img.dims();
    let rows: Vec<Vec<usize>> = (0..n1 as i64)
        .map(|i| (-half..=half).map(|d| reflect(i + d, n1 as i64)).collect())
        .collect();
    let cols: Vec<Vec<usize>> = (0..n2 as i64)
        .map(|j| (-half..=half).map(|d| reflect(j + d, n2 as i64)).collect())
        .collect();
    let src = img.data();
    let mut out = vec![0.0; n1 * n2];
    for i in 0..n1 {
        for j in 0..n2 {
            let mut s = 0.0;
            for (a, &r) in rows[i].iter().enumerate() {
                let krow = &kernel[a * size..(a + 1) * size];
                let base = r * n2;
                for (kv, &c) in krow.iter().zip(&cols[j]) {
                    s += kv * src[base + c];
                }
            }
            out[i * n2 + j] = s;
        }
    }
    Image::new(n1, n2, out).expect("same dims")
}

/// `||LoG(rec) - LoG(ref)|| / ||LoG(ref)||`. NaN when the reference has no
/// high-frequency content.
pub fn hfen(reference: &Image, rec: &Image) -> Result<f64> {
    reference.ensure_same_dims(rec)?;
    let k = log_kernel();
    let lr = filter_symmetric(reference, &k);
    let lx = filter_symmetric(rec, &k);
    let den = lr.norm();
    if den == 0.0 {
        return Ok(f64::NAN);
    }
    let num = lr
        .data()
        .iter()
        .zip(lx.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// Mean SSIM with dynamic range `range`.
pub fn ssim(reference: &Image, rec: &Image, range: f64) -> Result<f64> {
    reference.ensure_same_dims(rec)?;
    let w = ssim_window();
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let mu_x = filter_symmetric(reference, &w);
    let mu_y = filter_symmetric(rec, &w);
    let xx = filter_symmetric(&reference.map(|v| v * v), &w);
    let yy = filter_symmetric(&rec.map(|v| v * v), &w);
    let prod = Image::new(
        reference.dims().0,
        reference.dims().1,
        reference.data().iter().zip(rec.data()).map(|(a, b)| a * b).collect(),
    )?;
    let xy = filter_symmetric(&prod, &w);
    let n = reference.data().len();
    let mut total = 0.0;
    for p in 0..n {
        let (mx, my) = (mu_x.data()[p], mu_y.data()[p]);
        let sx = xx.data()[p] - mx * mx;
        let sy = yy.data()[p] - my * my;
        let sxy = xy.data()[p] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sx + sy + c2));
    }
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub snr_db: f64,
    pub hfen: f64,
    pub ssim: f64,
}

/// All three indices, SSIM with dynamic range 1.
pub fn evaluate(reference: &Image, rec: &Image) -> Result<MetricsReport> {
    Ok(MetricsReport {
        snr_db: snr(reference, rec)?,
        hfen: hfen(reference, rec)?,
        ssim: ssim(reference, rec, 1.0)?,
    })
}

/// One line of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub scene: String,
    pub task: String,
    pub method: String,
    pub report: MetricsReport,
    pub wall_ms: f64,
    pub seed: u64,
}

pub const METRICS_CSV_HEADER: &str = "scene,task,method,snr,hfen,ssim,wall_ms,seed";

/// Header plus one line per row. SNR is in dB as computed by [`snr`]; an
/// infinite value is written as `inf`.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{METRICS_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6e},{:.6},{:.3},{}",
            r.scene, r.task, r.method, r.report.snr_db, r.report.hfen, r.report.ssim, r.wall_ms, r.seed
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(n: usize) -> Image {
        let data = (0..n * n)
            .map(|p| {
                let (x, y) = ((p / n) as f64 / n as f64 - 0.5, (p % n) as f64 / n as f64 - 0.5);
                if x * x + y * y < 0.09 {
                    0.8
                } else {
                    0.1
                }
            })
            .collect();
        Image::new(n, n, data).unwrap()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn snr_examples() {
        let u = disk(32);
        assert_eq!(snr(&u, &u).unwrap(), f64::INFINITY);
        assert!(snr(&u, &Image::zeros(32, 32)).unwrap().abs() < 1e-12);
        let e = noise(32 * 32, 1);
        let en = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        let s = 0.1 * u.norm() / en;
        let rec = Image::new(32, 32, u.data().iter().zip(&e).map(|(a, b)| a + s * b).collect()).unwrap();
        assert!((snr(&u, &rec).unwrap() - 20.0).abs() < 1e-9);
        assert!(snr(&u, &Image::zeros(16, 16)).is_err());
    }

    #[test]
    fn snr_drops_twenty_db_per_decade_of_error() {
        let u = disk(24);
        let e = noise(24 * 24, 2);
        let with = |s: f64| Image::new(24, 24, u.data().iter().zip(&e).map(|(a, b)| a + s * b).collect()).unwrap();
        let a = snr(&u, &with(1e-3)).unwrap();
        let b = snr(&u, &with(1e-2)).unwrap();
        assert!((a - b - 20.0).abs() < 1e-9);
    }

    #[test]
    fn log_kernel_is_zero_mean_and_symmetric() {
        let k = log_kernel();
        assert_eq!(k.len(), 225);
        assert!(k.iter().sum::<f64>().abs() < 1e-15);
        for i in 0..15 {
            for j in 0..15 {
                assert!((k[i * 15 + j] - k[j * 15 + i]).abs() < 1e-18);
                assert!((k[i * 15 + j] - k[(14 - i) * 15 + j]).abs() < 1e-18);
            }
        }
        assert!(k[7 * 15 + 7] < 0.0);
    }

    #[test]
    fn hfen_examples() {
        let u = disk(32);
        assert_eq!(hfen(&u, &u).unwrap(), 0.0);
        assert!(hfen(&u, &u.map(|v| v + 0.3)).unwrap() < 1e-12);
        assert!(hfen(&Image::zeros(8, 8), &Image::zeros(8, 8)).unwrap().is_nan());
    }

    #[test]
    fn hfen_penalizes_blur_more_than_noise_of_equal_energy() {
        let u = disk(32);
        let blurred = filter_symmetric(&u, &ssim_window());
        let blur_err: f64 = u
            .data()
            .iter()
            .zip(blurred.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        // White noise at the same l2 error, spread over all pixels.
        let e = noise(32 * 32, 3);
        let en = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        let tiny = blur_err / en;
        let noisy = Image::new(32, 32, u.data().iter().zip(&e).map(|(a, b)| a + tiny * b).collect()).unwrap();
        let hb = hfen(&u, &blurred).unwrap();
        let hn = hfen(&u, &noisy).unwrap();
        assert!(hb > 0.0);
        assert!(hb > hn, "blur {hb} noise {hn}");
    }

    #[test]
    fn ssim_examples() {
        let u = disk(32);
        assert!((ssim(&u, &u, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&u, &u.map(|v| 1.0 - v), 1.0).unwrap() < 0.5);
        let shifted = ssim(&u, &u.map(|v| 0.9 * v + 0.05), 1.0).unwrap();
        assert!(shifted < 1.0);
        let v = u.map(|x| x * x);
        assert!((ssim(&u, &v, 1.0).unwrap() - ssim(&v, &u, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn reflect_is_half_sample_symmetric() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(-7, 3), 0);
    }

    #[test]
    fn csv_has_one_line_per_row() {
        let row = MetricsRow {
            scene: "square".into(),
            task: "lowpass".into(),
            method: "ifft".into(),
            report: MetricsReport {
                snr_db: f64::INFINITY,
                hfen: 0.0,
                ssim: 1.0,
            },
            wall_ms: 0.0,
            seed: 4,
        };
        let csv = metrics_csv(&[row]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_CSV_HEADER);
        assert!(lines[1].starts_with("square,lowpass,ifft,inf,"));
        assert!(lines[1].ends_with(",4"));
    }
}
