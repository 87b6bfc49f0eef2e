//! Image reconstruction and the quantitative measures: difference-image
//! noise level, FE-line spectra and EMI reduction in dB.
//!
//! All transforms are unitary (scaled by `1/sqrt(N)`) and DC-centered: index
//! `N/2` of a line or grid axis is zero frequency.

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::plan::{ComplexLine, ImageVolume, MultiCoilDataset, Window};

/// Unitary 1-D DFT in natural (uncentered) order.
pub fn dft(samples: &[Complex64], direction: FftDirection) -> Vec<Complex64> {
    let n = samples.len();
    let mut buf = samples.to_vec();
    if n == 0 {
        return buf;
    }
    FftPlanner::new().plan_fft(n, direction).process(&mut buf);
    let s = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= s);
    buf
}

/// Centered unitary 1-D transform: ifftshift -> DFT -> fftshift.
pub fn centered_dft(samples: &[Complex64], direction: FftDirection) -> Vec<Complex64> {
    let mut x = samples.to_vec();
    let n = x.len();
    x.rotate_left(n / 2); // ifftshift
    let mut y = dft(&x, direction);
    y.rotate_left(n - n / 2); // fftshift
    y
}

fn centered_2d(grid: &ImageVolume, direction: FftDirection) -> ImageVolume {
    let (rows, cols) = (grid.rows(), grid.cols());
    let mut out = ImageVolume::zeros(rows, cols);
    for r in 0..rows {
        let t = centered_dft(grid.row(r), direction);
        out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(&t);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for (r, v) in col.iter_mut().enumerate() {
            *v = out.get(r, c);
        }
        let t = centered_dft(&col, direction);
        for (r, v) in t.into_iter().enumerate() {
            out.data_mut()[r * cols + c] = v;
        }
    }
    out
}

/// Image -> k-space.
pub fn forward(image: &ImageVolume) -> ImageVolume {
    centered_2d(image, FftDirection::Forward)
}

/// k-space -> image.
pub fn reconstruct(kspace: &ImageVolume) -> ImageVolume {
    centered_2d(kspace, FftDirection::Inverse)
}

/// Reconstruct each average of the receive coil's MRI window.
pub fn reconstruct_averages(ds: &MultiCoilDataset) -> Vec<ImageVolume> {
    (0..ds.plan().nex()).map(|a| reconstruct(&ds.receive_kspace(Window::Mri, a))).collect()
}

/// Complex mean over averages, taken after reconstruction.
pub fn average_images(images: &[ImageVolume]) -> Result<ImageVolume> {
    let first = images.first().ok_or_else(|| Error::Shape("no images to average".into()))?;
    let mut out = ImageVolume::zeros(first.rows(), first.cols());
    for img in images {
        check_same_dims(first, img)?;
        for (o, v) in out.data_mut().iter_mut().zip(img.data()) {
            *o += v;
        }
    }
    let s = 1.0 / images.len() as f64;
    out.data_mut().iter_mut().for_each(|z| *z *= s);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseReport {
    /// Per-image noise standard deviation, receiver units.
    pub noise_sd: f64,
    pub n_pixels: usize,
    pub method: &'static str,
}

pub const NOISE_METHOD: &str = "difference-sd/sqrt2";

/// Noise of two single-average images of the same scan: the sample SD of
/// the real and imaginary parts of their difference, pooled, divided by
/// `sqrt(2)` so the value estimates the per-image, per-component SD.
pub fn noise_level(img1: &ImageVolume, img2: &ImageVolume) -> Result<NoiseReport> {
    check_same_dims(img1, img2)?;
    let vals: Vec<f64> = img1
        .data()
        .iter()
        .zip(img2.data())
        .flat_map(|(a, b)| {
            let d = a - b;
            [d.re, d.im]
        })
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(NoiseReport {
        noise_sd: var.sqrt() / std::f64::consts::SQRT_2,
        n_pixels: img1.data().len(),
        method: NOISE_METHOD,
    })
}

/// Noise level from the first two averages of a dataset's receive coil.
pub fn dataset_noise_level(ds: &MultiCoilDataset) -> Result<NoiseReport> {
    if ds.plan().nex() < 2 {
        return Err(Error::Shape("noise level needs at least two averages".into()));
    }
    let a = reconstruct(&ds.receive_kspace(Window::Mri, 0));
    let b = reconstruct(&ds.receive_kspace(Window::Mri, 1));
    noise_level(&a, &b)
}

/// Magnitude of the centered unitary DFT of one line.
pub fn spectrum(line: &ComplexLine) -> Result<Vec<f64>> {
    if line.is_empty() {
        return Err(Error::Shape("empty line".into()));
    }
    Ok(centered_dft(line.samples(), FftDirection::Forward).iter().map(|z| z.norm()).collect())
}

/// Frequency in Hz of a centered spectrum bin.
pub fn bin_frequency(bin: usize, n: usize, receiver_bandwidth: f64) -> f64 {
    (bin as f64 - (n / 2) as f64) * receiver_bandwidth / n as f64
}

/// `10 log10(sum |before - clean|^2 / sum |after - clean|^2)` over the MRI
/// window receive lines. A perfect cancellation returns `f64::INFINITY`;
/// equal residuals, including none at all, return 0.
pub fn emi_reduction_db(before: &MultiCoilDataset, after: &MultiCoilDataset, clean: &MultiCoilDataset) -> Result<f64> {
    let num = residual_power(before, clean)?;
    let den = residual_power(after, clean)?;
    if num == den {
        return Ok(0.0);
    }
    if den == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (num / den).log10())
}

/// `sum |a - b|^2` over MRI-window receive lines.
pub fn residual_power(a: &MultiCoilDataset, b: &MultiCoilDataset) -> Result<f64> {
    if a.plan() != b.plan() {
        return Err(Error::Shape("datasets come from different scan plans".into()));
    }
    let mut acc = 0.0;
    for (x, y) in a.window(Window::Mri).iter().zip(b.window(Window::Mri)) {
        for (p, q) in x.receive.samples().iter().zip(y.receive.samples()) {
            acc += (p - q).norm_sqr();
        }
    }
    Ok(acc)
}

fn check_same_dims(a: &ImageVolume, b: &ImageVolume) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Shape(format!("image dims {}x{} and {}x{} differ", a.rows(), a.cols(), b.rows(), b.cols())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ImageVolume {
        let data = (0..rows * cols)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ImageVolume::new(rows, cols, data).unwrap()
    }

    #[test]
    fn center_impulse_gives_flat_image() {
        let mut k = ImageVolume::zeros(16, 8);
        k.data_mut()[8 * 8 + 4] = Complex64::new(1.0, 0.0);
        let img = reconstruct(&k);
        let expected = 1.0 / (128f64).sqrt();
        for z in img.data() {
            assert!((z.norm() - expected).abs() < 1e-14);
            assert!(z.im.abs() < 1e-14);
        }
    }

    #[test]
    fn inverse_pair_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_grid(&mut rng, 64, 48);
        let k = forward(&img);
        let back = reconstruct(&k);
        let err = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
        assert!((k.energy() - img.energy()).abs() / img.energy() < 1e-10);
    }

    #[test]
    fn identical_images_have_zero_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_grid(&mut rng, 16, 16);
        assert_eq!(noise_level(&img, &img).unwrap().noise_sd, 0.0);
    }

    #[test]
    fn noise_level_recovers_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = random_grid(&mut rng, 64, 64);
        let sigma = 0.37;
        let mut noisy = |img: &ImageVolume| {
            let data = img
                .data()
                .iter()
                .map(|z| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    z + Complex64::new(sigma * re, sigma * im)
                })
                .collect();
            ImageVolume::new(64, 64, data).unwrap()
        };
        let a = noisy(&base);
        let b = noisy(&base);
        let r = noise_level(&a, &b).unwrap();
        assert!((r.noise_sd - sigma).abs() < 0.03 * sigma, "{}", r.noise_sd);
        let rev = noise_level(&b, &a).unwrap();
        assert!((rev.noise_sd - r.noise_sd).abs() < 1e-15);
    }

    #[test]
    fn noise_level_rejects_dim_mismatch() {
        assert!(noise_level(&ImageVolume::zeros(4, 4), &ImageVolume::zeros(4, 5)).is_err());
    }

    #[test]
    fn constant_line_has_only_dc() {
        let line = ComplexLine::new(vec![Complex64::new(2.0, -1.0); 32], 1e-5).unwrap();
        let s = spectrum(&line).unwrap();
        assert!((s[16] - 5f64.sqrt() * 32f64.sqrt()).abs() < 1e-12);
        assert!(s.iter().enumerate().filter(|(i, _)| *i != 16).all(|(_, m)| *m < 1e-12));
    }

    #[test]
    fn bin_frequency_is_centered() {
        assert_eq!(bin_frequency(32, 64, 32_000.0), 0.0);
        assert_eq!(bin_frequency(33, 64, 32_000.0), 500.0);
        assert_eq!(bin_frequency(0, 64, 32_000.0), -16_000.0);
    }

    #[test]
    fn broadband_spectrum_is_flat() {
        use crate::emi::{emit, EmiSource};
        let src = EmiSource::broadband(1.0, None, 21);
        let mut acc = vec![0.0; 64];
        for line in 0..32 {
            let l = emit(&src, 0.0, 64, 1.0 / 32_000.0, line).unwrap();
            for (a, m) in acc.iter_mut().zip(spectrum(&l).unwrap()) {
                *a += m / 32.0;
            }
        }
        let mut sorted = acc.clone();
        sorted.sort_by(f64::total_cmp);
        let median = (sorted[31] + sorted[32]) / 2.0;
        assert!(acc.iter().all(|m| *m < 5.0 * median));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn spectrum_preserves_energy(vals in proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..80)) {
                let line = ComplexLine::new(vals.iter().map(|&(a, b)| Complex64::new(a, b)).collect(), 1e-5).unwrap();
                let e: f64 = spectrum(&line).unwrap().iter().map(|m| m * m).sum();
                prop_assert!((e - line.energy()).abs() <= 1e-9 * line.energy().max(1.0));
            }

            #[test]
            fn noise_level_ignores_common_image(seed in 0u64..1000, offset in -5.0..5.0f64) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_grid(&mut rng, 8, 8);
                let b = random_grid(&mut rng, 8, 8);
                let c = random_grid(&mut rng, 8, 8);
                let shift = |x: &ImageVolume| {
                    let d = x.data().iter().zip(c.data()).map(|(p, q)| p + q * offset).collect();
                    ImageVolume::new(8, 8, d).unwrap()
                };
                let r0 = noise_level(&a, &b).unwrap().noise_sd;
                let r1 = noise_level(&shift(&a), &shift(&b)).unwrap().noise_sd;
                prop_assert!((r0 - r1).abs() < 1e-9);
            }
        }
    }
}
