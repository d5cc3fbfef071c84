//! Reference-based image quality metrics: PSNR, MSSIM, MSE, AGE, pEPs and
//! pCEPs, plus directory-level aggregation.
//!
//! Conventions, all configurable through [`MetricParams`]:
//! - PSNR assumes unit dynamic range and is capped (default 100 dB) when the
//!   MSE is zero so aggregates stay finite.
//! - MSSIM is mean SSIM over BT.601 luminance with an 11x11 Gaussian window
//!   (sigma 1.5), reported as a percentage.
//! - AGE/pEPs/pCEPs work on 8-bit-scaled gray values: a pixel is an error
//!   pixel when its absolute gray difference exceeds 20, and a clustered
//!   error pixel when additionally every existing 4-connected neighbor is an
//!   error pixel (border pixels consult only the neighbors they have).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_tensor::ImageTensor;

/// Knobs for the metric definitions left open by common usage.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MetricParams {
    /// PSNR reported for a zero-MSE pair, in dB.
    pub psnr_cap: f64,
    /// Gray-level difference (8-bit scale) above which a pixel is an error
    /// pixel.
    pub error_threshold: f64,
    /// Cluster test over 8 neighbors instead of 4.
    pub eight_connectivity: bool,
    /// SSIM window side length (odd).
    pub ssim_window: usize,
    /// SSIM Gaussian sigma.
    pub ssim_sigma: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            psnr_cap: 100.0,
            error_threshold: 20.0,
            eight_connectivity: false,
            ssim_window: 11,
            ssim_sigma: 1.5,
        }
    }
}

/// The six Image-Eval numbers for one image or a mean over a set.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr: f64,
    pub mssim: f64,
    pub mse: f64,
    pub age: f64,
    pub peps: f64,
    pub pceps: f64,
    pub n_images: usize,
}

fn check_same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.data().shape() != b.data().shape() {
        return Err(Error::Dimension(format!(
            "image shapes differ: {:?} vs {:?}",
            a.data().shape(),
            b.data().shape()
        )));
    }
    Ok(())
}

/// Mean squared error over all RGB values in `[0, 1]`.
pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    psnr_with(a, b, &MetricParams::default())
}

/// `10 log10(1 / MSE)` for unit range, capped for identical images.
pub fn psnr_with(a: &ImageTensor, b: &ImageTensor, p: &MetricParams) -> Result<f64> {
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(p.psnr_cap);
    }
    Ok((10.0 * (1.0 / err).log10()).min(p.psnr_cap))
}

/// Normalized 1-D Gaussian taps used for SSIM windows.
pub fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    assert!(window >= 1 && window % 2 == 1, "window must be odd");
    let mid = (window / 2) as f64;
    let mut k: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Separable valid-mode filter: output is `(H-k+1, W-k+1)`.
fn filter_valid(img: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let n = k.len();
    let mut rows = Array2::zeros((h, w - n + 1));
    for y in 0..h {
        for x in 0..w - n + 1 {
            let mut acc = 0.0;
            for (i, &ki) in k.iter().enumerate() {
                acc += ki * img[[y, x + i]];
            }
            rows[[y, x]] = acc;
        }
    }
    let mut out = Array2::zeros((h - n + 1, w - n + 1));
    for y in 0..h - n + 1 {
        for x in 0..w - n + 1 {
            let mut acc = 0.0;
            for (i, &ki) in k.iter().enumerate() {
                acc += ki * rows[[y + i, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Luminance in f64 so the SSIM loss (also f64-capable) matches exactly.
fn luminance_f64(img: &ImageTensor) -> Array2<f64> {
    let d = img.data();
    Array2::from_shape_fn((img.height(), img.width()), |(y, x)| {
        crate::image_tensor::LUMA_WEIGHTS
            .iter()
            .enumerate()
            .map(|(c, &w)| w as f64 * d[[c, y, x]] as f64)
            .sum()
    })
}

/// Mean SSIM over luminance in `[-1, 1]`.
pub fn ssim_unit(a: &ImageTensor, b: &ImageTensor, p: &MetricParams) -> Result<f64> {
    check_same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < p.ssim_window || w < p.ssim_window {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {0}x{0} pixels, got {h}x{w}",
            p.ssim_window
        )));
    }
    let la = luminance_f64(a);
    let lb = luminance_f64(b);
    let k = gaussian_kernel(p.ssim_window, p.ssim_sigma);
    let mu_a = filter_valid(&la, &k);
    let mu_b = filter_valid(&lb, &k);
    let sq_a = filter_valid(&(&la * &la), &k);
    let sq_b = filter_valid(&(&lb * &lb), &k);
    let cross = filter_valid(&(&la * &lb), &k);
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let mut total = 0.0;
    for ((((&ma, &mb), &sa), &sb), &sx) in mu_a
        .iter()
        .zip(mu_b.iter())
        .zip(sq_a.iter())
        .zip(sq_b.iter())
        .zip(cross.iter())
    {
        let var_a = sa - ma * ma;
        let var_b = sb - mb * mb;
        let cov = sx - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

pub fn mssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    mssim_with(a, b, &MetricParams::default())
}

/// Mean SSIM as a percentage in `[?, 100]` (negative only for adversarially
/// anti-correlated inputs).
pub fn mssim_with(a: &ImageTensor, b: &ImageTensor, p: &MetricParams) -> Result<f64> {
    Ok(ssim_unit(a, b, p)? * 100.0)
}

pub fn age_peps_pceps(a: &ImageTensor, b: &ImageTensor) -> Result<(f64, f64, f64)> {
    age_peps_pceps_with(a, b, &MetricParams::default())
}

/// Gray-level error statistics on the 8-bit scale.
pub fn age_peps_pceps_with(
    a: &ImageTensor,
    b: &ImageTensor,
    p: &MetricParams,
) -> Result<(f64, f64, f64)> {
    check_same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    let ga = luminance_f64(a);
    let gb = luminance_f64(b);
    let diff = Array2::from_shape_fn((h, w), |(y, x)| (ga[[y, x]] - gb[[y, x]]).abs() * 255.0);
    let age = diff.sum() / (h * w) as f64;
    let is_err = diff.mapv(|d| d > p.error_threshold);
    let total = (h * w) as f64;
    let n_err = is_err.iter().filter(|&&e| e).count() as f64;

    let neighbors: &[(isize, isize)] = if p.eight_connectivity {
        &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ]
    } else {
        &[(-1, 0), (1, 0), (0, -1), (0, 1)]
    };
    let mut n_clustered = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !is_err[[y, x]] {
                continue;
            }
            let clustered = neighbors.iter().all(|&(dy, dx)| {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    return true;
                }
                is_err[[ny as usize, nx as usize]]
            });
            if clustered {
                n_clustered += 1;
            }
        }
    }
    Ok((age, n_err / total, n_clustered as f64 / total))
}

pub fn report_pair(pred: &ImageTensor, gt: &ImageTensor) -> Result<MetricsReport> {
    report_pair_with(pred, gt, &MetricParams::default())
}

/// All six metrics for one prediction/ground-truth pair.
pub fn report_pair_with(
    pred: &ImageTensor,
    gt: &ImageTensor,
    p: &MetricParams,
) -> Result<MetricsReport> {
    let (age, peps, pceps) = age_peps_pceps_with(pred, gt, p)?;
    Ok(MetricsReport {
        psnr: psnr_with(pred, gt, p)?,
        mssim: mssim_with(pred, gt, p)?,
        mse: mse(pred, gt)?,
        age,
        peps,
        pceps,
        n_images: 1,
    })
}

/// Arithmetic mean of per-image reports.
pub fn aggregate(reports: &[MetricsReport]) -> MetricsReport {
    let n = reports.len().max(1) as f64;
    let mut mean = MetricsReport {
        psnr: 0.0,
        mssim: 0.0,
        mse: 0.0,
        age: 0.0,
        peps: 0.0,
        pceps: 0.0,
        n_images: reports.iter().map(|r| r.n_images).sum(),
    };
    for r in reports {
        mean.psnr += r.psnr / n;
        mean.mssim += r.mssim / n;
        mean.mse += r.mse / n;
        mean.age += r.age / n;
        mean.peps += r.peps / n;
        mean.pceps += r.pceps / n;
    }
    mean
}

/// Per-image metrics for PNG files with matching names in two directories.
///
/// Returns name-keyed reports in name order plus the aggregate. Predictions
/// without a ground-truth partner (or vice versa) fail the run unless
/// `allow_missing` is set, in which case they are skipped.
pub fn evaluate_dataset<P: AsRef<Path>, Q: AsRef<Path>>(
    pred_dir: P,
    gt_dir: Q,
    params: &MetricParams,
    allow_missing: bool,
) -> Result<(Vec<(String, MetricsReport)>, MetricsReport)> {
    let list = |dir: &Path| -> Result<BTreeMap<String, std::path::PathBuf>> {
        let mut map = BTreeMap::new();
        for entry in std::fs::read_dir(dir).map_err(Error::io(dir))? {
            let entry = entry.map_err(Error::io(dir))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) == Some("png") {
                map.insert(
                    path.file_name().unwrap().to_string_lossy().into_owned(),
                    path,
                );
            }
        }
        Ok(map)
    };
    let preds = list(pred_dir.as_ref())?;
    let gts = list(gt_dir.as_ref())?;
    let mut missing: Vec<String> = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .chain(gts.keys().filter(|k| !preds.contains_key(*k)))
        .cloned()
        .collect();
    missing.sort();
    if !missing.is_empty() && !allow_missing {
        return Err(Error::Data(format!(
            "unpaired images: {}",
            missing.join(", ")
        )));
    }
    let mut rows = Vec::new();
    for (name, pred_path) in &preds {
        let Some(gt_path) = gts.get(name) else {
            continue;
        };
        let pred = ImageTensor::load_png(pred_path)?;
        let gt = ImageTensor::load_png(gt_path)?;
        rows.push((name.clone(), report_pair_with(&pred, &gt, params)?));
    }
    if rows.is_empty() {
        return Err(Error::Data("no image pairs to evaluate".into()));
    }
    let agg = aggregate(&rows.iter().map(|(_, r)| *r).collect::<Vec<_>>());
    Ok((rows, agg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant(h: usize, w: usize, v: f32) -> ImageTensor {
        ImageTensor::from_fn(h, w, |_, _, _| v)
    }

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(h, w, |_, _, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn self_comparison_is_ideal() {
        let img = random_image(16, 16, 1);
        let r = report_pair(&img, &img).unwrap();
        assert_eq!(r.psnr, 100.0);
        assert!((r.mssim - 100.0).abs() < 1e-9);
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.age, 0.0);
        assert_eq!(r.peps, 0.0);
        assert_eq!(r.pceps, 0.0);
    }

    #[test]
    fn psnr_of_half_range_difference() {
        // Constant difference 0.5: MSE 0.25, PSNR 10*log10(4).
        let a = constant(4, 4, 0.25);
        let b = constant(4, 4, 0.75);
        assert!((psnr(&a, &b).unwrap() - 6.020599913279624).abs() < 1e-9);
        assert!((mse(&a, &b).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn mse_single_pixel_4x4_fixture() {
        // One channel of one pixel differs by 0.25 on 4x4: MSE 0.0625/48.
        // All values are exactly representable in f32.
        let a = constant(4, 4, 0.25);
        let mut b = a.clone();
        b.data_mut()[[1, 2, 3]] += 0.25;
        let want = 0.0625 / 48.0;
        assert!((mse(&a, &b).unwrap() - want).abs() < 1e-15);
        assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / want).log10()).abs() < 1e-9);
    }

    #[test]
    fn age_uniform_small_offset_below_threshold() {
        // 10 gray levels of uniform difference: AGE 10, no error pixels.
        let a = constant(8, 8, 100.0 / 255.0);
        let b = constant(8, 8, 110.0 / 255.0);
        let (age, peps, pceps) = age_peps_pceps(&a, &b).unwrap();
        assert!((age - 10.0).abs() < 1e-4);
        assert_eq!(peps, 0.0);
        assert_eq!(pceps, 0.0);
    }

    #[test]
    fn peps_left_half_difference_with_bruteforce_pceps() {
        // Left 4 columns of an 8x8 differ by 30 levels: pEPs 1/2; clustered
        // pixels are those whose existing 4-neighborhood stays inside the
        // error region (columns 0..3), i.e. 24 of 64.
        let a = constant(8, 8, 0.5);
        let mut b = a.clone();
        for y in 0..8 {
            for x in 0..4 {
                for c in 0..3 {
                    b.data_mut()[[c, y, x]] += 30.0 / 255.0;
                }
            }
        }
        let (_, peps, pceps) = age_peps_pceps(&a, &b).unwrap();
        assert!((peps - 0.5).abs() < 1e-12);

        // Independent brute-force neighborhood scan.
        let da = a.luminance();
        let db = b.luminance();
        let is_err = |y: usize, x: usize| ((da[[y, x]] - db[[y, x]]).abs() * 255.0) > 20.0;
        let mut expected = 0;
        for y in 0..8usize {
            for x in 0..8usize {
                if !is_err(y, x) {
                    continue;
                }
                let mut ok = true;
                for (dy, dx) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny >= 0 && nx >= 0 && ny < 8 && nx < 8 && !is_err(ny as usize, nx as usize)
                    {
                        ok = false;
                    }
                }
                if ok {
                    expected += 1;
                }
            }
        }
        assert_eq!(expected, 24);
        assert!((pceps - expected as f64 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn all_metrics_are_symmetric() {
        let a = random_image(16, 16, 2);
        let b = random_image(16, 16, 3);
        let ra = report_pair(&a, &b).unwrap();
        let rb = report_pair(&b, &a).unwrap();
        assert!((ra.psnr - rb.psnr).abs() < 1e-12);
        assert!((ra.mssim - rb.mssim).abs() < 1e-9);
        assert!((ra.mse - rb.mse).abs() < 1e-15);
        assert!((ra.age - rb.age).abs() < 1e-12);
        assert_eq!(ra.peps, rb.peps);
        assert_eq!(ra.pceps, rb.pceps);
    }

    #[test]
    fn monotone_under_uniform_perturbation() {
        let base = random_image(16, 16, 4);
        let mut last: Option<MetricsReport> = None;
        for k in 1..=5 {
            let eps = 0.02 * k as f32;
            let mut pert = base.clone();
            pert.data_mut().mapv_inplace(|v| (v + eps).min(1.0));
            let r = report_pair(&pert, &base).unwrap();
            if let Some(prev) = last {
                assert!(r.psnr <= prev.psnr + 1e-9);
                assert!(r.mssim <= prev.mssim + 1e-9);
                assert!(r.mse >= prev.mse - 1e-12);
                assert!(r.age >= prev.age - 1e-9);
            }
            last = Some(r);
        }
    }

    #[test]
    fn pceps_never_exceeds_peps_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let h = rng.gen_range(3..10);
            let w = rng.gen_range(3..10);
            let seed_a = rng.gen();
            let seed_b = rng.gen();
            let a = random_image(h, w, seed_a);
            let b = random_image(h, w, seed_b);
            let (_, peps, pceps) = age_peps_pceps(&a, &b).unwrap();
            assert!(pceps <= peps + 1e-15, "{pceps} > {peps} at {h}x{w}");
        }
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        // Means 0 and 1, zero variance: SSIM = C1 / (1 + C1).
        let a = constant(16, 16, 0.0);
        let b = constant(16, 16, 1.0);
        let c1 = 0.01f64.powi(2);
        let want = c1 / (1.0 + c1);
        let got = ssim_unit(&a, &b, &MetricParams::default()).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = constant(8, 8, 0.5);
        assert!(mssim(&a, &a).is_err());
    }

    #[test]
    fn aggregate_matches_hand_mean() {
        let a = constant(16, 16, 0.2);
        let b = constant(16, 16, 0.4);
        let c = constant(16, 16, 0.5);
        let r1 = report_pair(&a, &b).unwrap();
        let r2 = report_pair(&a, &c).unwrap();
        let agg = aggregate(&[r1, r2]);
        assert!((agg.mse - (r1.mse + r2.mse) / 2.0).abs() < 1e-15);
        assert!((agg.psnr - (r1.psnr + r2.psnr) / 2.0).abs() < 1e-12);
        assert_eq!(agg.n_images, 2);
        // Single-report aggregate is the report itself.
        let solo = aggregate(&[r1]);
        assert!((solo.psnr - r1.psnr).abs() < 1e-12);
    }

    #[test]
    fn dataset_evaluation_pairs_by_filename() {
        let dir = tempfile::tempdir().unwrap();
        let pred_dir = dir.path().join("pred");
        let gt_dir = dir.path().join("gt");
        std::fs::create_dir_all(&pred_dir).unwrap();
        std::fs::create_dir_all(&gt_dir).unwrap();
        let img = random_image(16, 16, 9);
        img.save_png(pred_dir.join("a.png")).unwrap();
        img.save_png(gt_dir.join("a.png")).unwrap();
        img.save_png(pred_dir.join("b.png")).unwrap();

        // Unpaired b.png fails unless allowed.
        let strict = evaluate_dataset(&pred_dir, &gt_dir, &MetricParams::default(), false);
        assert!(strict.is_err());
        let (rows, agg) =
            evaluate_dataset(&pred_dir, &gt_dir, &MetricParams::default(), true).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(agg.psnr, 100.0);
    }
}
