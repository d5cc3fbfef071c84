//! The reference-based image quality suite: PSNR, MSSIM, MSE, AGE, pEPs
//! and pCEPs on single pairs and on directories of matching PNGs.
//!
//! Run with: cargo run --release --example evaluate_metrics

use texterase::datagen::{build_dataset, DatasetConfig};
use texterase::metrics::{evaluate_dataset, report_pair, MetricParams};
use texterase::ImageTensor;

fn main() -> texterase::Result<()> {
    // Self-comparison yields every metric's ideal value.
    let base = ImageTensor::from_fn(48, 48, |c, y, x| {
        0.1 + 0.8 * ((c + 1) as f32 * (y as f32 / 48.0) * (x as f32 / 48.0))
    });
    let ideal = report_pair(&base, &base)?;
    println!(
        "self-eval: psnr {} dB, mssim {}, mse {}, age {}, peps {}, pceps {}",
        ideal.psnr, ideal.mssim, ideal.mse, ideal.age, ideal.peps, ideal.pceps
    );

    // Growing a uniform perturbation can only degrade every metric.
    println!("\n{:>10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "offset", "psnr", "mssim", "mse", "age", "peps", "pceps");
    for k in [0.02f32, 0.05, 0.1, 0.2] {
        let shifted = ImageTensor::from_fn(48, 48, |c, y, x| {
            (base.data()[[c, y, x]] + k).min(1.0)
        });
        let r = report_pair(&base, &shifted)?;
        println!(
            "{k:>10.2} {:>8.2} {:>8.2} {:>8.4} {:>8.2} {:>8.3} {:>8.3}",
            r.psnr, r.mssim, r.mse, r.age, r.peps, r.pceps
        );
    }

    // Directory evaluation: compare a dataset's originals (text still
    // present) against its clean ground truths.
    let root = std::path::Path::new("target/examples/metrics");
    build_dataset(
        &DatasetConfig {
            num_samples: 6,
            master_seed: 5,
            ..Default::default()
        },
        root,
    )?;
    let (rows, aggregate) = evaluate_dataset(
        root.join("original"),
        root.join("gt"),
        &MetricParams::default(),
        false,
    )?;
    println!("\nper-image PSNR of unerased inputs:");
    for (name, r) in &rows {
        println!("  {name}: {:.2} dB, peps {:.4}", r.psnr, r.peps);
    }
    println!(
        "aggregate over {} images: psnr {:.2} dB, mssim {:.2}",
        aggregate.n_images, aggregate.psnr, aggregate.mssim
    );
    Ok(())
}
