//! Erase text from an image with a progressively refining model: every
//! stage re-reads the previous composite, predicts a text mask, and
//! rewrites only the masked region. Dumps each stage's mask and output.
//!
//! Run with: cargo run --release --example erase_text

use texterase::datagen::{build_dataset, load_dataset, DatasetConfig};
use texterase::losses::DeskFeatureExtractor;
use texterase::metrics;
use texterase::model::{ModelConfig, TextEraser};
use texterase::trainer::{train, TrainConfig};
use texterase::EraseOptions;

fn main() -> texterase::Result<()> {
    let root = std::path::Path::new("target/examples/erase");
    build_dataset(
        &DatasetConfig {
            num_samples: 9,
            master_seed: 3,
            ..Default::default()
        },
        &root.join("data"),
    )?;
    let (_, mut samples) = load_dataset(&root.join("data"))?;
    let probe = samples.pop().expect("nonempty dataset");

    // A short warm-up run; see the train_eraser example for a real loop.
    let mut model = TextEraser::new(ModelConfig {
        base_channels: 8,
        num_stages: 3,
        seed: 0,
        ..Default::default()
    })?;
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 8,
        num_stages: 3,
        eval_every: 0,
        seed: 0,
        ..Default::default()
    };
    train(&mut model, &samples, &[], &DeskFeatureExtractor::new(2177), &cfg)?;

    let stages = model.erase(&probe.original, &EraseOptions::default())?;
    probe.original.save_png(root.join("input.png"))?;
    probe.gt.save_png(root.join("ground_truth.png"))?;
    println!(
        "input psnr {:.2} dB",
        metrics::psnr(&probe.original, &probe.gt)?
    );
    for stage in &stages {
        let t = stage.stage_index;
        stage.composited.save_png(root.join(format!("stage{t}.png")))?;
        stage.mask.save_png(root.join(format!("stage{t}_mask.png")))?;
        let mask_mean =
            stage.mask.data().iter().map(|&v| v as f64).sum::<f64>() / stage.mask.data().len() as f64;
        println!(
            "stage {t}: psnr {:.2} dB, mean mask {:.3}",
            metrics::psnr(&stage.composited, &probe.gt)?,
            mask_mean
        );
    }
    println!("stage dumps in {}", root.display());
    Ok(())
}
