//! Train a small eraser end to end on synthetic data and report how far
//! the erased output moves past the unprocessed input (PSNR against the
//! text-free ground truth). Writes checkpoints, a JSONL loss history and
//! a training-curve chart.
//!
//! Run with: cargo run --release --example train_eraser

use texterase::datagen::{build_dataset, load_dataset, DatasetConfig};
use texterase::losses::DeskFeatureExtractor;
use texterase::model::{ModelConfig, TextEraser};
use texterase::trainer::{train, TrainConfig};

fn main() -> texterase::Result<()> {
    let root = std::path::Path::new("target/examples/train");
    let data_dir = root.join("data");
    build_dataset(
        &DatasetConfig {
            num_samples: 24,
            master_seed: 7,
            ..Default::default()
        },
        &data_dir,
    )?;
    let (_, mut samples) = load_dataset(&data_dir)?;
    let val = samples.split_off(16);

    let mut model = TextEraser::new(ModelConfig {
        base_channels: 16,
        num_stages: 2,
        seed: 0,
        ..Default::default()
    })?;
    println!(
        "model: {} stages, {} parameters",
        model.config().num_stages,
        model.parameter_count()
    );

    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 8,
        num_stages: 2,
        eval_every: 2,
        seed: 0,
        checkpoint_dir: Some(root.join("run")),
        ..Default::default()
    };
    let fx = DeskFeatureExtractor::new(2177);
    let history = train(&mut model, &samples, &val, &fx, &cfg)?;

    for (epoch, report) in history.evals() {
        println!(
            "epoch {epoch}: psnr {:.2} dB (input was {:.2}), stages {:?}",
            report.metrics.psnr,
            report.baseline_psnr,
            report
                .stage_psnr
                .iter()
                .map(|p| format!("{p:.2}"))
                .collect::<Vec<_>>()
        );
    }
    let last = history.final_eval().expect("validation ran");
    println!(
        "gain over input: {:+.2} dB; artifacts in {}",
        last.metrics.psnr - last.baseline_psnr,
        root.join("run").display()
    );
    Ok(())
}
