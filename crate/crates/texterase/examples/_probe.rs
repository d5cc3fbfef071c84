//! Temporary training diagnostic; delete before release.

use std::time::Instant;

use texterase::datagen::{build_dataset, load_dataset, DatasetConfig, PairedSample};
use texterase::losses::{total_loss, DeskFeatureExtractor, LossWeights};
use texterase::metrics::psnr;
use texterase::model::{EraseOptions, ModelConfig, TextEraser};
use texterase::trainer::{train, TrainConfig};

fn dataset(n: usize, seed: u64) -> Vec<PairedSample> {
    let cfg = DatasetConfig {
        num_samples: n,
        master_seed: seed,
        ..DatasetConfig::default()
    };
    let dir = std::env::temp_dir().join(format!("texterase_diag_{seed}_{n}"));
    build_dataset(&cfg, &dir).expect("dataset");
    let (_, samples) = load_dataset(&dir).expect("load");
    samples
}

fn inspect(tag: &str, model: &TextEraser, samples: &[PairedSample], w: &LossWeights) {
    let fx = DeskFeatureExtractor::new(2177);
    let opts = EraseOptions {
        training: true,
        ..EraseOptions::default()
    };
    let s = &samples[0];
    let stages = model.erase(&s.original, &opts).expect("erase");
    let (total, bd) = total_loss(&stages, s, &fx, w).expect("loss");
    let last = stages.last().unwrap();
    let mask = last.mask.data();
    let gt_mask = s.mask_gt.data();
    let mut in_sum = 0.0f64;
    let mut in_n = 0usize;
    let mut out_sum = 0.0f64;
    let mut out_n = 0usize;
    for (m, g) in mask.iter().zip(gt_mask.iter()) {
        if *g > 0.5 {
            in_sum += *m as f64;
            in_n += 1;
        } else {
            out_sum += *m as f64;
            out_n += 1;
        }
    }
    let raw_psnr = psnr(&last.raw_reconstruction, &s.gt).unwrap();
    let comp_psnr = psnr(&last.composited, &s.gt).unwrap();
    let base = psnr(&s.original, &s.gt).unwrap();
    println!(
        "[{tag}] total {total:.4} dice {:?} rs {:.4} gs {:.6} ssim {:.4} perc {:.4} style {:.4}",
        bd.dice
            .iter()
            .map(|d| format!("{d:.4}"))
            .collect::<Vec<_>>(),
        bd.rs,
        bd.gs,
        bd.ssim,
        bd.perceptual,
        bd.style
    );
    println!(
        "[{tag}] mask in-text {:.4} out-text {:.4} | psnr raw {:.2} comp {:.2} input {:.2}",
        in_sum / in_n.max(1) as f64,
        out_sum / out_n.max(1) as f64,
        raw_psnr,
        comp_psnr,
        base
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let width: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(16);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);

    let train_set = dataset(50, 7);
    let val_set = dataset(8, 1007);

    let mcfg = ModelConfig {
        base_channels: width,
        num_stages: 2,
        ..ModelConfig::default()
    };
    let mut model = TextEraser::new(mcfg).expect("model");
    let tcfg = TrainConfig {
        learning_rate: lr,
        epochs,
        batch_size: 8,
        num_stages: 2,
        eval_every: 0,
        seed: 0,
        ..TrainConfig::default()
    };
    let w = tcfg.effective_weights();

    inspect("before", &model, &val_set, &w);
    let t0 = Instant::now();
    let history = train(&mut model, &train_set, &val_set, &DeskFeatureExtractor::new(2177), &tcfg)
        .expect("train");
    let steps: Vec<(f64, f64)> = history
        .steps()
        .map(|(_, _, l)| (l.total, l.dice.iter().sum::<f64>()))
        .collect();
    for i in [0, steps.len() / 4, steps.len() / 2, 3 * steps.len() / 4, steps.len() - 1] {
        println!("step {i}: total {:.4} dice-sum {:.4}", steps[i].0, steps[i].1);
    }
    println!("wall {:.1}s", t0.elapsed().as_secs_f64());
    inspect("after", &model, &val_set, &w);
}
