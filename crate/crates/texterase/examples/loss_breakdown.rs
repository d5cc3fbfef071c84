//! Inspect the training objective term by term on one sample, show what
//! each ablation switch removes, and verify the tape gradients of the
//! core terms against finite differences.
//!
//! Run with: cargo run --release --example loss_breakdown

use texterase::datagen::{render_sample, DatasetConfig};
use texterase::graph::check::{grad_check, rand_array};
use texterase::losses::{
    dice_loss_graph, rs_loss_graph, DeskFeatureExtractor, LossTargets, LossWeights,
    StagePredictions, total_loss,
};
use texterase::model::{ModelConfig, TextEraser};
use texterase::EraseOptions;

fn main() -> texterase::Result<()> {
    let sample = render_sample(&DatasetConfig::default().sample_spec(0))?;
    let model = TextEraser::new(ModelConfig {
        base_channels: 8,
        num_stages: 2,
        seed: 0,
        ..Default::default()
    })?;
    let stages = model.erase(
        &sample.original,
        &EraseOptions {
            training: true,
            ..Default::default()
        },
    )?;

    let fx = DeskFeatureExtractor::new(2177);
    let weights = LossWeights::default();
    let (total, terms) = total_loss(&stages, &sample, &fx, &weights)?;
    println!("full objective on an untrained model:");
    println!("  dice per stage  {:?}", terms.dice);
    println!("  region sim      {:.4}", terms.rs);
    println!("  global sim      {:.4}", terms.gs);
    println!("  neg ssim        {:.4}", terms.ssim);
    println!("  perceptual      {:.4}", terms.perceptual);
    println!("  style           {:.4}", terms.style);
    println!("  total           {total:.4}");

    // Each switch removes exactly its own terms from the breakdown.
    for (label, w) in [
        ("without rs/gs", LossWeights { rg_term: false, ..weights.clone() }),
        ("without ssim", LossWeights { ssim_term: false, ..weights.clone() }),
        ("without vgg", LossWeights { vgg_term: false, ..weights.clone() }),
    ] {
        let (t, b) = total_loss(&stages, &sample, &fx, &w)?;
        println!(
            "{label:>14}: total {t:.4} (rs {:.3}, gs {:.3}, ssim {:.3}, vgg {:.3})",
            b.rs,
            b.gs,
            b.ssim,
            b.perceptual + b.style
        );
    }

    // Finite-difference audit of the differentiable core on small
    // patches: value bands keep |pred - gt| away from the L1 kink.
    let inputs = [
        rand_array(&[1, 3, 8, 8], 1, 0.6, 0.9),  // final prediction
        rand_array(&[1, 1, 8, 8], 4, 0.05, 0.95), // soft mask
        rand_array(&[1, 3, 4, 4], 5, 0.6, 0.9),  // half-scale prediction
        rand_array(&[1, 3, 2, 2], 6, 0.6, 0.9),  // quarter-scale prediction
    ];
    let gt = rand_array(&[1, 3, 8, 8], 2, 0.1, 0.4);
    let gt_p1 = rand_array(&[1, 3, 4, 4], 7, 0.1, 0.4);
    let gt_p2 = rand_array(&[1, 3, 2, 2], 8, 0.1, 0.4);
    let mask = rand_array(&[1, 1, 8, 8], 3, 0.0, 1.0).mapv(f64::round);
    let mask_p1 = rand_array(&[1, 1, 4, 4], 9, 0.0, 1.0).mapv(f64::round);
    let mask_p2 = rand_array(&[1, 1, 2, 2], 10, 0.0, 1.0).mapv(f64::round);
    let w = weights.clone();
    let report = grad_check(&inputs, |g, vars| {
        let stage = StagePredictions {
            mask: vars[1],
            composited: vars[0],
            p1: Some(vars[2]),
            p2: Some(vars[3]),
        };
        let tgt = LossTargets {
            gt: g.constant(gt.clone()),
            mask: g.constant(mask.clone()),
            gt_p1: Some(g.constant(gt_p1.clone())),
            gt_p2: Some(g.constant(gt_p2.clone())),
            mask_p1: Some(g.constant(mask_p1.clone())),
            mask_p2: Some(g.constant(mask_p2.clone())),
        };
        let rs = rs_loss_graph(g, &w, &stage, &tgt).expect("rs").total;
        let dice = dice_loss_graph(g, stage.mask, tgt.mask);
        g.add(rs, dice)
    });
    println!(
        "\ngradient check (rs + dice, 8x8): max abs err {:.2e}, max rel err {:.2e}",
        report.max_abs, report.max_rel
    );
    assert!(report.max_rel < 1e-3, "tape gradients disagree with finite differences");
    println!("tape gradients match finite differences");
    Ok(())
}
