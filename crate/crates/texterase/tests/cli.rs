//! End-to-end checks of the command suite: artifact layout, run
//! manifests, idempotence, exit codes, and cross-command plumbing.

use std::path::{Path, PathBuf};

use texterase::cli::{
    cmd_erase, cmd_eval, cmd_generate, cmd_train, run, EraseArgs, EvalArgs, GenerateArgs,
    RunManifest, TrainArgs, SEED_ENV_VAR,
};
use texterase::datagen::DatasetManifest;
use texterase::trainer::{load_checkpoint, TrainHistory};
use texterase::{ImageTensor, MaskMap};

fn gen_args(n: usize, seed: u64, out: &Path) -> GenerateArgs {
    GenerateArgs {
        n: Some(n),
        size: None,
        seed: Some(seed),
        config: None,
        out: out.to_path_buf(),
    }
}

fn train_args(data: &Path, out: &Path) -> TrainArgs {
    TrainArgs {
        data: data.to_path_buf(),
        val_data: None,
        holdout: None,
        stages: Some(2),
        ablate: vec![],
        epochs: Some(1),
        batch_size: None,
        lr: None,
        seed: Some(1),
        base_channels: Some(8),
        config: None,
        vgg_weights: None,
        out: out.to_path_buf(),
    }
}

fn read_run_manifest(dir: &Path) -> RunManifest {
    let text = std::fs::read_to_string(dir.join("run_manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn generate_writes_triples_manifest_and_is_idempotent() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let m1 = cmd_generate(&gen_args(4, 9, d1.path())).unwrap();
    let m2 = cmd_generate(&gen_args(4, 9, d2.path())).unwrap();

    // 4 triples + dataset manifest, all hashed into the run manifest.
    assert_eq!(m1.outputs.len(), 13);
    assert_eq!(m1.command, "generate");
    assert_eq!(m1.seed, 9);
    for rel in &m1.outputs {
        assert!(d1.path().join(rel).is_file(), "{rel} missing");
    }
    assert_eq!(m1.artifact_hash, m2.artifact_hash, "generate is not idempotent");
    assert_eq!(read_run_manifest(d1.path()).artifact_hash, m1.artifact_hash);

    // A different seed must change the pixels.
    let d3 = tempfile::tempdir().unwrap();
    let m3 = cmd_generate(&gen_args(4, 10, d3.path())).unwrap();
    assert_ne!(m1.artifact_hash, m3.artifact_hash);

    // n = 0 is a valid empty dataset.
    let d4 = tempfile::tempdir().unwrap();
    let m4 = cmd_generate(&gen_args(0, 9, d4.path())).unwrap();
    assert_eq!(m4.outputs, vec!["manifest.json".to_string()]);
}

#[test]
fn seed_env_var_overrides_default_but_not_flag() {
    // Only this test touches the env var; every other invocation in this
    // binary passes an explicit seed, so parallel tests cannot race on it.
    let with_env = |f: &dyn Fn() -> RunManifest| {
        std::env::set_var(SEED_ENV_VAR, "123");
        let m = f();
        std::env::remove_var(SEED_ENV_VAR);
        m
    };
    let d = tempfile::tempdir().unwrap();
    let m = with_env(&|| {
        cmd_generate(&GenerateArgs {
            n: Some(1),
            seed: None,
            out: d.path().to_path_buf(),
            ..Default::default()
        })
        .unwrap()
    });
    assert_eq!(m.seed, 123);
    let ds: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(ds.config.master_seed, 123);

    let d = tempfile::tempdir().unwrap();
    let m = with_env(&|| cmd_generate(&gen_args(1, 7, d.path())).unwrap());
    assert_eq!(m.seed, 7, "explicit flag must beat the env var");
}

#[test]
fn exit_codes_match_error_classes() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("ds");
    let arg = |s: &str| s.to_string();

    // Success.
    assert_eq!(
        run([
            arg("texterase"),
            arg("generate"),
            arg("--n"),
            arg("1"),
            arg("--seed"),
            arg("3"),
            arg("--out"),
            out.display().to_string(),
        ]),
        0
    );
    // Usage errors are validation errors.
    assert_eq!(run([arg("texterase"), arg("no-such-command")]), 1);
    assert_eq!(run([arg("texterase"), arg("generate")]), 1);
    // Help is a success.
    assert_eq!(run([arg("texterase"), arg("--help")]), 0);
    // Unknown ablation: validation, checked before any I/O.
    assert_eq!(
        run([
            arg("texterase"),
            arg("train"),
            arg("--data"),
            arg("/nonexistent"),
            arg("--ablate"),
            arg("bogus"),
            arg("--out"),
            d.path().join("t").display().to_string(),
        ]),
        1
    );
    // Missing dataset directory: I/O.
    assert_eq!(
        run([
            arg("texterase"),
            arg("train"),
            arg("--data"),
            arg("/nonexistent"),
            arg("--out"),
            d.path().join("t").display().to_string(),
        ]),
        2
    );
    // Missing checkpoint: I/O.
    assert_eq!(
        run([
            arg("texterase"),
            arg("erase"),
            arg("--ckpt"),
            arg("/nonexistent.ckpt"),
            arg("--in"),
            out.join("original").display().to_string(),
            arg("--out"),
            d.path().join("e").display().to_string(),
        ]),
        2
    );
    // Missing eval inputs: I/O.
    assert_eq!(
        run([
            arg("texterase"),
            arg("eval"),
            arg("--pred"),
            arg("/nonexistent"),
            arg("--gt"),
            arg("/nonexistent"),
            arg("--report"),
            d.path().join("r.json").display().to_string(),
        ]),
        2
    );
}

/// One generated dataset reused by the heavier pipeline tests.
fn pipeline_dataset() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    cmd_generate(&gen_args(8, 11, &ds)).unwrap();
    (dir, ds)
}

#[test]
fn train_smoke_run_writes_checkpoints_and_history() {
    let (dir, ds) = pipeline_dataset();
    let out = dir.path().join("run");
    let args = TrainArgs {
        holdout: Some(2),
        ..train_args(&ds, &out)
    };
    let manifest = cmd_train(&args).unwrap();
    assert_eq!(manifest.command, "train");
    for file in ["last.ckpt", "best.ckpt", "history.jsonl", "curves.png"] {
        assert!(out.join(file).is_file(), "{file} missing");
        assert!(manifest.outputs.contains(&file.to_string()));
    }
    // The resolved config snapshot names the dataset and stage count.
    assert_eq!(manifest.config["train"]["num_stages"], 2);
    assert_eq!(manifest.config["holdout"], 2);

    let history = TrainHistory::read_jsonl(out.join("history.jsonl")).unwrap();
    assert_eq!(history.steps().count(), 1, "6 samples, batch 8, 1 epoch");
    assert_eq!(history.evals().count(), 1);

    // Idempotence: the same flags yield bit-identical artifacts.
    let out2 = dir.path().join("run2");
    let again = cmd_train(&TrainArgs {
        holdout: Some(2),
        ..train_args(&ds, &out2)
    })
    .unwrap();
    assert_eq!(manifest.artifact_hash, again.artifact_hash);
}

#[test]
fn ablation_flag_removes_terms_from_breakdown() {
    let (dir, ds) = pipeline_dataset();
    let out = dir.path().join("run");
    let args = TrainArgs {
        ablate: vec!["rg_loss".into(), "vgg_loss".into()],
        ..train_args(&ds, &out)
    };
    cmd_train(&args).unwrap();
    let history = TrainHistory::read_jsonl(out.join("history.jsonl")).unwrap();
    assert!(history.steps().count() > 0);
    for (_, _, loss) in history.steps() {
        assert_eq!(loss.rs, 0.0);
        assert_eq!(loss.gs, 0.0);
        assert_eq!(loss.perceptual, 0.0);
        assert_eq!(loss.style, 0.0);
        assert!(loss.ssim != 0.0, "untouched terms must stay live");
    }
}

#[test]
fn stage_count_does_not_change_checkpoint_parameters() {
    let (dir, ds) = pipeline_dataset();
    let mut counts = Vec::new();
    for stages in [1, 2] {
        let out = dir.path().join(format!("run{stages}"));
        let args = TrainArgs {
            stages: Some(stages),
            ..train_args(&ds, &out)
        };
        cmd_train(&args).unwrap();
        let (model, _) = load_checkpoint(out.join("last.ckpt")).unwrap();
        assert_eq!(model.config().num_stages, stages);
        counts.push(model.parameter_count());
    }
    assert_eq!(counts[0], counts[1], "stage sharing must not add weights");
}

#[test]
fn erase_writes_outputs_and_respects_binary_mask_regions() {
    let (dir, ds) = pipeline_dataset();
    let run = dir.path().join("run");
    cmd_train(&train_args(&ds, &run)).unwrap();

    // First pass without binarization: pick a threshold strictly inside
    // the soft mask's range so both regions are nonempty in the audit.
    let soft_dir = dir.path().join("soft");
    cmd_erase(&EraseArgs {
        ckpt: run.join("last.ckpt"),
        input: ds.join("original").join("sample_00000.png"),
        out: soft_dir.clone(),
        dump_stages: true,
        binarize_mask: None,
    })
    .unwrap();
    let soft = MaskMap::load_png(soft_dir.join("sample_00000_stage2_mask.png")).unwrap();
    let (lo, hi) = soft
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    assert!(hi - lo > 2.5 / 255.0, "mask is flat, no threshold separates it");
    let threshold = (lo + hi) / 2.0;

    let erased = dir.path().join("erased");
    let manifest = cmd_erase(&EraseArgs {
        ckpt: run.join("last.ckpt"),
        input: ds.join("original"),
        out: erased.clone(),
        dump_stages: true,
        binarize_mask: Some(threshold),
    })
    .unwrap();
    // 8 finals + per input 2 stages x (composite + mask).
    assert_eq!(manifest.outputs.len(), 8 + 8 * 2 * 2);

    // Region audit on the first input: a binarized mask means untouched
    // pixels round-trip bit-exactly and erased pixels actually change.
    let name = "sample_00000";
    let original = ImageTensor::load_png(ds.join("original").join(format!("{name}.png"))).unwrap();
    let output = ImageTensor::load_png(erased.join(format!("{name}.png"))).unwrap();
    let mask = MaskMap::load_png(erased.join(format!("{name}_stage2_mask.png"))).unwrap();
    let (h, w) = (original.height(), original.width());
    let mut masked = 0usize;
    let mut masked_diff = 0usize;
    for y in 0..h {
        for x in 0..w {
            let inside = mask.data()[[y, x]] > 0.5;
            let same = (0..3).all(|c| original.data()[[c, y, x]] == output.data()[[c, y, x]]);
            if inside {
                masked += 1;
                masked_diff += usize::from(!same);
            } else {
                assert!(same, "untouched pixel changed at ({y}, {x})");
            }
        }
    }
    assert!(masked > 0, "mask predicted no text at all");
    assert!(masked_diff > 0, "erased region is identical to the input");

    // Single-file input path produces exactly one output.
    let single_out = dir.path().join("single");
    let single = cmd_erase(&EraseArgs {
        ckpt: run.join("last.ckpt"),
        input: ds.join("original").join("sample_00001.png"),
        out: single_out,
        dump_stages: false,
        binarize_mask: None,
    })
    .unwrap();
    assert_eq!(single.outputs, vec!["sample_00001.png".to_string()]);
}

#[test]
fn eval_self_comparison_reports_ideal_values() {
    let (dir, ds) = pipeline_dataset();
    let report_path = dir.path().join("reports").join("self.json");
    let manifest = cmd_eval(&EvalArgs {
        pred: ds.join("gt"),
        gt: ds.join("gt"),
        report: report_path.clone(),
        allow_missing: false,
    })
    .unwrap();
    assert_eq!(manifest.command, "eval");

    let report: texterase::cli::EvalReport =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.schema_version, 1);
    assert_eq!(report.per_image.len(), 8);
    assert_eq!(report.aggregate.psnr, 100.0);
    assert_eq!(report.aggregate.mssim, 100.0);
    assert_eq!(report.aggregate.mse, 0.0);
    assert_eq!(report.aggregate.age, 0.0);
    assert_eq!(report.aggregate.peps, 0.0);
    assert_eq!(report.aggregate.pceps, 0.0);

    let csv = std::fs::read_to_string(report_path.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 9, "header plus one row per image");
    assert!(csv.starts_with("name,psnr,mssim,mse,age,peps,pceps"));
}
