use icmil_core::bagdata::{generate_synthetic, load_dataset, save_dataset, split_dataset, BagSize, SyntheticSpec};
use icmil_core::checkpoint::{load_checkpoint, save_checkpoint};
use icmil_core::milnet::AggregatorKind;
use icmil_core::orchestrator::{evaluate_model, run_icmil_on, FineTuneMode, PhaseReport, RunReport, TrainConfig};
use tempfile::TempDir;

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        num_bags: 120,
        bag_size: BagSize { min: 8, max: 16 },
        d_raw: 6,
        positive_ratio: 0.2,
        separation: 3.0,
        seed: 21,
        ..SyntheticSpec::default()
    }
}

fn config(backbone: AggregatorKind, mode: FineTuneMode) -> TrainConfig {
    TrainConfig {
        backbone,
        mode,
        iterations: 2,
        classifier_epochs: 15,
        classifier_lr: 5e-3,
        embedder_lr: 1e-3,
        embedder_passes: 1,
        embedder_batch: 32,
        hidden: vec![12],
        rep_dim: 8,
        attention_dim: 6,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn dataset_file_train_checkpoint_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bags.jsonl");
    save_dataset(&generate_synthetic(&spec()).unwrap(), &path).unwrap();
    let ds = load_dataset(&path).unwrap();
    assert_eq!(ds, generate_synthetic(&spec()).unwrap());

    let cfg = TrainConfig {
        classifier_epochs: 40,
        ..config(AggregatorKind::GatedAttention, FineTuneMode::Confidence)
    };
    let (model, report) = run_icmil_on(&ds, &cfg).unwrap();
    assert_eq!(report.evaluations.len(), 3);
    assert!(report.baseline().unwrap().metrics.auc > 0.8, "{:?}", report.baseline());

    let ckpt = dir.path().join("m.ckpt");
    save_checkpoint(&model, &ckpt).unwrap();
    let restored = load_checkpoint(&ckpt).unwrap();
    let (_, _, test) = split_dataset(&ds, cfg.split, cfg.seed).unwrap();
    assert_eq!(evaluate_model(&restored, &test).unwrap(), report.last().unwrap().metrics);

    let back: RunReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn every_backbone_and_mode_completes_with_finite_losses() {
    let ds = generate_synthetic(&spec()).unwrap();
    for backbone in [AggregatorKind::Mean, AggregatorKind::Max, AggregatorKind::GatedAttention] {
        for mode in [FineTuneMode::Naive, FineTuneMode::Vanilla, FineTuneMode::Confidence] {
            let (_, report) = run_icmil_on(&ds, &config(backbone, mode)).unwrap();
            for phase in &report.phases {
                let losses = match phase {
                    PhaseReport::Classifier(c) => &c.epoch_losses,
                    PhaseReport::Embedder(e) => &e.pass_losses,
                };
                assert!(losses.iter().all(|l| l.is_finite() && *l >= 0.0), "{backbone:?} {mode:?}");
            }
            for e in &report.evaluations {
                assert!((0.0..=1.0).contains(&e.metrics.auc));
            }
        }
    }
}

#[test]
fn embedder_phase_reports_confidence_by_backbone() {
    let ds = generate_synthetic(&spec()).unwrap();
    let mean_conf = |backbone| {
        let (_, report) = run_icmil_on(&ds, &config(backbone, FineTuneMode::Confidence)).unwrap();
        match &report.phases[1] {
            PhaseReport::Embedder(e) => e.mean_confidence,
            other => panic!("expected embedder phase, got {other:?}"),
        }
    };
    assert_eq!(mean_conf(AggregatorKind::Mean), 1.0);
    assert_eq!(mean_conf(AggregatorKind::Max), 1.0);
    let gated = mean_conf(AggregatorKind::GatedAttention);
    assert!(gated > 0.0 && gated < 1.0, "{gated}");
}
