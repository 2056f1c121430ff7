//! The evaluation pipeline end to end: construction oracles for probe
//! accuracy, report shape, and metric wiring.

mod common;

use vfae_core::data::{generate_synthetic, SyntheticSpec};
use vfae_core::distributions::LikelihoodKind;
use vfae_core::eval::{
    evaluate_model, fit_linear_probe, EmbeddingSet, EvalConfig, ProbeTarget, Provenance,
};
use vfae_core::model::{Activation, ModelConfig, Objective, SampleMode, VfaeModel};
use vfae_core::tensor::Tensor;
use vfae_core::train::{train, TrainConfig};

fn model_config(x_dim: usize) -> ModelConfig {
    ModelConfig {
        x_dim,
        s_groups: 2,
        y_classes: 2,
        z1_dim: 4,
        z2_dim: 3,
        encoder_z1_hidden: vec![12],
        encoder_z2_hidden: vec![8],
        decoder_z1_hidden: vec![8],
        decoder_x_hidden: vec![12],
        likelihood: LikelihoodKind::Bernoulli,
        activation: Activation::Softplus,
        use_s: true,
    }
}

#[test]
fn noise_embeddings_probe_at_chance_through_the_full_pipeline() {
    // x carries no s information (zero shift), so z1 of any model is
    // independent of s; the probes must sit at chance.
    let data = generate_synthetic(&SyntheticSpec {
        n: 2000,
        x_dim: 6,
        shift_scale: 0.0,
        noise_scale: 0.5,
        train_fraction: 0.5,
        validation_fraction: 0.0,
        seed: 1,
        ..Default::default()
    });
    let dataset = data.dataset.binarize();
    let model = VfaeModel::new(model_config(6), 2);
    let report = evaluate_model(
        &model,
        &dataset,
        &EvalConfig { seed: 3, mode: SampleMode::Sample, model_id: "untrained".into() },
    )
    .unwrap();
    let chance = report.s_chance;
    assert!(
        (report.probe_s_linear.accuracy - chance).abs() <= 0.07,
        "linear probe {} should be within 0.07 of chance {chance}",
        report.probe_s_linear.accuracy
    );
    assert!(
        (report.probe_s_nonlinear.accuracy - chance).abs() <= 0.07,
        "nonlinear probe {} should be within 0.07 of chance {chance}",
        report.probe_s_nonlinear.accuracy
    );
}

#[test]
fn identity_embeddings_probe_perfectly() {
    // z literally equals the one-hot of s.
    let n = 400;
    let mut z = Vec::with_capacity(n * 2);
    let mut s = Vec::with_capacity(n);
    for i in 0..n {
        let g = i % 2;
        z.push(if g == 0 { 1.0 } else { 0.0 });
        z.push(if g == 1 { 1.0 } else { 0.0 });
        s.push(g);
    }
    let set = EmbeddingSet {
        z: Tensor::matrix(n, 2, z),
        s,
        y: None,
        provenance: Provenance { model_id: "identity".into(), mode: SampleMode::Mean, seed: 0 },
    };
    let probe = fit_linear_probe(&set, ProbeTarget::S).unwrap();
    assert_eq!(probe.accuracy(&set.z, &set.s), 1.0);
}

#[test]
fn report_is_machine_readable_and_complete() {
    let data = generate_synthetic(&SyntheticSpec {
        n: 700,
        x_dim: 6,
        s_y_correlation: 0.3,
        shift_scale: 1.0,
        noise_scale: 0.5,
        train_fraction: 0.6,
        validation_fraction: 0.2,
        seed: 10,
        ..Default::default()
    });
    let dataset = data.dataset.binarize();
    let model = VfaeModel::new(model_config(6), 11);
    let cfg = TrainConfig {
        epochs: 8,
        seed: 12,
        objective: Objective { alpha: 2.0, beta: 2.0, use_mmd: true, use_label_stage: true },
        patience: None,
        rff_features: 64,
        ..Default::default()
    };
    let result = train(model, &dataset, &cfg).unwrap();
    let mut model = result.model;
    model.params.restore(&result.best_averaged);

    let report = evaluate_model(
        &model,
        &dataset,
        &EvalConfig { seed: 13, mode: SampleMode::Sample, model_id: "trained".into() },
    )
    .unwrap();

    // Machine-readable: survives a JSON round trip with the fields intact.
    let json = report.to_json();
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in [
        "schema_version",
        "provenance",
        "probe_s_linear",
        "probe_s_nonlinear",
        "s_chance",
        "discrimination",
        "discrimination_prob",
        "y_accuracy_model",
        "y_chance",
        "proxy_a_distance",
        "test_rows",
    ] {
        assert!(parsed.get(key).is_some(), "report is missing {key}");
    }
    assert_eq!(parsed["schema_version"], 1);
    assert_eq!(parsed["provenance"]["model_id"], "trained");

    // Binary s and y: the optional metrics must all be present.
    assert!(report.discrimination.is_some());
    assert!(report.discrimination_prob.is_some());
    assert!(report.y_accuracy_model.is_some());
    assert!(report.proxy_a_distance.is_some());
    let table = report.render_table();
    assert!(table.contains("probe-s accuracy (linear)"));
    assert!(table.contains("discrimination"));

    // Determinism: the same seed reproduces the same numbers.
    let again = evaluate_model(
        &model,
        &dataset,
        &EvalConfig { seed: 13, mode: SampleMode::Sample, model_id: "trained".into() },
    )
    .unwrap();
    assert_eq!(report.probe_s_linear.accuracy, again.probe_s_linear.accuracy);
    assert_eq!(report.y_accuracy_model, again.y_accuracy_model);
}

#[test]
fn evaluating_an_untrained_model_completes_near_chance() {
    let data = generate_synthetic(&SyntheticSpec {
        n: 1200,
        x_dim: 6,
        shift_scale: 0.6,
        noise_scale: 0.5,
        train_fraction: 0.5,
        validation_fraction: 0.0,
        seed: 20,
        ..Default::default()
    });
    let dataset = data.dataset.binarize();
    let model = VfaeModel::new(model_config(6), 21);
    let report = evaluate_model(
        &model,
        &dataset,
        &EvalConfig { seed: 22, mode: SampleMode::Sample, model_id: "fresh".into() },
    )
    .unwrap();
    let y_acc = report.y_accuracy_model.expect("labeled test rows exist");
    assert!(
        (y_acc - 0.5).abs() <= 0.12,
        "an untrained classifier should sit near chance on balanced data, got {y_acc}"
    );
}
