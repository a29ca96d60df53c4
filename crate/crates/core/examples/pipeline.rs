//! End-to-end run on a small synthetic dataset: fit affine decoders, train
//! the classifier with the curriculum, then guard held-out trajectories.
//!
//! `cargo run --release --example pipeline -- [seed]`

use std::collections::BTreeMap;

use flowguard::detector::{make_default_plan, train_curriculum, Classifier, FeatureExtractor, FeatureSet};
use flowguard::diffusion::DatasetConfig;
use flowguard::guard::{evaluate_trajectories, GuardConfig};
use flowguard::linear::fit_closed_form;

fn main() -> flowguard::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut plan = make_default_plan(50)?;
    plan.seed = seed;
    plan.lr = 3e-3;
    plan.epochs_per_stage = 8;

    let train_cfg = DatasetConfig {
        n_per_model: 120,
        models: vec!["m0".into(), "m1".into()],
        steps: plan.union_steps(),
        seed,
        ..DatasetConfig::default()
    };
    let test_cfg = DatasetConfig { split: 1, n_per_model: 60, ..train_cfg.clone() };
    let sched = train_cfg.schedule()?;
    let train = (0..train_cfg.record_count()).map(|i| train_cfg.trajectory(&sched, i)).collect::<Result<Vec<_>, _>>()?;
    let test = (0..test_cfg.record_count()).map(|i| test_cfg.trajectory(&sched, i)).collect::<Result<Vec<_>, _>>()?;

    let mut decoders = BTreeMap::new();
    for (m, id) in train_cfg.models.iter().enumerate() {
        let dec = fit_closed_form(&train_cfg.fit_pairs(m, 1000, seed)?, 1e-6)?;
        eprintln!("{id}: affine fit loss {:.3e}", dec.fit_info().final_loss.unwrap_or(f64::NAN));
        decoders.insert(id.clone(), dec);
    }

    let image = train_cfg.decoder.image_dims;
    let extractor = FeatureExtractor::new(image, Some(0.2))?;
    let features = FeatureSet::from_trajectories(&train, &decoders, &extractor, &train_cfg.steps)?;
    let (clf, report) = train_curriculum(&features, &plan, Classifier::new(image, seed)?, None)?;
    eprintln!("trained in {} optimizer steps", report.optimizer_steps);

    let configs = decoders
        .into_iter()
        .map(|(m, d)| GuardConfig::new(&[20], 0.5, d, 0.2, clf.clone()).map(|g| (m, g)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    let metrics = evaluate_trajectories(&configs, &test)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}
