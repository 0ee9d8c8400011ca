//! Behavior of the trained models in each data regime: what ERM relies on with
//! and without example-specific features, what MAT recovers, what the held-out
//! probe sees and how self-influence splits across groups.

use spurlab::expcli::presets::{
    majority_minority, run_fig6, thm1_mat_rescue, with_auto_lr, Fig2Config, Fig6Config, Thm1Config,
};
use spurlab::heldout::{xrm_probe, HeldOutProbe, ProbeConfig};
use spurlab::influence::{self_influence, AlgorithmHandle};
use spurlab::linmodel::erm_loss;
use spurlab::matrix::Mat;
use spurlab::synthdata::{gen_classification, seeded_rng, ClassificationConfig, Dataset, Split};
use spurlab::training::{
    evaluate_groups, infer_annotations, train_erm, train_reweighted, Optimizer, TrainConfig,
};

fn newton(lambda: f64) -> TrainConfig {
    TrainConfig { optimizer: Optimizer::NewtonCg, steps: 200, grad_tol: 1e-6, eval_every: 1, lambda, ..Default::default() }
}

fn train_and_test(cfg: &ClassificationConfig, n_test: usize) -> (Dataset, Dataset) {
    let mut rng = seeded_rng(cfg.seed);
    let train = gen_classification(cfg, Split::Train, &mut rng).unwrap();
    let test = gen_classification(&ClassificationConfig { n: n_test, ..cfg.clone() }, Split::Test, &mut rng).unwrap();
    (train, test)
}

fn argmax(v: &[f64]) -> usize {
    if v[1] > v[0] { 1 } else { 0 }
}

#[test]
fn without_example_features_erm_uses_the_core_feature() {
    let cfg = ClassificationConfig { sigma_eps: 0.0, ..ClassificationConfig::default() };
    let (train, test) = train_and_test(&cfg, 10_000);
    let (m, _) = train_erm(&train, &newton(1e-4), &mut seeded_rng(0)).unwrap();
    let (_, minority) = majority_minority(&evaluate_groups(&m, &test).unwrap(), 1);
    assert!(minority >= 0.95, "minority test accuracy {minority}");
}

#[test]
fn memorization_regime_fits_train_and_fails_minority() {
    let c = Thm1Config::default();
    let (train, test) = train_and_test(&c.data, 10_000);
    let (m, _) = train_erm(&train, &newton(c.lambda), &mut seeded_rng(0)).unwrap();
    assert!(evaluate_groups(&m, &train).unwrap().average >= 0.99);
    let (_, minority) = majority_minority(&evaluate_groups(&m, &test).unwrap(), 1);
    assert!(minority <= 0.10, "minority test accuracy {minority}");
}

#[test]
fn single_example_is_fit() {
    let data = Dataset::from_xy(vec![vec![1.0, -2.0]], vec![1], Split::Train).unwrap();
    let cfg = TrainConfig { lr: 0.5, steps: 2000, ..Default::default() };
    let (m, _) = train_erm(&data, &cfg, &mut seeded_rng(0)).unwrap();
    assert!(erm_loss(&m, &data, 0.0) < 1e-3);
}

#[test]
fn unit_weights_reproduce_erm() {
    let cfg = ClassificationConfig { n: 60, d: 5, ..ClassificationConfig::default() };
    let (train, _) = train_and_test(&cfg, 10);
    let tc = TrainConfig { lr: 0.05, steps: 300, lambda: 0.01, ..Default::default() };
    let (a, _) = train_erm(&train, &tc, &mut seeded_rng(0)).unwrap();
    let (b, _) = train_reweighted(&train, &vec![1.0; train.len()], &tc).unwrap();
    for (x, y) in a.w.iter().zip(&b.w) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn mat_recovers_the_minority() {
    let s = thm1_mat_rescue(&Thm1Config::default()).unwrap();
    assert!(s.test_minority >= 0.90, "minority {}", s.test_minority);
}

#[test]
fn mat_covers_all_eight_groups() {
    let r = run_fig6(&Fig6Config::default()).unwrap();
    let mat = &r.summary["mat"].test;
    assert_eq!(mat.per_group.len(), 8);
    assert!(mat.per_group.values().all(|&a| a >= 0.90), "{:?}", mat.per_group);
    assert!(r.summary["erm"].test.worst <= 0.60);
}

fn probe_for(data: &ClassificationConfig) -> (Dataset, HeldOutProbe) {
    let (train, _) = train_and_test(data, 10);
    let twin = with_auto_lr(&TrainConfig { lambda: 0.01, ..Default::default() }, &train.design(), true);
    let probe = xrm_probe(&train, &ProbeConfig { twin, label_flip: false }, &mut seeded_rng(0)).unwrap();
    (train, probe)
}

#[test]
fn probe_follows_the_spurious_attribute() {
    let (train, probe) = probe_for(&Thm1Config::default().data);
    let n = train.len() as f64;
    let agree = train.examples.iter().enumerate().filter(|(i, e)| argmax(probe.logits.row(*i)) == e.a[0] as usize);
    assert!(agree.count() as f64 / n >= 0.90);
    // Its mistakes are the minority.
    let flags = infer_annotations(&probe, &train).unwrap();
    let match_minority = train.examples.iter().zip(&flags).filter(|(e, &f)| f == !Dataset::is_majority(e)).count();
    assert!(match_minority as f64 / n >= 0.95, "{match_minority}");
}

#[test]
fn probe_on_core_only_data_follows_the_label() {
    let cfg = ClassificationConfig { gamma: 1e-9, sigma_eps: 0.0, d: 0, ..ClassificationConfig::default() };
    let (train, probe) = probe_for(&cfg);
    let agree = train.examples.iter().enumerate().filter(|(i, e)| argmax(probe.logits.row(*i)) == e.y).count();
    assert!(agree as f64 / train.len() as f64 >= 0.95);
}

#[test]
fn flags_of_perfect_and_inverted_probes() {
    let (train, mut probe) = probe_for(&ClassificationConfig { n: 20, d: 3, ..ClassificationConfig::default() });
    let rows: Vec<Vec<f64>> = train.examples.iter().map(|e| if e.y == 0 { vec![5.0, 0.0] } else { vec![0.0, 5.0] }).collect();
    probe.logits = Mat::from_rows(&rows).unwrap();
    assert!(infer_annotations(&probe, &train).unwrap().iter().all(|&f| !f));
    let flipped: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[1], r[0]]).collect();
    probe.logits = Mat::from_rows(&flipped).unwrap();
    assert!(infer_annotations(&probe, &train).unwrap().iter().all(|&f| f));
}

#[test]
fn minority_points_are_memorized_and_majority_points_are_not() {
    let c = Fig2Config::default();
    let data = ClassificationConfig { seed: c.seed, ..c.data.clone() };
    let train = gen_classification(&data, Split::Train, &mut seeded_rng(c.seed)).unwrap();
    let cfg = with_auto_lr(&c.erm, &train.design(), true);
    let handle = AlgorithmHandle::erm(cfg, c.seed);
    let minority = train.examples.iter().position(|e| !Dataset::is_majority(e)).unwrap();
    let majority = train.examples.iter().position(Dataset::is_majority).unwrap();
    let hi = self_influence(&handle, &train, minority).unwrap().value;
    let lo = self_influence(&handle, &train, majority).unwrap().value;
    assert!(hi >= 0.4, "minority self-influence {hi}");
    assert!(lo <= 0.1, "majority self-influence {lo}");
}
