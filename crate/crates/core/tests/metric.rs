mod common;

use common::*;
use dpn::config::RenderConfig;
use dpn::env::{render, EnvKind, EnvState};
use dpn::metric::{
    latent_distance_trace, metric_correlation, reward_from_loss, spearman, Embedder, GoalReward, Metric,
};
use dpn::model::{InverseModel, VaeModel};
use dpn_tensor::{huber, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One metric of each kind, all on 16x16 observations.
fn metrics() -> Vec<Metric> {
    let ds = small_dataset(2, 5, 0);
    let dims = dpn::training::model_dims(&ds);
    let cfg = dpn::config::TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let embedders = vec![
        Embedder::Dpn(dpn::model::DpnParams::new(dims, &cfg, &mut rng).unwrap()),
        Embedder::Inverse(InverseModel::new(dims, &cfg, &mut rng).unwrap()),
        Embedder::Vae(VaeModel::new(dims, &cfg, &mut rng).unwrap()),
        Embedder::Pixel,
    ];
    embedders.into_iter().map(|e| Metric::new(e, 0.85).unwrap()).collect()
}

fn random_obs(rng: &mut impl Rng) -> Tensor {
    render(&EnvState::random(EnvKind::PointMass, rng, true), &RenderConfig {
        distractor: true,
        ..RenderConfig::default()
    })
}

#[test]
fn reward_at_the_goal_is_minus_one_for_every_kind() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ms = metrics();
    for _ in 0..100 {
        let o = random_obs(&mut rng);
        for m in &ms {
            let mut r = GoalReward::new(m, &o).unwrap();
            assert_eq!(r.reward(&o).unwrap(), -1.0, "{:?}", m.kind());
            assert_eq!(m.loss(&o, &o).unwrap(), 0.0);
        }
    }
}

#[test]
fn metric_is_symmetric_and_matches_scalar_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in &metrics() {
        for _ in 0..10 {
            let (a, b) = (random_obs(&mut rng), random_obs(&mut rng));
            let ab = m.loss(&a, &b).unwrap();
            assert_eq!(ab, m.loss(&b, &a).unwrap());
            let (ea, eb) = (m.embedder.embed(&a).unwrap(), m.embedder.embed(&b).unwrap());
            let mut expected = 0.0;
            for i in 0..ea.len() {
                let d = (ea[i] - eb[i]).abs();
                expected += if d <= 0.85 { 0.5 * d * d } else { 0.85 * (d - 0.5 * 0.85) };
            }
            assert!((ab - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn goal_is_an_argmin_over_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for m in &metrics() {
        let goal = random_obs(&mut rng);
        let mut candidates: Vec<Tensor> = (0..20).map(|_| random_obs(&mut rng)).collect();
        candidates.insert(7, goal.clone());
        let losses: Vec<f64> = candidates.iter().map(|c| m.loss(c, &goal).unwrap()).collect();
        let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(losses[7], min);
    }
}

#[test]
fn reward_strictly_decreases_with_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = metrics().pop().unwrap();
    let mut losses: Vec<f64> = (0..100)
        .map(|_| m.loss(&random_obs(&mut rng), &random_obs(&mut rng)).unwrap())
        .collect();
    losses.sort_by(f64::total_cmp);
    losses.dedup();
    let rewards: Vec<f64> = losses.iter().map(|&l| reward_from_loss(l).0).collect();
    assert!(rewards.windows(2).all(|w| w[1] < w[0]));
    assert!((reward_from_loss(1.0).0 + std::f64::consts::E).abs() < 1e-12);
}

fn brute_force_spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    cov / (sx * sy)
}

proptest! {
    #[test]
    fn spearman_matches_rank_then_pearson(seed in any::<u64>(), ties in 1u32..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Rounding to a few levels produces ties.
        let levels = ties as f64 * 3.0;
        let x: Vec<f64> = (0..20).map(|_| (rng.random::<f64>() * levels).round()).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let s = spearman(&x, &y).unwrap();
        if !s.degenerate {
            prop_assert!((s.rho - brute_force_spearman(&x, &y)).abs() < 1e-12);
        }
    }
}

#[test]
fn correlation_needs_ten_pairs_and_is_perfect_for_pixels_of_distant_blobs() {
    let m = Metric::new(Embedder::Pixel, 0.85).unwrap();
    let cfg = RenderConfig::default();
    assert!(metric_correlation(&m, EnvKind::PointMass, &cfg, 9, 0).is_err());
    let report = metric_correlation(&m, EnvKind::PointMass, &cfg, 50, 0).unwrap();
    assert_eq!(report.pairs.len(), 50);
    assert!(report.spearman.rho > 0.3, "{}", report.spearman.rho);
    let d: Vec<f64> = report.pairs.iter().map(|p| p.true_distance).collect();
    let neg: Vec<f64> = d.iter().map(|v| -v).collect();
    assert_eq!(spearman(&d, &d).unwrap().rho, 1.0);
    assert_eq!(spearman(&d, &neg).unwrap().rho, -1.0);
}

#[test]
fn traces_start_at_one_and_follow_the_trajectory() {
    let cfg = RenderConfig::default();
    let ms = metrics();
    let goal_state = EnvState::new(EnvKind::PointMass, [0.6, 0.2]);
    let goal = render(&goal_state, &cfg);
    // Straight line toward the goal: true distance never increases.
    let states: Vec<EnvState> = (0..=10)
        .map(|t| {
            let f = t as f64 / 10.0;
            EnvState::new(EnvKind::PointMass, [-0.8 + 1.4 * f, -0.5 + 0.7 * f])
        })
        .collect();
    let dist: Vec<f64> = states.iter().map(|s| dpn::env::true_distance(s, &goal_state).unwrap()).collect();
    assert!(dist.windows(2).all(|w| w[1] <= w[0]));
    let obs: Vec<Tensor> = states.iter().map(|s| render(s, &cfg)).collect();
    for m in &ms {
        let trace = latent_distance_trace(m, &obs, &goal).unwrap();
        assert!(trace.normalized);
        assert_eq!(trace.values.len(), 11);
        assert_eq!(trace.values[0], 1.0);
        let constant = latent_distance_trace(m, &vec![obs[0].clone(); 5], &goal).unwrap();
        assert!(constant.values.iter().all(|&v| v == 1.0));
    }
    let at_goal = latent_distance_trace(&ms[3], &[goal.clone(), obs[0].clone()], &goal).unwrap();
    assert!(!at_goal.normalized);
    assert_eq!(at_goal.values[0], 0.0);
}

#[test]
fn huber_metric_uses_the_reward_threshold() {
    assert_eq!(dpn::config::MetricConfig::default().delta, 0.85);
    assert!((huber(2.0, 0.85) - 0.85 * (2.0 - 0.425)).abs() < 1e-15);
    assert!(Metric::new(Embedder::Pixel, 0.0).is_err());
}
