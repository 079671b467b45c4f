use dpn::config::RenderConfig;
use dpn::env::{collect_random, pointmass_step, reacher_end_effector, reacher_step, render, true_distance, EnvKind, EnvState};
use dpn::io::{dataset_size, decode_dataset, encode_dataset, load_dataset, save_dataset, FormatError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

#[test]
fn pointmass_examples() {
    assert_eq!(pointmass_step([0.0, 0.0], [1.0, 0.0]), [0.1, 0.0]);
    assert_eq!(pointmass_step([0.95, 0.0], [1.0, 0.0]), [1.0, 0.0]);
    assert_eq!(pointmass_step([0.0, 0.0], [5.0, -5.0]), [0.1, -0.1]);
}

#[test]
fn random_walks_stay_in_the_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let mut s = EnvState::random(EnvKind::PointMass, &mut rng, false);
        for _ in 0..50 {
            s = s.step([rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
            assert!(s.q.iter().all(|v| v.abs() <= 1.0));
        }
    }
}

#[test]
fn rendering_is_deterministic_and_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = RenderConfig {
        distractor: true,
        ..RenderConfig::default()
    };
    for kind in [EnvKind::PointMass, EnvKind::Reacher] {
        for _ in 0..20 {
            let s = EnvState::random(kind, &mut rng, true);
            let a = render(&s, &cfg);
            assert_eq!(a, render(&s, &cfg));
            assert_eq!(a.shape(), &[1, 16, 16]);
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn blob_centroid_tracks_the_position() {
    let cfg = RenderConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        // Away from the border, where clipping would pull the centroid inward.
        let q = [rng.random_range(-0.75..0.75), rng.random_range(-0.75..0.75)];
        let img = render(&EnvState::new(EnvKind::PointMass, q), &cfg);
        let (mut m, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for i in 0..16 {
            for j in 0..16 {
                let v = img.data()[i * 16 + j];
                m += v;
                cx += v * j as f64;
                cy += v * i as f64;
            }
        }
        let (px, py) = ((q[0] + 1.0) * 7.5, (q[1] + 1.0) * 7.5);
        assert!((cx / m - px).hypot(cy / m - py) < 1.0, "q {q:?}");
    }
}

#[test]
fn reacher_examples() {
    let close = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12;
    assert!(close(reacher_end_effector([0.0, 0.0]), [0.9, 0.0]));
    assert!(close(reacher_end_effector([PI / 2.0, 0.0]), [0.0, 0.9]));
    let wrapped = reacher_step([PI - 0.01, 0.0], [1.0, 0.0]);
    assert!(wrapped[0] >= -PI && wrapped[0] < PI);
    assert!((wrapped[0] - (PI - 0.01 + 0.15 - 2.0 * PI)).abs() < 1e-12);
}

#[test]
fn distance_examples() {
    let a = EnvState::new(EnvKind::PointMass, [0.0, 0.0]);
    let b = EnvState::new(EnvKind::PointMass, [0.3, 0.4]);
    assert!((true_distance(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    assert_eq!(true_distance(&a, &a).unwrap(), 0.0);
    assert!(true_distance(&a, &EnvState::new(EnvKind::Reacher, [0.0, 0.0])).is_err());
}

fn point() -> impl Strategy<Value = EnvState> {
    (-1.0f64..=1.0, -1.0f64..=1.0).prop_map(|(x, y)| EnvState::new(EnvKind::PointMass, [x, y]))
}

proptest! {
    #[test]
    fn true_distance_is_a_metric(a in point(), b in point(), c in point()) {
        let d = |x: &EnvState, y: &EnvState| true_distance(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!(d(&a, &b) >= 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn stepping_and_rendering_are_pure(x in -1.0f64..=1.0, y in -1.0f64..=1.0, ax in -2.0f64..2.0, ay in -2.0f64..2.0) {
        for kind in [EnvKind::PointMass, EnvKind::Reacher] {
            let s = EnvState::new(kind, [x, y]);
            prop_assert_eq!(s.step([ax, ay]), s.step([ax, ay]));
            let cfg = RenderConfig::default();
            prop_assert_eq!(render(&s.step([ax, ay]), &cfg), render(&s.step([ax, ay]), &cfg));
        }
    }
}

#[test]
fn collection_is_deterministic_with_horizon_plus_one_frames() {
    let cfg = RenderConfig::default();
    let a = collect_random(EnvKind::Reacher, 5, 7, &cfg, 4).unwrap();
    assert_eq!(a, collect_random(EnvKind::Reacher, 5, 7, &cfg, 4).unwrap());
    assert_ne!(a, collect_random(EnvKind::Reacher, 5, 7, &cfg, 5).unwrap());
    for e in 0..5 {
        assert_eq!(a.episode_len(e), 7);
        assert_eq!(a.episodes[e].observations.len(), 8 * a.obs_len());
    }
    assert!(collect_random(EnvKind::PointMass, 0, 7, &cfg, 4).is_err());
}

#[test]
fn collected_actions_have_zero_mean() {
    let ds = collect_random(EnvKind::PointMass, 1000, 50, &RenderConfig::default(), 6).unwrap();
    let actions: Vec<f64> = ds.episodes.iter().flat_map(|e| e.actions.iter().map(|&v| v as f64)).collect();
    assert_eq!(actions.len(), 100_000);
    let n = actions.len() as f64;
    let mean = actions.iter().sum::<f64>() / n;
    let var = actions.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 3.0 * (var / n).sqrt(), "mean {mean}");
}

#[test]
fn dataset_roundtrip_is_exact() {
    let cfg = RenderConfig {
        distractor: true,
        ..RenderConfig::default()
    };
    let ds = collect_random(EnvKind::PointMass, 3, 5, &cfg, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.dpnd");
    save_dataset(&ds, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, dataset_size(&ds));
}

#[test]
fn file_size_follows_from_the_header() {
    let ds = collect_random(EnvKind::Reacher, 4, 6, &RenderConfig::default(), 8).unwrap();
    let bytes = encode_dataset(&ds).unwrap();
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
    let (c, h, w, a, s) = (u16_at(9), u16_at(11), u16_at(13), u16_at(15), u16_at(17));
    let episodes = u32::from_le_bytes(bytes[19..23].try_into().unwrap()) as usize;
    let mut offset = 23;
    for _ in 0..episodes {
        let l = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
        offset += 4 + 4 * ((l + 1) * c * h * w + l * a + (l + 1) * s);
    }
    assert_eq!(offset + 4, bytes.len());
}

#[test]
fn corrupted_magic_is_reported() {
    let ds = collect_random(EnvKind::PointMass, 1, 2, &RenderConfig::default(), 9).unwrap();
    let mut bytes = encode_dataset(&ds).unwrap();
    bytes[0] = b'X';
    assert!(matches!(decode_dataset(&bytes), Err(FormatError::BadMagic { .. })));
}
