use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::nn::finite_difference_check;
use crate::sim::{randomize_scene, render_depth, GripperState, RandomizationConfig, Scene, SceneObject};

fn tiny_encoder() -> Network {
    let cfg = CaeConfig { num_images: 16, epochs: 1, batch_size: 8, ..CaeConfig::default() };
    pretrain_cae(&cfg, 11, |_, _| {}).unwrap().0.encoder
}

fn policy() -> Policy {
    Policy::new(tiny_encoder(), TableSpec::default(), PolicyConfig::default(), 5).unwrap()
}

fn lone_target_scene() -> Scene {
    let target = SceneObject {
        id: 0,
        center: Point2::new(0.5, 0.45),
        radius: 0.03,
        height: 0.1,
        base_radius: 0.03,
        standing: true,
        is_target: true,
    };
    Scene {
        table: TableSpec::default(),
        objects: vec![target],
        gripper: GripperState { position: Point2::new(0.5, 0.05), radius: 0.05, closed: false },
    }
}

fn experience(reward: f64) -> Experience {
    Experience {
        feature: vec![0.0; FEATURE_DIM],
        target: Point2::new(0.5, 0.4),
        start: Point2::new(0.5, 0.05),
        anchors: vec![0.5, 0.1, 0.5, 0.2, 0.5, 0.3],
        reward,
        noop_reward: 0.0,
        fell: false,
        heights: None,
    }
}

#[test]
fn untrained_encoder_is_rejected() {
    let mut rng = seed::rng(1);
    let cae: Cae = Cae::new(CaeShape::default(), &mut rng).unwrap();
    let scene = randomize_scene(3, &RandomizationConfig::default()).unwrap();
    let err = encode_state(&render_depth(&scene), Point2::new(0.5, 0.3), &cae.encoder).unwrap_err();
    assert_eq!(err, PolicyError::UntrainedEncoder);
}

#[test]
fn encoding_is_deterministic_and_passes_target_through() {
    let p = policy();
    let a = randomize_scene(1, &RandomizationConfig::default()).unwrap();
    let b = randomize_scene(2, &RandomizationConfig::default()).unwrap();
    let g = Point2::new(0.37, 0.29);
    let sa = p.encode(&render_depth(&a), g).unwrap();
    assert_eq!(sa, p.encode(&render_depth(&a), g).unwrap());
    assert_eq!(sa.target, g);
    assert_eq!(sa.feature.len(), FEATURE_DIM);
    let sb = p.encode(&render_depth(&b), g).unwrap();
    let dist: f32 = sa.feature.iter().zip(&sb.feature).map(|(x, y)| (x - y) * (x - y)).sum();
    assert!(dist > 0.0);
}

#[test]
fn decoded_means_stay_on_the_table() {
    let p = policy();
    let state = PolicyState { feature: vec![0.3; FEATURE_DIM], target: Point2::new(0.95, 0.55) };
    let mut rng = seed::rng(4);
    for _ in 0..50 {
        // Huge latents push the raw outputs far from the base line.
        let z = LatentVector(LatentVector::sample(4, &mut rng).0.iter().map(|v| v * 50.0).collect());
        let g = p.decode_anchors(&z, &state, Point2::new(0.05, 0.05)).unwrap();
        assert_eq!(g, p.decode_anchors(&z, &state, Point2::new(0.05, 0.05)).unwrap());
        for pt in g.mean_points() {
            assert!(p.table.contains(pt), "{pt:?}");
        }
        assert!(g.std.iter().all(|&s| s >= p.config.std_floor));
    }
}

#[test]
fn fresh_decoder_starts_at_the_configured_std() {
    let p = policy();
    let state = PolicyState { feature: vec![0.0; FEATURE_DIM], target: Point2::new(0.5, 0.4) };
    let g = p.decode_anchors(&LatentVector(vec![0.0; 4]), &state, Point2::new(0.5, 0.05)).unwrap();
    for s in g.std {
        assert!((s - p.config.init_std).abs() < 0.02, "{s}");
    }
}

#[test]
fn rollout_is_deterministic_and_auditable() {
    let p = policy();
    let scene = randomize_scene(9, &RandomizationConfig::default()).unwrap();
    let z = LatentVector(vec![0.5, -1.0, 0.25, 0.0]);
    let a = rollout(&p, &scene, &z, 77, RolloutMode::Explore).unwrap();
    let b = rollout(&p, &scene, &z, 77, RolloutMode::Explore).unwrap();
    assert_eq!(a, b);
    let audit = crate::rewards::total_reward(&a.before, &a.after, a.start, a.target_id, &p.config.reward).unwrap();
    assert_eq!(audit, a.reward);
    assert!(a.trajectory.constant_speed);
}

#[test]
fn rollout_without_obstacles_keeps_margins() {
    let p = policy();
    let scene = lone_target_scene();
    let r = rollout(&p, &scene, &LatentVector(vec![0.0; 4]), 1, RolloutMode::Mean).unwrap();
    // Only the target is present, so there are no margin terms and nothing to knock over.
    assert_eq!(r.reward.safety, 10.0);
    assert!(r.reward.margins.is_empty());
    assert_eq!(r.reward.total, r.noop_reward);
}

#[test]
fn candidates_are_distinct_sorted_and_reproducible() {
    let p = policy();
    let scene = randomize_scene(21, &RandomizationConfig::default()).unwrap();
    let c = sample_candidates(&p, &scene, 4, 8).unwrap();
    assert_eq!(c.len(), 4);
    let mut ids: Vec<u32> = c.iter().map(|c| c.id).collect();
    ids.sort();
    assert_eq!(ids, vec![0, 1, 2, 3]);
    assert!(c.windows(2).all(|w| w[0].score >= w[1].score));
    assert_eq!(c, sample_candidates(&p, &scene, 4, 8).unwrap());
    assert_eq!(sample_candidates(&p, &scene, 1, 8).unwrap().len(), 1);
    assert!(sample_candidates(&p, &scene, 0, 8).is_err());
}

#[test]
fn softmax_weight_cases() {
    let w = softmax_weights(&[3.0; 5], 10.0);
    assert!(w.iter().all(|&v| v == 0.2));
    let w = softmax_weights(&[0.0, 1.0, 0.5], 1e-6);
    assert!((w[1] - 1.0).abs() < 1e-12 && w[0] < 1e-12);
    let w = softmax_weights(&[-40.0, 12.5, 3.0, 0.0, 7.25, -1.0], 10.0);
    assert!((w.iter().sum::<f64>() - 1.0).abs() <= 4.0 * f64::EPSILON);
}

#[test]
fn replay_buffer_evicts_oldest_first() {
    let mut buf = ReplayBuffer::new(3);
    for i in 0..5 {
        buf.push(experience(i as f64));
        assert!(buf.len() <= 3);
    }
    let kept: Vec<f64> = buf.iter().map(|e| e.reward).collect();
    assert_eq!(kept, vec![2.0, 3.0, 4.0]);
}

#[test]
fn training_needs_a_full_batch() {
    let mut p = policy();
    let mut buf = ReplayBuffer::new(100);
    buf.push(experience(1.0));
    assert!(matches!(p.train_iteration(&buf, 1), Err(PolicyError::BufferTooSmall { have: 1, need: 64 })));
}

#[test]
fn frozen_encoder_is_bitwise_unchanged() {
    let mut p = policy();
    let before = p.encoder.clone();
    let decoder_before = p.cvae.p.clone();
    let mut buf = ReplayBuffer::new(200);
    for i in 0..100 {
        buf.push(experience((i % 7) as f64));
    }
    let stats = p.train_iteration(&buf, 3).unwrap();
    assert_eq!(stats.updates, p.config.updates_per_iteration);
    assert!(stats.kl >= 0.0);
    assert_eq!(p.encoder, before);
    assert_ne!(p.cvae.p, decoder_before);
}

#[test]
fn finetuning_moves_the_encoder() {
    let cfg = PolicyConfig { finetune_encoder: true, batch_size: 8, updates_per_iteration: 2, ..PolicyConfig::default() };
    let mut p = Policy::new(tiny_encoder(), TableSpec::default(), cfg, 5).unwrap();
    let before = p.encoder.clone();
    let scene = randomize_scene(4, &RandomizationConfig::default()).unwrap();
    let heights = depth_input(&render_depth(&scene));
    let mut buf = ReplayBuffer::new(50);
    for i in 0..10 {
        let mut e = experience(i as f64);
        e.heights = Some(heights.clone());
        buf.push(e);
    }
    p.train_iteration(&buf, 1).unwrap();
    assert_ne!(p.encoder, before);
}

#[test]
fn checkpoint_round_trip() {
    let p = policy();
    let (manifest, blob) = p.export();
    let q = Policy::import(&manifest, &blob).unwrap();
    assert_eq!(q.encoder, p.encoder);
    assert_eq!(q.cvae, p.cvae);
    assert_eq!(q.adam_p, p.adam_p);
    assert!(Policy::import(&manifest, &blob[1..]).is_err());
}

fn tiny_rows(rng: &mut seed::Rng) -> Vec<BatchRow> {
    let table = TableSpec::default();
    let cfg = PolicyConfig { anchor_scale: 0.1, ..PolicyConfig::default() };
    let weights = softmax_weights(&[1.0, 4.0, -2.0, 0.5], 2.0);
    (0..4)
        .map(|i| {
            let start = Point2::new(0.2 + 0.1 * i as f64, 0.05);
            let target = Point2::new(0.6 - 0.05 * i as f64, 0.4);
            BatchRow {
                anchors: (0..ANCHOR_DIM).map(|j| if j % 2 == 0 { 0.3 + 0.07 * j as f64 } else { 0.1 + 0.05 * j as f64 }).collect(),
                feature: (0..FEATURE_DIM).map(|k| ((k + i) as f32 * 0.37).sin() * 0.8).collect(),
                frame: DecodeFrame::new(start, target, table, &cfg),
                weight: weights[i],
                eps: LatentVector::sample(2, rng).0,
            }
        })
        .collect()
}

#[test]
fn cvae_loss_gradient_matches_finite_differences() {
    let mut rng = seed::rng(17);
    // Larger std so the likelihood is not dominated by a few huge terms.
    let cvae: Cvae<f64> = Cvae::with_sizes(2, 8, 0.08, &mut rng);
    let rows = tiny_rows(&mut rng);
    let beta = 0.3;
    let out = cvae_loss(&cvae, &rows, beta).unwrap();
    let mut nets = [cvae.q.clone(), cvae.p.clone()];
    let report = finite_difference_check(&mut nets, &[out.grads.q, out.grads.p], 1e-3, |n| {
        let c = Cvae { q: n[0].clone(), p: n[1].clone(), latent_dim: 2 };
        cvae_loss(&c, &rows, beta).unwrap().loss
    });
    assert!(report.checked > 300);
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn cae_loss_gradient_matches_finite_differences() {
    let mut rng = seed::rng(23);
    let shape = CaeShape { height: 6, width: 8, channels: (2, 3), features: 3 };
    let cae: Cae<f64> = Cae::new(shape, &mut rng).unwrap();
    let images: Vec<f64> = (0..2 * shape.pixels()).map(|i| ((i as f64) * 0.61).sin().abs()).collect();
    let out = cae_loss(&cae, &images, 2).unwrap();
    let mut nets = [cae.encoder.clone(), cae.decoder.clone()];
    let report = finite_difference_check(&mut nets, &[out.encoder, out.decoder], 1e-3, |n| {
        let c = Cae { encoder: n[0].clone(), decoder: n[1].clone() };
        cae_loss(&c, &images, 2).unwrap().loss
    });
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}
