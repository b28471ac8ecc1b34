use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tasks::{expert_action, generate_scene, generate_suite, SceneMode, Task};
use super::*;
use crate::autodiff::check_gradients;
use crate::eptu::EptuConfig;

fn tiny_config() -> PolicyConfig {
    let eptu = EptuConfig {
        level_sizes: vec![21, 8, 3],
        multiplicities: vec![2, 2, 2],
        k_attn: 4,
        k_pool: 3,
        n_rbf: 4,
        edge_hidden: 6,
        film_hidden: 4,
        d_k: 12,
        ..EptuConfig::default()
    };
    let field = FieldConfig { multiplicity: 2, k: 4, n_rbf: 4, edge_hidden: 6, readout_hidden: 4, train_candidates: 27, test_candidates: 64, ..FieldConfig::default() };
    PolicyConfig { eptu, field, ..PolicyConfig::default() }
}

fn tiny_policy(seed: u64) -> (Policy, ParamStore) {
    let policy = Policy::new(tiny_config()).unwrap();
    let mut params = ParamStore::new();
    policy.init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (policy, params)
}

/// A demo thinned to `n` scene points.
fn small_demo(seed: u64, task: Task, n: usize) -> Demonstration {
    let mut d = generate_scene(&mut ChaCha8Rng::seed_from_u64(seed), task, SceneMode::Se2).demo;
    let step = d.observation.points.len() / n;
    d.observation.points = d.observation.points.iter().step_by(step).take(n).copied().collect();
    d.observation.colors = d.observation.colors.iter().step_by(step).take(n).copied().collect();
    d
}

#[test]
fn uniform_logits_give_log_counts() {
    let (policy, mut params) = tiny_policy(1);
    for name in ["qt.r2.w", "qt.r2.b", "qo.r2.w", "qo.r2.b", "qr.psi"] {
        params.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    }
    let demo = small_demo(2, Task::all()[0], 20);
    let mut tape = Tape::<f64>::new();
    let terms = policy.loss(&mut tape, &params, &demo).unwrap();
    let f = &policy.cfg.field;
    let levels = teacher_levels(&demo.observation.workspace, f.levels, f.train_candidates, demo.expert.position).unwrap();
    let expect_t: f64 = levels.iter().map(|(l, _)| (l.candidates.len() as f64).ln()).sum();
    assert!((tape.scalar(terms.translation) - expect_t).abs() < 1e-12);
    assert!((tape.scalar(terms.open) - 2f64.ln()).abs() < 1e-12);
    assert!((tape.scalar(terms.rotation) - (policy.heads.rotations.grid.len() as f64).ln()).abs() < 1e-12);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let (policy, params) = tiny_policy(3);
    let demo = small_demo(4, Task::all()[7], 20);
    let check = check_gradients(&params, &[], 1e-4, |t, s| Ok(policy.loss(t, s, &demo)?.total)).unwrap();
    let (name, worst) = check.worst();
    assert!(worst < 1e-4, "{name}: {worst}");
}

#[test]
fn zero_bounds_augmentation_is_identity() {
    let demo = small_demo(5, Task::all()[1], 20);
    let out = augment(&demo, [0.0; 3], &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(out, demo);
}

#[test]
fn augmentation_keeps_the_expert_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for task in Task::all() {
        let scene = generate_scene(&mut rng, task, SceneMode::Se2);
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = r1.clone();
        let aug = augment(&scene.demo, [5.0, 5.0, 45.0], &mut r1);
        let g = augmentation([5.0, 5.0, 45.0], scene.demo.observation.workspace.center, &mut r2);
        let moved = scene.transformed(&g);
        let obj = moved.objects.iter().find(|o| o.color == task.color).unwrap();
        assert!(tasks::is_success(&aug.expert, &expert_action(task.family, obj)));
        assert_eq!(aug.instruction, scene.demo.instruction);
        assert_eq!(aug.observation.workspace, scene.demo.observation.workspace);
    }
}

#[test]
fn dataset_round_trips() {
    let demos: Vec<Demonstration> = generate_suite(&mut ChaCha8Rng::seed_from_u64(8), &Task::all()[..2], 2, SceneMode::Se3).into_iter().map(|s| s.demo).collect();
    let mut buf = Vec::new();
    write_dataset(&mut buf, &demos).unwrap();
    let back = read_dataset(buf.as_slice()).unwrap();
    assert_eq!(back.len(), demos.len());
    for (a, b) in back.iter().zip(&demos) {
        assert_eq!(a.observation.points, b.observation.points);
        assert_eq!(a.instruction, b.instruction);
        let (dp, dr) = a.expert.error_to(&b.expert);
        assert!(dp == 0.0 && dr < 1e-7);
    }
    let mut again = Vec::new();
    write_dataset(&mut again, &back).unwrap();
    assert_eq!(again, buf);
}

#[test]
fn malformed_records_report_their_line() {
    let demos: Vec<Demonstration> = generate_suite(&mut ChaCha8Rng::seed_from_u64(9), &Task::all()[..1], 2, SceneMode::Se2).into_iter().map(|s| s.demo).collect();
    let mut buf = Vec::new();
    write_dataset(&mut buf, &demos).unwrap();
    let mut text = String::from_utf8(buf).unwrap();
    text.push_str("{\"version\":1}\n");
    assert!(matches!(read_dataset(text.as_bytes()), Err(Error::Schema { record: 3, .. })));
    let bumped = text.lines().next().unwrap().replacen("\"version\":1", "\"version\":2", 1);
    assert!(matches!(read_dataset(bumped.as_bytes()), Err(Error::Schema { record: 1, .. })));
    let mut v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    v["expert"]["quat"] = serde_json::json!([2.0, 0.0, 0.0, 0.0]);
    let bad_quat = v.to_string();
    assert!(matches!(read_dataset(bad_quat.as_bytes()), Err(Error::Schema { record: 1, .. })));
}

#[test]
fn checkpoints_round_trip_bytewise() {
    let (policy, params) = tiny_policy(10);
    let ck = Checkpoint { config: policy.cfg.clone(), params };
    let bytes = ck.to_bytes();
    let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);
    assert!(matches!(Checkpoint::read_from(&mut &b"NOPE0000000000000000"[..]), Err(Error::Data(_))));
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let data: Vec<Demonstration> = (0..3).map(|i| small_demo(20 + i, Task::all()[i as usize * 3], 20)).collect();
    let cfg = TrainConfig { steps: 30, batch: 2, lr: 3e-3, lr_final: 3e-3, seed: 1, augment_deg: [0.0; 3], log_every: 10 };
    let run = || {
        let (policy, mut params) = tiny_policy(11);
        let report = train(&policy, &mut params, &data, &cfg, |_, _| {}).unwrap();
        (report, params.to_bytes())
    };
    let (r1, p1) = run();
    let (r2, p2) = run();
    assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
    assert_eq!(p1, p2);
    assert!(r1.loss_curve.last().unwrap() < r1.loss_curve.first().unwrap(), "{:?}", r1.loss_curve);
}

#[test]
fn thread_count_does_not_change_gradients() {
    let (policy, params) = tiny_policy(12);
    let data: Vec<Demonstration> = (0..3).map(|i| small_demo(30 + i, Task::all()[i as usize], 20)).collect();
    let (l1, g1, _) = batch_gradients(&policy, &params, &data, 1).unwrap();
    let (l3, g3, _) = batch_gradients(&policy, &params, &data, 3).unwrap();
    assert_eq!(l1.to_bits(), l3.to_bits());
    assert_eq!(g1, g3);
}

#[test]
fn decoded_actions_move_with_the_scene() {
    let (policy, params) = tiny_policy(13);
    let demo = small_demo(14, Task::all()[5], 20);
    let a = policy.act(&params, &demo.observation, &demo.instruction).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let g = crate::so3::RigidTransform::random(&mut rng, 0.2);
    let b = policy.act(&params, &demo.observation.transformed(&g), &demo.instruction).unwrap();
    let (dp, dr) = a.action.transformed(&g).error_to(&b.action);
    assert!(dp <= a.translation.final_spacing() + 1e-9, "{dp}");
    assert!(dr <= policy.heads.rotations.grid.resolution(), "{dr}");
    assert_eq!(a.action.open, b.action.open);
}

#[test]
fn unknown_instruction_is_rejected() {
    let (policy, params) = tiny_policy(16);
    let demo = small_demo(17, Task::all()[0], 20);
    assert!(matches!(policy.act(&params, &demo.observation, "dance"), Err(Error::Vocabulary(_))));
}
