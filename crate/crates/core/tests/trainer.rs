use dynca::fields::{generate_field, FieldKind};
use dynca::grid::Grid;
use dynca::losses::{default_flow, mvid_loss, FlowConfig};
use dynca::model::{DyncaConfig, UpdateRule};
use dynca::trainer::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 16;

fn tiny_cfg(interval: usize) -> DyncaConfig {
    DyncaConfig {
        channels: 4,
        hidden: 16,
        ..DyncaConfig::small()
    }
    .with_seed_size(SIDE)
    .with_frame_interval(interval)
}

fn stripes(h: usize, w: usize, phase: usize) -> Grid<f32> {
    Grid::from_fn(h, w, 3, |_, c, ch| if (c + phase) % 4 < 2 { [0.9, 0.2, 0.1][ch] } else { 0.05 })
}

fn vec_target() -> TargetSpec<f32> {
    TargetSpec {
        appearance: stripes(SIDE, SIDE, 0),
        motion: MotionTarget::Field(generate_field(FieldKind::Right, SIDE, SIDE).unwrap()),
        lambda_override: None,
    }
}

fn video_target(frames: Vec<Grid<f32>>) -> TargetSpec<f32> {
    TargetSpec {
        appearance: stripes(SIDE, SIDE, 0),
        motion: MotionTarget::Video(frames),
        lambda_override: None,
    }
}

fn quick_plan(mode: TrainMode) -> TrainPlan {
    let mut plan = TrainPlan::new(mode, SIDE);
    plan.batch = 2;
    plan.pool_size = 8;
    plan.max_rows = Some(64);
    plan.steps = if mode.uses_video() { StepRange::new(6, 8) } else { StepRange::new(3, 5) };
    plan.seed = 11;
    plan
}

fn trainer(plan: TrainPlan, target: &TargetSpec<f32>) -> Trainer<f32> {
    let interval = if plan.mode.uses_video() { 4 } else { 6 };
    Trainer::with_defaults(tiny_cfg(interval), plan, target).unwrap()
}

#[test]
fn paper_defaults() {
    let vec = TrainPlan::new(TrainMode::VectorField, 128);
    assert_eq!((vec.epochs, vec.batch, vec.pool_size, vec.reseed_period), (4000, 4, 256, 8));
    assert_eq!((vec.gamma, vec.overflow_weight, vec.lambda), (1.5, 100.0, 10.0));
    assert_eq!(vec.steps, StepRange::new(32, 128));
    assert!(vec.anneal_lambda);
    let vid = TrainPlan::new(TrainMode::Video, 256);
    assert_eq!((vid.batch, vid.overflow_weight), (3, 1.0));
    assert_eq!(vid.steps, StepRange::new(80, 144));
    assert!(!vid.anneal_lambda);
    assert!(vid.validate(64).is_ok());
    assert!(vid.validate(80).is_err());
}

#[test]
fn learning_rate_schedule() {
    let plan = TrainPlan::new(TrainMode::VectorField, 128);
    for (epoch, lr) in [(0, 1e-3), (999, 1e-3), (1000, 3e-4), (1999, 3e-4), (2000, 9e-5), (3999, 9e-5)] {
        assert!((plan.lr_at(epoch) - lr).abs() <= lr * 1e-12, "epoch {epoch}");
    }
}

#[test]
fn auto_lambda_formulas() {
    assert!((auto_lambda(1.0, 128) - 4.77).abs() < 1e-12);
    assert!((auto_lambda(1.0, 256) - 3.87).abs() < 1e-12);
    assert_eq!(auto_lambda(0.0, 128), 0.05);
    assert_eq!(auto_lambda(0.0, 256), 0.05);
    for m in [0.5, 0.8, 1.7, 3.0] {
        assert_eq!(auto_lambda(m, 128), 5.82 * m - 1.05);
        assert_eq!(auto_lambda(m, 256), 6.04 * m - 2.17);
    }
}

#[test]
fn annealing_rule() {
    assert_eq!(anneal_lambda_vec(10.0, &[2.0, 2.0]), 10.0);
    assert_eq!(anneal_lambda_vec(10.0, &[2.0, 1.5, 1.0]), 5.0);
    assert_eq!(anneal_lambda_vec(10.0, &[2.0, 3.0]), 10.0);
    assert_eq!(anneal_lambda_vec(10.0, &[]), 10.0);
    let history = [4.0, 3.5, 3.0, 2.0, 1.0];
    let weights: Vec<f64> = (1..=history.len()).map(|k| anneal_lambda_vec(10.0, &history[..k])).collect();
    assert!(weights.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn median_of_samples() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    assert_eq!(median(&[]), None);
}

/// Upper 1% point of the chi-square distribution, Wilson–Hilferty approximation.
fn chi2_upper_1pct(df: f64) -> f64 {
    let z = 2.326_347_874;
    let a = 2.0 / (9.0 * df);
    df * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn step_counts_are_uniform_on_the_paper_range() {
    let range = TrainPlan::new(TrainMode::VectorField, 128).steps;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 10_000;
    let mut counts = vec![0usize; 129];
    for _ in 0..n {
        counts[range.sample(&mut rng)] += 1;
    }
    assert!(counts[..32].iter().all(|&c| c == 0));
    assert!(counts[32] > 0 && counts[128] > 0);
    let bins = 97.0;
    let expected = n as f64 / bins;
    let chi2: f64 = counts[32..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < chi2_upper_1pct(bins - 1.0), "chi2 {chi2}");
}

#[test]
fn cold_start_is_finite() {
    let mut tr = trainer(quick_plan(TrainMode::VectorField), &vec_target());
    let m = tr.train_epoch().unwrap();
    assert!(m.appearance > 0.0);
    assert_eq!(m.overflow, 0.0);
    assert!(m.loss.is_finite() && m.motion.is_finite());
    assert!(tr.rule().layers().iter().all(|l| l.is_finite()));
    // With a zero output layer nothing moves during the first rollout.
    assert!(tr.pool().entries().iter().all(|e| e.state.max_abs() == 0.0));
    assert_ne!(tr.rule().w2.max_abs(), 0.0);
}

#[test]
fn zero_motion_weight_matches_appearance_only() {
    let run = |objective: Objective, lambda: Option<f64>| {
        let mut plan = quick_plan(TrainMode::VectorField);
        plan.objective = objective;
        let mut target = vec_target();
        target.lambda_override = lambda;
        let mut tr = trainer(plan, &target);
        for _ in 0..3 {
            tr.train_epoch().unwrap();
        }
        tr.into_rule()
    };
    let ablated = run(Objective::Full, Some(0.0));
    let appearance_only = run(Objective::AppearanceOnly, None);
    assert_eq!(ablated, appearance_only);
    assert_ne!(run(Objective::Full, None), appearance_only);
}

#[test]
fn pool_is_conserved_and_reseeded_on_schedule() {
    let mut plan = quick_plan(TrainMode::VectorField);
    plan.objective = Objective::OverflowOnly;
    plan.steps = StepRange::new(1, 1);
    plan.epochs = 100;
    let mut tr = trainer(plan, &vec_target());
    let mut log = Vec::new();
    tr.run(|m| log.push(m.clone())).unwrap();
    assert_eq!(tr.pool().len(), 8);
    assert_eq!(tr.pool().reseed_events(), 100 / 8);
    assert_eq!(log.iter().filter(|m| m.reseeded).count(), 12);
    assert!(log.iter().all(|m| m.overflow_terms == 2 && m.steps == 1));
    let ages: u64 = tr.pool().entries().iter().map(|e| e.age).sum();
    assert!(ages <= 200);
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut tr = trainer(quick_plan(TrainMode::VectorField), &vec_target());
            let metrics: Vec<_> = (0..2).map(|_| tr.train_epoch().unwrap()).collect();
            (tr.into_rule(), metrics)
        })
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(3));
}

#[test]
fn metrics_records_have_the_logged_fields() {
    let mut tr = trainer(quick_plan(TrainMode::Video), &video_target(vec![stripes(SIDE, SIDE, 0), stripes(SIDE, SIDE, 1)]));
    for _ in 0..2 {
        let m = tr.train_epoch().unwrap();
        let line = m.to_string();
        let keys: Vec<&str> = line.split(' ').map(|kv| kv.split('=').next().unwrap()).collect();
        assert_eq!(keys, ["epoch", "lr", "l_appr", "l_motion", "l_over", "lambda"]);
        assert!(m.motion > 0.0 && m.appearance > 0.0);
        assert!((6..=8).contains(&m.steps));
        assert_eq!(m.lambda, 5.0);
    }
}

#[test]
fn identical_video_pairs_have_zero_motion_loss() {
    let f = stripes(SIDE, SIDE, 0);
    let flow = default_flow(FlowConfig::default());
    let pairs = vec![(f.clone(), f.clone())];
    assert_eq!(mvid_loss(&pairs, &pairs, &flow).unwrap(), 0.0);
}

#[test]
fn target_validation() {
    let cfg = tiny_cfg(4);
    let short = video_target(vec![stripes(SIDE, SIDE, 0)]);
    assert!(Trainer::with_defaults(cfg.clone(), quick_plan(TrainMode::Video), &short).is_err());
    assert!(Trainer::with_defaults(cfg.clone(), quick_plan(TrainMode::Video), &vec_target()).is_err());
    let two = video_target(vec![stripes(SIDE, SIDE, 0), stripes(SIDE, SIDE, 1)]);
    assert!(Trainer::with_defaults(tiny_cfg(6), quick_plan(TrainMode::VectorField), &two).is_err());
    let mut small_field = vec_target();
    small_field.motion = MotionTarget::Field(generate_field(FieldKind::Right, 8, 8).unwrap());
    assert!(Trainer::with_defaults(tiny_cfg(6), quick_plan(TrainMode::VectorField), &small_field).is_err());
    let mut plan = quick_plan(TrainMode::Video);
    plan.steps = StepRange::new(3, 8);
    assert!(Trainer::with_defaults(cfg, plan, &two).is_err());
}

#[test]
fn style_transfer_keeps_motion_independent_of_appearance() {
    let frames = vec![stripes(SIDE, SIDE, 0), stripes(SIDE, SIDE, 1), stripes(SIDE, SIDE, 2)];
    let mut other = video_target(frames.clone());
    other.appearance = Grid::from_fn(SIDE, SIDE, 3, |r, _, ch| if r % 3 == 0 { [0.1, 0.2, 0.9][ch] } else { 0.7 });
    let a = trainer(quick_plan(TrainMode::StyleTransfer), &video_target(frames)).train_epoch().unwrap();
    let b = trainer(quick_plan(TrainMode::StyleTransfer), &other).train_epoch().unwrap();
    assert_eq!(a.motion, b.motion);
    assert_eq!(a.overflow, b.overflow);
    assert_ne!(a.appearance, b.appearance);
}

#[test]
fn auto_lambda_probe_reinitializes() {
    let target = video_target(vec![stripes(SIDE, SIDE, 0), stripes(SIDE, SIDE, 1)]);
    let mut tr = trainer(quick_plan(TrainMode::Video), &target);
    let fresh = tr.rule().clone();
    let lambda = tr.auto_lambda(3).unwrap();
    assert!(lambda >= 0.05);
    assert_eq!(tr.lambda(), lambda);
    assert_eq!(tr.epoch(), 0);
    assert_eq!(tr.rule(), &fresh);
    assert!(tr.pool().entries().iter().all(|e| e.age == 0 && e.state.max_abs() == 0.0));
    let mut vec = trainer(quick_plan(TrainMode::VectorField), &vec_target());
    assert!(vec.auto_lambda(1).is_err());
}

#[test]
fn vector_field_lambda_anneals_with_appearance() {
    let mut plan = quick_plan(TrainMode::VectorField);
    plan.lr = 1e-2;
    let mut tr = trainer(plan, &vec_target());
    let first = tr.train_epoch().unwrap();
    assert_eq!(first.lambda, 10.0);
    for _ in 0..4 {
        let m = tr.train_epoch().unwrap();
        assert!(m.lambda <= 10.0 && m.lambda > 0.0);
    }
}

#[test]
fn fresh_rule_is_seeded_from_the_plan() {
    let plan = quick_plan(TrainMode::VectorField);
    let tr = trainer(plan.clone(), &vec_target());
    assert_eq!(tr.rule(), &UpdateRule::init(&tiny_cfg(6), plan.seed));
}
