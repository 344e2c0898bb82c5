use haoi_core::articulated_object::Category;
use haoi_core::discrete_repr::samples::{point_features, POINT_FEATURES};
use haoi_core::discrete_repr::{
    build_objects, checkpoint_hash, prepare_sequences, train_vqvae, LossWeights, SampleSet, VqVae, VqVaeConfig,
};
use haoi_core::hand_model::{hand_mesh, HandModelSpec, Vec3, DEFAULT_VERTEX_COUNT};
use haoi_core::rng::seeded;
use haoi_core::HaoiError;
use rand::seq::SliceRandom;
use haoi_core::synth_data::{generate_dataset, DatasetConfig, Direction};

fn hand() -> HandModelSpec {
    HandModelSpec::synthetic(DEFAULT_VERTEX_COUNT, 11).unwrap()
}

fn small_config() -> VqVaeConfig {
    VqVaeConfig {
        codebook_size: 64,
        code_dim: 64,
        hidden: 128,
        point_widths: vec![32, 64],
        n_points: 128,
        learning_rate: 2e-3,
        final_lr_ratio: 0.05,
        batch_size: 4,
        epochs: 500,
        codebook_init: 1.0 / 64.0,
        weights: LossWeights::default(),
        ..VqVaeConfig::default()
    }
}

fn sixteen_frames(hand: &HandModelSpec) -> SampleSet {
    let cfg = DatasetConfig {
        categories: vec![Category::Laptop],
        objects_per_category: 1,
        contacts_per_object: 1,
        directions: vec![Direction::Open, Direction::Close],
        frames_min: 8,
        frames_max: 8,
        object_points: 512,
        split: [1.0, 0.0, 0.0],
    };
    let seqs = generate_dataset(&cfg, hand, 5).unwrap();
    let objects = build_objects(&seqs).unwrap();
    let set = prepare_sequences(&seqs, &objects, 128).unwrap();
    assert_eq!(set.len(), 16);
    set
}

fn mean_vertex_error(model: &VqVae, set: &SampleSet, hand: &HandModelSpec) -> (f64, f64) {
    let encoded = model.encode_all(set).unwrap();
    let mut err = 0.0;
    let mut joint = 0.0f64;
    for (k, e) in encoded.iter().enumerate() {
        let s = &set.frames[k];
        let c_o = model.object_condition(&set.contexts[s.context]).unwrap();
        let out = &model.decode_frames(&[e.tokens], &c_o).unwrap()[0];
        let pred = hand_mesh(hand, &out.final_beta()).unwrap();
        let gt = hand_mesh(hand, &s.target.beta).unwrap();
        err += pred.vertices.iter().zip(&gt.vertices).map(|(a, b)| (a - b).norm()).sum::<f64>()
            / gt.vertices.len() as f64;
        joint = joint.max((out.joint - s.target.joint).norm());
    }
    (err / encoded.len() as f64, joint)
}

#[test]
fn overfit_sixteen_frames() {
    let hand = hand();
    let set = sixteen_frames(&hand);
    let start = std::time::Instant::now();
    let (model, trace) = train_vqvae(&set, &hand, &small_config(), 1, |s| {
        if s.epoch % 50 == 0 {
            eprintln!("{} {:.5} {:?}", s.epoch, s.total, s.losses);
        }
    })
    .unwrap();
    let first = trace[0].total;
    let last = model.evaluate_losses(&set, &hand).unwrap().total(&model.config.weights);
    let (verr, jerr) = mean_vertex_error(&model, &set, &hand);
    eprintln!("initial {first} final {last} vertex {verr} joint {jerr} in {:?}", start.elapsed());
    assert!(last < 0.01 * first, "final {last} vs initial {first}");
    assert!(verr <= 0.005, "mean vertex error {verr}");
    assert!(jerr <= 0.05, "joint error {jerr}");
}

fn quick_config(epochs: usize) -> VqVaeConfig {
    VqVaeConfig {
        epochs,
        ..small_config()
    }
}

#[test]
fn one_epoch_smoke_and_checkpoint_round_trip() {
    let hand = hand();
    let set = sixteen_frames(&hand);
    let (model, trace) = train_vqvae(&set, &hand, &quick_config(1), 3, |_| {}).unwrap();
    assert_eq!(trace.len(), 1);
    assert!(trace[0].total.is_finite());
    assert!(trace[0].coverage.iter().all(|c| (0.0..=1.0).contains(c)));

    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = VqVae::load(dir.path(), &hand).unwrap();
    assert_eq!(loaded.encode_all(&set).unwrap(), model.encode_all(&set).unwrap());
    assert_eq!(loaded.usage_coverage(), model.usage_coverage());
    assert_eq!(checkpoint_hash(dir.path()).unwrap(), checkpoint_hash(dir.path()).unwrap());

    let other = HandModelSpec::synthetic(DEFAULT_VERTEX_COUNT, 12).unwrap();
    assert!(matches!(VqVae::load(dir.path(), &other), Err(HaoiError::Validation(_))));

    let meta = dir.path().join("vqvae.json");
    let text = std::fs::read_to_string(&meta).unwrap().replace("\"version\": \"1\"", "\"version\": \"0\"");
    std::fs::write(&meta, text).unwrap();
    assert!(matches!(VqVae::load(dir.path(), &hand), Err(HaoiError::Version { .. })));
}

#[test]
fn training_is_deterministic_per_seed() {
    let hand = hand();
    let set = sixteen_frames(&hand);
    let run = || {
        let (m, t) = train_vqvae(&set, &hand, &quick_config(4), 9, |_| {}).unwrap();
        (m.evaluate_losses(&set, &hand).unwrap().total(&m.config.weights), t)
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    for (x, y) in ta.iter().zip(&tb) {
        assert!((x.total - y.total).abs() <= 1e-6);
    }
}

#[test]
fn joint_encoding_ignores_point_order() {
    let hand = hand();
    let set = sixteen_frames(&hand);
    let model = VqVae::new(&small_config(), &hand, 4).unwrap();
    let s = &set.frames[5];
    let ctx = &set.contexts[s.context];
    let (j, c_o) = model.encode_joint(&s.cloud, &s.contact, ctx).unwrap();
    let n = s.cloud.len() / POINT_FEATURES;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(8));
    let permuted: Vec<f32> = order
        .iter()
        .flat_map(|&i| s.cloud[i * POINT_FEATURES..(i + 1) * POINT_FEATURES].iter().copied())
        .collect();
    assert_eq!(model.encode_joint(&permuted, &s.contact, ctx).unwrap(), (j, c_o.clone()));
    let joint = model.decode_joint(j, &c_o).unwrap();
    assert_eq!(model.decode_joint(j, &c_o).unwrap(), joint);
    assert!(joint.iter().all(|x| x.is_finite()));
}

#[test]
fn invalid_inputs_are_rejected() {
    let hand = hand();
    let model = VqVae::new(&small_config(), &hand, 4).unwrap();
    let c_o = vec![0.0; model.config.code_dim];
    assert!(model.decode_stages(0, 0, 0, 64, &c_o).is_err());
    assert!(model.decode_stages(0, 0, 0, 0, &c_o).is_ok());
    let same = vec![Vec3::new(0.1, 0.2, 0.3); 10];
    assert!(point_features(&same, &[false; 10], &Vec3::zeros(), 16).is_err());
    let bad = VqVaeConfig {
        codebook_size: 0,
        learning_rate: -1.0,
        ..small_config()
    };
    let Err(err) = VqVae::new(&bad, &hand, 1) else { panic!("invalid config accepted") };
    let err = err.to_string();
    assert!(err.contains("codebook_size") && err.contains("learning_rate"), "{err}");
}
