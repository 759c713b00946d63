use con2_core::augment::ContentPolicy;
use con2_core::dataprep::{make_synthetic_split, make_view_batch, DatasetSplit, SyntheticConfig};
use con2_core::image::ContextAugmentation;
use con2_core::model::{Con2Model, ModelConfig};
use con2_core::nn::ParamKind;
use con2_core::trainer::{train, TrainConfig};
use con2_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 16;

fn split() -> DatasetSplit {
    make_synthetic_split(&SyntheticConfig { image_size: SIZE, train_normal: 24, test_normal: 6, test_anomalous: 6, ..SyntheticConfig::default() })
        .unwrap()
}

fn config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps: Some(steps),
        batch_size: 8,
        content_policy: ContentPolicy { output_size: SIZE, ..ContentPolicy::default() },
        ..TrainConfig::default()
    }
}

fn trainable(model: &Con2Model) -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    model.visit(&mut |name, p| {
        if p.kind == ParamKind::Trainable {
            out.push((name.to_owned(), p.value.clone()));
        }
    });
    out
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let split = split();
    let model_cfg = ModelConfig::tiny_cnn(SIZE);
    let initial = Con2Model::new(model_cfg.clone()).unwrap();
    let trained = train(&model_cfg, &TrainConfig { learning_rate: 0.0, ..config(3) }, &split).unwrap();
    assert_eq!(trainable(&initial), trainable(&trained.model));
    assert_eq!(trained.history.len(), 3);
}

#[test]
fn training_is_deterministic() {
    let split = split();
    let model_cfg = ModelConfig::tiny_cnn(SIZE);
    let a = train(&model_cfg, &config(2), &split).unwrap();
    let b = train(&model_cfg, &config(2), &split).unwrap();
    assert_eq!(a.model.named_tensors(), b.model.named_tensors());
    assert_eq!(a.history, b.history);
    assert_eq!(a.rng, b.rng);
    let c = train(&model_cfg, &TrainConfig { seed: 1, ..config(2) }, &split).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn schedules_recorded_per_step() {
    let ck = train(&ModelConfig::tiny_cnn(SIZE), &config(5), &split()).unwrap();
    let alphas: Vec<f64> = ck.history.iter().map(|r| r.alpha).collect();
    assert_eq!(alphas, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    assert_eq!(ck.history[0].learning_rate, 1e-3);
    assert_eq!(ck.history[4].learning_rate, 0.0);
    assert_eq!(ck.history[0].total, ck.history[0].context);
    assert_eq!(ck.step, 5);
    assert_eq!(ck.optimizer.step, 5);
}

#[test]
fn context_term_decreases_over_200_steps() {
    let ck = train(&ModelConfig::tiny_cnn(SIZE), &config(200), &split()).unwrap();
    let mean = |r: &[con2_core::trainer::StepRecord]| r.iter().map(|s| s.context).sum::<f64>() / r.len() as f64;
    let (first, last) = (mean(&ck.history[..20]), mean(&ck.history[180..]));
    assert!(last < first, "context loss {first} -> {last}");
}

#[test]
fn alpha_zero_gives_no_content_head_gradient() {
    let split = split();
    let mut model = Con2Model::new(ModelConfig::tiny_cnn(SIZE)).unwrap();
    let base: Vec<_> = split.train.iter().take(3).enumerate().map(|(i, img)| (img, i)).collect();
    let policy = ContentPolicy { output_size: SIZE, ..ContentPolicy::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = make_view_batch(&base, ContextAugmentation::Invert, &policy, &split.normalization, &mut rng).unwrap();
    model.zero_grad();
    model.forward_backward(&batch, 0.0, 0.5).unwrap();
    let mut content_nonzero = 0;
    let mut context_nonzero = 0;
    model.visit(&mut |name, p| {
        let nz = p.grad.iter().filter(|g| **g != 0.0).count();
        if name.starts_with("content_head") {
            content_nonzero += nz;
        } else if name.starts_with("context_head") {
            context_nonzero += nz;
        }
    });
    assert_eq!(content_nonzero, 0);
    assert!(context_nonzero > 0);
}

#[test]
fn checkpoint_encodes_like_a_reloaded_model() {
    let split = split();
    let ck = train(&ModelConfig::tiny_cnn(SIZE), &config(2), &split).unwrap();
    let mut fresh = Con2Model::new(ck.model_config().clone()).unwrap();
    fresh.load_named_tensors(&ck.model.named_tensors()).unwrap();
    let inputs = ck.input_tensor(&split.test[..4]).unwrap();
    assert_eq!(fresh.encode(&inputs).unwrap(), ck.encode_images(&split.test[..4]).unwrap());
    let single = ck.encode(&split.test[2]).unwrap();
    assert_eq!(single.len(), ck.representation_dim());
    assert_eq!(ck.project_context(&single).unwrap().len(), 32);
}

#[test]
fn invalid_configs_rejected() {
    let split = split();
    let model_cfg = ModelConfig::tiny_cnn(SIZE);
    let wrong_size = TrainConfig { content_policy: ContentPolicy::default(), ..config(1) };
    assert!(matches!(train(&model_cfg, &wrong_size, &split), Err(Error::InvalidConfig(_))));
    assert!(train(&model_cfg, &TrainConfig { temperature: 0.0, ..config(1) }, &split).is_err());
    assert!(train(&model_cfg, &TrainConfig { batch_size: 0, ..config(1) }, &split).is_err());
}

#[test]
fn huge_learning_rate_reports_non_finite_loss() {
    let cfg = TrainConfig { learning_rate: 1e30, weight_decay: 0.0, ..config(40) };
    match train(&ModelConfig::tiny_cnn(SIZE), &cfg, &split()) {
        Err(Error::NonFiniteLoss { step, .. }) => assert!(step > 0),
        other => panic!("expected a non-finite loss, got {:?}", other.map(|c| c.history.last().cloned())),
    }
}
