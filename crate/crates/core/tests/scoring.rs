mod oracles;

use con2_core::augment::ContentPolicy;
use con2_core::image::{ContextAugmentation, Image};
use con2_core::scoring::*;
use con2_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 8;
const DIM: usize = 6;

/// A fixed random linear map from pixels to `DIM` features, plus an offset
/// so no representation is zero.
struct LinearEncoder {
    weights: Vec<f64>,
    scale: f64,
}

impl LinearEncoder {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..DIM * 3 * SIZE * SIZE).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { weights, scale: 1.0 }
    }

    fn scaled(&self, scale: f64) -> Self {
        Self { weights: self.weights.clone(), scale }
    }
}

impl Encoder for LinearEncoder {
    fn encode(&self, images: &[Image]) -> con2_core::Result<Representations> {
        let mut data = Vec::with_capacity(images.len() * DIM);
        for img in images {
            let px = img.to_rgb();
            for k in 0..DIM {
                let w = &self.weights[k * px.pixels().len()..(k + 1) * px.pixels().len()];
                let v: f64 = w.iter().zip(px.pixels()).map(|(a, &b)| a * b as f64).sum();
                data.push(self.scale * (v + 0.5 * (k as f64 + 1.0)));
            }
        }
        Ok(Representations { rows: images.len(), dim: DIM, data })
    }
}

fn images(rng: &mut ChaCha8Rng, n: usize) -> Vec<Image> {
    (0..n).map(|_| Image::from_fn(SIZE, SIZE, 3, |_, _, _| rng.random::<f32>()).unwrap()).collect()
}

fn policy(a: usize, seed: u64) -> TestTimePolicy {
    let p = ContentPolicy { output_size: SIZE, ..ContentPolicy::default() };
    TestTimePolicy::sample(a, &p, ContextAugmentation::Invert, seed).unwrap()
}

fn source(policy: &TestTimePolicy, i: usize, x: &Image) -> Image {
    if policy.is_context(i) {
        policy.augmentation.apply(x)
    } else {
        x.clone()
    }
}

#[test]
fn training_views_score_exactly_minus_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let train = images(&mut rng, 12);
    let enc = LinearEncoder::new(2);
    let p = policy(4, 3);
    let m = fit_nnd(&enc, &train, &p).unwrap();
    for x in &train {
        for i in 0..4 {
            assert_eq!(s_nnd(&m, &enc, &source(&p, i, x), i).unwrap(), -1.0);
        }
    }
}

#[test]
fn scores_are_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let train = images(&mut rng, 30);
    let queries = images(&mut rng, 10);
    let enc = LinearEncoder::new(5);
    let big = enc.scaled(7.3);
    let p = policy(4, 6);
    let reg = Regularization::default();
    let (nnd, nnd_big) = (fit_nnd(&enc, &train, &p).unwrap(), fit_nnd(&big, &train, &p).unwrap());
    let (lh, lh_big) = (fit_gaussian(&enc, &train, &p, reg).unwrap(), fit_gaussian(&big, &train, &p, reg).unwrap());
    for x in &queries {
        for i in 0..4 {
            let a = s_nnd(&nnd, &enc, x, i).unwrap();
            assert!((a - s_nnd(&nnd_big, &big, x, i).unwrap()).abs() <= 1e-9);
            let b = s_lh(&lh, &enc, x, i).unwrap();
            assert!((b - s_lh(&lh_big, &big, x, i).unwrap()).abs() <= 1e-6);
        }
    }
}

fn unit(r: &[f64]) -> Vec<f64> {
    let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    r.iter().map(|v| v / n).collect()
}

#[test]
fn gaussian_matches_quadratic_form_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, d) = (40, 5);
    let rows: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0) + 0.3).collect();
    let c = GaussianComponent::fit(&rows, d, Regularization::default(), 0).unwrap();

    let units: Vec<Vec<f64>> = rows.chunks(d).map(unit).collect();
    let mean: Vec<f64> = (0..d).map(|j| units.iter().map(|u| u[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; d * d];
    for u in &units {
        for r in 0..d {
            for s in 0..d {
                cov[r * d + s] += (u[r] - mean[r]) * (u[s] - mean[s]) / (n - 1) as f64;
            }
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let eps = (1e-6 * trace / d as f64).max(1e-9);
    assert_eq!(c.epsilon, eps);
    for i in 0..d {
        cov[i * d + i] += eps;
    }
    for _ in 0..100 {
        let q: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = unit(&q);
        let expected = oracles::gaussian_nll(&z, &mean, &cov);
        let got = c.negative_log_density(&z);
        assert!((got - expected).abs() <= 1e-8 * expected.abs().max(1.0), "{got} vs {expected}");
    }
}

#[test]
fn final_score_is_mean_of_oracle_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let train = images(&mut rng, 15);
    let queries = images(&mut rng, 5);
    let enc = LinearEncoder::new(9);
    let p = policy(4, 10);
    let nnd = ScoreModel::fit(ScoreVariant::Nnd, &enc, &train, &p, Regularization::default()).unwrap();
    let batch = nnd.final_scores(&enc, &queries, &p).unwrap();
    for (x, &b) in queries.iter().zip(&batch) {
        let mut terms = Vec::new();
        for (i, t) in p.transforms.iter().enumerate() {
            let q = enc.encode(&[t.apply(&source(&p, i, x))]).unwrap().data;
            let keys: Vec<Vec<f64>> =
                train.iter().map(|y| enc.encode(&[t.apply(&source(&p, i, y))]).unwrap().data).collect();
            let best = keys.iter().map(|k| oracles::cosine(&q, k)).fold(f64::NEG_INFINITY, f64::max);
            terms.push(-best);
        }
        let expected = terms.iter().sum::<f64>() / 4.0;
        let single = final_score(&nnd, &enc, x, &p).unwrap();
        assert!((single - expected).abs() <= 1e-12);
        assert!((b - single).abs() <= 1e-12);
    }

    let lh = ScoreModel::fit(ScoreVariant::Lh, &enc, &train, &p, Regularization::default()).unwrap();
    let per = lh.per_transform_scores(&enc, &queries, &p).unwrap();
    let fin = lh.final_scores(&enc, &queries, &p).unwrap();
    for (row, f) in per.iter().zip(&fin) {
        assert_eq!(row.len(), 4);
        assert!((row.iter().sum::<f64>() / 4.0 - f).abs() <= 1e-12);
    }
    assert!(lh.final_scores(&enc, &queries, &policy(4, 11)).is_err());
    assert!(final_score(&lh, &enc, &queries[0], &policy(2, 10)).is_err());
}

#[test]
fn regularization_rules() {
    assert_eq!(Regularization::Relative(1e-6).epsilon(0.0, 4), Regularization::FLOOR);
    assert_eq!(Regularization::Absolute(0.5).epsilon(10.0, 4), 0.5);
    assert!(Regularization::Absolute(-1.0).validate().is_err());
    assert!(Regularization::Relative(f64::NAN).validate().is_err());
    // Identical rows give a zero covariance: the floor keeps it factorable,
    // an explicit zero ridge does not.
    let rows = vec![0.6, 0.8, 0.6, 0.8, 0.6, 0.8];
    assert!(GaussianComponent::fit(&rows, 2, Regularization::default(), 0).is_ok());
    assert!(matches!(
        GaussianComponent::fit(&rows, 2, Regularization::Absolute(0.0), 3),
        Err(Error::SingularCovariance { transform: 3, .. })
    ));
}

#[test]
fn threshold_semantics() {
    assert_eq!(threshold_predict(&[0.1, 0.5, 0.9], 0.5), vec![0, 0, 1]);
}
