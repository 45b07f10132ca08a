use hardsplit_core::classifiers::{train_logistic, LinearConfig};
use hardsplit_core::nn::{
    supcon_loss_raw, to_array, train_auxiliary, train_model, AuxiliaryClassifier, EncoderProjectionModel, MlpSpec,
    NetworkShape, TrainConfig,
};
use hardsplit_core::rng::seeded;
use hardsplit_core::store::{ParamReader, ParamWriter};
use hardsplit_core::FeatureMatrix;
use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const H: f64 = 1e-6;

/// Relative error with a denominator floor at the roundoff scale of the
/// central difference, which grows with the loss magnitude.
fn rel_err(a: f64, n: f64, loss: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5 * loss.abs().max(1.0))
}

fn numeric_grad(params: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + H;
            let up = loss(&p);
            p[i] = orig - H;
            let down = loss(&p);
            p[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn gaussian_blobs(n_per: usize, dim: usize, gap: f64, seed: u64) -> FeatureMatrix {
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for label in [0u8, 1] {
        let shift = if label == 1 { gap / 2.0 } else { -gap / 2.0 };
        for _ in 0..n_per {
            for j in 0..dim {
                let centre = if j == 0 { shift } else { 0.0 };
                values.push(centre + normal.sample(&mut rng));
            }
            labels.push(label);
        }
    }
    FeatureMatrix::new(dim, values, labels).unwrap()
}

fn small_shape() -> NetworkShape {
    NetworkShape {
        encoder: vec![16, 8],
        projection: vec![8, 4],
        auxiliary: vec![8, 4],
    }
}

#[test]
fn supcon_gradient_matches_finite_differences() {
    let mut rng = seeded(11);
    for _ in 0..30 {
        let n = rng.random_range(2..=6);
        let d = rng.random_range(1..=8);
        let tau = rng.random_range(0.07..1.0);
        let u = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let (loss, g) = supcon_loss_raw(&u, &labels, tau).unwrap();
        let flat: Vec<f64> = u.iter().copied().collect();
        let num = numeric_grad(&flat, |p| {
            let m = Array2::from_shape_vec((n, d), p.to_vec()).unwrap();
            supcon_loss_raw(&m, &labels, tau).unwrap().0
        });
        for (a, b) in g.iter().zip(&num) {
            assert!(rel_err(*a, *b, loss) < 1e-4, "analytic {a} numeric {b}");
        }
    }
}

#[test]
fn model_gradient_matches_finite_differences() {
    let mut rng = seeded(12);
    for trial in 0..50 {
        let n = rng.random_range(3..=6);
        let d = rng.random_range(1..=8);
        let shape = NetworkShape {
            encoder: vec![rng.random_range(2..=8), rng.random_range(2..=8)],
            projection: vec![rng.random_range(2..=8), rng.random_range(2..=8)],
            auxiliary: vec![4],
        };
        let tau = rng.random_range(0.07..1.0);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 0;
        let mut model = EncoderProjectionModel::new(d, &shape, trial).unwrap();
        let random: Vec<f64> = (0..model.params_flat().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        model.set_params_flat(&random).unwrap();
        let (loss, analytic) = model.batch_loss_and_grads(&x, &labels, tau).unwrap();
        let params = model.params_flat();
        let mut probe = model.clone();
        let num = numeric_grad(&params, |p| {
            probe.set_params_flat(p).unwrap();
            probe.batch_loss_and_grads(&x, &labels, tau).unwrap().0
        });
        assert_eq!(analytic.len(), num.len());
        for (a, b) in analytic.iter().zip(&num) {
            assert!(rel_err(*a, *b, loss) < 1e-4, "trial {trial}: analytic {a} numeric {b}");
        }
    }
}

#[test]
fn auxiliary_gradient_matches_finite_differences() {
    let mut rng = seeded(13);
    for trial in 0..50 {
        let n = rng.random_range(2..=6);
        let d = rng.random_range(1..=8);
        let spec = MlpSpec::classifier(&[rng.random_range(2..=8), rng.random_range(2..=8), 2]).unwrap();
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let mut aux = AuxiliaryClassifier::new(d, &spec, trial).unwrap();
        let random: Vec<f64> = (0..aux.network.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        aux.network.set_params_flat(&random).unwrap();
        let (loss, analytic) = aux.batch_loss_and_grads(&x, &labels).unwrap();
        let mut probe = aux.clone();
        let num = numeric_grad(&aux.network.params_flat(), |p| {
            probe.network.set_params_flat(p).unwrap();
            probe.batch_loss_and_grads(&x, &labels).unwrap().0
        });
        for (a, b) in analytic.iter().zip(&num) {
            assert!(rel_err(*a, *b, loss) < 1e-4, "trial {trial}: analytic {a} numeric {b}");
        }
    }
}

#[test]
fn one_epoch_cap() {
    let data = gaussian_blobs(20, 3, 4.0, 1);
    let cfg = TrainConfig {
        max_epochs: 1,
        ..TrainConfig::default()
    };
    let model = train_model(&data, &data, &small_shape(), &cfg, 5).unwrap();
    assert_eq!(model.outcome.epochs_run, 1);
    let x = to_array(&data);
    let aux = train_auxiliary(&x, data.labels(), &x, data.labels(), &small_shape().auxiliary_spec().unwrap(), &cfg, 5)
        .unwrap();
    assert_eq!(aux.outcome.epochs_run, 1);
}

#[test]
fn constant_validation_loss_stops_after_patience_plus_one() {
    let data = gaussian_blobs(20, 3, 4.0, 2);
    // One sample per class: no anchor has a positive, so the loss stays 0.
    let val = FeatureMatrix::new(3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], vec![0, 1]).unwrap();
    for patience in [0, 1, 4] {
        let cfg = TrainConfig {
            patience,
            max_epochs: 50,
            ..TrainConfig::default()
        };
        let model = train_model(&data, &val, &small_shape(), &cfg, 3).unwrap();
        assert_eq!(model.outcome.epochs_run, patience + 1);
        assert!(model.outcome.history.iter().all(|&l| l == 0.0));
    }
}

#[test]
fn single_class_data_is_rejected() {
    let data = FeatureMatrix::new(1, vec![0.0, 1.0, 2.0], vec![1, 1, 1]).unwrap();
    assert!(train_model(&data, &data, &small_shape(), &TrainConfig::default(), 0).is_err());
    let x = to_array(&data);
    let spec = small_shape().auxiliary_spec().unwrap();
    assert!(train_auxiliary(&x, data.labels(), &x, data.labels(), &spec, &TrainConfig::default(), 0).is_err());
}

#[test]
fn training_is_reproducible() {
    let data = gaussian_blobs(30, 4, 2.0, 3);
    let cfg = TrainConfig {
        max_epochs: 5,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let a = train_model(&data, &data, &small_shape(), &cfg, 77).unwrap();
    let b = train_model(&data, &data, &small_shape(), &cfg, 77).unwrap();
    assert_eq!(a, b);
    let c = train_model(&data, &data, &small_shape(), &cfg, 78).unwrap();
    assert_ne!(a.params_flat(), c.params_flat());
}

fn mean_cosines(emb: &Array2<f64>, labels: &[u8]) -> (f64, f64) {
    let norms: Vec<f64> = emb.rows().into_iter().map(|r| r.dot(&r).sqrt().max(1e-12)).collect();
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0, 0.0, 0);
    for i in 0..emb.nrows() {
        for j in (i + 1)..emb.nrows() {
            let c = emb.row(i).dot(&emb.row(j)) / (norms[i] * norms[j]);
            if labels[i] == labels[j] {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    (intra / n_intra as f64, inter / n_inter as f64)
}

#[test]
fn separated_classes_cluster_in_embedding_space() {
    let train = gaussian_blobs(60, 4, 5.0, 4);
    let val = gaussian_blobs(20, 4, 5.0, 5);
    let held_out = gaussian_blobs(40, 4, 5.0, 6);
    let cfg = TrainConfig {
        max_epochs: 60,
        patience: 20,
        learning_rate: 0.05,
        temperature: 0.5,
        ..TrainConfig::default()
    };
    let model = train_model(&train, &val, &small_shape(), &cfg, 9).unwrap();
    let emb = model.embed(&held_out).unwrap();
    let (intra, inter) = mean_cosines(&emb, held_out.labels());
    assert!(intra > inter, "intra {intra} inter {inter}");
}

#[test]
fn auxiliary_learns_separable_embeddings() {
    let train = gaussian_blobs(100, 3, 6.0, 7);
    let val = gaussian_blobs(50, 3, 6.0, 8);
    let oracle = train_logistic(&train, &LinearConfig::default(), 1).unwrap();
    let oracle_acc = oracle
        .predict_proba(&val)
        .unwrap()
        .iter()
        .zip(val.labels())
        .filter(|(&p, &y)| u8::from(p >= 0.5) == y)
        .count() as f64
        / val.n_samples() as f64;
    assert!(oracle_acc >= 0.95, "logistic oracle only reaches {oracle_acc}");
    let cfg = TrainConfig {
        max_epochs: 100,
        patience: 20,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let spec = NetworkShape::default().auxiliary_spec().unwrap();
    let (x, vx) = (to_array(&train), to_array(&val));
    let aux = train_auxiliary(&x, train.labels(), &vx, val.labels(), &spec, &cfg, 2).unwrap();
    let acc = aux.accuracy(&vx, val.labels()).unwrap();
    assert!(acc >= 0.95, "auxiliary accuracy {acc}");
    assert!(acc >= oracle_acc - 0.05);
    let out = aux.outputs(&vx).unwrap();
    assert_eq!(out.ncols(), 2);
    assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn embedding_shapes_and_determinism() {
    let data = gaussian_blobs(10, 5, 3.0, 9);
    let desk = EncoderProjectionModel::new(5, &NetworkShape::default(), 1).unwrap();
    assert_eq!(desk.embed(&data).unwrap().dim(), (20, 32));
    let sixteen = NetworkShape {
        encoder: vec![64, 32, 16],
        ..NetworkShape::default()
    };
    let m = EncoderProjectionModel::new(5, &sixteen, 1).unwrap();
    assert_eq!(m.embed(&data).unwrap().dim(), (20, 16));
    let wide = NetworkShape {
        encoder: vec![2048, 1024, 512, 256, 128],
        projection: vec![64, 32],
        ..NetworkShape::default()
    };
    let big = EncoderProjectionModel::new(5, &wide, 1).unwrap();
    let e = big.embed(&data).unwrap();
    assert_eq!(e.dim(), (20, 128));
    assert_eq!(e, big.embed(&data).unwrap());
    let narrow = FeatureMatrix::new(4, vec![0.0; 8], vec![0, 1]).unwrap();
    assert!(m.embed(&narrow).is_err());
}

#[test]
fn projection_outputs_have_unit_norm() {
    let data = gaussian_blobs(8, 3, 1.0, 10);
    let model = EncoderProjectionModel::new(3, &small_shape(), 4).unwrap();
    let (enc, proj) = model.forward(&to_array(&data)).unwrap();
    assert_eq!(enc.ncols(), 8);
    for r in proj.axis_iter(Axis(0)) {
        assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn models_survive_persistence() {
    let data = gaussian_blobs(15, 3, 3.0, 11);
    let cfg = TrainConfig {
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let model = train_model(&data, &data, &small_shape(), &cfg, 1).unwrap();
    let x = to_array(&data);
    let aux = train_auxiliary(&x, data.labels(), &x, data.labels(), &small_shape().auxiliary_spec().unwrap(), &cfg, 1)
        .unwrap();
    let mut w = ParamWriter::new();
    let mm = model.save(&mut w).unwrap();
    let am = aux.save(&mut w).unwrap();
    let buf = w.into_inner();
    let r = ParamReader::new(&buf);
    assert_eq!(EncoderProjectionModel::load(&mm, &r).unwrap(), model);
    assert_eq!(AuxiliaryClassifier::load(&am, &r).unwrap(), aux);
}
