//! A short version of the rotated-digit experiment: train on rotation pairs,
//! then compare logistic regression on magnitudes with k-NN on pixels and
//! write the magnitude PCA as an SVG.
//!
//! Run with `--release`; it takes a minute or two.

use std::path::Path;

use cae::classify::{cross_validate_pools, pca_2d, stratified_pools, ClassifierSpec, CvConfig, LogRegConfig};
use cae::data::{load_idx, StandardizationStats};
use cae::model::CaeModel;
use cae::render::{scatter_svg, PointColour};
use cae::train::{train, DatasetPairs, NormMode, TrainConfig};
use cae::transforms::{PairScheme, TransformSpec};
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let digits = load_idx(&dir.join("mnist-5k-images.idx.gz"), &dir.join("mnist-5k-labels.idx.gz")).unwrap();
    let pixels = digits.flattened();
    let (train_idx, test_idx) = stratified_pools(&digits.labels, 2000, 1000).unwrap();
    let (train_px, test_px) = (pixels.select(Axis(0), &train_idx), pixels.select(Axis(0), &test_idx));
    let train_y: Vec<u8> = train_idx.iter().map(|&i| digits.labels[i]).collect();
    let test_y: Vec<u8> = test_idx.iter().map(|&i| digits.labels[i]).collect();

    let stats = StandardizationStats::fit_global(train_px.view()).unwrap();
    let spec = TransformSpec::rotation(28, 28);
    let cfg = TrainConfig {
        n_basis: 64,
        batch_size: 100,
        epochs: 15,
        transforms_per_epoch: 10_000,
        norm_mode: NormMode::None,
        rng_seed: 7,
        ..Default::default()
    };
    let z = stats.apply(train_px.view()).unwrap();
    let out = train(&cfg, 784, &mut DatasetPairs { data: z.view(), spec: &spec, scheme: PairScheme::Double }).unwrap();
    let model = CaeModel::new(out.basis, stats).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let rotate = |x: &Array2<f64>, rng: &mut ChaCha8Rng| {
        let mut r = x.clone();
        for mut row in r.outer_iter_mut() {
            let p = spec.sample_param(rng);
            let moved = spec.apply(row.view(), p).unwrap();
            row.assign(&moved);
        }
        r
    };
    let (rot_train, rot_test) = (rotate(&train_px, &mut rng), rotate(&test_px, &mut rng));
    let (mag_train, mag_test) = (model.magnitudes(rot_train.view()).unwrap(), model.magnitudes(rot_test.view()).unwrap());

    let cv = CvConfig { train_size: 1000, folds: 3, test_size: 1000, seed: 1 };
    let logreg = ClassifierSpec::LogReg { config: LogRegConfig { l2: 1e-2, epochs: 500, learning_rate: 0.5 }, standardize: true };
    let mag = cross_validate_pools(mag_train.view(), &train_y, mag_test.view(), &test_y, &cv, &logreg).unwrap();
    let knn = cross_validate_pools(rot_train.view(), &train_y, rot_test.view(), &test_y, &cv, &ClassifierSpec::Knn { k: 1 }).unwrap();
    println!("logistic regression on magnitudes: {:.1}% error", mag.mean_error * 100.0);
    println!("1-NN on rotated pixels:            {:.1}% error", knn.mean_error * 100.0);

    let pca = pca_2d(mag_test.view()).unwrap();
    let svg = scatter_svg(pca.scores.view(), PointColour::Labels(&test_y), "magnitudes of rotated digits");
    let path = std::env::temp_dir().join("rotated_digits_pca.svg");
    std::fs::write(&path, svg).unwrap();
    println!("PCA scatter written to {}", path.display());
}
