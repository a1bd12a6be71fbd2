//! Shared helpers for unit tests: seeded random problem instances with
//! controlled Gram conditioning.

use crate::kernels::{HalfInteger, KernelFamily, KernelSpec};
use crate::posterior::{Dataset, MeanSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const ALL_FAMILIES: [KernelFamily; 6] = [
    KernelFamily::MaternHalfInteger(HalfInteger::Half),
    KernelFamily::MaternHalfInteger(HalfInteger::ThreeHalves),
    KernelFamily::MaternHalfInteger(HalfInteger::FiveHalves),
    KernelFamily::MaternHalfInteger(HalfInteger::SevenHalves),
    KernelFamily::Gaussian,
    KernelFamily::InverseQuadratic,
];

/// One-dimensional dataset from raw coordinates.
pub fn d1(points: &[f64], values: &[f64], mean: MeanSpec) -> Dataset {
    Dataset::new(
        points.iter().map(|&x| vec![x]).collect(),
        values.to_vec(),
        mean,
    )
    .unwrap()
}

/// Random kernel + dataset with lengthscale in [0.1, 10] and scaled point
/// separation at least 0.5, which keeps the Gram condition number moderate
/// for every family.
pub fn random_instance(rng: &mut ChaCha8Rng, n_max: usize) -> (KernelSpec, Dataset) {
    let family = ALL_FAMILIES[rng.gen_range(0..ALL_FAMILIES.len())];
    let lam = 10f64.powf(rng.gen_range(-1.0..1.0));
    let n = rng.gen_range(1..=n_max);
    let d = rng.gen_range(1..=2usize);
    let spec = KernelSpec::new(family, 1.0, lam).unwrap();
    let span = 3.0 * lam * n as f64;
    let mut points: Vec<Vec<f64>> = Vec::new();
    while points.len() < n {
        let cand: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..span)).collect();
        let ok = points.iter().all(|p| {
            p.iter()
                .zip(&cand)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                >= 0.5 * lam
        });
        if ok {
            points.push(cand);
        }
    }
    let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    (spec, Dataset::new(points, values, MeanSpec::Zero).unwrap())
}
