use gpillposed::kernels::{HalfInteger, KernelSpec};
use gpillposed::posterior::{Dataset, MeanSpec};
use gpillposed::estimation::{delta_scan, default_delta_grid, GridSpec, EstimateResult};

fn main() {
    let spec = KernelSpec::matern(HalfInteger::ThreeHalves, 1.0, 1.0).unwrap();
    let grid = GridSpec::new(1e-2, 1e4, 64).unwrap();
    let deltas = default_delta_grid();
    for (name, ys) in [
        ("constant", vec![1.0, 1.0, 1.0]),
        ("near", vec![1.0, 1.05, 0.95]),
        ("mid", vec![1.0, 1.5, 0.5]),
        ("far", vec![1.0, 2.0, -1.0]),
    ] {
        let data = Dataset::new(
            vec![vec![1.0], vec![1.2], vec![2.0]],
            ys,
            MeanSpec::Zero,
        ).unwrap();
        let scan = delta_scan(&spec, &data, &deltas, &grid).unwrap();
        print!("{name}: delta_inf={:?} pattern=", scan.delta_inf);
        for e in &scan.entries {
            print!("{}", match &e.result {
                EstimateResult::Finite { .. } => 'F',
                EstimateResult::DivergesToInfinity { .. } => 'D',
                EstimateResult::Inconclusive { .. } => '?',
            });
        }
        println!();
    }
}
