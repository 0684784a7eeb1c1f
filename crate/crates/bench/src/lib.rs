//! Shared fixtures for the criterion benchmarks under `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbmp_core::lap::CostMatrix;

/// Uniform `[0, 1)` costs, reproducible from `seed`.
pub fn uniform_costs(rows: usize, cols: usize, seed: u64) -> CostMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CostMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>()).expect("finite costs")
}

/// Euclidean distances between uniform points in the unit square.
pub fn planar_costs(rows: usize, cols: usize, seed: u64) -> CostMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = |k: usize| (0..k).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect::<Vec<_>>();
    let (a, b) = (pts(rows), pts(cols));
    CostMatrix::from_fn(rows, cols, |i, j| ((a[i].0 - b[j].0).powi(2) + (a[i].1 - b[j].1).powi(2)).sqrt()).expect("finite costs")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_reproducible() {
        let a = planar_costs(4, 6, 3);
        let b = planar_costs(4, 6, 3);
        for i in 0..4 {
            for j in 0..6 {
                assert_eq!(a.get(i, j), b.get(i, j));
                assert!((0.0..=2f64.sqrt()).contains(&a.get(i, j)));
            }
        }
        assert!(uniform_costs(3, 3, 1).get(0, 0) < 1.0);
    }
}
