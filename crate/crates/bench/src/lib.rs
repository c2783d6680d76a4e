//! Deterministic inputs shared by the benchmarks.

use fer_forge_core::data::{synthetic, LabeledDataset};
use fer_forge_core::Tensor;

/// Pseudo-random tensor with entries in [-1, 1).
pub fn tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, |_| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
    })
}

pub fn dataset(n: usize) -> LabeledDataset {
    LabeledDataset::from_records(&synthetic::records(n, 7))
}

#[cfg(test)]
mod tests {
    #[test]
    fn tensor_is_deterministic_and_bounded() {
        let a = super::tensor(&[3, 5], 1);
        assert_eq!(a, super::tensor(&[3, 5], 1));
        assert_ne!(a, super::tensor(&[3, 5], 2));
        assert!(a.data().iter().all(|v| (-1.0..1.0).contains(v)));
    }
}
