//! Fixtures shared by the benchmarks.

use exreg::Tensor;

/// Deterministic image-like tensor `[1, 3, size, size]` in [0, 1).
pub fn test_image(size: usize) -> Tensor {
    Tensor::from_fn([1, 3, size, size], |i| (i * 37 % 101) as exreg::Real / 101.0)
}

/// The default five-entry relative EV stack.
pub const STACK_EVS: [exreg::Real; 5] = [-1.5, -1.0, 0.0, 1.0, 1.5];
