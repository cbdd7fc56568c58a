//! A small convolutional network framework: tensors in `(n, c, h, w)`
//! layout, a layer graph with skip concatenations, reverse-mode gradients,
//! plain SGD with weight decay, and the U-Net used for both denoisers.
//!
//! Everything is generic over `f32` (training and inference) and `f64`
//! (gradient checks). Convolutions are lowered to matrix products with
//! im2col; samples of a batch run in parallel and per-sample parameter
//! gradients are reduced in sample order, so results do not depend on the
//! worker count.

mod io;
mod layers;
mod model;
mod ops;
mod tensor;
mod train;

pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use layers::{unet, Architecture, Init, LayerSpec, Padding};
pub use model::{gradient_check, Domain, Gradients, LayerGrads, LayerParams, Mode, Model, Trace};
pub use tensor::Tensor;
pub use train::{lr_at_epoch, sgd_train, PatchSet, TrainConfig, TrainReport};

use num_traits::{Float, FromPrimitive};
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

/// Floating-point element type of a network.
pub trait Scalar: Float + FromPrimitive + AddAssign + Sum + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a * b + beta * c` for row-major `a` (m x k) and `b` (k x n),
    /// with `a` optionally transposed in storage.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_transposed: bool, b: &[Self], b_transposed: bool, beta: Self, c: &mut [Self]);

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(m: usize, k: usize, n: usize, a: &[$t], at: bool, b: &[$t], bt: bool, beta: $t, c: &mut [$t]) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                let (rsa, csa) = if at { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if bt { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: the bounds above cover every index the strides reach.
                unsafe {
                    $gemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
