//! Minimal reverse-mode network components: enough to build and train the
//! dual-branch classifier on a CPU.
//!
//! Everything is generic over [`Real`]; training runs in `f32`, gradient
//! checks in `f64`. Activations are per-sample `(C, H, W)` or `(N)` tensors;
//! mini-batches are formed by summing per-sample gradients in a fixed order.

mod adam;
mod checkpoint;
mod gradcheck;
mod init;
mod layers;
mod loss;
mod network;
mod tensor;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamInfo};
pub use gradcheck::{check_against_finite_differences, gradient_check, layer_gradient_check, GradCheckOptions};
pub use init::{kaiming_init, kaiming_std};
pub use layers::{Cache, Conv2d, Dense, Layer, LayerSpec};
pub use loss::{softmax, softmax_cross_entropy};
pub use network::{Branch, DualBranchNet, Gradients, NetworkConfig};
pub use tensor::Tensor;
pub use train::{evaluate, predict, train, EpochRecord, Sample, TrainConfig, TrainReport};

/// Scalar type usable for network storage and arithmetic.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
