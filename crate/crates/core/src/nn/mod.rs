//! Parameterized layers of the encoder/decoder and their kernels.

pub mod conv;
mod dropout;
mod layers;
pub mod norm;
pub mod pool;

pub use conv::{conv2d, conv2d_stride2, conv_transpose2d};
pub use dropout::{dropout2d, dropout_mask, Dropout2dParams};
pub use layers::{BatchNorm2dLayer, Conv2dLayer, ConvTranspose2dLayer, HeInit};
pub use norm::{batch_norm_eval, batch_norm_train, BatchStats};
pub use pool::{maxpool2x2, maxpool2x2_forward};

/// Whether batchnorm and dropout use training or inference behavior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}
