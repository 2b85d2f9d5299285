// SPDX-License-Identifier: Apache-2.0

//! Small dense neural-network engine: tensors, the MLP and two-conv CNN
//! models, hand-written backward passes, and momentum SGD.

mod model;
mod network;
mod optim;
mod softmax;
mod tensor;

pub use model::{Architecture, ArchitectureId, Layer, ModelWeights};
pub use network::{backward, backward_from_input, forward, forward_cached, ForwardCache};
pub use optim::SgdState;
pub use softmax::{masked_softmax_row, softmax_with_temperature};
pub use tensor::{Scalar, Tensor};
