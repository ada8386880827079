mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::gradient_check;
pub use tape::{AutodiffError, Gradients, Op, Tape};
pub use tensor::Tensor;
