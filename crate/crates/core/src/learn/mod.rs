//! Training: losses, analytic gradients, AdamW and the epoch loop.

pub mod grad;
pub mod loss;
pub mod optim;
pub mod params_io;
pub mod train;

pub use grad::{batch_loss_grad, Example, PrototypeBank};
pub use loss::{hinge2, loss_rej, LossTerms};
pub use optim::{AdamW, AdamWConfig};
pub use params_io::{read_model, write_model, Model};
pub use train::{build_bank, extract_examples, train, train_examples, TrainHyper, TrainOutput};
