//! A small tanh MLP: encoder `f`, linear classifier `g` and projection head
//! `h`, with hand-written backpropagation, SGD/Adam and a training loop.

mod network;
mod optim;
mod train;

pub use network::{backward, forward, init_network, predict_logits, Dense, ForwardCache, NetworkParams};
pub use optim::{backward_and_step, Optimizer, OptimizerKind};
pub use train::{augment, evaluate, predict, train, train_with, TraceRecord, TrainConfig, TrainTrace};
