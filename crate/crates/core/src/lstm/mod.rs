//! LSTM emulator of the EnKF analysis, trained with backpropagation through time.

pub mod emulator;
pub mod format;
pub mod network;
pub mod train;

pub use emulator::{emulate_assimilation, Emulator, InputEncoding, SeasonInputs, TrainedEmulator};
pub use network::{loss_and_gradient, sequence_mse, ForwardCache, LstmNetwork};
pub use train::{train_emulator, train_with_validation, Adam, TrainConfig, TrainedNetwork, TrainingSample};
