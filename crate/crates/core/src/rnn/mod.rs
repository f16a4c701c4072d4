//! Recurrent state-space models `x̂_{k+1}, h_k = f(x_k, u_k, h_{k−1})`.

pub mod cell;
pub mod checkpoint;
pub mod model;
pub mod net;
pub mod optim;
pub mod train;

pub use cell::{cell_vjp, gru_cell_forward, lstm_cell_forward, CellVjp};
pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest};
pub use model::{CellKind, HiddenState, LayerParams, Layout, RnnArch, RnnModel};
pub use net::{
    advance_hidden, compute_gradients, frozen_step, gradients_with, mse_loss, rnn_forward, rollout,
    step_jacobian, Gradients, HiddenMode, Rollout, StepJacobian,
};
pub use optim::{adam_step, plateau_lr_update, AdamConfig, AdamState, Plateau};
pub use train::{evaluate, train, train_conventional, EpochRecord, History, TrainSpec, Trainer};
