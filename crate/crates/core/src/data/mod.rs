//! Excitation signals, logged series, scaling and windowing.

pub mod excitation;
pub mod scaler;
pub mod series;
pub mod window;

pub use excitation::{gen_ramp_excitation, gen_step_excitation, Excitation};
pub use scaler::{channel_names, fit_scaler, Channel, Scaler};
pub use series::{downsample, estimate_velocity, SeriesLog, StateVariant};
pub use window::{make_sequences, split, ScaledSeries, Window, WindowedDataset};
