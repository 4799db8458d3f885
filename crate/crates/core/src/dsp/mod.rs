//! Deterministic signal-processing kernels.

pub mod audio;
pub mod bands;
pub mod fft;
pub mod resample;
pub mod stft;

pub use audio::{db_to_gain, rms, AudioBuffer};
pub use bands::{band_concat, band_partition, BandSplitSpec, Subband};
pub use resample::resample;
pub use stft::{istft, stft, Spectrogram, Stft, StftConfig, WindowKind};
