//! Network layers with hand-written backward passes.
//!
//! Every layer's `forward` returns whatever its `backward` needs; parameter
//! gradients accumulate into a structurally identical instance of the layer.

pub mod attention;
pub mod bandsplit;
pub mod ffn;
pub mod layers;
pub mod locoformer;
pub mod param;

pub use attention::Attention;
pub use bandsplit::{BandDecoder, BandEncoder};
pub use ffn::{ConvFfn, SeqLayout};
pub use layers::{GroupRmsNorm, Linear};
pub use locoformer::{LocoformerBlock, SubBlock, SubBlockConfig};
pub use param::{Param, Parameters};
