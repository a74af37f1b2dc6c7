mod config;
mod generate;
mod gpt;

pub use config::ModelConfig;
pub use generate::{generate, greedy_decode, GenConfig};
pub use gpt::{DecodeState, Decoder, GptModel, Param, ParamKind, TokenBatch, IGNORE_INDEX};
