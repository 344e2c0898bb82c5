//! Manipulation language model: vocabulary, token grammar, task prompts, a small
//! decoder-only transformer with two-stage training, and constrained decoding.

pub mod generate;
pub mod grammar;
pub mod harness;
pub mod model;
pub mod prompt;
pub mod vocab;

pub use generate::{generate, Generated, LogitSource, RandomLogits};
pub use grammar::{parse_sequence, serialize_frames, Layout, ParseMode, TokenSequence};
pub use harness::{build_examples, decode_to_grasps, encode_sequences, run_task, stage_tasks, EncodedSequence, TaskRun};
pub use model::{LmConfig, LmEpochStats, SamplingConfig, TransformerLm};
pub use prompt::{make_example, make_prompt, Example, PromptInputs, Task};
pub use vocab::Vocabulary;
