//! LLM explanation engine: prompt assembly, endpoint clients and the
//! groundedness check applied to returned text.

pub mod client;
pub mod grounded;
pub mod prompt;

pub use client::{
    generate, ChatMessage, ChatRequest, FailOnContact, GenerationParams, HttpLlm, LlmClient, LlmError, MockLlm,
};
pub use grounded::groundedness_check;
pub use prompt::{assemble_prompt, fill_llm_prompt, ExampleStore, IclExample};
