//! Zero-shot question answering over knowledge graphs with a language model
//! driving a value-guided tree search.

pub mod kg;
pub mod kgi;
pub mod llm;
pub mod asm;
pub mod search;
pub mod harness;
