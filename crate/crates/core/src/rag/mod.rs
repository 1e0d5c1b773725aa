//! Response flow: anonymize, retrieve, gather memory, assemble, complete, restore.

mod config;
mod pipeline;
mod template;

pub use config::{ConfigError, SessionConfig, DEFAULT_ALPHA, DEFAULT_K};
pub use pipeline::{
    preview, respond, Clock, Engine, EntityView, PipelineError, Prepared, Response, ResponseTrace, Session, Stage,
    StageError,
};
pub use template::{
    assemble_prompt, format_entity_block, format_x_shot, AssembledPrompt, PromptTemplate, TemplateError,
    TemplateName, TemplateSet, SLOT,
};
