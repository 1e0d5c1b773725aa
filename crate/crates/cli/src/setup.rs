//! Shared flag groups and the engine they describe.

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use hearth_core::embedding::{EmbeddingProvider, HashingEmbedder, RemoteEmbedder};
use hearth_core::knowledge_base::{ingest, KnowledgeBase};
use hearth_core::llm::{LlmProvider, RemoteLlm, ScriptedLlm};
use hearth_core::rag::{Clock, Engine, SessionConfig, TemplateName, TemplateSet};
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Args, Clone, Debug)]
pub struct EmbedArgs {
    /// Remote embedding model, used when EMBEDDINGS_BASE_URL is set.
    #[arg(long, default_value = "text-embedding-3-small")]
    pub embed_model: String,
    #[arg(long, default_value_t = 1536)]
    pub embed_dim: usize,
}

impl EmbedArgs {
    /// Remote embeddings when EMBEDDINGS_BASE_URL is set, the offline hashing
    /// embedder otherwise.
    pub fn build(&self) -> Arc<dyn EmbeddingProvider> {
        match RemoteEmbedder::from_env(&self.embed_model, self.embed_dim) {
            Some(r) => Arc::new(r),
            None => Arc::new(HashingEmbedder::default()),
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum LlmKind {
    /// Remote if LLM_BASE_URL is set, scripted otherwise.
    Auto,
    /// Deterministic offline provider.
    Scripted,
    /// OpenAI-compatible endpoint from LLM_BASE_URL / LLM_API_KEY.
    Remote,
}

#[derive(Args, Clone, Debug)]
pub struct EngineArgs {
    /// Corpus CSV, or a snapshot written by `hearth ingest` (.json).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Directory of `{name}.txt` templates overriding the shipped ones.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LlmKind::Auto)]
    pub llm: LlmKind,
    #[arg(long, default_value = "gpt-4o-mini")]
    pub model: String,
    /// Stamp turns from a fixed epoch so runs are reproducible.
    #[arg(long)]
    pub logical_clock: bool,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

impl EngineArgs {
    pub fn llm(&self) -> Arc<dyn LlmProvider> {
        let remote = match self.llm {
            LlmKind::Auto => std::env::var_os("LLM_BASE_URL").is_some(),
            LlmKind::Scripted => false,
            LlmKind::Remote => true,
        };
        if remote {
            Arc::new(RemoteLlm::from_env(&self.model))
        } else {
            Arc::new(ScriptedLlm::rules())
        }
    }

    pub fn build(&self) -> Result<Engine> {
        let embedder = self.embed.build();
        let mut engine = Engine::new(embedder.clone(), self.llm());
        if let Some(path) = &self.corpus {
            let kb = if path.extension().is_some_and(|e| e == "json") {
                KnowledgeBase::load_snapshot(path)
            } else {
                ingest(path, embedder.as_ref())
            }
            .with_context(|| format!("loading corpus {}", path.display()))?;
            if kb.provider_config() != &embedder.config() {
                bail!(
                    "snapshot was embedded with {:?} but the active embedder is {:?}",
                    kb.provider_config(),
                    embedder.config()
                );
            }
            engine = engine.with_kb(Arc::new(kb));
        }
        if let Some(dir) = &self.templates {
            engine = engine.with_templates(TemplateSet::load_dir(dir)?);
        }
        if self.logical_clock {
            engine = engine.with_clock(Clock::logical());
        }
        Ok(engine)
    }
}

/// Session defaults: a JSON config file, then individual flag overrides.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub short_term_n: Option<usize>,
    #[arg(long)]
    pub update_every: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub template: Option<TemplateName>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<SessionConfig> {
        let mut c = match &self.config {
            Some(p) => SessionConfig::load(p)?,
            None => SessionConfig::default(),
        };
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.short_term_n {
            c.short_term_n = v;
        }
        if let Some(v) = self.update_every {
            c.update_every = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.template {
            c.template = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        c.validate()?;
        Ok(c)
    }
}
