//! Engine configuration: one TOML file plus environment variables for
//! secrets and endpoint overrides. Command-line flags override file values.
//!
//! Environment variables: `RQ_GENERATOR_URL` (generator endpoint),
//! `RQ_EMBED_URL` (embedding endpoint), `RQ_SEARCH_KEY` (search API key —
//! never stored in the file).

use anyhow::{bail, Context, Result};
use rq_core::dataset::BuildConfig;
use rq_core::engine::SearchConfig;
use rq_core::evaluation::EvalMetric;
use rq_core::gateway::{Generator, HttpGenerator, ScriptedGenerator};
use rq_core::retrieval::{
    CorpusIndex, HttpEmbedder, HttpSearchClient, SourceRetrieverProvider,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const ENV_GENERATOR_URL: &str = "RQ_GENERATOR_URL";
pub const ENV_EMBED_URL: &str = "RQ_EMBED_URL";
pub const ENV_SEARCH_KEY: &str = "RQ_SEARCH_KEY";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub search: SearchConfig,
    pub dataset: BuildConfig,
    pub backends: Backends,
    pub paths: Paths,
    pub seed: u64,
    pub metric: MetricDefault,
    /// Worker threads for the data-parallel loops; 0 uses the default.
    pub workers: usize,
}

/// Wrapper so the metric has a file-level default.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricDefault(pub EvalMetric);

impl Default for MetricDefault {
    fn default() -> Self {
        MetricDefault(EvalMetric::Match)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Backends {
    pub generator: BackendRef,
    pub annotator: BackendRef,
    pub embedding: Option<EmbeddingBackend>,
    pub search: Option<SearchBackend>,
}

/// A completion backend: a scripted replay file or an HTTP endpoint.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendRef {
    /// "scripted" or "http".
    pub kind: String,
    pub script: Option<PathBuf>,
    pub url: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingBackend {
    pub url: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBackend {
    pub url: String,
    pub burst: usize,
    pub per_sec: f64,
}

impl Default for SearchBackend {
    fn default() -> Self {
        Self {
            url: String::new(),
            burst: 4,
            per_sec: 4.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Line-delimited `{id, title, body}` corpus for BM25 retrieval.
    pub corpus: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: EngineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // Paths in the file are relative to the file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        config.anchor_paths(base);
        config.apply_env();
        config.validate()?;
        // The dataset pipeline shares the search module's token table and
        // parallelism switch.
        config.dataset.tokens = config.search.tokens.clone();
        config.dataset.parallel = config.search.parallel;
        Ok(config)
    }

    fn anchor_paths(&mut self, base: &Path) {
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        if let Some(p) = &mut self.backends.generator.script {
            anchor(p);
        }
        if let Some(p) = &mut self.backends.annotator.script {
            anchor(p);
        }
        if let Some(p) = &mut self.paths.corpus {
            anchor(p);
        }
        if self.paths.output_dir.as_os_str().is_empty() {
            self.paths.output_dir = base.join("out");
        } else {
            anchor(&mut self.paths.output_dir);
        }
    }

    fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(ENV_GENERATOR_URL) {
            self.backends.generator.url = Some(url);
        }
        if let Ok(url) = std::env::var(ENV_EMBED_URL) {
            self.backends
                .embedding
                .get_or_insert_with(Default::default)
                .url = Some(url);
        }
    }

    fn validate(&self) -> Result<()> {
        if self.search.width == 0 || self.search.top_k == 0 {
            bail!("width and top_k must be positive");
        }
        for (name, backend) in [
            ("generator", &self.backends.generator),
            ("annotator", &self.backends.annotator),
        ] {
            if let Some(script) = &backend.script {
                if !script.exists() {
                    bail!("{name} script {} does not exist", script.display());
                }
            }
        }
        if let Some(corpus) = &self.paths.corpus {
            if !corpus.exists() {
                bail!("corpus {} does not exist", corpus.display());
            }
        }
        self.search.tokens.check().map_err(|e| anyhow::anyhow!(e))?;
        Ok(())
    }

    /// Fingerprint of everything that affects outputs.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        rq_core::util::sha256_hex(canonical.as_bytes())
    }

    pub fn make_generator(&self) -> Result<Box<dyn Generator>> {
        make_backend("generator", &self.backends.generator)
    }

    pub fn make_annotator(&self) -> Result<Box<dyn Generator>> {
        make_backend("annotator", &self.backends.annotator)
    }

    /// Assemble the retriever provider for the configured source.
    pub fn make_provider(&self) -> Result<SourceRetrieverProvider> {
        let mut provider = SourceRetrieverProvider::new(self.search.source);
        if let Some(corpus_path) = &self.paths.corpus {
            let text = std::fs::read_to_string(corpus_path)
                .with_context(|| format!("reading corpus {}", corpus_path.display()))?;
            let docs = CorpusIndex::parse_corpus(&text).context("parsing corpus")?;
            provider = provider.with_corpus(CorpusIndex::build(docs));
        }
        if let Some(embedding) = &self.backends.embedding {
            if let Some(url) = &embedding.url {
                provider = provider.with_embedder(Arc::new(HttpEmbedder::new(url)));
            }
        }
        if let Some(search) = &self.backends.search {
            if !search.url.is_empty() {
                let key = std::env::var(ENV_SEARCH_KEY).ok();
                provider = provider.with_web(Arc::new(HttpSearchClient::with_rate(
                    &search.url,
                    key,
                    search.burst,
                    search.per_sec,
                )));
            }
        }
        Ok(provider)
    }
}

fn make_backend(name: &str, backend: &BackendRef) -> Result<Box<dyn Generator>> {
    match backend.kind.as_str() {
        "scripted" | "" => {
            let script = backend
                .script
                .as_ref()
                .with_context(|| format!("{name}: scripted backend needs a script path"))?;
            let generator = ScriptedGenerator::load_script(script)
                .map_err(|e| anyhow::anyhow!("{name}: {e}"))?
                .with_concurrency(rq_core::gateway::ConcurrencyMode::Concurrent);
            Ok(Box::new(generator))
        }
        "http" => {
            let url = backend
                .url
                .as_ref()
                .with_context(|| format!("{name}: http backend needs a url (file or env)"))?;
            Ok(Box::new(HttpGenerator::new(url)))
        }
        other => bail!("{name}: unknown backend kind `{other}`"),
    }
}
