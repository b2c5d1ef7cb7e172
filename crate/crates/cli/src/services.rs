//! Provider wiring for the binary.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use litscope_core::gateway::{Gateway, ProviderConfig, Templates};
use litscope_core::ingest::ArxivClient;
use litscope_core::{Clock, Services, SystemClock};

/// Where node execution gets its answers from.
#[derive(Debug, Clone, Default)]
pub enum ProviderMode {
    /// OpenAI-compatible endpoint from `LLM_*` variables and the live arXiv
    /// API.
    #[default]
    Live,
    /// Scripted agent, hash-seeded embeddings and the built-in synthetic
    /// arXiv pool. Needs no network.
    Mock,
}

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    pub mode: ProviderMode,
    /// Directory of prompt template overrides.
    pub templates: Option<PathBuf>,
}

impl ServiceOptions {
    pub fn build(&self) -> anyhow::Result<Services> {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let mut services = match self.mode {
            ProviderMode::Mock => Services::mock(clock),
            ProviderMode::Live => {
                let config = ProviderConfig::from_env().context("reading LLM_* configuration")?;
                if std::env::var_os(&config.api_key_source).is_none() {
                    anyhow::bail!("{} is not set (use --mock to run offline)", config.api_key_source);
                }
                Services {
                    gateway: Arc::new(Gateway::http(config).context("configuring the model gateway")?),
                    arxiv: Arc::new(ArxivClient::http().context("configuring the arXiv client")?),
                    templates: Arc::new(Templates::builtin()),
                    clock,
                }
            }
        };
        if let Some(dir) = &self.templates {
            services.templates = Arc::new(
                Templates::from_dir(dir).with_context(|| format!("loading templates from {}", dir.display()))?,
            );
        }
        Ok(services)
    }
}
