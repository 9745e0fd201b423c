use crate::embedding_store::{LayerDump, LayerSetting, StaticEmbeddings};
use crate::error::{Error, Result};
use crate::text_pipeline::{tokenize, word_groups_contextual, word_groups_static, TokenGroups};

/// Where token vectors come from: a static table, or a contextual dump whose
/// layer is chosen per call.
#[derive(Debug, Clone, Copy)]
pub enum EmbeddingSource<'a> {
    Static(&'a StaticEmbeddings),
    Contextual(&'a LayerDump),
}

impl<'a> EmbeddingSource<'a> {
    pub fn id(&self) -> String {
        match self {
            EmbeddingSource::Static(s) => s.id().to_string(),
            EmbeddingSource::Contextual(d) => d.id(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingSource::Static(s) => s.dim(),
            EmbeddingSource::Contextual(d) => d.dim(),
        }
    }

    pub fn is_contextual(&self) -> bool {
        matches!(self, EmbeddingSource::Contextual(_))
    }

    /// Check that `layers` is usable with this source: required and in range
    /// for dumps, absent for static tables.
    pub fn check_layers(&self, layers: Option<LayerSetting>) -> Result<()> {
        match (self, layers) {
            (EmbeddingSource::Static(_), None) => Ok(()),
            (EmbeddingSource::Static(_), Some(l)) => Err(Error::Usage(format!(
                "layer setting {l} given for a static embedding source"
            ))),
            (EmbeddingSource::Contextual(_), None) => Err(Error::Usage(
                "contextual sources need a layer setting".into(),
            )),
            (EmbeddingSource::Contextual(d), Some(l)) if l.layer() > d.num_layers() => {
                Err(Error::LayerOutOfRange {
                    layer: l.layer(),
                    max: d.num_layers(),
                })
            }
            _ => Ok(()),
        }
    }

    /// Word-grouped token vectors for `text`. Contextual sources look the
    /// text up among the dump entries.
    pub fn groups(&self, text: &str, layers: Option<LayerSetting>) -> Result<TokenGroups> {
        match self {
            EmbeddingSource::Static(store) => Ok(word_groups_static(&tokenize(text), store)),
            EmbeddingSource::Contextual(dump) => {
                let layers = layers.ok_or_else(|| {
                    Error::Usage("contextual sources need a layer setting".into())
                })?;
                let entry = dump.entry_for_text(text).ok_or_else(|| {
                    Error::Invalid(format!("text not present in dump: {text:?}"))
                })?;
                let matrix = layers.apply(entry)?;
                word_groups_contextual(entry, matrix.view())
            }
        }
    }
}
