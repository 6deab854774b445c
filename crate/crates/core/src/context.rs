//! Trajectory-scoped context: an append-only, deduplicated item list.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextKind {
    DocSlice,
    CodeSlice,
    Command,
    CommandOutput,
    Configuration,
    ArtifactPath,
}

impl ContextKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextKind::DocSlice => "doc-slice",
            ContextKind::CodeSlice => "code-slice",
            ContextKind::Command => "command",
            ContextKind::CommandOutput => "command-output",
            ContextKind::Configuration => "configuration",
            ContextKind::ArtifactPath => "artifact-path",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("context item payload must be non-empty")]
pub struct EmptyPayload;

/// One piece of knowledge gathered while agentizing.
///
/// `ArtifactPath` items must name an existing path when created; that check
/// needs a filesystem and is performed by the caller that builds the item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ContextItem {
    pub kind: ContextKind,
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_node: Option<String>,
}

impl ContextItem {
    pub fn new(kind: ContextKind, payload: impl Into<String>) -> Result<Self, EmptyPayload> {
        let payload = payload.into();
        if payload.is_empty() {
            return Err(EmptyPayload);
        }
        Ok(Self {
            kind,
            payload,
            source_node: None,
        })
    }

    pub fn from_node(mut self, node: impl Into<String>) -> Self {
        self.source_node = Some(node.into());
        self
    }

    /// Identity used for deduplication: hash of kind and payload only.
    pub fn content_key(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.kind.as_str().as_bytes());
        hasher.update([0u8]);
        hasher.update(self.payload.as_bytes());
        hasher.finalize().into()
    }
}

/// Ordered set of context items. Merging never removes or reorders items.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "ContextDoc", into = "ContextDoc")]
pub struct Context {
    items: Vec<ContextItem>,
    keys: BTreeSet<[u8; 32]>,
}

#[derive(Serialize, Deserialize)]
struct ContextDoc {
    items: Vec<ContextItem>,
}

impl From<ContextDoc> for Context {
    fn from(doc: ContextDoc) -> Self {
        let mut ctx = Context::default();
        ctx.extend(doc.items);
        ctx
    }
}

impl From<Context> for ContextDoc {
    fn from(ctx: Context) -> Self {
        ContextDoc { items: ctx.items }
    }
}

impl PartialEq for Context {
    fn eq(&self, other: &Self) -> bool {
        self.items == other.items
    }
}

impl Eq for Context {}

impl Context {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn items(&self) -> &[ContextItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: &ContextItem) -> bool {
        self.keys.contains(&item.content_key())
    }

    /// Append one item unless an equal (kind, payload) item is present.
    pub fn push(&mut self, item: ContextItem) -> bool {
        if self.keys.insert(item.content_key()) {
            self.items.push(item);
            true
        } else {
            false
        }
    }

    /// Append the items not already present, in the given order. Returns the
    /// number of items added.
    pub fn extend<I: IntoIterator<Item = ContextItem>>(&mut self, increment: I) -> usize {
        increment.into_iter().filter(|item| self.push(item.clone())).count()
    }

    /// `base ∪ increment` with base order preserved.
    pub fn merge<'a, I>(&self, increment: I) -> Context
    where
        I: IntoIterator<Item = &'a ContextItem>,
    {
        let mut out = self.clone();
        out.extend(increment.into_iter().cloned());
        out
    }

    /// The context as it was when it had `len` items.
    pub fn prefix(&self, len: usize) -> Context {
        let mut out = Context::default();
        out.extend(self.items.iter().take(len).cloned());
        out
    }

    /// Items appended after the first `len`.
    pub fn since(&self, len: usize) -> &[ContextItem] {
        &self.items[len.min(self.items.len())..]
    }

    pub fn iter(&self) -> core::slice::Iter<'_, ContextItem> {
        self.items.iter()
    }
}

impl<'a> IntoIterator for &'a Context {
    type Item = &'a ContextItem;
    type IntoIter = core::slice::Iter<'a, ContextItem>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}
