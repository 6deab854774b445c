//! Code knowledge graph and usage knowledge base.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityKind {
    File,
    Function,
    ClassLike,
    Capability,
    EntryPoint,
    Dataset,
    ModelArtifact,
}

impl EntityKind {
    /// Kinds that stand for code (as opposed to capabilities and data).
    pub fn is_code(self) -> bool {
        matches!(
            self,
            EntityKind::File | EntityKind::Function | EntityKind::ClassLike | EntityKind::EntryPoint
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Location {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lines: Option<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CkgEntity {
    pub id: String,
    pub kind: EntityKind,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<Location>,
    #[serde(default)]
    pub summary: String,
    /// Shell command for entry points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    Contains,
    Calls,
    Documents,
    ImplementsCapability,
    RequiresArtifact,
}

impl Relation {
    /// Allowed (source kinds, target kinds).
    pub fn signature(self) -> (&'static [EntityKind], &'static [EntityKind]) {
        use EntityKind::*;
        match self {
            Relation::Contains => (&[File, ClassLike], &[Function, ClassLike]),
            Relation::Calls => (&[Function, EntryPoint], &[Function, File, EntryPoint]),
            Relation::Documents => (&[Capability], &[EntryPoint, Function, File, ClassLike]),
            Relation::ImplementsCapability => (&[File, Function, ClassLike, EntryPoint], &[Capability]),
            Relation::RequiresArtifact => (&[File, Function, EntryPoint], &[Dataset, ModelArtifact]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CkgEdge {
    pub from: String,
    pub to: String,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CodeKnowledgeGraph {
    pub entities: BTreeMap<String, CkgEntity>,
    pub edges: BTreeSet<CkgEdge>,
}

impl CodeKnowledgeGraph {
    pub fn add_entity(&mut self, entity: CkgEntity) -> bool {
        if self.entities.contains_key(&entity.id) {
            return false;
        }
        self.entities.insert(entity.id.clone(), entity);
        true
    }

    pub fn add_edge(&mut self, from: &str, to: &str, relation: Relation) {
        self.edges.insert(CkgEdge {
            from: from.into(),
            to: to.into(),
            relation,
        });
    }

    pub fn entity(&self, id: &str) -> Option<&CkgEntity> {
        self.entities.get(id)
    }

    pub fn of_kind(&self, kind: EntityKind) -> impl Iterator<Item = &CkgEntity> {
        self.entities.values().filter(move |e| e.kind == kind)
    }

    pub fn count(&self, kind: EntityKind) -> usize {
        self.of_kind(kind).count()
    }

    pub fn edges_from<'a>(&'a self, id: &'a str, rel: Relation) -> impl Iterator<Item = &'a CkgEntity> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.from == id && e.relation == rel)
            .filter_map(|e| self.entities.get(&e.to))
    }

    pub fn edges_to<'a>(&'a self, id: &'a str, rel: Relation) -> impl Iterator<Item = &'a CkgEntity> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.to == id && e.relation == rel)
            .filter_map(|e| self.entities.get(&e.from))
    }

    /// Code entities a capability is linked to, in either direction.
    pub fn capability_code<'a>(&'a self, cap: &'a str) -> Vec<&'a CkgEntity> {
        let mut out: Vec<&CkgEntity> = self
            .edges_from(cap, Relation::Documents)
            .chain(self.edges_to(cap, Relation::ImplementsCapability))
            .filter(|e| e.kind.is_code())
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out.dedup_by(|a, b| a.id == b.id);
        out
    }

    /// Referential integrity and relation schema.
    pub fn check(&self) -> Result<(), String> {
        for e in self.entities.values() {
            if e.kind != EntityKind::Capability
                && !e.location.as_ref().is_some_and(|l| !l.path.is_empty())
            {
                return Err(format!("{} has no location", e.id));
            }
        }
        for edge in &self.edges {
            let (Some(from), Some(to)) = (self.entities.get(&edge.from), self.entities.get(&edge.to)) else {
                return Err(format!("dangling edge {} -> {}", edge.from, edge.to));
            };
            let (dom, range) = edge.relation.signature();
            if !dom.contains(&from.kind) || !range.contains(&to.kind) {
                return Err(format!(
                    "{:?} edge {} -> {} violates its signature",
                    edge.relation, edge.from, edge.to
                ));
            }
        }
        for cap in self.of_kind(EntityKind::Capability) {
            if self.capability_code(&cap.id).is_empty() {
                return Err(format!("capability {} links to no code", cap.id));
            }
        }
        Ok(())
    }

    /// Entities ranked by token overlap over name and summary; ties by id.
    pub fn query(&self, query: &str) -> Vec<&CkgEntity> {
        rank::rank(
            self.entities
                .values()
                .map(|e| (e.id.as_str(), rank::score(query, &e.name, &e.summary), e)),
        )
        .into_iter()
        .map(|(_, e)| e)
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct UsageTuple {
    pub query: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invocation: Option<String>,
    #[serde(default)]
    pub backing_entities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct UsageKb {
    pub tuples: Vec<UsageTuple>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Built without planner answers, from graph summaries only.
    #[serde(default)]
    pub degraded: bool,
}

/// Minimum overlap for `answer_query` to return a tuple.
pub const ANSWER_THRESHOLD: f64 = 0.5;

impl UsageKb {
    pub fn answer_query(&self, query: &str) -> Option<&UsageTuple> {
        let ranked = rank::rank(
            self.tuples
                .iter()
                .map(|t| (t.query.as_str(), rank::score(query, &t.query, &t.answer), t)),
        );
        ranked
            .into_iter()
            .find(|(s, _)| *s >= ANSWER_THRESHOLD)
            .map(|(_, t)| t)
    }

    pub fn check(&self, graph: &CodeKnowledgeGraph) -> Result<(), String> {
        for t in &self.tuples {
            if t.answer.trim().is_empty() {
                return Err(format!("tuple {:?} has an empty answer", t.query));
            }
            for b in &t.backing_entities {
                if graph.entity(b).is_none() {
                    return Err(format!("tuple {:?} backs onto unknown entity {b}", t.query));
                }
            }
        }
        Ok(())
    }

    /// Every capability is backed by some tuple, or the KB says why not.
    pub fn covers(&self, graph: &CodeKnowledgeGraph) -> bool {
        if self.degraded && !self.warnings.is_empty() {
            return true;
        }
        graph.of_kind(EntityKind::Capability).all(|cap| {
            self.tuples
                .iter()
                .any(|t| t.backing_entities.contains(&cap.id))
        })
    }
}
