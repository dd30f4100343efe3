//! Per-record Huffman knowledge trees.
//!
//! Nodes live in an arena where every child id is smaller than its parent
//! id, so ascending id order is a valid bottom-up schedule and descending
//! order a valid top-down one. The root is always the last node.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt::Write as _;

use crate::corpus::{
    target_distribution, ClassId, CooccurrenceTable, CoverageItem, EntityId, KnowledgeBase, Vocabulary,
};
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Pairs the two entities of one knowledge triple (by key).
    ShallowKnowledge(usize),
    HuffmanMerge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Leaf { entity: EntityId },
    Logic { left: NodeId, right: NodeId, origin: Origin },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub payload: Payload,
    pub weight: u64,
    pub coverage: BTreeSet<CoverageItem>,
}

impl TreeNode {
    pub fn leaf(entity: EntityId, weight: u64) -> Self {
        TreeNode {
            payload: Payload::Leaf { entity },
            weight,
            coverage: BTreeSet::from([CoverageItem::Entity(entity)]),
        }
    }

    pub fn children(&self) -> Option<(NodeId, NodeId)> {
        match self.payload {
            Payload::Leaf { .. } => None,
            Payload::Logic { left, right, .. } => Some((left, right)),
        }
    }

    pub fn entity(&self) -> Option<EntityId> {
        match self.payload {
            Payload::Leaf { entity } => Some(entity),
            Payload::Logic { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeTree {
    nodes: Vec<TreeNode>,
    /// Items handed to the Huffman procedure (shallow nodes and loose leaves).
    first_level: Vec<NodeId>,
    targets: Vec<Vec<f64>>,
}

impl KnowledgeTree {
    /// Assembles a tree from an arena, checking the structural invariants:
    /// children precede parents, every non-root node has exactly one parent,
    /// and the root is the last node.
    pub fn from_nodes(nodes: Vec<TreeNode>, first_level: Vec<NodeId>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::NoEvidence);
        }
        let mut parents = vec![0usize; nodes.len()];
        for (id, node) in nodes.iter().enumerate() {
            if let Some((l, r)) = node.children() {
                if l >= id || r >= id || l == r {
                    return Err(Error::TraceMismatch(format!("node {id} has invalid children ({l}, {r})")));
                }
                parents[l] += 1;
                parents[r] += 1;
            }
        }
        let root = nodes.len() - 1;
        if let Some(bad) = (0..root).find(|&i| parents[i] != 1) {
            return Err(Error::TraceMismatch(format!(
                "node {bad} has {} parents",
                parents[bad]
            )));
        }
        if parents[root] != 0 {
            return Err(Error::TraceMismatch("root has a parent".into()));
        }
        Ok(KnowledgeTree {
            nodes,
            first_level,
            targets: Vec::new(),
        })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn first_level(&self) -> &[NodeId] {
        &self.first_level
    }

    /// Distinct entities appearing as leaves.
    pub fn entities(&self) -> BTreeSet<EntityId> {
        self.nodes.iter().filter_map(TreeNode::entity).collect()
    }

    pub fn targets(&self) -> Option<&[Vec<f64>]> {
        (!self.targets.is_empty()).then_some(self.targets.as_slice())
    }

    /// Annotates every node with the normalized co-occurrence target of its
    /// coverage set.
    pub fn assign_targets(&mut self, table: &CooccurrenceTable, num_classes: usize) {
        self.targets = self
            .nodes
            .iter()
            .map(|n| target_distribution(&n.coverage, table, num_classes))
            .collect();
    }

    pub fn set_targets(&mut self, targets: Vec<Vec<f64>>) -> Result<()> {
        if targets.len() != self.nodes.len() {
            return Err(Error::TraceMismatch(format!(
                "{} targets for {} nodes",
                targets.len(),
                self.nodes.len()
            )));
        }
        self.targets = targets;
        Ok(())
    }

    /// Depth of every node below the root.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.nodes.len()];
        for id in (0..self.nodes.len()).rev() {
            if let Some((l, r)) = self.nodes[id].children() {
                depth[l] = depth[id] + 1;
                depth[r] = depth[id] + 1;
            }
        }
        depth
    }

    /// Sum over first-level items of weight times depth.
    pub fn weighted_path_length(&self) -> u64 {
        let depth = self.depths();
        self.first_level
            .iter()
            .map(|&id| self.nodes[id].weight * depth[id] as u64)
            .sum()
    }

    /// Indented dump: id, kind, weight, and the three most probable target
    /// classes.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        let mut stack = vec![(self.root(), 0usize)];
        while let Some((id, indent)) = stack.pop() {
            let node = &self.nodes[id];
            let kind = match node.payload {
                Payload::Leaf { entity } => format!("leaf {}", vocab.entity(entity).name),
                Payload::Logic {
                    origin: Origin::ShallowKnowledge(k),
                    ..
                } => format!("knowledge #{k}"),
                Payload::Logic { .. } => "merge".to_string(),
            };
            let _ = write!(out, "{:indent$}[{id}] {kind} w={}", "", node.weight, indent = indent * 2);
            if let Some(t) = self.targets.get(id) {
                let top: Vec<String> = top_classes(t, 3)
                    .into_iter()
                    .map(|(c, p)| format!("{}:{p:.3}", vocab.class_name(c)))
                    .collect();
                let _ = write!(out, " top=[{}]", top.join(", "));
            }
            out.push('\n');
            if let Some((l, r)) = node.children() {
                stack.push((r, indent + 1));
                stack.push((l, indent + 1));
            }
        }
        out
    }
}

fn top_classes(p: &[f64], k: usize) -> Vec<(ClassId, f64)> {
    let mut idx: Vec<ClassId> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|c| (c, p[c])).collect()
}

/// Keys of triples whose premise (head) entity is in the evidence, in
/// knowledge-list order.
pub fn instantiate_knowledge(evidence: &[EntityId], knowledge: &KnowledgeBase) -> Vec<usize> {
    let evidence: BTreeSet<EntityId> = evidence.iter().copied().collect();
    knowledge
        .triples()
        .iter()
        .enumerate()
        .filter(|(_, t)| evidence.contains(&t.head))
        .map(|(k, _)| k)
        .collect()
}

/// Builds the knowledge tree of one record.
///
/// Each active triple becomes a shallow node over `(head, tail)` leaves
/// weighted by the triple frequency; evidence entities touched by no active
/// triple enter as loose leaves weighted by `entity_weight` (at least 1).
/// First-level items are then merged two-at-a-time by minimum weight, ties
/// going to the smaller node id.
pub fn build_tree(
    evidence: &[EntityId],
    active: &[usize],
    knowledge: &KnowledgeBase,
    entity_weight: impl Fn(EntityId) -> u64,
) -> Result<KnowledgeTree> {
    let mut evidence_set = BTreeSet::new();
    let evidence: Vec<EntityId> = evidence.iter().copied().filter(|e| evidence_set.insert(*e)).collect();
    if evidence.is_empty() && active.is_empty() {
        return Err(Error::NoEvidence);
    }

    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut first_level = Vec::new();
    let mut covered = BTreeSet::new();

    for &key in active {
        let triple = knowledge.get(key);
        let head = nodes.len();
        nodes.push(TreeNode::leaf(triple.head, entity_weight(triple.head).max(1)));
        let tail = nodes.len();
        nodes.push(TreeNode::leaf(triple.tail, entity_weight(triple.tail).max(1)));
        covered.insert(triple.head);
        covered.insert(triple.tail);
        first_level.push(nodes.len());
        nodes.push(TreeNode {
            payload: Payload::Logic {
                left: head,
                right: tail,
                origin: Origin::ShallowKnowledge(key),
            },
            weight: u64::from(triple.frequency),
            coverage: BTreeSet::from([
                CoverageItem::Entity(triple.head),
                CoverageItem::Entity(triple.tail),
                CoverageItem::Triple(key),
            ]),
        });
    }
    for &e in evidence.iter().filter(|e| !covered.contains(e)) {
        first_level.push(nodes.len());
        nodes.push(TreeNode::leaf(e, entity_weight(e).max(1)));
    }

    let mut heap: BinaryHeap<Reverse<(u64, NodeId)>> =
        first_level.iter().map(|&id| Reverse((nodes[id].weight, id))).collect();
    while heap.len() > 1 {
        let Reverse((wl, left)) = heap.pop().expect("heap has two items");
        let Reverse((wr, right)) = heap.pop().expect("heap has two items");
        let coverage = nodes[left].coverage.union(&nodes[right].coverage).copied().collect();
        let id = nodes.len();
        nodes.push(TreeNode {
            payload: Payload::Logic {
                left,
                right,
                origin: Origin::HuffmanMerge,
            },
            weight: wl + wr,
            coverage,
        });
        heap.push(Reverse((wl + wr, id)));
    }

    KnowledgeTree::from_nodes(nodes, first_level)
}
