//! Annotated record ingestion, vocabulary, knowledge extraction and
//! co-occurrence targets.
//!
//! Records arrive pre-annotated as JSONL. Everything downstream works on
//! dense integer ids assigned here in first-appearance order, so two runs
//! over the same corpus produce the same ids, knowledge order and targets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type ClassId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Symptom,
    Disease,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::Symptom => "symptom",
            EntityKind::Disease => "disease",
        })
    }
}

/// Assertion attached to an entity occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modifier {
    Present,
    Absent,
    NotPatient,
    Conditional,
    Possible,
    Historical,
    Occasional,
}

impl Modifier {
    pub const ALL: [Modifier; 7] = [
        Modifier::Present,
        Modifier::Absent,
        Modifier::NotPatient,
        Modifier::Conditional,
        Modifier::Possible,
        Modifier::Historical,
        Modifier::Occasional,
    ];
}

/// Relation tokens as written in annotated records.
///
/// The treatment tokens name two classes each (treatment on a disease and
/// treatment on a symptom); the class is implied by the tail entity's kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationType {
    #[serde(rename = "SID")]
    SymptomIndicatesDisease,
    #[serde(rename = "DCS")]
    DiseaseCausesSymptom,
    #[serde(rename = "TrID")]
    TreatmentImproves,
    #[serde(rename = "TrWD")]
    TreatmentWorsens,
    #[serde(rename = "TrCD")]
    TreatmentCauses,
    #[serde(rename = "TrAD")]
    TreatmentActsOn,
    #[serde(rename = "TeCD")]
    TestConfirmsDisease,
    #[serde(rename = "TeAS")]
    TestForSymptom,
}

impl RelationType {
    /// Only the symptom–disease pair feeds knowledge trees.
    pub fn is_knowledge(self) -> bool {
        matches!(
            self,
            RelationType::SymptomIndicatesDisease | RelationType::DiseaseCausesSymptom
        )
    }

    pub fn token(self) -> &'static str {
        match self {
            RelationType::SymptomIndicatesDisease => "SID",
            RelationType::DiseaseCausesSymptom => "DCS",
            RelationType::TreatmentImproves => "TrID",
            RelationType::TreatmentWorsens => "TrWD",
            RelationType::TreatmentCauses => "TrCD",
            RelationType::TreatmentActsOn => "TrAD",
            RelationType::TestConfirmsDisease => "TeCD",
            RelationType::TestForSymptom => "TeAS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub name: String,
    pub kind: EntityKind,
    pub modifier: Modifier,
}

/// `(head index, relation, tail index)` into a record's evidence list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, RelationType, usize)", into = "(usize, RelationType, usize)")]
pub struct Relation {
    pub head: usize,
    pub relation: RelationType,
    pub tail: usize,
}

impl From<(usize, RelationType, usize)> for Relation {
    fn from((head, relation, tail): (usize, RelationType, usize)) -> Self {
        Relation {
            head,
            relation,
            tail,
        }
    }
}

impl From<Relation> for (usize, RelationType, usize) {
    fn from(r: Relation) -> Self {
        (r.head, r.relation, r.tail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmrRecord {
    pub id: String,
    pub evidence: Vec<EntityRef>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    #[serde(default)]
    pub diagnoses: Vec<String>,
}

impl EmrRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty record id".into());
        }
        if let Some(i) = self.evidence.iter().position(|e| e.name.is_empty()) {
            return Err(format!("evidence {i} has an empty name"));
        }
        let n = self.evidence.len();
        for r in &self.relations {
            if r.head >= n || r.tail >= n {
                return Err(format!(
                    "relation [{}, {}, {}] indexes past {} evidence entries",
                    r.head,
                    r.relation.token(),
                    r.tail,
                    n
                ));
            }
        }
        if let Some(d) = self.diagnoses.iter().find(|d| d.is_empty()) {
            return Err(format!("empty diagnosis label {d:?}"));
        }
        Ok(())
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<EmrRecord>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    parse_corpus(BufReader::new(file), path)
}

/// Parses JSONL records; `origin` only labels error messages.
pub fn parse_corpus(reader: impl BufRead, origin: &Path) -> Result<Vec<EmrRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: EmrRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        record.validate().map_err(|message| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno,
            message,
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_corpus(records: &[EmrRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Seeded shuffle, then the first `round(test_fraction * n)` records become
/// the test split.
pub fn split_corpus(
    records: &[EmrRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<EmrRecord>, Vec<EmrRecord>)> {
    if records.len() < 2 {
        return Err(Error::TooFewRecords {
            needed: 2,
            got: records.len(),
        });
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (test_fraction * records.len() as f64).round() as usize;
    let test = order[..n_test].iter().map(|&i| records[i].clone()).collect();
    let train = order[n_test..].iter().map(|&i| records[i].clone()).collect();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub kind: EntityKind,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    entities: Vec<Entity>,
    record_frequency: Vec<u32>,
    classes: Vec<EntityId>,
}

/// Entity and disease-class indices built from a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    entities: Vec<Entity>,
    /// Number of training records whose evidence mentions each entity.
    record_frequency: Vec<u32>,
    classes: Vec<EntityId>,
    index: HashMap<(String, EntityKind), EntityId>,
    class_of: HashMap<EntityId, ClassId>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let index = r
            .entities
            .iter()
            .enumerate()
            .map(|(id, e)| ((e.name.clone(), e.kind), id))
            .collect();
        let class_of = r.classes.iter().enumerate().map(|(c, &e)| (e, c)).collect();
        Vocabulary {
            entities: r.entities,
            record_frequency: r.record_frequency,
            classes: r.classes,
            index,
            class_of,
        }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            entities: v.entities,
            record_frequency: v.record_frequency,
            classes: v.classes,
        }
    }
}

impl Vocabulary {
    fn empty() -> Self {
        VocabularyRepr {
            entities: Vec::new(),
            record_frequency: Vec::new(),
            classes: Vec::new(),
        }
        .into()
    }

    fn intern(&mut self, name: &str, kind: EntityKind) -> EntityId {
        if let Some(&id) = self.index.get(&(name.to_owned(), kind)) {
            return id;
        }
        let id = self.entities.len();
        self.entities.push(Entity {
            name: name.to_owned(),
            kind,
        });
        self.record_frequency.push(0);
        self.index.insert((name.to_owned(), kind), id);
        if kind == EntityKind::Disease {
            self.class_of.insert(id, self.classes.len());
            self.classes.push(id);
        }
        id
    }

    /// V, the number of entities.
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// C, the number of diagnosable diseases.
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn entity(&self, id: EntityId) -> &Entity {
        &self.entities[id]
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn id_of(&self, name: &str, kind: EntityKind) -> Option<EntityId> {
        self.index.get(&(name.to_owned(), kind)).copied()
    }

    pub fn class_of_entity(&self, id: EntityId) -> Option<ClassId> {
        self.class_of.get(&id).copied()
    }

    pub fn class_of_name(&self, disease: &str) -> Option<ClassId> {
        self.id_of(disease, EntityKind::Disease)
            .and_then(|id| self.class_of_entity(id))
    }

    pub fn class_entity(&self, class: ClassId) -> EntityId {
        self.classes[class]
    }

    pub fn class_name(&self, class: ClassId) -> &str {
        &self.entities[self.classes[class]].name
    }

    pub fn record_frequency(&self, id: EntityId) -> u32 {
        self.record_frequency[id]
    }

    /// Known gold classes of a record, deduplicated, in label order.
    pub fn gold_classes(&self, record: &EmrRecord) -> Vec<ClassId> {
        let mut seen = BTreeSet::new();
        record
            .diagnoses
            .iter()
            .filter_map(|d| self.class_of_name(d))
            .filter(|c| seen.insert(*c))
            .collect()
    }

    /// Vocabulary id for each evidence slot of a record (None if unseen).
    pub fn evidence_ids(&self, record: &EmrRecord) -> Vec<Option<EntityId>> {
        record
            .evidence
            .iter()
            .map(|e| self.id_of(&e.name, e.kind))
            .collect()
    }
}

pub fn build_vocabulary(train: &[EmrRecord]) -> Result<Vocabulary> {
    if train.is_empty() {
        return Err(Error::TooFewRecords { needed: 1, got: 0 });
    }
    let mut vocab = Vocabulary::empty();
    for record in train {
        let mut mentioned = BTreeSet::new();
        for e in &record.evidence {
            mentioned.insert(vocab.intern(&e.name, e.kind));
        }
        for d in &record.diagnoses {
            let as_symptom = record
                .evidence
                .iter()
                .any(|e| &e.name == d && e.kind == EntityKind::Symptom);
            let as_disease = record
                .evidence
                .iter()
                .any(|e| &e.name == d && e.kind == EntityKind::Disease);
            if as_symptom && !as_disease {
                return Err(Error::InvalidRecord {
                    record: record.id.clone(),
                    message: format!("diagnosis {d:?} is annotated as a symptom"),
                });
            }
            vocab.intern(d, EntityKind::Disease);
        }
        for id in mentioned {
            vocab.record_frequency[id] += 1;
        }
    }
    Ok(vocab)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeTriple {
    pub head: EntityId,
    pub relation: RelationType,
    pub tail: EntityId,
    /// Number of training records containing the triple.
    pub frequency: u32,
}

/// Admissible `(head, relation, tail)` triples of one record, deduplicated.
fn record_triples(record: &EmrRecord, vocab: &Vocabulary) -> BTreeSet<(EntityId, RelationType, EntityId)> {
    let ids = vocab.evidence_ids(record);
    record
        .relations
        .iter()
        .filter(|r| r.relation.is_knowledge())
        .filter_map(|r| Some((ids[r.head]?, r.relation, ids[r.tail]?)))
        .collect()
}

/// Symptom–disease knowledge with record-level frequencies, sorted by
/// descending frequency then `(head, tail, relation)`.
pub fn extract_knowledge(train: &[EmrRecord], vocab: &Vocabulary) -> Vec<KnowledgeTriple> {
    let mut counts: BTreeMap<(EntityId, RelationType, EntityId), u32> = BTreeMap::new();
    for record in train {
        for key in record_triples(record, vocab) {
            *counts.entry(key).or_default() += 1;
        }
    }
    let mut triples: Vec<KnowledgeTriple> = counts
        .into_iter()
        .map(|((head, relation, tail), frequency)| KnowledgeTriple {
            head,
            relation,
            tail,
            frequency,
        })
        .collect();
    triples.sort_by(|a, b| {
        b.frequency
            .cmp(&a.frequency)
            .then(a.head.cmp(&b.head))
            .then(a.tail.cmp(&b.tail))
            .then(a.relation.cmp(&b.relation))
    });
    triples
}

/// Knowledge list plus lookup indices. Triple keys are positions in the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<KnowledgeTriple>", into = "Vec<KnowledgeTriple>")]
pub struct KnowledgeBase {
    triples: Vec<KnowledgeTriple>,
    by_key: HashMap<(EntityId, RelationType, EntityId), usize>,
}

impl From<Vec<KnowledgeTriple>> for KnowledgeBase {
    fn from(triples: Vec<KnowledgeTriple>) -> Self {
        let by_key = triples
            .iter()
            .enumerate()
            .map(|(i, t)| ((t.head, t.relation, t.tail), i))
            .collect();
        KnowledgeBase { triples, by_key }
    }
}

impl From<KnowledgeBase> for Vec<KnowledgeTriple> {
    fn from(kb: KnowledgeBase) -> Self {
        kb.triples
    }
}

impl KnowledgeBase {
    pub fn triples(&self) -> &[KnowledgeTriple] {
        &self.triples
    }

    pub fn get(&self, key: usize) -> &KnowledgeTriple {
        &self.triples[key]
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn key_of(&self, head: EntityId, relation: RelationType, tail: EntityId) -> Option<usize> {
        self.by_key.get(&(head, relation, tail)).copied()
    }

    /// Keys of knowledge triples written in a record's relations.
    pub fn instantiated_in(&self, record: &EmrRecord, vocab: &Vocabulary) -> Vec<usize> {
        let mut keys: Vec<usize> = record_triples(record, vocab)
            .into_iter()
            .filter_map(|(h, r, t)| self.key_of(h, r, t))
            .collect();
        keys.sort_unstable();
        keys
    }

    /// Knowledge export: `head \t relation \t tail \t frequency`.
    pub fn write_tsv(&self, vocab: &Vocabulary, mut out: impl Write) -> Result<()> {
        for t in &self.triples {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                vocab.entity(t.head).name,
                t.relation.token(),
                vocab.entity(t.tail).name,
                t.frequency
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceMode {
    All,
    PresentOnly,
}

impl EvidenceMode {
    pub fn admits(self, modifier: Modifier) -> bool {
        match self {
            EvidenceMode::All => true,
            EvidenceMode::PresentOnly => modifier == Modifier::Present,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilteredEvidence {
    /// Admitted vocabulary ids, deduplicated, in record order.
    pub ids: Vec<EntityId>,
    /// Admitted evidence entries with no vocabulary entry.
    pub unseen: usize,
}

pub fn filter_evidence(record: &EmrRecord, vocab: &Vocabulary, mode: EvidenceMode) -> FilteredEvidence {
    let mut out = FilteredEvidence::default();
    let mut seen = BTreeSet::new();
    for e in record.evidence.iter().filter(|e| mode.admits(e.modifier)) {
        match vocab.id_of(&e.name, e.kind) {
            Some(id) => {
                if seen.insert(id) {
                    out.ids.push(id);
                }
            }
            None => out.unseen += 1,
        }
    }
    out
}

/// Something a tree node covers: an entity leaf or a knowledge triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoverageItem {
    Entity(EntityId),
    Triple(usize),
}

/// Per-item disease co-occurrence counts over the training split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CooccurrenceTable {
    entity: Vec<BTreeMap<ClassId, u32>>,
    triple: Vec<BTreeMap<ClassId, u32>>,
}

impl CooccurrenceTable {
    pub fn count(&self, item: CoverageItem, class: ClassId) -> u32 {
        self.row(item)
            .and_then(|row| row.get(&class))
            .copied()
            .unwrap_or(0)
    }

    pub fn row(&self, item: CoverageItem) -> Option<&BTreeMap<ClassId, u32>> {
        match item {
            CoverageItem::Entity(e) => self.entity.get(e),
            CoverageItem::Triple(k) => self.triple.get(k),
        }
    }
}

pub fn build_cooccurrence(
    train: &[EmrRecord],
    knowledge: &KnowledgeBase,
    vocab: &Vocabulary,
) -> CooccurrenceTable {
    let mut table = CooccurrenceTable {
        entity: vec![BTreeMap::new(); vocab.len()],
        triple: vec![BTreeMap::new(); knowledge.len()],
    };
    for record in train {
        let gold = vocab.gold_classes(record);
        if gold.is_empty() {
            continue;
        }
        let entities: BTreeSet<EntityId> = vocab.evidence_ids(record).into_iter().flatten().collect();
        let triples = knowledge.instantiated_in(record, vocab);
        for &c in &gold {
            for &e in &entities {
                *table.entity[e].entry(c).or_default() += 1;
            }
            for &k in &triples {
                *table.triple[k].entry(c).or_default() += 1;
            }
        }
    }
    table
}

/// Normalized summed co-occurrence counts of `items`; uniform when every
/// count is zero.
pub fn target_distribution<'a>(
    items: impl IntoIterator<Item = &'a CoverageItem>,
    table: &CooccurrenceTable,
    num_classes: usize,
) -> Vec<f64> {
    assert!(num_classes >= 1, "need at least one class");
    let mut counts = vec![0.0; num_classes];
    for &item in items {
        if let Some(row) = table.row(item) {
            for (&c, &n) in row {
                counts[c] += f64::from(n);
            }
        }
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return vec![1.0 / num_classes as f64; num_classes];
    }
    counts.iter_mut().for_each(|c| *c /= total);
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ent(name: &str, kind: EntityKind, modifier: Modifier) -> EntityRef {
        EntityRef {
            name: name.into(),
            kind,
            modifier,
        }
    }

    fn sym(name: &str) -> EntityRef {
        ent(name, EntityKind::Symptom, Modifier::Present)
    }

    fn record(id: &str, evidence: Vec<EntityRef>, rels: &[(usize, RelationType, usize)], dx: &[&str]) -> EmrRecord {
        EmrRecord {
            id: id.into(),
            evidence,
            relations: rels.iter().map(|&r| r.into()).collect(),
            diagnoses: dx.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn parse(text: &str) -> Result<Vec<EmrRecord>> {
        parse_corpus(text.as_bytes(), Path::new("mem.jsonl"))
    }

    const SID: RelationType = RelationType::SymptomIndicatesDisease;

    #[test]
    fn parses_two_lines() {
        let text = r#"{"id":"r001","evidence":[{"name":"咳嗽","kind":"symptom","modifier":"present"},{"name":"冠心病","kind":"disease","modifier":"historical"}],"relations":[[0,"SID",1]],"diagnoses":["冠心病"]}
{"id":"r002","evidence":[{"name":"胸闷","kind":"symptom","modifier":"not_patient"}],"relations":[],"diagnoses":["冠心病"]}
"#;
        let records = parse(text).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].relations[0].relation, SID);
        assert_eq!(records[1].evidence[0].modifier, Modifier::NotPatient);
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn bad_modifier_names_line_and_token() {
        let text = "{\"id\":\"a\",\"evidence\":[],\"relations\":[],\"diagnoses\":[]}\n\
                    {\"id\":\"b\",\"evidence\":[{\"name\":\"x\",\"kind\":\"symptom\",\"modifier\":\"currrent\"}]}\n";
        let err = parse(text).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(err.contains("currrent"), "{err}");
    }

    #[test]
    fn bad_relation_token_and_index() {
        let bad_token = r#"{"id":"a","evidence":[{"name":"x","kind":"symptom","modifier":"present"}],"relations":[[0,"XYZ",0]]}"#;
        assert!(parse(bad_token).unwrap_err().to_string().contains("XYZ"));
        let bad_index = r#"{"id":"a","evidence":[{"name":"x","kind":"symptom","modifier":"present"}],"relations":[[0,"SID",3]]}"#;
        let err = parse(bad_index).unwrap_err().to_string();
        assert!(err.contains(":1:") && err.contains("indexes past"), "{err}");
    }

    #[test]
    fn serializes_relations_as_arrays() {
        let r = record("r", vec![sym("a"), sym("b")], &[(0, SID, 1)], &[]);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains(r#""relations":[[0,"SID",1]]"#), "{json}");
    }

    fn numbered(n: usize) -> Vec<EmrRecord> {
        (0..n).map(|i| record(&format!("r{i}"), vec![sym("s")], &[], &["d"])).collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let records = numbered(10);
        let (train, test) = split_corpus(&records, 0.2, 7).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let ids: BTreeSet<_> = train.iter().chain(&test).map(|r| r.id.clone()).collect();
        assert_eq!(ids.len(), 10);
        assert_eq!(split_corpus(&records, 0.2, 7).unwrap(), (train, test));
    }

    #[test]
    fn split_at_reported_scale() {
        let records = numbered(2988);
        let (train, test) = split_corpus(&records, 626.0 / 2988.0, 1).unwrap();
        assert_eq!((train.len(), test.len()), (2362, 626));
    }

    #[test]
    fn split_rejects_tiny_corpus() {
        assert!(matches!(
            split_corpus(&numbered(1), 0.5, 0),
            Err(Error::TooFewRecords { .. })
        ));
    }

    #[test]
    fn vocabulary_counts() {
        let r = record("r", vec![sym("a"), sym("b")], &[], &["d"]);
        let v = build_vocabulary(std::slice::from_ref(&r)).unwrap();
        assert_eq!((v.len(), v.num_classes()), (3, 1));
        assert_eq!(v.id_of("a", EntityKind::Symptom), Some(0));
        assert_eq!(v.class_name(0), "d");
        let again = build_vocabulary(&[r]).unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn vocabulary_round_trip_ids() {
        let records = vec![
            record("1", vec![sym("a"), ent("d1", EntityKind::Disease, Modifier::Absent)], &[], &["d2"]),
            record("2", vec![sym("b"), sym("a")], &[], &["d1"]),
        ];
        let v = build_vocabulary(&records).unwrap();
        for id in 0..v.len() {
            let e = v.entity(id);
            assert_eq!(v.id_of(&e.name, e.kind), Some(id));
        }
        assert_eq!(v.num_classes(), 2);
        assert_eq!(v.record_frequency(v.id_of("a", EntityKind::Symptom).unwrap()), 2);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
    }

    #[test]
    fn symptom_diagnosis_rejected() {
        let r = record("r", vec![sym("fever")], &[], &["fever"]);
        assert!(matches!(build_vocabulary(&[r]), Err(Error::InvalidRecord { .. })));
    }

    fn sid_record(id: &str) -> EmrRecord {
        record(
            id,
            vec![sym("s"), ent("d", EntityKind::Disease, Modifier::Present)],
            &[(0, SID, 1), (0, SID, 1)],
            &["d"],
        )
    }

    #[test]
    fn knowledge_frequency_counts_records() {
        let mut records: Vec<_> = (0..3).map(|i| sid_record(&i.to_string())).collect();
        records.push(record("x", vec![sym("q")], &[], &["d"]));
        let v = build_vocabulary(&records).unwrap();
        let k = extract_knowledge(&records, &v);
        assert_eq!(k.len(), 1);
        assert_eq!(k[0].frequency, 3);
    }

    #[test]
    fn non_knowledge_relations_filtered() {
        let r = record("r", vec![sym("s"), sym("t")], &[(0, RelationType::TreatmentImproves, 1)], &["d"]);
        let v = build_vocabulary(std::slice::from_ref(&r)).unwrap();
        assert!(extract_knowledge(&[r], &v).is_empty());
    }

    #[test]
    fn evidence_modes() {
        let r = record(
            "r",
            vec![
                ent("a", EntityKind::Symptom, Modifier::Present),
                ent("b", EntityKind::Symptom, Modifier::Absent),
                ent("c", EntityKind::Disease, Modifier::Historical),
            ],
            &[],
            &["c"],
        );
        let v = build_vocabulary(std::slice::from_ref(&r)).unwrap();
        assert_eq!(filter_evidence(&r, &v, EvidenceMode::PresentOnly).ids.len(), 1);
        assert_eq!(filter_evidence(&r, &v, EvidenceMode::All).ids.len(), 3);

        let unseen = record("u", vec![sym("never")], &[], &[]);
        let f = filter_evidence(&unseen, &v, EvidenceMode::All);
        assert!(f.ids.is_empty());
        assert_eq!(f.unseen, 1);
    }

    #[test]
    fn cooccurrence_counts() {
        let one = record("1", vec![sym("s")], &[], &["c"]);
        let v = build_vocabulary(std::slice::from_ref(&one)).unwrap();
        let kb = KnowledgeBase::from(extract_knowledge(std::slice::from_ref(&one), &v));
        let t = build_cooccurrence(std::slice::from_ref(&one), &kb, &v);
        assert_eq!(t.count(CoverageItem::Entity(0), 0), 1);

        let two = record("2", vec![sym("s")], &[], &["c1", "c2"]);
        let v = build_vocabulary(std::slice::from_ref(&two)).unwrap();
        let t = build_cooccurrence(std::slice::from_ref(&two), &KnowledgeBase::from(vec![]), &v);
        assert_eq!(t.count(CoverageItem::Entity(0), 0), 1);
        assert_eq!(t.count(CoverageItem::Entity(0), 1), 1);
    }

    #[test]
    fn triple_cooccurrence() {
        let records: Vec<_> = (0..2).map(|i| sid_record(&i.to_string())).collect();
        let v = build_vocabulary(&records).unwrap();
        let kb = KnowledgeBase::from(extract_knowledge(&records, &v));
        let t = build_cooccurrence(&records, &kb, &v);
        assert_eq!(t.count(CoverageItem::Triple(0), 0), 2);
    }

    #[test]
    fn targets_normalize_and_fallback() {
        let mut table = CooccurrenceTable {
            entity: vec![BTreeMap::from([(0, 2), (1, 2)])],
            triple: vec![],
        };
        let t = target_distribution(&[CoverageItem::Entity(0)], &table, 3);
        assert_eq!(t, vec![0.5, 0.5, 0.0]);
        table.entity[0].clear();
        let t = target_distribution(&[CoverageItem::Entity(0)], &table, 4);
        assert_eq!(t, vec![0.25; 4]);
    }

    #[test]
    fn knowledge_tsv() {
        let records = vec![sid_record("1")];
        let v = build_vocabulary(&records).unwrap();
        let kb = KnowledgeBase::from(extract_knowledge(&records, &v));
        let mut out = Vec::new();
        kb.write_tsv(&v, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "s\tSID\td\t1\n");
    }
}
