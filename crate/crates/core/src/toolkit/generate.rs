//! Synthetic record corpora with planted disease categories.
//!
//! Every disease belongs to one latent category and owns a private set of
//! characteristic symptoms. A record draws one or two diseases (the second
//! usually from the same category), lists their characteristic symptoms,
//! and sprinkles in distractor symptoms and non-present modifiers. When a
//! drawn disease is mentioned in the record, `SID` relations link its
//! symptoms to it, and two mentioned diseases are linked by `DCS`.

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EmrRecord, EntityKind, EntityRef, Modifier, Relation, RelationType};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_categories: usize,
    pub diseases_per_category: usize,
    pub symptoms_per_disease: usize,
    pub records: usize,
    /// Chance, per characteristic symptom, of adding a distractor symptom.
    pub evidence_noise: f64,
    /// Chance that an evidence entity carries a non-present modifier.
    pub modifier_noise: f64,
    /// Chance a record draws a second disease.
    pub second_disease_rate: f64,
    /// Chance the second disease shares the first one's category.
    pub same_category_rate: f64,
    /// Chance a drawn disease is itself mentioned in the record.
    pub mention_rate: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_categories: 5,
            diseases_per_category: 8,
            symptoms_per_disease: 6,
            records: 600,
            evidence_noise: 0.15,
            modifier_noise: 0.1,
            second_disease_rate: 0.5,
            same_category_rate: 0.8,
            mention_rate: 0.5,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("n_categories", self.n_categories),
            ("diseases_per_category", self.diseases_per_category),
            ("symptoms_per_disease", self.symptoms_per_disease),
            ("records", self.records),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        for (name, p) in [("evidence_noise", self.evidence_noise), ("modifier_noise", self.modifier_noise)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1)")));
            }
        }
        for (name, p) in [
            ("second_disease_rate", self.second_disease_rate),
            ("same_category_rate", self.same_category_rate),
            ("mention_rate", self.mention_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn n_diseases(&self) -> usize {
        self.n_categories * self.diseases_per_category
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub disease: String,
    pub category: usize,
    pub symptoms: Vec<String>,
}

/// Ground truth behind a generated corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenManifest {
    pub entries: Vec<ManifestEntry>,
}

impl GenManifest {
    pub fn category_of(&self, disease: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.disease == disease).map(|e| e.category)
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(GenManifest { entries })
    }
}

fn disease_name(cfg: &GenConfig, d: usize) -> String {
    format!("D{:02}_{:02}", d / cfg.diseases_per_category, d % cfg.diseases_per_category)
}

fn symptom_name(cfg: &GenConfig, d: usize, k: usize) -> String {
    format!("S{:02}_{:02}_{:02}", d / cfg.diseases_per_category, d % cfg.diseases_per_category, k)
}

fn draw_modifier(rng: &mut impl Rng, noise: f64) -> Modifier {
    if noise > 0.0 && rng.gen_bool(noise) {
        Modifier::ALL[rng.gen_range(1..Modifier::ALL.len())]
    } else {
        Modifier::Present
    }
}

pub fn generate_corpus(cfg: &GenConfig) -> Result<(Vec<EmrRecord>, GenManifest)> {
    cfg.validate()?;
    let n_diseases = cfg.n_diseases();
    let manifest = GenManifest {
        entries: (0..n_diseases)
            .map(|d| ManifestEntry {
                disease: disease_name(cfg, d),
                category: d / cfg.diseases_per_category,
                symptoms: (0..cfg.symptoms_per_disease).map(|k| symptom_name(cfg, d, k)).collect(),
            })
            .collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.records);
    for r in 0..cfg.records {
        let category = rng.gen_range(0..cfg.n_categories);
        let first = category * cfg.diseases_per_category + rng.gen_range(0..cfg.diseases_per_category);
        let mut drawn = vec![first];
        if n_diseases > 1 && cfg.second_disease_rate > 0.0 && rng.gen_bool(cfg.second_disease_rate) {
            let same = cfg.diseases_per_category > 1 && rng.gen_bool(cfg.same_category_rate);
            let second = loop {
                let d = if same {
                    category * cfg.diseases_per_category + rng.gen_range(0..cfg.diseases_per_category)
                } else {
                    rng.gen_range(0..n_diseases)
                };
                if d != first {
                    break d;
                }
            };
            drawn.push(second);
        }

        let mut evidence: Vec<EntityRef> = Vec::new();
        let mut relations = Vec::new();
        let mut used: BTreeSet<String> = BTreeSet::new();
        let mut mention_slot = Vec::new();
        let mut distractors = 0usize;
        for &d in &drawn {
            let mentioned = cfg.mention_rate >= 1.0 || (cfg.mention_rate > 0.0 && rng.gen_bool(cfg.mention_rate));
            let disease_slot = mentioned.then(|| {
                evidence.push(EntityRef {
                    name: disease_name(cfg, d),
                    kind: EntityKind::Disease,
                    modifier: draw_modifier(&mut rng, cfg.modifier_noise),
                });
                evidence.len() - 1
            });
            mention_slot.push(disease_slot);
            for k in 0..cfg.symptoms_per_disease {
                let name = symptom_name(cfg, d, k);
                if !used.insert(name.clone()) {
                    continue;
                }
                evidence.push(EntityRef {
                    name,
                    kind: EntityKind::Symptom,
                    modifier: draw_modifier(&mut rng, cfg.modifier_noise),
                });
                if let Some(slot) = disease_slot {
                    relations.push(Relation {
                        head: evidence.len() - 1,
                        relation: RelationType::SymptomIndicatesDisease,
                        tail: slot,
                    });
                }
                if cfg.evidence_noise > 0.0 && rng.gen_bool(cfg.evidence_noise) {
                    distractors += 1;
                }
            }
        }
        if let [Some(a), Some(b)] = mention_slot[..] {
            relations.push(Relation {
                head: a,
                relation: RelationType::DiseaseCausesSymptom,
                tail: b,
            });
        }
        // distractors come from diseases the record did not draw
        if n_diseases > drawn.len() {
            for _ in 0..distractors {
                let d = loop {
                    let d = rng.gen_range(0..n_diseases);
                    if !drawn.contains(&d) {
                        break d;
                    }
                };
                let name = symptom_name(cfg, d, rng.gen_range(0..cfg.symptoms_per_disease));
                if used.insert(name.clone()) {
                    evidence.push(EntityRef {
                        name,
                        kind: EntityKind::Symptom,
                        modifier: draw_modifier(&mut rng, cfg.modifier_noise),
                    });
                }
            }
        }

        records.push(EmrRecord {
            id: format!("r{r:05}"),
            evidence,
            relations,
            diagnoses: drawn.iter().map(|&d| disease_name(cfg, d)).collect(),
        });
    }

    if records.iter().all(|r| r.relations.is_empty()) {
        return Err(Error::Config(
            "generator configuration produced no symptom-disease relations".into(),
        ));
    }
    Ok((records, manifest))
}
