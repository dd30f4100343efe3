//! Embedding TSV: `name \t kind \t v_1 \t ... \t v_d`, one entity per row.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::corpus::{Entity, EntityKind};
use crate::error::{Error, Result};
use crate::network::Matrix;
use crate::trainer::Checkpoint;

pub fn write_embeddings(ckpt: &Checkpoint, kind: Option<EntityKind>, mut out: impl Write) -> Result<usize> {
    let mut rows = 0;
    for (id, e) in ckpt.vocabulary.entities().iter().enumerate() {
        if kind.is_some_and(|k| k != e.kind) {
            continue;
        }
        write!(out, "{}\t{}", e.name, e.kind)?;
        for v in ckpt.params.embeddings.row(id) {
            write!(out, "\t{v}")?;
        }
        writeln!(out)?;
        rows += 1;
    }
    Ok(rows)
}

/// Writes the TSV to `path`, returning the row count.
pub fn export_embeddings(ckpt: &Checkpoint, path: impl AsRef<Path>, kind: Option<EntityKind>) -> Result<usize> {
    let mut buf = Vec::new();
    let rows = write_embeddings(ckpt, kind, &mut buf)?;
    fs::write(path, buf)?;
    Ok(rows)
}

pub fn parse_embeddings(text: &str) -> Result<(Vec<Entity>, Matrix)> {
    let mut entities = Vec::new();
    let mut data = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |message: String| Error::Parse {
            path: "embeddings".into(),
            line: i + 1,
            message,
        };
        let mut fields = line.split('\t');
        let name = fields.next().unwrap_or_default().to_string();
        let kind = match fields.next() {
            Some("symptom") => EntityKind::Symptom,
            Some("disease") => EntityKind::Disease,
            other => return Err(bad(format!("unknown kind {other:?}"))),
        };
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(bad(format!("expected {} values, found {}", width.unwrap_or(0), values.len())));
        }
        entities.push(Entity { name, kind });
        data.extend(values);
    }
    let cols = width.unwrap_or(0);
    let matrix = Matrix::from_vec(entities.len(), cols, data).expect("rows checked");
    Ok((entities, matrix))
}
