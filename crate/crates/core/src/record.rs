//! Line-delimited molecule records.
//!
//! One record per line, whitespace-separated fields:
//!
//! ```text
//! n=3 x=0,2,4 e=0-1:0:0:1,1-2:2:0:0 coords:0.0=1.54000000e0,0.00000000e0,0.00000000e0;0.1=...
//! ```
//!
//! `x` lists block ids per slot. Each `e` item is `i-j:r:v_i:v_j` with `i < j`,
//! which is the concrete edge channel `r·V_max² + v_i·V_max + v_j` in the
//! categorical layout (no-edge follows at `R·V_max²`, mask at `R·V_max²+1`).
//! `coords:` is optional and keyed by `slot.local_atom` for every atom that
//! survives assembly, in Å with 9 significant digits. Lines starting with `#`
//! are comments.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::graph::{EdgeLabel, ReactionGraph};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coordinates of surviving atoms, keyed by `(slot, local index)` and sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Conformer {
    pub atoms: Vec<((usize, usize), [f64; 3])>,
}

impl Conformer {
    pub fn get(&self, slot: usize, local: usize) -> Option<[f64; 3]> {
        self.atoms
            .binary_search_by_key(&(slot, local), |(k, _)| *k)
            .ok()
            .map(|i| self.atoms[i].1)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        self.atoms.iter().map(|(_, p)| *p).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeRecord {
    pub graph: ReactionGraph,
    pub coords: Option<Conformer>,
}

impl MoleculeRecord {
    pub fn to_line(&self) -> String {
        let g = &self.graph;
        let mut s = format!("n={} x=", g.n());
        let blocks: Vec<String> = g
            .nodes()
            .iter()
            .map(|x| x.block().map_or_else(|| "?".to_string(), |b| b.to_string()))
            .collect();
        s.push_str(&blocks.join(","));
        s.push_str(" e=");
        let edges: Vec<String> = g
            .concrete_edges()
            .map(|(i, j, r, vi, vj)| format!("{i}-{j}:{r}:{vi}:{vj}"))
            .collect();
        s.push_str(&edges.join(","));
        if let Some(c) = &self.coords {
            s.push_str(" coords:");
            for (k, ((slot, local), p)) in c.atoms.iter().enumerate() {
                if k > 0 {
                    s.push(';');
                }
                let _ = write!(s, "{slot}.{local}={:.8e},{:.8e},{:.8e}", p[0], p[1], p[2]);
            }
        }
        s
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self, RecordError> {
        let err = |message: String| RecordError::Parse { line: line_no, message };
        let mut n = None;
        let mut blocks = None;
        let mut edges = Vec::new();
        let mut coords = None;
        for field in line.split_whitespace() {
            if let Some(v) = field.strip_prefix("n=") {
                n = Some(v.parse::<usize>().map_err(|e| err(format!("bad n: {e}")))?);
            } else if let Some(v) = field.strip_prefix("x=") {
                let parsed: Result<Vec<usize>, _> = v.split(',').filter(|t| !t.is_empty()).map(str::parse).collect();
                blocks = Some(parsed.map_err(|e| err(format!("bad block id: {e}")))?);
            } else if let Some(v) = field.strip_prefix("e=") {
                for item in v.split(',').filter(|t| !t.is_empty()) {
                    edges.push(parse_edge(item).ok_or_else(|| err(format!("bad edge {item:?}")))?);
                }
            } else if let Some(v) = field.strip_prefix("coords:") {
                let mut atoms = Vec::new();
                for item in v.split(';').filter(|t| !t.is_empty()) {
                    atoms.push(parse_atom(item).ok_or_else(|| err(format!("bad coordinate {item:?}")))?);
                }
                let sorted = atoms.windows(2).all(|w| w[0].0 < w[1].0);
                if !sorted {
                    return Err(err("coordinates must be sorted by slot.local".into()));
                }
                coords = Some(Conformer { atoms });
            } else if !field.is_empty() {
                return Err(err(format!("unknown field {field:?}")));
            }
        }
        let n = n.ok_or_else(|| err("missing n".into()))?;
        let blocks = blocks.ok_or_else(|| err("missing x".into()))?;
        if blocks.len() != n {
            return Err(err(format!("x has {} entries, n = {n}", blocks.len())));
        }
        for &(i, j, _) in &edges {
            if i >= j || j >= n {
                return Err(err(format!("edge {i}-{j} must satisfy i < j < n")));
            }
        }
        if let Some(c) = &coords {
            if c.atoms.iter().any(|((slot, _), _)| *slot >= n) {
                return Err(err("coordinate slot out of range".into()));
            }
        }
        Ok(MoleculeRecord {
            graph: ReactionGraph::from_parts(blocks, &edges),
            coords,
        })
    }
}

fn parse_edge(item: &str) -> Option<(usize, usize, EdgeLabel)> {
    let (pair, rest) = item.split_once(':')?;
    let (i, j) = pair.split_once('-')?;
    let mut parts = rest.split(':');
    let r = parts.next()?.parse().ok()?;
    let vi = parts.next()?.parse().ok()?;
    let vj = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((i.parse().ok()?, j.parse().ok()?, EdgeLabel::concrete(r, vi, vj)))
}

fn parse_atom(item: &str) -> Option<((usize, usize), [f64; 3])> {
    let (key, xyz) = item.split_once('=')?;
    let (slot, local) = key.split_once('.')?;
    let mut it = xyz.split(',').map(|t| t.parse::<f64>());
    let p = [it.next()?.ok()?, it.next()?.ok()?, it.next()?.ok()?];
    if it.next().is_some() || p.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(((slot.parse().ok()?, local.parse().ok()?), p))
}

/// Reads records, skipping blank and `#` lines.
pub fn read_records(reader: impl Read) -> Result<Vec<MoleculeRecord>, RecordError> {
    let mut out = Vec::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(MoleculeRecord::parse_line(trimmed, k + 1)?);
    }
    Ok(out)
}

pub fn write_records(mut writer: impl Write, header: &[String], records: &[MoleculeRecord]) -> std::io::Result<()> {
    for h in header {
        writeln!(writer, "# {h}")?;
    }
    for r in records {
        writeln!(writer, "{}", r.to_line())?;
    }
    writer.flush()
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<MoleculeRecord>, RecordError> {
    read_records(std::fs::File::open(path)?)
}

pub fn save_records(path: impl AsRef<Path>, header: &[String], records: &[MoleculeRecord]) -> std::io::Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_records(file, header, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_graph_only() {
        let line = "n=3 x=0,2,4 e=0-1:0:0:1,1-2:2:0:0";
        let rec = MoleculeRecord::parse_line(line, 1).unwrap();
        assert_eq!(rec.to_line(), line);
        assert_eq!(rec.graph.edge(1, 0), EdgeLabel::concrete(0, 0, 1));
    }

    #[test]
    fn round_trip_with_coordinates_is_bit_exact() {
        let line = "n=1 x=3 e= coords:0.0=1.54000000e0,-2.50000000e-1,0.00000000e0;0.2=1.23456789e2,3.33333333e-1,-7.00000000e0";
        let rec = MoleculeRecord::parse_line(line, 1).unwrap();
        assert_eq!(rec.to_line(), line);
        let again = MoleculeRecord::parse_line(&rec.to_line(), 1).unwrap();
        assert_eq!(rec, again);
    }

    #[test]
    fn rejects_malformed() {
        assert!(MoleculeRecord::parse_line("n=2 x=0", 1).is_err());
        assert!(MoleculeRecord::parse_line("n=2 x=0,1 e=1-0:0:0:0", 1).is_err());
        assert!(MoleculeRecord::parse_line("n=2 x=0,1 e=0-1:0:0", 1).is_err());
        assert!(MoleculeRecord::parse_line("n=1 x=0 q=1", 1).is_err());
        assert!(MoleculeRecord::parse_line("n=1 x=0 coords:0.1=1,2,3;0.0=1,2,3", 1).is_err());
    }

    #[test]
    fn comments_skipped() {
        let text = "# header\n\nn=1 x=0 e=\n";
        let recs = read_records(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
    }
}
