use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::Tensor;

const TEXT_HEADER: &str = "# pdkt embedding-table v1";

/// Vectors keyed by integer id (problem id or submission id).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct EmbeddingTable {
    ids: Vec<u64>,
    vectors: Tensor,
    index: HashMap<u64, usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct RawTable {
    ids: Vec<u64>,
    vectors: Tensor,
}

impl TryFrom<RawTable> for EmbeddingTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        EmbeddingTable::new(raw.ids, raw.vectors)
    }
}

impl From<EmbeddingTable> for RawTable {
    fn from(t: EmbeddingTable) -> Self {
        RawTable {
            ids: t.ids,
            vectors: t.vectors,
        }
    }
}

impl EmbeddingTable {
    pub fn new(ids: Vec<u64>, vectors: Tensor) -> Result<Self> {
        if ids.len() != vectors.rows() {
            return Err(Error::Dimension(format!(
                "{} ids for {} vectors",
                ids.len(),
                vectors.rows()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            if index.insert(id, row).is_some() {
                return Err(Error::Integrity(format!("duplicate embedding id {id}")));
            }
        }
        if !vectors.is_finite() {
            return Err(Error::Divergence(
                "embedding table holds non-finite values".into(),
            ));
        }
        Ok(EmbeddingTable {
            ids,
            vectors,
            index,
        })
    }

    /// Rows `0..n` keyed by their position.
    pub fn dense(vectors: Tensor) -> Result<Self> {
        let ids = (0..vectors.rows() as u64).collect();
        EmbeddingTable::new(ids, vectors)
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn get(&self, id: u64) -> Option<&[f64]> {
        self.row_of(id).map(|r| self.vectors.row_slice(r))
    }

    /// Stacks the vectors of `ids` in order.
    pub fn gather(&self, ids: &[u64]) -> Result<Tensor> {
        let rows = ids
            .iter()
            .map(|id| {
                self.row_of(*id)
                    .ok_or_else(|| Error::Index(format!("no embedding for id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.vectors.gather_rows(&rows)
    }

    /// `id,v1,v2,...` per line after a one-line header.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut s = format!("{TEXT_HEADER} dim={}\n", self.dim());
        for (row, id) in self.ids.iter().enumerate() {
            let _ = write!(s, "{id}");
            for v in self.vectors.row_slice(row) {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        let file = path.display().to_string();
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if !header.starts_with(TEXT_HEADER) {
            return Err(Error::Version {
                path: file,
                expected: TEXT_HEADER.into(),
                found: header.into(),
            });
        }
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (i, line) in lines.enumerate() {
            let parse_err = |msg: String| Error::Parse {
                file: file.clone(),
                line: i + 2,
                msg,
            };
            let mut fields = line.split(',');
            let id: u64 = fields
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|e| parse_err(format!("bad id: {e}")))?;
            let vals = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| parse_err(format!("bad value: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            match dim {
                None => dim = Some(vals.len()),
                Some(d) if d != vals.len() => {
                    return Err(parse_err(format!(
                        "expected {d} values, got {}",
                        vals.len()
                    )))
                }
                _ => {}
            }
            ids.push(id);
            data.extend(vals);
        }
        let vectors = Tensor::new(ids.len(), dim.unwrap_or(0), data)?;
        EmbeddingTable::new(ids, vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        let v = Tensor::from_fn(3, 2, |r, c| (r as f64 + 0.1) / (c as f64 + 3.0) - 1e-17);
        let t = EmbeddingTable::new(vec![7, 3, 11], v).unwrap();
        t.write_text(&path).unwrap();
        let back = EmbeddingTable::read_text(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.get(3), t.get(3));
    }

    #[test]
    fn wrong_header_is_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        std::fs::write(&path, "# something else\n0,1.0\n").unwrap();
        assert!(matches!(
            EmbeddingTable::read_text(&path),
            Err(Error::Version { .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(EmbeddingTable::new(vec![1, 1], Tensor::zeros(2, 2)).is_err());
    }
}
