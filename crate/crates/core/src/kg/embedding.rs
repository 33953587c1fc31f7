use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{read_to_string, Error, Result};

/// Cosine similarity. Errors on a dimension mismatch or a zero-norm vector.
pub fn relatedness(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Invalid("zero-norm vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dimension: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize, entries: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if dimension == 0 || entries.is_empty() {
            return Err(Error::Invalid("embedding table needs a positive dimension and one entry".into()));
        }
        if let Some((k, v)) = entries.iter().find(|(_, v)| v.len() != dimension) {
            return Err(Error::Shape(format!("`{k}` has {} values, expected {dimension}", v.len())));
        }
        Ok(EmbeddingTable { dimension, entries })
    }

    /// Text format: a `COUNT DIM` header, then `CONCEPT v1 .. vD` rows.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
        let head: Vec<&str> = header.split_whitespace().collect();
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(origin, 1, format!("bad header value `{s}`")));
        if head.len() != 2 {
            return Err(Error::parse(origin, 1, "header must be `COUNT DIM`"));
        }
        let (count, dim) = (parse_usize(head[0])?, parse_usize(head[1])?);
        let mut entries = BTreeMap::new();
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let concept = parts.next().unwrap_or_default().to_string();
            let values = parts
                .map(|v| v.parse::<f64>().map_err(|_| Error::parse(origin, i + 1, format!("bad value `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != dim {
                return Err(Error::parse(origin, i + 1, format!("expected {dim} values, found {}", values.len())));
            }
            entries.insert(concept, values);
        }
        if entries.len() != count {
            return Err(Error::parse(origin, 1, format!("header declares {count} rows, found {}", entries.len())));
        }
        EmbeddingTable::new(dim, entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, concept: &str) -> Option<&[f64]> {
        self.entries.get(concept).map(Vec::as_slice)
    }

    /// Vector for a concept. Multi-word concepts missing from the table fall
    /// back to the mean of their words, provided every word is present.
    /// Zero-norm vectors count as unresolvable.
    pub fn resolve(&self, concept: &str) -> Option<Vec<f64>> {
        let vector = match self.entries.get(concept) {
            Some(v) => v.clone(),
            None => {
                let words: Vec<&str> = concept.split('_').filter(|w| !w.is_empty()).collect();
                if words.len() < 2 {
                    return None;
                }
                let mut mean = vec![0.0; self.dimension];
                for w in &words {
                    let v = self.entries.get(*w)?;
                    mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
                }
                let k = words.len() as f64;
                mean.iter_mut().for_each(|m| *m /= k);
                mean
            }
        };
        vector.iter().any(|&x| x != 0.0).then_some(vector)
    }

    /// Relatedness between two concepts; 0 when either is unresolvable.
    pub fn concept_relatedness(&self, a: &str, b: &str) -> f64 {
        match (self.resolve(a), self.resolve(b)) {
            (Some(x), Some(y)) => relatedness(&x, &y).unwrap_or(0.0),
            _ => 0.0,
        }
    }
}

/// Minimum relatedness to `seed` over the path nodes (the seed excluded).
/// Unresolvable nodes score 0. An empty path has no bottleneck.
pub fn path_min_relatedness(path_nodes: &[&str], seed: &str, emb: &EmbeddingTable) -> f64 {
    let seed_vec = emb.resolve(seed);
    path_nodes
        .iter()
        .map(|node| match (&seed_vec, emb.resolve(node)) {
            (Some(s), Some(v)) => relatedness(s, &v).unwrap_or(0.0),
            _ => 0.0,
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, &[f64])]) -> EmbeddingTable {
        let dim = rows[0].1.len();
        EmbeddingTable::new(dim, rows.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!((relatedness(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(relatedness(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((relatedness(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(relatedness(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(relatedness(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn multiword_fallback_is_mean() {
        let t = table(&[("hard", &[1.0, 0.0]), ("drive", &[0.0, 1.0]), ("zero", &[0.0, 0.0])]);
        assert_eq!(t.resolve("hard_drive").unwrap(), vec![0.5, 0.5]);
        assert!(t.resolve("hard_disk").is_none());
        assert!(t.resolve("zero").is_none());
    }

    #[test]
    fn path_minimum() {
        let t = table(&[("s", &[1.0, 0.0]), ("a", &[1.0, 0.0]), ("b", &[1.0, 1.0]), ("c", &[0.0, 1.0])]);
        assert!((path_min_relatedness(&["a"], "s", &t) - 1.0).abs() < 1e-12);
        assert!((path_min_relatedness(&["a", "b"], "s", &t) - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(path_min_relatedness(&["a", "missing"], "s", &t), 0.0);
        assert_eq!(path_min_relatedness(&["b", "c"], "s", &t), 0.0);
    }

    #[test]
    fn parses_text_format() {
        let t = EmbeddingTable::parse("2 3\nfood 1 0 0\nwine 0 1 0.5\n", "mem").unwrap();
        assert_eq!(t.dimension(), 3);
        assert_eq!(t.get("wine").unwrap(), &[0.0, 1.0, 0.5]);
        assert!(EmbeddingTable::parse("3 3\nfood 1 0 0\n", "mem").is_err());
        assert!(EmbeddingTable::parse("1 3\nfood 1 0\n", "mem").is_err());
    }
}
