//! Degradation-label prompts.
//!
//! A [`TextEncoder`] maps a label such as `"rain"` to a fixed vector. The
//! built-in encoder derives a unit vector from a hash of the label; an
//! [`ExternalEncoder`] reads vectors from a table file so that embeddings
//! from a real text model can be dropped in.
//!
//! Table file format:
//!
//! ```text
//! #width=4
//! rain<TAB>0.1,0.2,0.3,0.4
//! ```

use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labels the synthetic data generator knows how to produce.
pub const BUILTIN_VOCABULARY: [&str; 6] = ["rain", "snow", "fog", "noise", "low light", "blur"];

/// Default seed of the built-in encoder.
pub const DEFAULT_PROMPT_SEED: u64 = 0x5EED_0001;

/// Text → `[1, width]` vector.
pub trait TextEncoder: Send + Sync {
    fn width(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Tensor>;
}

/// Trims and lowercases a label; empty labels are a usage error.
pub fn normalize_label(text: &str) -> Result<String> {
    let label = text.trim().to_lowercase();
    if label.is_empty() {
        return Err(Error::Usage("prompt text must not be empty".into()));
    }
    Ok(label)
}

fn l2_normalize(v: &mut [f64]) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::Numeric { op: "prompt normalization" });
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

/// Hash-seeded unit vectors, one per label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuiltinEncoder {
    width: usize,
    seed: u64,
}

impl BuiltinEncoder {
    pub fn new(width: usize, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("prompt width must be positive".into()));
        }
        Ok(BuiltinEncoder { width, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn vector(&self, label: &str) -> Result<Vec<f64>> {
        let mut h = Sha256::new();
        h.update(b"restorer-prompt\0");
        h.update(self.seed.to_le_bytes());
        h.update(label.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let mut v: Vec<f64> = (0..self.width).map(|_| StandardNormal.sample(&mut rng)).collect();
        l2_normalize(&mut v)?;
        Ok(v)
    }
}

impl TextEncoder for BuiltinEncoder {
    fn width(&self) -> usize {
        self.width
    }

    fn encode(&self, text: &str) -> Result<Tensor> {
        let label = normalize_label(text)?;
        Tensor::new([1, self.width], self.vector(&label)?)
    }
}

/// Table-backed encoder with an optional fixed projection to the model width.
#[derive(Debug, Clone)]
pub struct ExternalEncoder {
    text_width: usize,
    width: usize,
    table: IndexMap<String, Vec<f64>>,
    /// `[text_width, width]`; `None` when the widths agree.
    projection: Option<Tensor>,
    fallback: BuiltinEncoder,
}

impl ExternalEncoder {
    /// Builds an encoder from in-memory vectors of length `text_width`.
    pub fn from_table(table: IndexMap<String, Vec<f64>>, text_width: usize, width: usize, seed: u64) -> Result<Self> {
        if text_width == 0 {
            return Err(Error::Config("embedding table width must be positive".into()));
        }
        let mut normalized = IndexMap::with_capacity(table.len());
        for (label, v) in table {
            if v.len() != text_width {
                return Err(Error::Config(format!(
                    "vector for {label:?} has {} values, table width is {text_width}",
                    v.len()
                )));
            }
            normalized.insert(normalize_label(&label)?, v);
        }
        let projection = (text_width != width).then(|| orthogonal_projection(text_width, width, seed)).transpose()?;
        Ok(ExternalEncoder {
            text_width,
            width,
            table: normalized,
            projection,
            fallback: BuiltinEncoder::new(width, seed)?,
        })
    }

    /// Reads a table file and targets `width` output dimensions.
    pub fn load(path: impl AsRef<Path>, width: usize, seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (text_width, table) = parse_table(&text, &path.display().to_string())?;
        Self::from_table(table, text_width, width, seed)
    }

    /// Writes the raw (unprojected) table in the file format.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, format_table(self.text_width, &self.table)).map_err(|e| Error::io(path, e))
    }

    pub fn text_width(&self) -> usize {
        self.text_width
    }

    pub fn entries(&self) -> &IndexMap<String, Vec<f64>> {
        &self.table
    }

    pub fn projection(&self) -> Option<&Tensor> {
        self.projection.as_ref()
    }
}

impl TextEncoder for ExternalEncoder {
    fn width(&self) -> usize {
        self.width
    }

    fn encode(&self, text: &str) -> Result<Tensor> {
        let label = normalize_label(text)?;
        let Some(raw) = self.table.get(&label) else {
            log::warn!("prompt {label:?} not in embedding table, using built-in vector");
            return self.fallback.encode(&label);
        };
        let mut v = match &self.projection {
            None => raw.clone(),
            Some(p) => {
                let pd = p.data();
                let mut out = vec![0.0; self.width];
                for (i, &r) in raw.iter().enumerate() {
                    for (o, &w) in out.iter_mut().zip(&pd[i * self.width..(i + 1) * self.width]) {
                        *o += r * w;
                    }
                }
                out
            }
        };
        l2_normalize(&mut v)?;
        Tensor::new([1, self.width], v)
    }
}

/// Parses the table file format; returns the declared width and the rows.
pub fn parse_table(text: &str, source: &str) -> Result<(usize, IndexMap<String, Vec<f64>>)> {
    let err = |line: usize, detail: String| Error::Parse {
        location: format!("{source}:{line}"),
        detail,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines.next().ok_or_else(|| err(1, "empty embedding file".into()))?;
    let width: usize = header
        .trim()
        .strip_prefix("#width=")
        .ok_or_else(|| err(hl + 1, format!("expected '#width=<n>' header, found {header:?}")))?
        .parse()
        .map_err(|e| err(hl + 1, format!("bad width: {e}")))?;
    if width == 0 {
        return Err(err(hl + 1, "width must be positive".into()));
    }
    let mut table = IndexMap::new();
    for (i, line) in lines {
        let n = i + 1;
        let (label, values) = line
            .split_once('\t')
            .ok_or_else(|| err(n, "expected 'label<TAB>values'".into()))?;
        let v = values
            .split(',')
            .enumerate()
            .map(|(f, s)| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| err(n, format!("field {} is not a finite number: {s:?}", f + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if v.len() != width {
            return Err(err(n, format!("{} values, header declares {width}", v.len())));
        }
        let label = normalize_label(label).map_err(|_| err(n, "empty label".into()))?;
        if table.insert(label.clone(), v).is_some() {
            return Err(err(n, format!("duplicate label {label:?}")));
        }
    }
    Ok((width, table))
}

/// Formats a table; floats use the shortest round-trip representation.
pub fn format_table(width: usize, table: &IndexMap<String, Vec<f64>>) -> String {
    let mut s = format!("#width={width}\n");
    for (label, v) in table {
        s.push_str(label);
        s.push('\t');
        for (i, x) in v.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{x:?}").expect("write to String");
        }
        s.push('\n');
    }
    s
}

/// Seeded `[rows, cols]` matrix with orthonormal rows (`rows ≤ cols`) or
/// orthonormal columns (`rows > cols`).
pub fn orthogonal_projection(rows: usize, cols: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0A7B_0C0D);
    let (k, n) = (rows.min(cols), rows.max(cols));
    // k orthonormal vectors of length n by modified Gram-Schmidt.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        if l2_normalize(&mut v).is_ok() {
            basis.push(v);
        }
    }
    let mut data = vec![0.0; rows * cols];
    for (i, b) in basis.iter().enumerate() {
        for (j, &x) in b.iter().enumerate() {
            if rows <= cols {
                data[i * cols + j] = x;
            } else {
                data[j * cols + i] = x;
            }
        }
    }
    Tensor::new([rows, cols], data)
}

/// Stacks `n` copies of the `[1, D]` row `m`.
pub fn replicate(m: &Tensor, n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Usage("prompt replication count must be at least 1".into()));
    }
    let [1, d] = m.shape()[..] else {
        return Err(Error::shape("replicate", format!("expected [1, D], got {:?}", m.shape())));
    };
    Tensor::new([n, d], m.data().repeat(n))
}

/// A label's prompt vector `m` and its `N`-fold replication `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    pub label: String,
    /// `[1, D]`
    pub vector: Tensor,
    /// `[N, D]`
    pub replicated: Tensor,
}

impl PromptEmbedding {
    pub fn new(encoder: &dyn TextEncoder, text: &str, n: usize) -> Result<Self> {
        let label = normalize_label(text)?;
        let vector = encoder.encode(&label)?;
        let replicated = replicate(&vector, n)?;
        Ok(PromptEmbedding { label, vector, replicated })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn builtin_is_deterministic_and_unit_norm() {
        let enc = BuiltinEncoder::new(512, DEFAULT_PROMPT_SEED).unwrap();
        assert!(enc.encode("rain").unwrap().bit_eq(&enc.encode("rain").unwrap()));
        assert!(enc.encode(" Rain ").unwrap().bit_eq(&enc.encode("rain").unwrap()));
        for label in BUILTIN_VOCABULARY {
            let v = enc.encode(label).unwrap();
            assert_eq!(v.shape(), &[1, 512]);
            assert!((cosine(&v, &v) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn vocabulary_vectors_are_distinct() {
        let enc = BuiltinEncoder::new(64, DEFAULT_PROMPT_SEED).unwrap();
        let vs: Vec<Tensor> = BUILTIN_VOCABULARY.iter().map(|l| enc.encode(l).unwrap()).collect();
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                assert!(cosine(&vs[i], &vs[j]) < 0.99);
            }
        }
        assert!(enc.encode("haze").is_ok());
    }

    #[test]
    fn empty_label_is_usage_error() {
        let enc = BuiltinEncoder::new(8, 1).unwrap();
        assert!(matches!(enc.encode("  "), Err(Error::Usage(_))));
    }

    #[test]
    fn replicate_examples() {
        let m = Tensor::new([1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        assert!(replicate(&m, 1).unwrap().bit_eq(&m));
        let r = replicate(&m, 2048).unwrap();
        assert_eq!(r.shape(), &[2048, 3]);
        assert!(r.data().chunks(3).all(|row| row == m.data()));
        assert!(matches!(replicate(&m, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn orthogonal_projection_is_orthonormal() {
        for (r, c) in [(6, 4), (4, 6)] {
            let p = orthogonal_projection(r, c, 3).unwrap();
            let d = p.data();
            let (k, along_rows) = if r <= c { (r, true) } else { (c, false) };
            for a in 0..k {
                for b in 0..k {
                    let dot: f64 = if along_rows {
                        (0..c).map(|j| d[a * c + j] * d[b * c + j]).sum()
                    } else {
                        (0..r).map(|i| d[i * c + a] * d[i * c + b]).sum()
                    };
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn parse_errors_carry_line_and_field() {
        let bad = "#width=2\nrain\t0.1,x\n";
        match parse_table(bad, "t.txt") {
            Err(Error::Parse { location, detail }) => {
                assert_eq!(location, "t.txt:2");
                assert!(detail.contains("field 2"), "{detail}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_table("rain\t1,2\n", "t"), Err(Error::Parse { .. })));
        assert!(matches!(parse_table("#width=3\nrain\t1,2\n", "t"), Err(Error::Parse { .. })));
    }

    #[test]
    fn table_lookup_is_normalized_vector() {
        let mut t = IndexMap::new();
        t.insert("rain".to_string(), vec![3.0, 4.0]);
        let enc = ExternalEncoder::from_table(t, 2, 2, 0).unwrap();
        assert!(enc.projection().is_none());
        assert_eq!(enc.encode("rain").unwrap().data(), &[0.6, 0.8]);
        // unknown label falls back to the built-in vector
        let fb = BuiltinEncoder::new(2, 0).unwrap();
        assert!(enc.encode("snow").unwrap().bit_eq(&fb.encode("snow").unwrap()));
    }
}
