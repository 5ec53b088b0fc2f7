use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `vocab × dim` word vectors; row [`PAD`] is always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        EmbeddingTable {
            dim,
            data: vec![0.0; vocab_size * dim],
        }
    }

    /// `uniform(-1/sqrt(dim), 1/sqrt(dim))` rows with a zero padding row.
    pub fn random(vocab_size: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dim == 0 || vocab_size == 0 {
            return Err(Error::Config(format!(
                "embedding table needs positive sizes, got {vocab_size}x{dim}"
            )));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let mut data: Vec<f64> = (0..vocab_size * dim).map(|_| rng.gen_range(-bound..bound)).collect();
        data[PAD * dim..(PAD + 1) * dim].fill(0.0);
        Ok(EmbeddingTable { dim, data })
    }

    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::dim("embedding table", format!("{} values for dim {dim}", data.len())));
        }
        let mut t = EmbeddingTable { dim, data };
        t.row_mut(PAD).fill(0.0);
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn row_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        Tensor::from_f64(vec![self.vocab_size(), self.dim], &self.data).expect("consistent table")
    }

    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::dim("embedding table", format!("expected 2-D, got {:?}", t.shape())));
        }
        Self::from_rows(t.shape()[1], t.to_f64_vec())
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        let (x, y) = (self.row(a), self.row(b));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            dot / (nx * ny)
        }
    }

    /// Word-vector text format: `<vocab_size> <dim>` then `token v1 .. vd` per line.
    pub fn write_text(&self, mut w: impl Write, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.vocab_size() {
            return Err(Error::Data(format!(
                "vocabulary has {} tokens but table has {} rows",
                vocab.len(),
                self.vocab_size()
            )));
        }
        writeln!(w, "{} {}", self.vocab_size(), self.dim)?;
        for id in 0..self.vocab_size() {
            write!(w, "{}", vocab.token(id))?;
            for v in self.row(id) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads vectors for tokens present in `vocab` on top of `base`; tokens
    /// missing from the file keep their `base` rows and unknown file tokens are skipped.
    pub fn read_text(reader: impl BufRead, vocab: &Vocabulary, base: &EmbeddingTable) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("embedding file is empty".into()))??;
        let parts: Vec<usize> = header
            .split_whitespace()
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Data(format!("line 1: bad embedding header `{header}`")))?;
        let [rows, dim] = parts[..] else {
            return Err(Error::Data(format!("line 1: bad embedding header `{header}`")));
        };
        if dim != base.dim || base.vocab_size() != vocab.len() {
            return Err(Error::Data(format!(
                "embedding file has dim {dim}, expected {} for a vocabulary of {}",
                base.dim,
                vocab.len()
            )));
        }
        let mut table = base.clone();
        let mut seen = 0;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            seen += 1;
            let mut fields = line.split(' ');
            let token = fields.next().unwrap_or_default();
            let values: Vec<f64> = fields
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("line {}: {e}", i + 2)))?;
            if values.len() != dim {
                return Err(Error::Data(format!(
                    "line {}: expected {dim} values, found {}",
                    i + 2,
                    values.len()
                )));
            }
            if let Some(id) = vocab.get(token) {
                if id != PAD {
                    table.row_mut(id).copy_from_slice(&values);
                }
            }
        }
        if seen != rows {
            return Err(Error::Data(format!("header declares {rows} vectors, file has {seen}")));
        }
        Ok(table)
    }
}
