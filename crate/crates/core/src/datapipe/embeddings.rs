use std::path::Path;

use rand::Rng;

use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::recurrent::EmbeddingTable;

/// Half-width of the uniform range for rows the pretrained file lacks.
pub const MISSING_ROW_LIMIT: f64 = 0.05;

/// Builds an embedding table from text of the form `token v1 ... vd`, one
/// token per line. Rows for vocabulary tokens found in the text are copied
/// (values are read at `f32` precision); every other row, including the
/// control tokens, is drawn uniformly from ±0.05. Returns the table and
/// the number of vocabulary rows that were found.
pub fn parse_embeddings<R: Rng + ?Sized>(
    text: &str,
    source_name: &str,
    vocab: &Vocabulary,
    embed_dim: usize,
    rng: &mut R,
) -> Result<(EmbeddingTable, usize)> {
    let mut matrix = Tensor::uniform(&[vocab.len(), embed_dim], MISSING_ROW_LIMIT, rng);
    let mut found = vec![false; vocab.len()];
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len() as u64;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|p| p.parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| Error::format(source_name, start, format!("token {token:?}: {e}")))?;
        if values.len() != embed_dim {
            return Err(Error::Config(format!(
                "{source_name} at byte {start}: token {token:?} has {} values but embed_dim is {embed_dim}",
                values.len()
            )));
        }
        if let Some(id) = vocab.get(token) {
            let row = &mut matrix.data_mut()[id * embed_dim..(id + 1) * embed_dim];
            for (dst, v) in row.iter_mut().zip(values) {
                *dst = v as f64;
            }
            found[id] = true;
        }
    }
    let hits = found.iter().filter(|&&f| f).count();
    Ok((EmbeddingTable::new(matrix, true)?, hits))
}

pub fn load_embeddings<R: Rng + ?Sized>(
    path: &Path,
    vocab: &Vocabulary,
    embed_dim: usize,
    rng: &mut R,
) -> Result<(EmbeddingTable, usize)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, &path.display().to_string(), vocab, embed_dim, rng)
}
