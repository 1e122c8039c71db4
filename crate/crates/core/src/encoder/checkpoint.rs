//! Binary checkpoint: magic, dimension header, vocabulary, then every
//! matrix as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EncoderParams, Vocabulary, UNK};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PAENC001";

pub fn write_checkpoint<W: Write>(mut w: W, params: &EncoderParams, vocab: &Vocabulary) -> Result<()> {
    if vocab.len() != params.vocab_size {
        return Err(Error::DimensionMismatch {
            expected: params.vocab_size,
            found: vocab.len(),
        });
    }
    w.write_all(MAGIC)?;
    for dim in [params.vocab_size, params.emb_dim, params.out_dim] {
        w.write_all(&(dim as u64).to_le_bytes())?;
    }
    for token in vocab.tokens() {
        w.write_all(&(token.len() as u32).to_le_bytes())?;
        w.write_all(token.as_bytes())?;
    }
    for x in params.embeddings.iter().chain(&params.weights).chain(&params.bias) {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(EncoderParams, Vocabulary)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let vocab_size = read_u64(&mut r)? as usize;
    let emb_dim = read_u64(&mut r)? as usize;
    let out_dim = read_u64(&mut r)? as usize;
    let mut tokens = Vec::with_capacity(vocab_size);
    for _ in 0..vocab_size {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut bytes = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut bytes)?;
        tokens.push(String::from_utf8(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?);
    }
    if tokens.first().map(String::as_str) != Some(UNK) {
        return Err(Error::Checkpoint("vocabulary must start with <unk>".into()));
    }
    let mut params = EncoderParams::zeros(vocab_size, emb_dim, out_dim);
    let mut buf = [0u8; 8];
    for x in params
        .embeddings
        .iter_mut()
        .chain(params.weights.iter_mut())
        .chain(params.bias.iter_mut())
    {
        r.read_exact(&mut buf)?;
        *x = f64::from_le_bytes(buf);
    }
    let mut trailing = Vec::new();
    r.read_to_end(&mut trailing)?;
    if !trailing.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", trailing.len())));
    }
    Ok((params, Vocabulary::from_tokens(tokens)))
}

pub fn save_checkpoint(path: &Path, params: &EncoderParams, vocab: &Vocabulary) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params, vocab)
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderParams, Vocabulary)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
