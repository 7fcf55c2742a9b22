//! Checkpoint layout: a text header of `key value` lines, terminated by a
//! `data` line, followed by every parameter as a little-endian f32 in the
//! storage order documented on the parent module.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{Model, ModelConfig, ModelError, Result, Scalar};

const MAGIC: &str = "genomesynth-checkpoint";
const VERSION: u32 = 1;

pub fn write_checkpoint<F: Scalar, W: Write>(model: &Model<F>, mut sink: W) -> Result<()> {
    let c = model.config();
    writeln!(sink, "{MAGIC} {VERSION}")?;
    writeln!(sink, "n_layers {}", c.n_layers)?;
    writeln!(sink, "n_heads {}", c.n_heads)?;
    writeln!(sink, "d_model {}", c.d_model)?;
    writeln!(sink, "d_ff {}", c.d_ff)?;
    writeln!(sink, "max_seq_len {}", c.max_seq_len)?;
    writeln!(sink, "vocab_size {}", c.vocab_size)?;
    writeln!(sink, "dropout {}", c.dropout)?;
    writeln!(sink, "seed {}", c.seed)?;
    writeln!(sink, "params {}", model.param_count())?;
    writeln!(sink, "data")?;
    let mut buf = Vec::with_capacity(model.param_count() * 4);
    for w in model.weights() {
        buf.extend_from_slice(&w.to_f32().unwrap().to_le_bytes());
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

pub fn read_checkpoint<F: Scalar, R: Read>(reader: R) -> Result<Model<F>> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    let mut r = BufReader::new(reader);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != format!("{MAGIC} {VERSION}") {
        return Err(bad("unsupported header"));
    }
    let mut kv = std::collections::HashMap::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("missing data marker"));
        }
        let l = line.trim_end();
        if l == "data" {
            break;
        }
        let (k, v) = l.split_once(' ').ok_or_else(|| bad("malformed header line"))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| bad(&format!("missing key {k}")));
    let usize_of = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(&format!("bad value for {k}"))) };
    let config = ModelConfig {
        n_layers: usize_of("n_layers")?,
        n_heads: usize_of("n_heads")?,
        d_model: usize_of("d_model")?,
        d_ff: usize_of("d_ff")?,
        max_seq_len: usize_of("max_seq_len")?,
        vocab_size: usize_of("vocab_size")?,
        dropout: get("dropout")?.parse().map_err(|_| bad("bad dropout"))?,
        seed: get("seed")?.parse().map_err(|_| bad("bad seed"))?,
    };
    let n = usize_of("params")?;
    if n != config.param_count() {
        return Err(bad("parameter count disagrees with config"));
    }
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    let weights = bytes
        .chunks_exact(4)
        .map(|b| F::from_f32(f32::from_le_bytes([b[0], b[1], b[2], b[3]])).unwrap())
        .collect();
    Model::from_weights(config, weights)
}

pub fn save_checkpoint<F: Scalar>(model: &Model<F>, path: &Path) -> Result<()> {
    write_checkpoint(model, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Model<F>> {
    read_checkpoint(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::super::Preset;
    use super::*;

    #[test]
    fn round_trip() {
        let m = Model::<f32>::init(ModelConfig::preset(Preset::Tiny, 70, 4)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let back: Model<f32> = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_data_fails() {
        let m = Model::<f32>::init(ModelConfig::preset(Preset::Tiny, 70, 4)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint::<f32, _>(buf.as_slice()).is_err());
    }
}
