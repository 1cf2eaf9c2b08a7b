//! Binary checkpoint container, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "TOYXFMR\0"
//! version  u32      1
//! dims     6 x u64  vocab_size d_model n_layers n_heads d_mlp max_len
//! seed     u64
//! prov     u64 length, then that many bytes of JSON (applied edit batches)
//! weights  u64 count, then count x f64 in parameter-buffer order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::model::{EditRecord, ModelConfig, ToyTransformer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TOYXFMR\0";
const VERSION: u32 = 1;

pub fn save<W: Write>(model: &ToyTransformer, mut out: W) -> Result<()> {
    let c = model.config();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for v in [c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_mlp, c.max_len] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&model.seed().to_le_bytes())?;
    let prov = serde_json::to_vec(model.provenance())?;
    out.write_all(&(prov.len() as u64).to_le_bytes())?;
    out.write_all(&prov)?;
    out.write_all(&(model.params().len() as u64).to_le_bytes())?;
    for p in model.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn load<R: Read>(mut input: R) -> Result<ToyTransformer> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Model("not a model checkpoint".into()));
    }
    let mut v = [0u8; 4];
    input.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::Model(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = usize::try_from(read_u64(&mut input)?).map_err(|_| Error::Model("dimension overflow".into()))?;
    }
    let config = ModelConfig {
        vocab_size: dims[0],
        d_model: dims[1],
        n_layers: dims[2],
        n_heads: dims[3],
        d_mlp: dims[4],
        max_len: dims[5],
    };
    config.validate()?;
    let seed = read_u64(&mut input)?;
    let plen = read_u64(&mut input)? as usize;
    let mut prov = Vec::new();
    input.by_ref().take(plen as u64).read_to_end(&mut prov)?;
    if prov.len() != plen {
        return Err(Error::Model("truncated provenance".into()));
    }
    let provenance: Vec<EditRecord> = serde_json::from_slice(&prov)?;
    let count = read_u64(&mut input)? as usize;
    let mut params = Vec::with_capacity(count.min(1 << 26));
    let mut b = [0u8; 8];
    for _ in 0..count {
        input.read_exact(&mut b)?;
        params.push(f64::from_le_bytes(b));
    }
    ToyTransformer::from_parts(config, seed, params, provenance)
}

pub fn save_file(model: &ToyTransformer, path: &Path) -> Result<()> {
    save(model, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_file(path: &Path) -> Result<ToyTransformer> {
    load(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::editor::model::Hooks;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            vocab_size: 9,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_mlp: 16,
            max_len: 6,
        };
        let m = ToyTransformer::new(cfg, 77).unwrap();
        let mut buf = Vec::new();
        save(&m, &mut buf).unwrap();
        let back = load(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let toks = [1, 8, 3];
        let a = m.forward(&toks, &Hooks::default()).unwrap();
        let b = back.forward(&toks, &Hooks::default()).unwrap();
        assert_eq!(a.last_probs(), b.last_probs());
    }

    #[test]
    fn rejects_garbage() {
        assert!(load(&b"nonsense"[..]).is_err());
        let cfg = ModelConfig {
            vocab_size: 3,
            d_model: 4,
            n_layers: 1,
            n_heads: 1,
            d_mlp: 4,
            max_len: 2,
        };
        let mut buf = Vec::new();
        save(&ToyTransformer::new(cfg, 0).unwrap(), &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(load(buf.as_slice()).is_err());
    }
}
