use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DLPRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Layout: magic, u32 LE version, u64 LE config length, config JSON, then
/// every parameter tensor as f64 LE in store order.
pub fn write_checkpoint<W: Write>(model: &ModelParams, mut w: W) -> Result<()> {
    let config = serde_json::to_vec(&model.config)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(config.len() as u64).to_le_bytes())?;
    w.write_all(&config)?;
    for (_, p) in model.store.iter() {
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
    let len = u64::from_le_bytes(b8);
    if len > 1 << 24 {
        return Err(bad("implausible config length"));
    }
    let mut config = vec![0u8; len as usize];
    r.read_exact(&mut config).map_err(|_| bad("truncated config"))?;
    let config: ModelConfig = serde_json::from_slice(&config)?;
    let mut model = ModelParams::zeros(config)?;
    for (_, p) in model.store.iter_mut() {
        for v in p.value.data_mut() {
            r.read_exact(&mut b8).map_err(|_| bad("truncated parameters"))?;
            *v = f64::from_le_bytes(b8);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after parameters"));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &ModelParams, path: &Path) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::Lang;
    use rand::SeedableRng;

    fn model() -> ModelParams {
        let mut c = ModelConfig::desk(12, [(Lang::En, 5)].into_iter().collect());
        c.dim = 8;
        c.ffn_dim = 8;
        ModelParams::init(c, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&model(), &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint(wrong.as_slice()).is_err());
        let mut version = buf;
        version[8] = 9;
        assert!(read_checkpoint(version.as_slice()).is_err());
    }
}
