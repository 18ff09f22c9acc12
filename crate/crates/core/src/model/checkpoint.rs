//! Versioned binary checkpoints with bit-exact round trips.
//!
//! Layout (all integers little-endian):
//! `"TORO"` magic, format version, config JSON (length-prefixed) and its
//! FNV-1a hash, step counter, RNG seed and word position, then the parameter,
//! first-moment, and second-moment stores (name, shape, raw f64 data each).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{ModelConfig, ParamStore, TrainState};
use crate::seeding::fnv1a64;

const MAGIC: &[u8; 4] = b"TORO";
const VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u128(w: &mut impl Write, v: u128) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<8>(r)?))
}

fn read_u128(r: &mut impl Read) -> Result<u128> {
    Ok(u128::from_le_bytes(read_exact::<16>(r)?))
}

fn write_store(w: &mut impl Write, store: &ParamStore) -> Result<()> {
    write_u64(w, store.len() as u64)?;
    for p in store.iter() {
        write_u64(w, p.name.len() as u64)?;
        w.write_all(p.name.as_bytes())?;
        write_u64(w, p.value.rows() as u64)?;
        write_u64(w, p.value.cols() as u64)?;
        for &v in p.value.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_store(r: &mut impl Read) -> Result<ParamStore> {
    let count = read_u64(r)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u64(r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Input("checkpoint contains a non-UTF8 tensor name".into()))?;
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(read_exact::<8>(r)?));
        }
        store.push(&name, Mat::from_vec(rows, cols, data));
    }
    Ok(store)
}

/// Serialize the full training state.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let config_json = serde_json::to_vec(&state.config)
        .map_err(|e| Error::Internal(format!("config serialization failed: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u64(&mut w, config_json.len() as u64)?;
    w.write_all(&config_json)?;
    write_u64(&mut w, fnv1a64(&config_json))?;
    write_u64(&mut w, state.step)?;
    w.write_all(&state.rng.get_seed())?;
    write_u128(&mut w, state.rng.get_word_pos())?;
    write_store(&mut w, &state.params)?;
    write_store(&mut w, &state.adam_m)?;
    write_store(&mut w, &state.adam_v)?;
    w.flush()?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact::<4>(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Input("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Input(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let json_len = read_u64(&mut r)? as usize;
    let mut config_json = vec![0u8; json_len];
    r.read_exact(&mut config_json)?;
    let stored_hash = read_u64(&mut r)?;
    if stored_hash != fnv1a64(&config_json) {
        return Err(Error::Input("checkpoint config hash mismatch".into()));
    }
    let config: ModelConfig = serde_json::from_slice(&config_json)
        .map_err(|e| Error::Input(format!("bad checkpoint config: {e}")))?;
    config.validate()?;

    let step = read_u64(&mut r)?;
    let seed = read_exact::<32>(&mut r)?;
    let word_pos = read_u128(&mut r)?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(word_pos);

    let params = read_store(&mut r)?;
    let adam_m = read_store(&mut r)?;
    let adam_v = read_store(&mut r)?;

    Ok(TrainState { config, params, adam_m, adam_v, step, rng })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PeConfig, PeSpec, TrainState};
    use crate::rope::{build_base_bank, AngleSourceSpec, SourceUnit, TimeNormalization};
    use rand::Rng;

    fn state() -> TrainState {
        let pe = PeConfig::new(PeSpec::Rotary(AngleSourceSpec::index_only(
            build_base_bank(10_000.0, 4, SourceUnit::IndexSteps).unwrap(),
        )));
        let cfg = crate::model::ModelConfig {
            vocab_size: 9,
            d_model: 8,
            n_heads: 2,
            head_dim: 4,
            n_layers: 1,
            max_seq_len: 5,
            dropout_rate: 0.1,
            pe,
            time_norm: TimeNormalization::days_from(1000),
            seed: 77,
        };
        TrainState::init(cfg, None).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut s = state();
        s.step = 42;
        let _: f64 = s.rng.gen(); // advance the stream so word_pos is non-trivial

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&s, &p1).unwrap();
        let mut loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        assert_eq!(loaded.step, 42);
        assert_eq!(loaded.config, s.config);
        for (a, b) in s.params.iter().zip(loaded.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        // RNG state resumes identically.
        let next_orig: u64 = s.rng.gen();
        let next_loaded: u64 = loaded.rng.gen();
        assert_eq!(next_orig, next_loaded);
    }

    #[test]
    fn rejects_corrupt_magic() {
        let s = state();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        save_checkpoint(&s, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, bytes).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }
}
