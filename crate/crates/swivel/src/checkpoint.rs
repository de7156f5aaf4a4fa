//! Binary, CRC-protected training checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "SWCP"
//! 4       4           format version (u32, currently 1)
//! 8       8           m (u64, padded row count)
//! 16      8           n (u64, padded column count)
//! 24      8           d (u64, embedding dimension)
//! 32      8           completed steps (u64)
//! 40      8           running loss sum (f64)
//! 48      8           running loss step count (u64)
//! 56      8           configured total steps (u64)
//! 64      8           eta (f64)
//! 72      8           epsilon (f64)
//! 80      8           seed (u64)
//! 88      8           workers (u64)
//! 96      1           schedule (0 = permutation, 1 = uniform)
//! 97      1           early stop flag
//! 98      8           alpha (f64)
//! 106     8           b0 (f64)
//! 114     8           b (f64)
//! 122     8           shift (f64)
//! 130     m*d*4       focus embeddings (f32)
//! ...     n*d*4       context embeddings (f32)
//! ...     m*d*4       focus Adagrad accumulators (f32)
//! ...     n*d*4       context Adagrad accumulators (f32)
//! end     4           CRC32 of bytes 4..end-4 (u32)
//! ```
//!
//! Serialization is a pure function of the state, so save -> load -> save
//! reproduces files byte for byte.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Result, SwivelError};
use crate::objective::{ObjectiveConfig, WeightParams};
use crate::trainer::{EmbeddingStore, Mat, Schedule, TrainConfig, TrainerState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SWCP";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

pub fn save_checkpoint(state: &TrainerState, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let mut body = Vec::new();
    write_body(state, cfg, &mut body).expect("vec write cannot fail");
    let crc = crc32fast::hash(&body);

    let file = std::fs::File::create(path).map_err(|e| SwivelError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&body)?;
        w.write_u32::<LittleEndian>(crc)?;
        w.flush()
    })()
    .map_err(|e| SwivelError::io(path, e))
}

fn write_body(state: &TrainerState, cfg: &TrainConfig, w: &mut impl Write) -> std::io::Result<()> {
    let store = &state.store;
    w.write_u32::<LittleEndian>(CHECKPOINT_FORMAT_VERSION)?;
    w.write_u64::<LittleEndian>(store.m() as u64)?;
    w.write_u64::<LittleEndian>(store.n() as u64)?;
    w.write_u64::<LittleEndian>(store.dim() as u64)?;
    w.write_u64::<LittleEndian>(state.step)?;
    w.write_f64::<LittleEndian>(state.loss_sum)?;
    w.write_u64::<LittleEndian>(state.loss_steps)?;
    w.write_u64::<LittleEndian>(cfg.steps)?;
    w.write_f64::<LittleEndian>(cfg.eta)?;
    w.write_f64::<LittleEndian>(cfg.epsilon)?;
    w.write_u64::<LittleEndian>(cfg.seed)?;
    w.write_u64::<LittleEndian>(cfg.workers as u64)?;
    w.write_u8(match cfg.schedule {
        Schedule::Permutation => 0,
        Schedule::Uniform => 1,
    })?;
    w.write_u8(cfg.early_stop as u8)?;
    w.write_f64::<LittleEndian>(cfg.objective.weights.alpha)?;
    w.write_f64::<LittleEndian>(cfg.objective.weights.b0)?;
    w.write_f64::<LittleEndian>(cfg.objective.weights.b)?;
    w.write_f64::<LittleEndian>(cfg.objective.shift)?;
    for mat in [&store.focus, &store.context, &store.focus_acc, &store.context_acc] {
        for &v in mat.data() {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainerState, TrainConfig)> {
    let bytes = std::fs::read(path).map_err(|e| SwivelError::io(path, e))?;
    let fail = |what: &str| SwivelError::Data(format!("checkpoint {}: {what}", path.display()));

    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic"));
    }
    let (body, tail) = bytes[4..].split_at(bytes.len() - 8);
    let stored_crc = u32::from_le_bytes(tail.try_into().expect("tail is 4 bytes"));
    if crc32fast::hash(body) != stored_crc {
        return Err(fail("checksum mismatch"));
    }

    let mut r = body;
    let version = r.read_u32::<LittleEndian>().map_err(|_| fail("truncated"))?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(SwivelError::Data(format!(
            "checkpoint {}: unsupported format version {version}",
            path.display()
        )));
    }
    let m = r.read_u64::<LittleEndian>().map_err(|_| fail("truncated"))? as usize;
    let n = r.read_u64::<LittleEndian>().map_err(|_| fail("truncated"))? as usize;
    let d = r.read_u64::<LittleEndian>().map_err(|_| fail("truncated"))? as usize;
    let step = r.read_u64::<LittleEndian>().map_err(|_| fail("truncated"))?;
    let loss_sum = r.read_f64::<LittleEndian>().map_err(|_| fail("truncated"))?;
    let loss_steps = r.read_u64::<LittleEndian>().map_err(|_| fail("truncated"))?;
    let steps = r.read_u64::<LittleEndian>().map_err(|_| fail("truncated"))?;
    let eta = r.read_f64::<LittleEndian>().map_err(|_| fail("truncated"))?;
    let epsilon = r.read_f64::<LittleEndian>().map_err(|_| fail("truncated"))?;
    let seed = r.read_u64::<LittleEndian>().map_err(|_| fail("truncated"))?;
    let workers = r.read_u64::<LittleEndian>().map_err(|_| fail("truncated"))? as usize;
    let schedule = match r.read_u8().map_err(|_| fail("truncated"))? {
        0 => Schedule::Permutation,
        1 => Schedule::Uniform,
        other => {
            return Err(SwivelError::Data(format!(
                "checkpoint {}: unknown schedule tag {other}",
                path.display()
            )))
        }
    };
    let early_stop = r.read_u8().map_err(|_| fail("truncated"))? != 0;
    let alpha = r.read_f64::<LittleEndian>().map_err(|_| fail("truncated"))?;
    let b0 = r.read_f64::<LittleEndian>().map_err(|_| fail("truncated"))?;
    let b = r.read_f64::<LittleEndian>().map_err(|_| fail("truncated"))?;
    let shift = r.read_f64::<LittleEndian>().map_err(|_| fail("truncated"))?;

    let mut read_mat = |rows: usize, cols: usize| -> Result<Mat> {
        let mut data = vec![0.0f32; rows * cols];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(|_| fail("truncated embedding data"))?;
        Ok(Mat::from_vec(rows, cols, data))
    };
    let focus = read_mat(m, d)?;
    let context = read_mat(n, d)?;
    let focus_acc = read_mat(m, d)?;
    let context_acc = read_mat(n, d)?;
    let mut end = [0u8; 1];
    if r.read(&mut end).map_err(|_| fail("read error"))? != 0 {
        return Err(fail("trailing bytes"));
    }

    let state = TrainerState {
        store: EmbeddingStore {
            focus,
            context,
            focus_acc,
            context_acc,
        },
        step,
        loss_sum,
        loss_steps,
    };
    let cfg = TrainConfig {
        dim: d,
        steps,
        eta,
        epsilon,
        seed,
        workers,
        schedule,
        objective: ObjectiveConfig {
            weights: WeightParams { alpha, b0, b },
            shift,
        },
        early_stop,
    };
    Ok((state, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::init_embeddings;

    fn sample_state() -> (TrainerState, TrainConfig) {
        let mut state = TrainerState::new(init_embeddings(4, 6, 3, 11).unwrap());
        state.step = 17;
        state.loss_sum = 2.5;
        state.loss_steps = 17;
        let cfg = TrainConfig {
            dim: 3,
            steps: 100,
            seed: 11,
            ..Default::default()
        };
        (state, cfg)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (state, cfg) = sample_state();
        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("a.ckpt");
        let path_b = dir.path().join("b.ckpt");
        save_checkpoint(&state, &cfg, &path_a).unwrap();
        let (loaded, loaded_cfg) = load_checkpoint(&path_a).unwrap();
        assert_eq!(loaded, state);
        assert_eq!(loaded_cfg.seed, cfg.seed);
        save_checkpoint(&loaded, &loaded_cfg, &path_b).unwrap();
        assert_eq!(std::fs::read(&path_a).unwrap(), std::fs::read(&path_b).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let (state, cfg) = sample_state();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&state, &cfg, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();

        // Flip one embedding byte: checksum failure.
        bytes[140] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");

        // Truncation.
        bytes[140] ^= 0x40;
        bytes.truncate(bytes.len() - 1);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let (state, cfg) = sample_state();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ckpt");
        save_checkpoint(&state, &cfg, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        // Keep the checksum valid so the version check itself is exercised.
        let body_end = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[4..body_end]);
        bytes[body_end..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
