//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `RBCK`, u32 version, u64 training step,
//! length-prefixed config echo, ChaCha RNG state (32-byte seed, u128 word
//! position, u64 stream), the named parameter tensors as MPT1 blocks, and the
//! Adam step plus first/second moments for every trainable parameter in
//! entry order. Reloading reproduces training bit-exactly.

use std::fs;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Adam, AdamConfig, Rbdm};
use crate::config::TrainConfig;
use crate::data::{decode_tensor, encode_tensor, ByteReader};
use crate::error::{Error, Result};
use crate::tensor::TensorData;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Exact ChaCha stream position, enough to resume draws mid-sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn read_str(r: &mut ByteReader<'_>, what: &str) -> Result<String> {
    let len = r.u32_le(what)? as usize;
    let at = r.offset();
    let bytes = r.take(len, what)?;
    String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format {
        offset: at,
        reason: format!("{what}: invalid UTF-8"),
    })
}

/// Serializes the full training state.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &TrainConfig,
    model: &Rbdm<f32>,
    opt: &Adam<f32>,
    step: u64,
    rng: &ChaCha8Rng,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&step.to_le_bytes());
    push_str(&mut buf, &config.to_text());

    let rng_state = RngState::capture(rng);
    buf.extend_from_slice(&rng_state.seed);
    buf.extend_from_slice(&rng_state.word_pos.to_le_bytes());
    buf.extend_from_slice(&rng_state.stream.to_le_bytes());

    let entries = model.params.entries();
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        push_str(&mut buf, &e.name);
        buf.push(e.trainable as u8);
        encode_tensor(&e.value, &mut buf);
    }

    buf.extend_from_slice(&opt.step_count().to_le_bytes());
    let trainable: Vec<_> = model.params.trainable_ids().collect();
    buf.extend_from_slice(&(trainable.len() as u32).to_le_bytes());
    for id in trainable {
        let shape = model.params.value(id).shape().to_vec();
        let (m, v) = opt.moments(id);
        encode_tensor(&TensorData::new(shape.clone(), m.to_vec())?, &mut buf);
        encode_tensor(&TensorData::new(shape, v.to_vec())?, &mut buf);
    }

    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

/// Restored training state.
pub struct LoadedCheckpoint {
    pub config: TrainConfig,
    pub model: Rbdm<f32>,
    pub optimizer: Adam<f32>,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&buf);

    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad magic {magic:02x?}, expected 'RBCK'"),
        });
    }
    let version = r.u32_le("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported checkpoint version {version}"),
        });
    }
    let step = r.u64_le("step")?;
    let config_text = read_str(&mut r, "config")?;
    let config = TrainConfig::parse(&config_text)?;

    let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
    let word_pos = r.u128_le("rng word_pos")?;
    let stream = r.u64_le("rng stream")?;
    let rng = RngState {
        seed,
        word_pos,
        stream,
    }
    .restore();

    let mut model = Rbdm::<f32>::new(config.model_config(), config.seed);
    let n_params = r.u32_le("param count")? as usize;
    if n_params != model.params.len() {
        return Err(Error::Data(format!(
            "checkpoint has {n_params} parameters, architecture expects {}",
            model.params.len()
        )));
    }
    for _ in 0..n_params {
        let name = read_str(&mut r, "param name")?;
        let _trainable = r.take(1, "trainable flag")?[0];
        let value = decode_tensor(&mut r)?;
        let id = model
            .params
            .find(&name)
            .ok_or_else(|| Error::Data(format!("checkpoint parameter '{name}' is unknown")))?;
        if model.params.value(id).shape() != value.shape() {
            return Err(Error::Data(format!(
                "checkpoint parameter '{name}' has shape {:?}, architecture expects {:?}",
                value.shape(),
                model.params.value(id).shape()
            )));
        }
        *model.params.value_mut(id) = value;
    }

    let adam_step = r.u64_le("adam step")?;
    let n_moments = r.u32_le("moment count")? as usize;
    let trainable: Vec<_> = model.params.trainable_ids().collect();
    if n_moments != trainable.len() {
        return Err(Error::Data(format!(
            "checkpoint has {n_moments} moment pairs, architecture expects {}",
            trainable.len()
        )));
    }
    let mut optimizer = Adam::<f32>::new(AdamConfig::with_lr(config.lr), &model.params);
    let mut m_all = vec![Vec::new(); model.params.len()];
    let mut v_all = vec![Vec::new(); model.params.len()];
    for &id in &trainable {
        let m = decode_tensor(&mut r)?;
        let v = decode_tensor(&mut r)?;
        let expect = model.params.value(id).shape();
        if m.shape() != expect || v.shape() != expect {
            return Err(Error::Data(format!(
                "moment shape mismatch for '{}'",
                model.params.name(id)
            )));
        }
        m_all[id.0] = m.data().to_vec();
        v_all[id.0] = v.data().to_vec();
    }
    // frozen entries keep empty moment buffers of matching length
    for id in model.params.ids() {
        if m_all[id.0].is_empty() {
            m_all[id.0] = vec![0.0; model.params.value(id).numel()];
            v_all[id.0] = vec![0.0; model.params.value(id).numel()];
        }
    }
    optimizer.restore(adam_step, m_all, v_all);
    r.expect_end()?;

    Ok(LoadedCheckpoint {
        config,
        model,
        optimizer,
        step,
        rng,
    })
}
