//! Versioned binary checkpoints.
//!
//! Layout: magic `RLCK`, format version (u32 LE), a kind byte, a
//! length-prefixed JSON header with the architecture hyperparameters, then
//! the parameter count (u64 LE) and the parameters as little-endian `f64`
//! in visit order. Parameters are widened to `f64` on save and narrowed on
//! load, so `f32` models round-trip exactly.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::{EmbedHyper, EmbeddingModel};
use crate::error::{Error, Result};
use crate::generator::{GeneratorHyper, GeneratorModel};
use crate::localize::{InferenceSettings, ModelBundle};
use crate::nn::{load_flat, to_flat, Params};
use crate::scalar::Real;
use crate::selector::{RotationSelectorModel, SelectorHyper};

const MAGIC: &[u8; 4] = b"RLCK";
const VERSION: u32 = 1;

const KIND_SELECTOR: u8 = 1;
const KIND_GENERATOR: u8 = 2;
const KIND_EMBEDDING: u8 = 3;
const KIND_BUNDLE: u8 = 4;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(kind: u8) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(kind);
        Self { buf }
    }

    fn header<H: serde::Serialize>(&mut self, hyper: &H) -> Result<()> {
        let json = serde_json::to_vec(hyper)
            .map_err(|e| Error::Checkpoint(format!("serializing header: {e}")))?;
        self.buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(&json);
        Ok(())
    }

    fn params<T: Real, P: Params<T>>(&mut self, model: &P) {
        let flat = to_flat(model);
        self.buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat {
            self.buf.extend_from_slice(&v.to_f64().to_le_bytes());
        }
    }

    fn save(self, path: &Path) -> Result<()> {
        std::fs::write(path, self.buf)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

struct Reader {
    bytes: Vec<u8>,
    at: usize,
}

impl Reader {
    fn open(path: &Path, want_kind: u8) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint file",
                path.display()
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        if bytes[8] != want_kind {
            return Err(Error::Checkpoint(format!(
                "checkpoint kind {} does not match the requested model",
                bytes[8]
            )));
        }
        Ok(Self { bytes, at: 9 })
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Checkpoint("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn header<H: serde::de::DeserializeOwned>(&mut self) -> Result<H> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        let json = self.take(len)?;
        serde_json::from_slice(json)
            .map_err(|e| Error::Checkpoint(format!("parsing header: {e}")))
    }

    fn params<T: Real, P: Params<T>>(&mut self, model: &mut P) -> Result<()> {
        let n = u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize;
        let mut flat = Vec::with_capacity(n);
        for _ in 0..n {
            flat.push(T::cast(f64::from_le_bytes(
                self.take(8)?.try_into().unwrap(),
            )));
        }
        load_flat(model, &flat)
    }

    fn done(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::Checkpoint("trailing bytes in checkpoint".into()));
        }
        Ok(())
    }
}

/// Fresh model of the right shape for loading; the seed is irrelevant since
/// every parameter is overwritten.
fn blank_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

pub fn save_selector<T: Real>(model: &RotationSelectorModel<T>, path: &Path) -> Result<()> {
    let mut w = Writer::new(KIND_SELECTOR);
    w.header(model.hyper())?;
    w.params(model);
    w.save(path)
}

pub fn load_selector<T: Real>(path: &Path) -> Result<RotationSelectorModel<T>> {
    let mut r = Reader::open(path, KIND_SELECTOR)?;
    let hyper: SelectorHyper = r.header()?;
    let mut model = RotationSelectorModel::new(hyper, &mut blank_rng())?;
    r.params(&mut model)?;
    r.done()?;
    Ok(model)
}

pub fn save_generator<T: Real>(model: &GeneratorModel<T>, path: &Path) -> Result<()> {
    let mut w = Writer::new(KIND_GENERATOR);
    w.header(model.hyper())?;
    w.params(model);
    w.save(path)
}

pub fn load_generator<T: Real>(path: &Path) -> Result<GeneratorModel<T>> {
    let mut r = Reader::open(path, KIND_GENERATOR)?;
    let hyper: GeneratorHyper = r.header()?;
    let mut model = GeneratorModel::new(hyper, &mut blank_rng())?;
    r.params(&mut model)?;
    r.done()?;
    Ok(model)
}

pub fn save_embedding<T: Real>(model: &EmbeddingModel<T>, path: &Path) -> Result<()> {
    let mut w = Writer::new(KIND_EMBEDDING);
    w.header(model.ea.hyper())?;
    w.params(&model.ea);
    w.params(&model.eb);
    w.save(path)
}

pub fn load_embedding<T: Real>(path: &Path) -> Result<EmbeddingModel<T>> {
    let mut r = Reader::open(path, KIND_EMBEDDING)?;
    let hyper: EmbedHyper = r.header()?;
    let mut model = EmbeddingModel::new(hyper, &mut blank_rng())?;
    r.params(&mut model.ea)?;
    r.params(&mut model.eb)?;
    r.done()?;
    Ok(model)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct BundleHeader {
    settings: InferenceSettings,
    selector: SelectorHyper,
    generator: GeneratorHyper,
    embedding: EmbedHyper,
}

/// Save all four subnetworks plus the inference settings in one file, so a
/// loaded bundle can never mismatch its discretizations.
pub fn save_bundle<T: Real>(bundle: &ModelBundle<T>, path: &Path) -> Result<()> {
    let mut w = Writer::new(KIND_BUNDLE);
    w.header(&BundleHeader {
        settings: bundle.settings.clone(),
        selector: bundle.selector.hyper().clone(),
        generator: bundle.generator.hyper().clone(),
        embedding: bundle.embedding.ea.hyper().clone(),
    })?;
    w.params(&bundle.selector);
    w.params(&bundle.generator);
    w.params(&bundle.embedding.ea);
    w.params(&bundle.embedding.eb);
    w.save(path)
}

pub fn load_bundle<T: Real>(path: &Path) -> Result<ModelBundle<T>> {
    let mut r = Reader::open(path, KIND_BUNDLE)?;
    let header: BundleHeader = r.header()?;
    let mut rng = blank_rng();
    let mut selector = RotationSelectorModel::new(header.selector, &mut rng)?;
    let mut generator = GeneratorModel::new(header.generator, &mut rng)?;
    let mut embedding = EmbeddingModel::new(header.embedding, &mut rng)?;
    r.params(&mut selector)?;
    r.params(&mut generator)?;
    r.params(&mut embedding.ea)?;
    r.params(&mut embedding.eb)?;
    r.done()?;
    ModelBundle::new(selector, generator, embedding, header.settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::to_flat;

    #[test]
    fn selector_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sel.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hyper = SelectorHyper {
            n_theta: 3,
            sat_channels: 1,
            radar_channels: 1,
            width: 2,
            group_channels: 1,
        };
        let model = RotationSelectorModel::<f32>::new(hyper, &mut rng).unwrap();
        save_selector(&model, &path).unwrap();
        let back = load_selector::<f32>(&path).unwrap();
        assert_eq!(back.hyper(), model.hyper());
        assert_eq!(to_flat(&back), to_flat(&model));
    }

    #[test]
    fn kind_and_version_are_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = GeneratorModel::<f32>::new(
            GeneratorHyper {
                radar_channels: 1,
                sat_channels: 3,
                width: 2,
            },
            &mut rng,
        )
        .unwrap();
        save_generator(&model, &path).unwrap();
        // wrong kind
        assert!(load_selector::<f32>(&path).is_err());
        // wrong version
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_generator::<f32>(&path).is_err());
        // not a checkpoint at all
        std::fs::write(&path, b"nope").unwrap();
        assert!(load_generator::<f32>(&path).is_err());
    }

    #[test]
    fn embedding_checkpoint_keeps_both_nets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = EmbeddingModel::<f64>::new(
            EmbedHyper {
                in_channels: 1,
                width: 2,
                input_height: 64,
                input_width: 64,
            },
            &mut rng,
        )
        .unwrap();
        save_embedding(&model, &path).unwrap();
        let back = load_embedding::<f64>(&path).unwrap();
        assert_eq!(to_flat(&back.ea), to_flat(&model.ea));
        assert_eq!(to_flat(&back.eb), to_flat(&model.eb));
    }
}
