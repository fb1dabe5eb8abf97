//! Trainable tensors, their layout, initialisation and the checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "PULLNET\0"
//! version  u32      currently 1
//! length   u64      byte length of the manifest
//! manifest JSON     {"config": .., "words": [..], "tensors": [{"name", "rows", "cols"}, ..]}
//! payload  f64 LE   tensors in manifest order, row-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mat::Mat;
use crate::error::{Error, Result};
use crate::kb::Vocab;

const MAGIC: &[u8; 8] = b"PULLNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Reserved word id for out-of-vocabulary tokens.
pub const UNK: usize = 0;
pub const UNK_TOKEN: &str = "<unk>";

pub const WORD_EMB: usize = 0;
pub const RELATION_EMB: usize = 1;
pub const ENTITY_EMB: usize = 2;
pub const LSTM_W: usize = 3;
pub const LSTM_B: usize = 4;
pub const QUESTION_FLAG: usize = 5;
pub const PULL_W: usize = 6;
pub const PULL_B: usize = 7;
pub const ANSWER_W: usize = 8;
pub const ANSWER_B: usize = 9;
const LAYER_BASE: usize = 10;
const PER_LAYER: usize = 5;

/// Per-layer graph convolution weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerWeight {
    SelfLoop = 0,
    Fact = 1,
    DocIn = 2,
    DocOut = 3,
    Question = 4,
}

pub fn layer_param(layer: usize, w: LayerWeight) -> usize {
    LAYER_BASE + PER_LAYER * layer + w as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden size `n` shared by embeddings, LSTM and graph layers.
    pub hidden: usize,
    /// Number of graph convolution rounds `L`.
    pub layers: usize,
    pub words: usize,
    pub relations: usize,
    pub entities: usize,
}

impl ModelConfig {
    pub fn tensor_shapes(&self) -> Vec<(String, usize, usize)> {
        let n = self.hidden;
        let mut v = vec![
            ("word_emb".to_owned(), self.words, n),
            ("relation_emb".to_owned(), self.relations, n),
            ("entity_emb".to_owned(), self.entities, n),
            ("lstm.w".to_owned(), 2 * n, 4 * n),
            ("lstm.b".to_owned(), 1, 4 * n),
            ("question_flag".to_owned(), 1, 1),
            ("pull_head.w".to_owned(), n, 1),
            ("pull_head.b".to_owned(), 1, 1),
            ("answer_head.w".to_owned(), n, 1),
            ("answer_head.b".to_owned(), 1, 1),
        ];
        for l in 0..self.layers {
            for name in ["self", "fact", "doc_in", "doc_out", "question"] {
                v.push((format!("gcn{l}.{name}"), n, n));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one graph layer is required".into()));
        }
        if self.words == 0 {
            return Err(Error::Config("word vocabulary must contain the unknown token".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub words: Vocab,
    pub tensors: Vec<Mat>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    words: Vec<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

impl ModelParams {
    /// Uniform(-1/sqrt(n), 1/sqrt(n)) initialisation. `words` must start with
    /// the unknown token; `config.words` is taken from it.
    pub fn init(mut config: ModelConfig, words: Vocab, seed: u64) -> Result<Self> {
        if words.name(UNK as u32) != Some(UNK_TOKEN) {
            return Err(Error::Config(format!("word vocabulary must start with {UNK_TOKEN}")));
        }
        config.words = words.len();
        config.validate()?;
        let bound = 1.0 / (config.hidden as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .tensor_shapes()
            .into_iter()
            .map(|(_, r, c)| Mat::from_vec(r, c, (0..r * c).map(|_| dist.sample(&mut rng)).collect()))
            .collect();
        Ok(ModelParams { config, words, tensors })
    }

    /// All-zero parameters (useful as a fixed point in tests).
    pub fn zeros(mut config: ModelConfig, words: Vocab) -> Self {
        config.words = words.len();
        let tensors = config
            .tensor_shapes()
            .into_iter()
            .map(|(_, r, c)| Mat::zeros(r, c))
            .collect();
        ModelParams { config, words, tensors }
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn word_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.words.get(t).map_or(UNK, |i| i as usize))
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Mat::is_finite)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            config: self.config,
            words: self.words.names().to_vec(),
            tensors: self
                .config
                .tensor_shapes()
                .into_iter()
                .map(|(name, rows, cols)| TensorEntry { name, rows, cols })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(24 + json.len() + 8 * self.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
        let version = u32::from_le_bytes(u32buf);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf).map_err(|_| bad("truncated header"))?;
        let len = u64::from_le_bytes(u64buf) as usize;
        if r.len() < len {
            return Err(bad("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&r[..len])?;
        r = &r[len..];

        let config = manifest.config;
        config.validate()?;
        if manifest.words.len() != config.words {
            return Err(bad("word list length disagrees with config"));
        }
        let expected = config.tensor_shapes();
        if expected.len() != manifest.tensors.len() {
            return Err(bad("tensor count disagrees with config"));
        }
        for ((name, rows, cols), entry) in expected.iter().zip(&manifest.tensors) {
            if *name != entry.name || *rows != entry.rows || *cols != entry.cols {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {}x{}, expected {name} {rows}x{cols}",
                    entry.name, entry.rows, entry.cols
                )));
            }
        }
        let scalars: usize = expected.iter().map(|(_, r, c)| r * c).sum();
        if r.len() != scalars * 8 {
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes, expected {}",
                r.len(),
                scalars * 8
            )));
        }
        let mut values = r.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let tensors = expected
            .iter()
            .map(|&(_, rows, cols)| Mat::from_vec(rows, cols, values.by_ref().take(rows * cols).collect()))
            .collect();
        Ok(ModelParams {
            config,
            words: Vocab::from_names(manifest.words),
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&bytes)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelParams {
        let cfg = ModelConfig {
            hidden: 4,
            layers: 2,
            words: 0,
            relations: 3,
            entities: 5,
        };
        ModelParams::init(cfg, Vocab::from_names([UNK_TOKEN, "who", "directed"]), 11).unwrap()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = small();
        assert_eq!(a, small());
        assert_eq!(a.config.words, 3);
        assert!(a.tensors.iter().all(|t| t.data().iter().all(|x| x.abs() <= 0.5)));
        assert_eq!(a.tensors.len(), 10 + 2 * 5);
        assert_eq!(a.tensors[layer_param(1, LayerWeight::Question)].shape(), (4, 4));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = small();
        let bytes = p.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(ModelParams::from_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let bytes = small().to_bytes().unwrap();
        assert!(ModelParams::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(ModelParams::from_bytes(&wrong).is_err());
        assert!(ModelParams::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn vocabulary_must_reserve_unk() {
        let cfg = small().config;
        assert!(ModelParams::init(cfg, Vocab::from_names(["who"]), 1).is_err());
    }

    #[test]
    fn word_ids_map_unknowns() {
        let p = small();
        let toks: Vec<String> = ["who", "zzz", "directed"].iter().map(|s| s.to_string()).collect();
        assert_eq!(p.word_ids(&toks), vec![1, UNK, 2]);
    }
}
