//! Checkpoint container:
//!
//! ```text
//! MONOBEV-CKPT\n
//! manifest_bytes <n>\n
//! <n bytes of JSON manifest>\n
//! <little-endian f64 parameter blob, manifest order>
//! ```

use super::layers::{LayerSpec, Sequential};
use super::{NnError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "MONOBEV-CKPT";

/// Serializable position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal string, since the position is a 128-bit counter.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bytes =
            hex::decode(&self.seed).map_err(|e| NnError::Format(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| NnError::Format("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| NnError::Format(format!("rng word_pos `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    shape: Vec<usize>,
    frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetworkEntry {
    name: String,
    layers: Vec<LayerSpec>,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    epoch: usize,
    stage: u8,
    rng: RngState,
    config: serde_json::Value,
    networks: Vec<NetworkEntry>,
}

/// In-memory checkpoint: named networks plus training position.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: usize,
    pub stage: u8,
    pub rng: RngState,
    pub config: serde_json::Value,
    pub networks: Vec<(String, Sequential)>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Option<&Sequential> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            epoch: self.epoch,
            stage: self.stage,
            rng: self.rng.clone(),
            config: self.config.clone(),
            networks: self
                .networks
                .iter()
                .map(|(name, net)| NetworkEntry {
                    name: name.clone(),
                    layers: net.specs(),
                    params: net
                        .params()
                        .iter()
                        .map(|p| ParamEntry {
                            shape: p.shape().to_vec(),
                            frozen: p.frozen,
                        })
                        .collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| NnError::Format(e.to_string()))?;
        let mut out = format!("{MAGIC}\nmanifest_bytes {}\n", json.len()).into_bytes();
        out.extend_from_slice(&json);
        out.push(b'\n');
        for (_, net) in &self.networks {
            for p in net.params() {
                for v in &p.value.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| NnError::Format(m.to_string());
        let (magic, rest) = split_line(bytes).ok_or_else(|| bad("missing header"))?;
        if magic != MAGIC.as_bytes() {
            return Err(bad("not a checkpoint file"));
        }
        let (len_line, rest) = split_line(rest).ok_or_else(|| bad("missing manifest length"))?;
        let len: usize = std::str::from_utf8(len_line)
            .ok()
            .and_then(|s| s.strip_prefix("manifest_bytes "))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed manifest length"))?;
        if rest.len() < len + 1 || rest[len] != b'\n' {
            return Err(bad("truncated manifest"));
        }
        let value: serde_json::Value =
            serde_json::from_slice(&rest[..len]).map_err(|e| NnError::Format(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| bad("missing format_version"))? as u32;
        if found != FORMAT_VERSION {
            return Err(NnError::VersionMismatch {
                expected: FORMAT_VERSION,
                found,
            });
        }
        let manifest: Manifest =
            serde_json::from_value(value).map_err(|e| NnError::Format(e.to_string()))?;
        let mut blob = rest[len + 1..].chunks_exact(8);
        if !blob.remainder().is_empty() {
            return Err(bad("parameter blob length is not a multiple of 8"));
        }
        // Layer construction needs an rng; every value is overwritten below.
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        let mut networks = Vec::with_capacity(manifest.networks.len());
        for entry in manifest.networks {
            let mut net = Sequential::from_specs(&entry.layers, &mut scratch)?;
            let params = net.params_mut();
            if params.len() != entry.params.len() {
                return Err(NnError::ShapeMismatch {
                    expected: format!("{} parameter tensors in `{}`", params.len(), entry.name),
                    found: format!("{}", entry.params.len()),
                });
            }
            for (p, e) in params.into_iter().zip(&entry.params) {
                if p.shape() != e.shape.as_slice() {
                    return Err(NnError::ShapeMismatch {
                        expected: format!("{:?}", p.shape()),
                        found: format!("{:?}", e.shape),
                    });
                }
                for v in p.value.values.iter_mut() {
                    let chunk = blob.next().ok_or_else(|| bad("parameter blob too short"))?;
                    *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
                }
                p.set_frozen(e.frozen);
            }
            networks.push((entry.name, net));
        }
        if blob.next().is_some() {
            return Err(bad("trailing bytes after parameter blob"));
        }
        Ok(Self {
            epoch: manifest.epoch,
            stage: manifest.stage,
            rng: manifest.rng,
            config: manifest.config,
            networks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|source| NnError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| NnError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}

/// Copies parameter values from `src` into `dst`, requiring identical
/// architectures. Frozen flags of `dst` are kept.
pub fn copy_params(dst: &mut Sequential, src: &Sequential) -> Result<()> {
    if dst.specs() != src.specs() {
        return Err(NnError::ShapeMismatch {
            expected: format!("{:?}", dst.specs()),
            found: format!("{:?}", src.specs()),
        });
    }
    for (d, s) in dst.params_mut().into_iter().zip(src.params()) {
        d.value.values.clone_from(&s.value.values);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let specs = [
            LayerSpec::Conv3x3 {
                in_channels: 1,
                out_channels: 2,
            },
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense {
                inputs: 2,
                outputs: 3,
            },
            LayerSpec::Tanh,
        ];
        let net = Sequential::from_specs(&specs, &mut rng).unwrap();
        rng.next_u64();
        Checkpoint {
            epoch: 12,
            stage: 1,
            rng: RngState::capture(&rng),
            config: serde_json::json!({"dropout_p": 0.25, "widths": [1, 2]}),
            networks: vec![("a".into(), net)],
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        let p1 = dir.path().join("a.ckpt");
        ck.save(&p1).unwrap();
        let back = Checkpoint::load(&p1).unwrap();
        let p2 = dir.path().join("b.ckpt");
        back.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let (a, b) = (ck.network("a").unwrap(), back.network("a").unwrap());
        for (pa, pb) in a.params().iter().zip(b.params()) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&pa.value.values), bits(&pb.value.values));
        }
        assert_eq!(back.epoch, 12);
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..7 {
            rng.next_u32();
        }
        let mut resumed = RngState::capture(&rng).restore().unwrap();
        assert_eq!(rng.next_u64(), resumed.next_u64());
    }

    #[test]
    fn version_mismatch_detected() {
        let bytes = sample().to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes).replacen(
            "\"format_version\":1",
            "\"format_version\":9",
            1,
        );
        let err = Checkpoint::from_bytes(text.as_bytes()).unwrap_err();
        assert!(matches!(err, NnError::VersionMismatch { found: 9, .. }));
    }

    #[test]
    fn architecture_mismatch_detected() {
        let ck = sample();
        let mut other = Sequential::from_specs(
            &[LayerSpec::Dense {
                inputs: 4,
                outputs: 3,
            }],
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(matches!(
            copy_params(&mut other, ck.network("a").unwrap()),
            Err(NnError::ShapeMismatch { .. })
        ));
        let mut bytes = ck.to_bytes().unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
