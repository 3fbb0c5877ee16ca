//! Versioned checkpoints: a header line carrying the format version and a SHA-256 of the
//! JSON payload that follows it.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::Regime;
use crate::continual::LearningRateVector;
use crate::error::{Error, Result};
use crate::fewshot::{MaskState, TrainerSnapshot};
use crate::mask::MaskParams;
use crate::nn::LayerLayout;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "sparse-meta-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
// Externally tagged: internal tagging buffers content and cannot carry the u128 rng
// counters.
#[serde(rename_all = "snake_case")]
pub enum CheckpointPayload {
    Fewshot {
        /// Resumable trainer state at the last completed iteration.
        trainer: TrainerSnapshot,
        /// The state selected for evaluation (best-by-validation or final).
        selected_theta: Vec<f64>,
        selected_mask: MaskState,
    },
    Continual {
        theta: Vec<f64>,
        mask: Option<MaskParams>,
        learning_rates: Option<LearningRateVector>,
    },
    Online {
        theta: Vec<f64>,
        phi: Vec<f64>,
        mask: MaskParams,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub regime: Regime,
    /// Trajectory hash of the configuration that produced the checkpoint.
    pub config_hash: String,
    pub layout: LayerLayout,
    pub payload: CheckpointPayload,
}

impl Checkpoint {
    /// Errors unless `layout` matches the stored one.
    pub fn check_layout(&self, layout: &LayerLayout) -> Result<()> {
        if &self.layout != layout {
            return Err(Error::CheckpointLayout(format!(
                "checkpoint has {} groups / {} parameters, network has {} groups / {} parameters",
                self.layout.groups().len(),
                self.layout.total_len(),
                layout.groups().len(),
                layout.total_len()
            )));
        }
        Ok(())
    }

    fn check_lengths(&self) -> Result<()> {
        let n = self.layout.total_len();
        let mut lens = vec![];
        match &self.payload {
            CheckpointPayload::Fewshot {
                trainer,
                selected_theta,
                selected_mask,
            } => {
                lens.extend([trainer.theta.len(), trainer.mask.base().len(), selected_theta.len(), selected_mask.base().len()]);
                if let Some(b) = &trainer.best {
                    lens.extend([b.theta.len(), b.mask.base().len()]);
                }
            }
            CheckpointPayload::Continual {
                theta,
                mask,
                learning_rates,
            } => {
                lens.push(theta.len());
                lens.extend(mask.iter().map(|m| m.len()));
                lens.extend(learning_rates.iter().map(|l| l.len()));
            }
            CheckpointPayload::Online { theta, phi, mask } => lens.extend([theta.len(), phi.len(), mask.len()]),
        }
        if let Some(bad) = lens.into_iter().find(|&l| l != n) {
            return Err(Error::CheckpointLayout(format!("stored vector has {bad} entries, layout has {n}")));
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let body = serde_json::to_string(ckpt).map_err(|e| Error::structural(format!("cannot serialize checkpoint: {e}")))?;
    let digest = hex::encode(Sha256::digest(body.as_bytes()));
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "{MAGIC} v{CHECKPOINT_VERSION} sha256={digest}").map_err(|e| Error::io(path, e))?;
    file.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| Error::CheckpointCorrupt(m.to_owned());
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| corrupt("header is not UTF-8"))?;
    let mut parts = header.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(corrupt("not a checkpoint file"));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupt("unreadable version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let digest = parts
        .next()
        .and_then(|d| d.strip_prefix("sha256="))
        .ok_or_else(|| corrupt("missing payload digest"))?;
    let body = &bytes[nl + 1..];
    if hex::encode(Sha256::digest(body)) != digest {
        return Err(corrupt("payload digest mismatch (truncated or modified file)"));
    }
    let ckpt: Checkpoint = serde_json::from_slice(body).map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    ckpt.check_lengths()?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::MaskKind;
    use crate::nn::{Activation, LossKind, Mlp};

    fn sample() -> Checkpoint {
        let net = Mlp::new(vec![2, 3, 1], Activation::Relu, LossKind::Mse, true).unwrap();
        let n = net.layout().total_len();
        Checkpoint {
            regime: Regime::Online,
            config_hash: "abc".into(),
            layout: net.layout().as_ref().clone(),
            payload: CheckpointPayload::Online {
                theta: (0..n).map(|i| 0.1 * i as f64 + 1e-17).collect(),
                phi: (0..n).map(|i| (i as f64).sqrt()).collect(),
                mask: MaskParams::new((0..n).map(|i| i as f64 / 3.0 - 1.0).collect(), MaskKind::Binary, 0.1).unwrap(),
            },
        }
    }

    #[test]
    fn round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let c = sample();
        save_checkpoint(&c, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), c);
    }

    #[test]
    fn truncated_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        save_checkpoint(&sample(), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        for cut in [5, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(parse_checkpoint(&bytes[..cut]), Err(Error::CheckpointCorrupt(_))), "cut {cut}");
        }
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        save_checkpoint(&sample(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap().replacen(" v1 ", " v9 ", 1);
        assert!(matches!(parse_checkpoint(text.as_bytes()), Err(Error::CheckpointVersion { found: 9, expected: 1 })));
    }

    #[test]
    fn layout_mismatch_is_distinct() {
        let c = sample();
        let other = Mlp::new(vec![2, 4, 1], Activation::Relu, LossKind::Mse, true).unwrap();
        assert!(matches!(c.check_layout(other.layout()), Err(Error::CheckpointLayout(_))));

        let mut short = c.clone();
        if let CheckpointPayload::Online { phi, .. } = &mut short.payload {
            phi.pop();
        }
        let body = serde_json::to_string(&short).unwrap();
        let text = format!("{MAGIC} v1 sha256={}\n{body}", hex::encode(Sha256::digest(body.as_bytes())));
        assert!(matches!(parse_checkpoint(text.as_bytes()), Err(Error::CheckpointLayout(_))));
    }
}
