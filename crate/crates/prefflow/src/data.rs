//! Synthetic 2D preference datasets and persistence.
//!
//! A toy task is a Gaussian mixture with at least one preferred and one
//! non-preferred mode. Each pair draws two candidates from distinct modes
//! and labels them with the synthetic reward `r(x, c) = -||x - mu_pref(c)||^2`,
//! where the one-hot condition `c` selects the target preferred center.
//! Datasets persist as JSON lines, one pair per line; task geometry rides
//! along in a JSON sidecar so evaluation can recompute preferred-region mass.

use crate::error::{Error, Result};
use crate::objectives::{PreferencePair, SftExample};
use crate::rng::{self, Purpose};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// One mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub center: Vec<f64>,
    pub std: f64,
    pub preferred: bool,
}

/// Mixture geometry plus generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTaskSpec {
    pub modes: Vec<ModeSpec>,
    /// Length of the one-hot condition; equals the preferred-mode count.
    pub cond_dim: usize,
    pub pairs: usize,
    pub seed: u64,
    /// Probability of swapping a pair's labels (preference noise).
    #[serde(default)]
    pub label_flip_prob: f64,
}

impl ToyTaskSpec {
    /// The default benchmark: centers `(+/-2, 0)`, std 0.3, `+` preferred.
    pub fn two_mode(pairs: usize, seed: u64) -> Self {
        ToyTaskSpec {
            modes: vec![
                ModeSpec {
                    center: vec![2.0, 0.0],
                    std: 0.3,
                    preferred: true,
                },
                ModeSpec {
                    center: vec![-2.0, 0.0],
                    std: 0.3,
                    preferred: false,
                },
            ],
            cond_dim: 1,
            pairs,
            seed,
            label_flip_prob: 0.0,
        }
    }

    pub fn data_dim(&self) -> usize {
        self.modes.first().map_or(0, |m| m.center.len())
    }

    pub fn preferred_modes(&self) -> Vec<usize> {
        self.modes
            .iter()
            .enumerate()
            .filter(|(_, m)| m.preferred)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn non_preferred_modes(&self) -> Vec<usize> {
        self.modes
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.preferred)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.preferred_modes().is_empty() || self.non_preferred_modes().is_empty() {
            return Err(Error::Config(
                "task needs at least one preferred and one non-preferred mode".into(),
            ));
        }
        let dim = self.data_dim();
        if dim == 0 || self.modes.iter().any(|m| m.center.len() != dim) {
            return Err(Error::Config(
                "mode centers must share a positive dimension".into(),
            ));
        }
        if self.modes.iter().any(|m| m.std <= 0.0) {
            return Err(Error::Config("mode std must be positive".into()));
        }
        if self.cond_dim != self.preferred_modes().len() {
            return Err(Error::Config(format!(
                "cond_dim {} must equal the preferred-mode count {}",
                self.cond_dim,
                self.preferred_modes().len()
            )));
        }
        if !(0.0..=1.0).contains(&self.label_flip_prob) {
            return Err(Error::Config(format!(
                "label_flip_prob must lie in [0, 1], got {}",
                self.label_flip_prob
            )));
        }
        Ok(())
    }

    /// Preferred center selected by the one-hot condition.
    pub fn preferred_center<'a>(&'a self, c: &[f64]) -> Result<&'a [f64]> {
        let preferred = self.preferred_modes();
        if c.len() != preferred.len() {
            return Err(Error::Shape(format!(
                "condition dim {} != preferred-mode count {}",
                c.len(),
                preferred.len()
            )));
        }
        let hot = c
            .iter()
            .position(|&v| v == 1.0)
            .ok_or_else(|| Error::Contract("condition is not one-hot".into()))?;
        Ok(&self.modes[preferred[hot]].center)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("task serialization failed: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: ToyTaskSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("bad task spec {}: {e}", path.display()),
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Conventional sidecar path carrying the task geometry next to a dataset.
pub fn task_sidecar_path(dataset_path: &Path) -> std::path::PathBuf {
    let mut os = dataset_path.as_os_str().to_os_string();
    os.push(".task.json");
    std::path::PathBuf::from(os)
}

fn reward(x: &[f64], center: &[f64]) -> f64 {
    -crate::math::sq_dist(x, center)
}

/// Generate the preference dataset.
///
/// Per pair: pick a target preferred mode (one-hot condition), draw one
/// candidate from each of two distinct modes, and order them by the reward.
/// Deterministic per `(seed, pair index)`.
pub fn gen_dataset(spec: &ToyTaskSpec) -> Result<Vec<PreferencePair>> {
    spec.validate()?;
    let dim = spec.data_dim();
    let preferred = spec.preferred_modes();
    let mut pairs = Vec::with_capacity(spec.pairs);
    for i in 0..spec.pairs {
        let mut rng = rng::stream(spec.seed, Purpose::DataGen, i as u64);

        let hot =
            (rng::uniform(&mut rng, 0.0, preferred.len() as f64) as usize).min(preferred.len() - 1);
        let mut c = vec![0.0; preferred.len()];
        c[hot] = 1.0;
        let target_center = spec.modes[preferred[hot]].center.clone();

        // Two candidates from distinct modes.
        let m1 = (rng::uniform(&mut rng, 0.0, spec.modes.len() as f64) as usize)
            .min(spec.modes.len() - 1);
        let m2_raw = (rng::uniform(&mut rng, 0.0, (spec.modes.len() - 1) as f64) as usize)
            .min(spec.modes.len() - 2);
        let m2 = if m2_raw >= m1 { m2_raw + 1 } else { m2_raw };

        let draw = |rng: &mut rand_chacha::ChaCha8Rng, mode: &ModeSpec| -> Vec<f64> {
            (0..dim)
                .map(|d| mode.center[d] + mode.std * rng::standard_normal(rng))
                .collect()
        };
        let a = draw(&mut rng, &spec.modes[m1]);
        let b = draw(&mut rng, &spec.modes[m2]);

        let (mut x0_w, mut x0_l) = if reward(&a, &target_center) >= reward(&b, &target_center) {
            (a, b)
        } else {
            (b, a)
        };
        if spec.label_flip_prob > 0.0 && rng::uniform(&mut rng, 0.0, 1.0) < spec.label_flip_prob {
            std::mem::swap(&mut x0_w, &mut x0_l);
        }
        pairs.push(PreferencePair { x0_w, x0_l, c });
    }
    Ok(pairs)
}

/// Winners of each pair, keeping the pair's condition.
pub fn winners(pairs: &[PreferencePair]) -> Vec<SftExample> {
    pairs
        .iter()
        .map(|p| SftExample {
            x0: p.x0_w.clone(),
            c: p.c.clone(),
        })
        .collect()
}

/// Winners and losers pooled, approximating the underlying mixture.
pub fn all_samples(pairs: &[PreferencePair]) -> Vec<SftExample> {
    let mut out = Vec::with_capacity(2 * pairs.len());
    for p in pairs {
        out.push(SftExample {
            x0: p.x0_w.clone(),
            c: p.c.clone(),
        });
        out.push(SftExample {
            x0: p.x0_l.clone(),
            c: p.c.clone(),
        });
    }
    out
}

/// Write pairs as JSON lines: `{"x0_w":[...],"x0_l":[...],"c":[...]}`.
pub fn save_dataset(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    for pair in pairs {
        let line = serde_json::to_string(pair)
            .map_err(|e| Error::Config(format!("pair serialization failed: {e}")))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a JSON-lines dataset; malformed lines report their line number.
pub fn load_dataset(path: &Path) -> Result<Vec<PreferencePair>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: PreferencePair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: format!("bad pair record: {e}"),
        })?;
        pair.validate().map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Fraction of samples strictly closer to the selected preferred center than
/// to every non-preferred center.
pub fn pref_mass(samples: &[Vec<f64>], spec: &ToyTaskSpec, c: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract(
            "preferred-mass of an empty sample set".into(),
        ));
    }
    let target = spec.preferred_center(c)?;
    let others = spec.non_preferred_modes();
    let mut hits = 0usize;
    for x in samples {
        let d_pref = crate::math::sq_dist(x, target);
        let closer = others
            .iter()
            .all(|&j| d_pref < crate::math::sq_dist(x, &spec.modes[j].center));
        if closer {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}
