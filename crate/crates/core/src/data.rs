//! Right-censored observations: simulation, CSV I/O, standardization and
//! seeded splits.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)` so datasets
//! are reproducible across platforms.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One right-censored record: features, observed time `min(T, C)`, and
/// whether the event was observed (`T <= C`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub time: f64,
    pub event: bool,
}

impl Observation {
    pub fn new(x: Vec<f64>, time: f64, event: bool) -> Self {
        Self { x, time, event }
    }

    pub fn delta(&self) -> f64 {
        if self.event {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub observations: Vec<Observation>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, observations: Vec<Observation>) -> Result<Self> {
        let p = feature_names.len();
        for (i, o) in observations.iter().enumerate() {
            if o.x.len() != p {
                return Err(Error::Load {
                    row: i + 1,
                    message: format!("expected {p} features, found {}", o.x.len()),
                });
            }
            if !(o.time >= 0.0) || !o.time.is_finite() {
                return Err(Error::Load {
                    row: i + 1,
                    message: format!("time {} must be finite and >= 0", o.time),
                });
            }
            if o.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Load {
                    row: i + 1,
                    message: "non-finite feature value".into(),
                });
            }
        }
        Ok(Self {
            feature_names,
            observations,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.observations.iter().map(|o| o.event).collect()
    }

    pub fn censoring_rate(&self) -> f64 {
        let censored = self.observations.iter().filter(|o| !o.event).count();
        censored as f64 / self.len() as f64
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            observations: idx.iter().map(|&i| self.observations[i].clone()).collect(),
        }
    }

    /// Writes the header (features, `time`, `event`) and one row per
    /// observation. Floats use the shortest representation that parses back
    /// to the same value.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        header.push("time".into());
        header.push("event".into());
        w.write_record(&header)?;
        for o in &self.observations {
            let mut row: Vec<String> = o.x.iter().map(|v| v.to_string()).collect();
            row.push(o.time.to_string());
            row.push(if o.event { "1" } else { "0" }.into());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV with a header row. `time` and `event` are required; every
    /// other column is a feature, kept in header order. Categorical columns
    /// must already be dummy-encoded.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let find = |name: &str| {
            header.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Load {
                row: 0,
                message: format!("missing required column `{name}`"),
            })
        };
        let time_col = find("time")?;
        let event_col = find("event")?;
        let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| c != time_col && c != event_col).collect();
        let feature_names = feature_cols.iter().map(|&c| header[c].trim().to_string()).collect();

        let mut observations = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let row = i + 1;
            let rec = rec?;
            let cell = |c: usize| -> Result<f64> {
                let raw = rec.get(c).unwrap_or("").trim();
                raw.parse::<f64>().map_err(|_| Error::Load {
                    row,
                    message: format!("cannot parse `{raw}` in column `{}`", &header[c]),
                })
            };
            let time = cell(time_col)?;
            if !(time >= 0.0) || !time.is_finite() {
                return Err(Error::Load {
                    row,
                    message: format!("time {time} must be finite and >= 0"),
                });
            }
            let event = match cell(event_col)? {
                v if v == 1.0 => true,
                v if v == 0.0 => false,
                v => {
                    return Err(Error::Load {
                        row,
                        message: format!("event must be 0 or 1, got {v}"),
                    })
                }
            };
            let x = feature_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<f64>>>()?;
            observations.push(Observation { x, time, event });
        }
        Dataset::new(feature_names, observations)
    }
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn new(mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if mean.len() != scale.len() {
            return Err(Error::Shape {
                expected: mean.len(),
                got: scale.len(),
            });
        }
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("standardization scales must be positive".into()));
        }
        Ok(Self { mean, scale })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            mean: vec![0.0; p],
            scale: vec![1.0; p],
        }
    }

    /// Mean and population standard deviation of each feature. A constant
    /// feature gets scale 1, so it maps to 0.
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidInput("cannot standardize on an empty dataset".into()));
        }
        let p = data.n_features();
        let n = data.len() as f64;
        let mut mean = vec![0.0; p];
        for o in &data.observations {
            for (m, v) in mean.iter_mut().zip(&o.x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for o in &data.observations {
            for k in 0..p {
                let d = o.x[k] - mean[k];
                var[k] += d * d;
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    #[inline]
    pub fn apply_one(&self, k: usize, v: f64) -> f64 {
        (v - self.mean[k]) / self.scale[k]
    }

    #[inline]
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..x.len() {
            out[k] = self.apply_one(k, x[k]);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(k, &v)| self.apply_one(k, v)).collect()
    }

    pub fn transform(&self, data: &Dataset) -> Dataset {
        Dataset {
            feature_names: data.feature_names.clone(),
            observations: data
                .observations
                .iter()
                .map(|o| Observation::new(self.apply(&o.x), o.time, o.event))
                .collect(),
        }
    }
}

/// Fits z-scores on `train` and applies them to `train` and every other set.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>, Standardization)> {
    let stats = Standardization::fit(train)?;
    let others = others.iter().map(|d| stats.transform(d)).collect();
    Ok((stats.transform(train), others, stats))
}

/// Two-group simulation with crossing survival curves.
///
/// `x ~ Bernoulli(0.5)`; survival `e^{-2t}` for `x = 0` and `e^{-2t²}` for
/// `x = 1`; censoring `C ~ Uniform(0, 2)`. Event times come from inverse
/// transform sampling with `U ∈ (0, 1]`. Per observation the generator draws
/// `x`, then `U`, then `C`, in that order.
pub fn simulate_crossing(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let observations = (0..n)
        .map(|_| {
            let x = if rng.gen::<f64>() < 0.5 { 1.0 } else { 0.0 };
            let u = 1.0 - rng.gen::<f64>();
            let e = -u.ln();
            let t = if x == 0.0 { e / 2.0 } else { (e / 2.0).sqrt() };
            let c = 2.0 * rng.gen::<f64>();
            Observation::new(vec![x], t.min(c), t <= c)
        })
        .collect();
    Ok(Dataset {
        feature_names: vec!["x0".into()],
        observations,
    })
}

/// True survival function of [`simulate_crossing`].
pub fn crossing_survival(x: f64, t: f64) -> f64 {
    if x == 0.0 {
        (-2.0 * t).exp()
    } else {
        (-2.0 * t * t).exp()
    }
}

/// Seeded permutation, then contiguous slices sized by the rounded ratios
/// (the last slice takes the remainder).
pub fn split(data: &Dataset, ratios: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if ratios.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let n = data.len();
    let total: f64 = ratios.iter().sum();
    let n_train = (n as f64 * ratios[0] / total).round() as usize;
    let n_val = ((n as f64 * ratios[1] / total).round() as usize).min(n.saturating_sub(n_train));
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "split of {n} observations by {ratios:?} leaves an empty part ({n_train}/{n_val}/{n_test})"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((
        data.subset(&idx[..n_train]),
        data.subset(&idx[n_train..n_train + n_val]),
        data.subset(&idx[n_train + n_val..]),
    ))
}
