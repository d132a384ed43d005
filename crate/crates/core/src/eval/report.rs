use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::io::write_text;

pub const UNCERTAINTY_UNITS: &str = "un-whitened PCA score variance (squared world units), mean over modes";

/// One evaluated test image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub model: String,
    pub set: String,
    pub sample: usize,
    /// Symmetric mean surface distance in world units.
    pub distance: f64,
    pub mean_aleatoric: Option<f64>,
    pub mean_epistemic: Option<f64>,
}

/// Mean, sample standard deviation and five-number summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let [min, q1, median, q3, max] = quartiles(values);
        Some(Self {
            n,
            mean,
            std,
            min,
            q1,
            median,
            q3,
            max,
        })
    }
}

/// Minimum, quartiles and maximum with linear interpolation between order
/// statistics.
pub fn quartiles(values: &[f64]) -> [f64; 5] {
    assert!(!values.is_empty(), "quartiles of an empty list");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    [v[0], at(0.25), at(0.5), at(0.75), v[v.len() - 1]]
}

/// Aggregates of one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetSummary {
    pub model: String,
    pub set: String,
    pub distance: Stats,
    pub aleatoric: Option<Stats>,
    pub epistemic: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub distance_units: &'static str,
    pub uncertainty_units: &'static str,
    pub rows: Vec<SampleResult>,
    pub summaries: Vec<SetSummary>,
}

impl EvalReport {
    /// Summaries per `(model, set)` in order of first appearance.
    pub fn new(rows: Vec<SampleResult>) -> Self {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &rows {
            let k = (r.model.clone(), r.set.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let summaries = keys
            .into_iter()
            .map(|(model, set)| {
                let group: Vec<&SampleResult> = rows.iter().filter(|r| r.model == model && r.set == set).collect();
                let d: Vec<f64> = group.iter().map(|r| r.distance).collect();
                let a: Vec<f64> = group.iter().filter_map(|r| r.mean_aleatoric).collect();
                let e: Vec<f64> = group.iter().filter_map(|r| r.mean_epistemic).collect();
                SetSummary {
                    distance: Stats::of(&d).expect("group is non-empty"),
                    aleatoric: Stats::of(&a),
                    epistemic: Stats::of(&e),
                    model,
                    set,
                }
            })
            .collect();
        Self {
            distance_units: "world",
            uncertainty_units: UNCERTAINTY_UNITS,
            rows,
            summaries,
        }
    }

    pub fn summary(&self, model: &str, set: &str) -> Option<&SetSummary> {
        self.summaries.iter().find(|s| s.model == model && s.set == set)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    /// Per-set aggregates, quartiles for box plots, and error-versus-uncertainty
    /// pairs for the models that report uncertainty.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Scatter<'a> {
            model: &'a str,
            set: &'a str,
            sample: usize,
            distance: f64,
            mean_aleatoric: f64,
            mean_epistemic: f64,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            distance_units: &'a str,
            uncertainty_units: &'a str,
            summaries: &'a [SetSummary],
            scatter: Vec<Scatter<'a>>,
        }
        let scatter = self
            .rows
            .iter()
            .filter_map(|r| {
                Some(Scatter {
                    model: &r.model,
                    set: &r.set,
                    sample: r.sample,
                    distance: r.distance,
                    mean_aleatoric: r.mean_aleatoric?,
                    mean_epistemic: r.mean_epistemic?,
                })
            })
            .collect();
        let doc = Doc {
            distance_units: self.distance_units,
            uncertainty_units: self.uncertainty_units,
            summaries: &self.summaries,
            scatter,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        if self.rows.iter().any(|r| !r.distance.is_finite()) {
            return Err(Error::Numerical("report contains a non-finite distance".into()));
        }
        write_text(csv_path, &self.to_csv())?;
        write_text(json_path, &self.to_json())
    }
}
