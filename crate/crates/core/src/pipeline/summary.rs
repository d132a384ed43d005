use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::fraction_label;
use super::io::{read_text, write_text};
use super::stages::TEST_SETS;
use crate::error::{Error, Result};
use crate::eval::{EvalReport, Stats, UNCERTAINTY_UNITS};

/// One row of the main results table: a model on a test set at the largest
/// training fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub model: String,
    pub set: String,
    pub n: usize,
    pub distance_mean: f64,
    pub distance_std: f64,
    pub aleatoric_mean: Option<f64>,
    pub aleatoric_std: Option<f64>,
    pub epistemic_mean: Option<f64>,
    pub epistemic_std: Option<f64>,
}

/// Uncertain-model means on one test set at one training fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionRow {
    pub fraction: f64,
    pub set: String,
    pub distance_mean: f64,
    pub aleatoric_mean: f64,
    pub epistemic_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orderings {
    /// Mean aleatoric uncertainty on the aleatoric set exceeds the control set.
    pub aleatoric_above_control: bool,
    /// Mean epistemic uncertainty on the epistemic set exceeds the control set.
    pub epistemic_above_control: bool,
    /// Mean epistemic uncertainty at the largest fraction is no higher than at
    /// the smallest, on every set.
    pub epistemic_non_increasing: bool,
    /// The same, between every pair of consecutive fractions.
    pub epistemic_monotone: bool,
    /// Uncertain over baseline mean distance on the aleatoric set.
    pub aleatoric_distance_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub model: String,
    pub set: String,
    pub quantity: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seed: u64,
    pub distance_units: String,
    pub uncertainty_units: String,
    pub table1: Vec<Table1Row>,
    pub fractions: Vec<FractionRow>,
    pub boxplots: Vec<BoxRow>,
    pub orderings: Orderings,
}

fn mean_of(s: &Option<Stats>) -> f64 {
    s.map_or(f64::NAN, |s| s.mean)
}

impl ExperimentSummary {
    /// `reports` holds one evaluation per training fraction, in increasing
    /// fraction order.
    pub fn from_reports(seed: u64, reports: &[(f64, EvalReport)]) -> Self {
        let (_, last) = reports.last().expect("at least one fraction");
        let table1 = last
            .summaries
            .iter()
            .map(|s| Table1Row {
                model: s.model.clone(),
                set: s.set.clone(),
                n: s.distance.n,
                distance_mean: s.distance.mean,
                distance_std: s.distance.std,
                aleatoric_mean: s.aleatoric.map(|a| a.mean),
                aleatoric_std: s.aleatoric.map(|a| a.std),
                epistemic_mean: s.epistemic.map(|e| e.mean),
                epistemic_std: s.epistemic.map(|e| e.std),
            })
            .collect();

        let mut fractions = Vec::new();
        for (f, report) in reports {
            for set in TEST_SETS {
                if let Some(s) = report.summary("uncertain", set) {
                    fractions.push(FractionRow {
                        fraction: *f,
                        set: set.into(),
                        distance_mean: s.distance.mean,
                        aleatoric_mean: mean_of(&s.aleatoric),
                        epistemic_mean: mean_of(&s.epistemic),
                    });
                }
            }
        }

        let mut boxplots = Vec::new();
        for s in &last.summaries {
            for (quantity, stats) in [("distance", Some(s.distance)), ("aleatoric", s.aleatoric), ("epistemic", s.epistemic)] {
                if let Some(st) = stats {
                    boxplots.push(BoxRow {
                        model: s.model.clone(),
                        set: s.set.clone(),
                        quantity: quantity.into(),
                        min: st.min,
                        q1: st.q1,
                        median: st.median,
                        q3: st.q3,
                        max: st.max,
                    });
                }
            }
        }

        let unc = |set: &str| last.summary("uncertain", set);
        let gt = |a: f64, b: f64| a > b;
        let aleatoric_above_control = match (unc("aleatoric"), unc("control")) {
            (Some(a), Some(c)) => gt(mean_of(&a.aleatoric), mean_of(&c.aleatoric)),
            _ => false,
        };
        let epistemic_above_control = match (unc("epistemic"), unc("control")) {
            (Some(e), Some(c)) => gt(mean_of(&e.epistemic), mean_of(&c.epistemic)),
            _ => false,
        };
        let trend = |set: &str| -> Vec<f64> {
            fractions.iter().filter(|r| r.set == set).map(|r| r.epistemic_mean).collect()
        };
        let mut non_increasing = reports.len() >= 2;
        let mut monotone = reports.len() >= 2;
        for set in TEST_SETS {
            let t = trend(set);
            if t.len() != reports.len() {
                non_increasing = false;
                monotone = false;
                continue;
            }
            non_increasing &= t.len() >= 2 && t[t.len() - 1] <= t[0];
            monotone &= t.windows(2).all(|w| w[1] <= w[0]);
        }
        let aleatoric_distance_ratio = match (last.summary("uncertain", "aleatoric"), last.summary("baseline", "aleatoric")) {
            (Some(u), Some(b)) => Some(u.distance.mean / b.distance.mean),
            _ => None,
        };

        Self {
            seed,
            distance_units: last.distance_units.into(),
            uncertainty_units: UNCERTAINTY_UNITS.into(),
            table1,
            fractions,
            boxplots,
            orderings: Orderings {
                aleatoric_above_control,
                epistemic_above_control,
                epistemic_non_increasing: non_increasing,
                epistemic_monotone: monotone,
                aleatoric_distance_ratio,
            },
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput {
                path: path.into(),
                hint: "run `probshape report` first".into(),
            });
        }
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Writes `summary.json`, `table1.csv`, `table2.csv` and `boxplot.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join("summary.json"), &self.to_json())?;
        write_text(&dir.join("table1.csv"), &to_csv(&self.table1))?;
        write_text(&dir.join("boxplot.csv"), &to_csv(&self.boxplots))?;
        let mut t2 = String::from("set");
        let fracs: Vec<f64> = {
            let mut v: Vec<f64> = self.fractions.iter().map(|r| r.fraction).collect();
            v.dedup();
            v
        };
        for f in &fracs {
            write!(t2, ",{}", fraction_label(*f)).unwrap();
        }
        t2.push('\n');
        for set in TEST_SETS {
            t2.push_str(set);
            for f in &fracs {
                let v = self.fractions.iter().find(|r| r.set == set && r.fraction == *f);
                match v {
                    Some(r) => write!(t2, ",{}", r.epistemic_mean).unwrap(),
                    None => t2.push(','),
                }
            }
            t2.push('\n');
        }
        write_text(&dir.join("table2.csv"), &t2)
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}
