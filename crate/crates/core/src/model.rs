//! Normal-behavior model: one ordinary-least-squares fit per embedding
//! dimension against the run workload, with R²-based feature selection.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::embed::{Embedding, FeatureId, FeatureRegistry, Metric};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("degenerate workload: all x values equal")]
    DegenerateWorkload,
    #[error("training corpus needs at least 2 distinct workload values")]
    CorpusTooSmall,
    #[error("embedding length {got} does not match registry length {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("unsupported model file version: {0}")]
    Version(String),
}

/// Goodness of fit. `PerfectConstant` marks a zero-variance feature whose
/// residuals are all zero; a constant is a perfect indicator and is
/// always selected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum R2 {
    Value(f64),
    PerfectConstant,
}

impl fmt::Display for R2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            R2::Value(v) => write!(f, "{v:.17e}"),
            R2::PerfectConstant => f.write_str("CONST"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: R2,
    pub max_abs_residual: f64,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Fits y = slope*x + intercept by ordinary least squares.
pub fn fit_feature(xs: &[f64], ys: &[f64]) -> Result<LinearFit, TrainError> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return Err(TrainError::TooFewObservations(n.min(ys.len())));
    }
    let x0 = xs[0];
    if xs.iter().all(|&x| x == x0) {
        return Err(TrainError::DegenerateWorkload);
    }
    let nf = n as f64;
    let mean_x = xs.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    let mut ss_res = 0.0;
    let mut max_abs_residual = 0.0f64;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - (slope * x + intercept);
        ss_res += r * r;
        max_abs_residual = max_abs_residual.max(r.abs());
    }

    let r2 = if syy == 0.0 {
        // zero-variance feature; OLS residuals are necessarily zero here
        debug_assert_eq!(max_abs_residual, 0.0);
        R2::PerfectConstant
    } else {
        R2::Value((1.0 - ss_res / syy).clamp(0.0, 1.0))
    };

    Ok(LinearFit {
        slope,
        intercept,
        r2,
        max_abs_residual,
    })
}

/// Failure-free training pairs: (workload, embedding).
#[derive(Debug, Clone)]
pub struct TrainingCorpus {
    pub registry: FeatureRegistry,
    pub pairs: Vec<(u64, Embedding)>,
}

impl TrainingCorpus {
    pub fn new(
        registry: FeatureRegistry,
        pairs: Vec<(u64, Embedding)>,
    ) -> Result<Self, TrainError> {
        let distinct: BTreeSet<u64> = pairs.iter().map(|(w, _)| *w).collect();
        if distinct.len() < 2 {
            return Err(TrainError::CorpusTooSmall);
        }
        for (_, e) in &pairs {
            if e.values.len() != registry.len() {
                return Err(TrainError::LengthMismatch {
                    got: e.values.len(),
                    want: registry.len(),
                });
            }
        }
        Ok(TrainingCorpus { registry, pairs })
    }
}

/// Ensemble of per-feature fits plus the selection and the tolerance
/// parameters the online monitor needs.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorModel {
    pub registry: FeatureRegistry,
    /// One fit per registry feature, in registry order.
    pub fits: Vec<LinearFit>,
    /// Indices into the registry of the selected features.
    pub selected: BTreeSet<usize>,
    pub r2_threshold: f64,
    pub tolerance_factor: f64,
    pub absolute_slack: f64,
}

impl BehaviorModel {
    pub fn selected_features(&self) -> impl Iterator<Item = (&FeatureId, &LinearFit)> {
        self.selected
            .iter()
            .map(|&i| (&self.registry.features()[i], &self.fits[i]))
    }

    pub fn is_selected(&self, exe: &str, metric: Metric) -> bool {
        self.registry
            .index_of(exe, metric)
            .map_or(false, |i| self.selected.contains(&i))
    }

    /// Allowed deviation around the prediction for one feature.
    pub fn band(&self, fit: &LinearFit) -> f64 {
        match fit.r2 {
            R2::PerfectConstant => self.absolute_slack,
            R2::Value(_) => self.tolerance_factor * fit.max_abs_residual + self.absolute_slack,
        }
    }
}

/// Fits every registry feature against workload and selects those with
/// r2 >= threshold, plus perfect constants.
pub fn train(
    corpus: &TrainingCorpus,
    r2_threshold: f64,
    tolerance_factor: f64,
    absolute_slack: f64,
) -> Result<BehaviorModel, TrainError> {
    let xs: Vec<f64> = corpus.pairs.iter().map(|(w, _)| *w as f64).collect();
    let mut fits = Vec::with_capacity(corpus.registry.len());
    let mut selected = BTreeSet::new();
    for i in 0..corpus.registry.len() {
        let ys: Vec<f64> = corpus.pairs.iter().map(|(_, e)| e.values[i] as f64).collect();
        let fit = fit_feature(&xs, &ys)?;
        let keep = match fit.r2 {
            R2::PerfectConstant => true,
            R2::Value(v) => v >= r2_threshold,
        };
        if keep {
            selected.insert(i);
        }
        fits.push(fit);
    }
    Ok(BehaviorModel {
        registry: corpus.registry.clone(),
        fits,
        selected,
        r2_threshold,
        tolerance_factor,
        absolute_slack,
    })
}

const MODEL_MAGIC: &str = "graphwatch-model";
const MODEL_VERSION: &str = "1";

fn fmt_real(v: f64) -> String {
    // 18 significant digits: exact f64 round trip
    format!("{v:.17e}")
}

/// Serializes the model as versioned, self-describing text. Reals carry
/// 18 significant digits so load(save(m)) == m bit-for-bit.
pub fn format_model(model: &BehaviorModel) -> String {
    let mut out = String::new();
    out.push_str(&format!("{MODEL_MAGIC} {MODEL_VERSION}\n"));
    out.push_str(&format!("r2_threshold\t{}\n", fmt_real(model.r2_threshold)));
    out.push_str(&format!(
        "tolerance_factor\t{}\n",
        fmt_real(model.tolerance_factor)
    ));
    out.push_str(&format!(
        "absolute_slack\t{}\n",
        fmt_real(model.absolute_slack)
    ));
    out.push_str(&format!("features\t{}\n", model.registry.len()));
    for (i, (feature, fit)) in model.registry.features().iter().zip(&model.fits).enumerate() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            feature.exe,
            feature.metric,
            fmt_real(fit.slope),
            fmt_real(fit.intercept),
            fit.r2,
            fmt_real(fit.max_abs_residual),
            if model.selected.contains(&i) { 1 } else { 0 },
        ));
    }
    out
}

pub fn save_model(model: &BehaviorModel, path: &Path) -> Result<(), TrainError> {
    fs::write(path, format_model(model))?;
    Ok(())
}

pub fn parse_model(text: &str) -> Result<BehaviorModel, TrainError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(TrainError::Format {
        line: 1,
        msg: "empty model file".into(),
    })?;
    let mut hdr = header.split(' ');
    if hdr.next() != Some(MODEL_MAGIC) {
        return Err(TrainError::Format {
            line: 1,
            msg: "not a model file".into(),
        });
    }
    let version = hdr.next().unwrap_or("");
    if version != MODEL_VERSION {
        return Err(TrainError::Version(version.to_string()));
    }

    fn kv_real(line: Option<(usize, &str)>, key: &str) -> Result<f64, TrainError> {
        let (i, l) = line.ok_or(TrainError::Format {
            line: 0,
            msg: format!("missing {key} line"),
        })?;
        let (k, v) = l.split_once('\t').ok_or(TrainError::Format {
            line: i + 1,
            msg: format!("malformed {key} line"),
        })?;
        if k != key {
            return Err(TrainError::Format {
                line: i + 1,
                msg: format!("expected {key}, got {k}"),
            });
        }
        v.parse().map_err(|_| TrainError::Format {
            line: i + 1,
            msg: format!("invalid real for {key}: {v:?}"),
        })
    }

    let r2_threshold = kv_real(lines.next(), "r2_threshold")?;
    let tolerance_factor = kv_real(lines.next(), "tolerance_factor")?;
    let absolute_slack = kv_real(lines.next(), "absolute_slack")?;

    let (i, count_line) = lines.next().ok_or(TrainError::Format {
        line: 5,
        msg: "missing features line".into(),
    })?;
    let n: usize = count_line
        .strip_prefix("features\t")
        .and_then(|v| v.parse().ok())
        .ok_or(TrainError::Format {
            line: i + 1,
            msg: "malformed features line".into(),
        })?;

    let mut exes = Vec::new();
    let mut ids = Vec::new();
    let mut fits = Vec::new();
    let mut selected = BTreeSet::new();
    for idx in 0..n {
        let (li, l) = lines.next().ok_or(TrainError::Format {
            line: i + 2 + idx,
            msg: "truncated feature table".into(),
        })?;
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 7 {
            return Err(TrainError::Format {
                line: li + 1,
                msg: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let bad = |msg: String| TrainError::Format { line: li + 1, msg };
        let exe = fields[0].to_string();
        let metric = Metric::parse(fields[1])
            .ok_or_else(|| bad(format!("unknown metric {:?}", fields[1])))?;
        let slope: f64 = fields[2]
            .parse()
            .map_err(|_| bad(format!("invalid slope {:?}", fields[2])))?;
        let intercept: f64 = fields[3]
            .parse()
            .map_err(|_| bad(format!("invalid intercept {:?}", fields[3])))?;
        let r2 = if fields[4] == "CONST" {
            R2::PerfectConstant
        } else {
            R2::Value(
                fields[4]
                    .parse()
                    .map_err(|_| bad(format!("invalid r2 {:?}", fields[4])))?,
            )
        };
        let max_abs_residual: f64 = fields[5]
            .parse()
            .map_err(|_| bad(format!("invalid max_abs_residual {:?}", fields[5])))?;
        match fields[6] {
            "1" => {
                selected.insert(idx);
            }
            "0" => {}
            other => return Err(bad(format!("invalid selected flag {other:?}"))),
        }
        if metric == Metric::Count {
            exes.push(exe.clone());
        }
        ids.push(FeatureId { exe, metric });
        fits.push(LinearFit {
            slope,
            intercept,
            r2,
            max_abs_residual,
        });
    }

    let registry = FeatureRegistry::from_exes(exes).map_err(|_| TrainError::Format {
        line: i + 1,
        msg: "model file lists no features".into(),
    })?;
    if registry.features() != ids.as_slice() {
        return Err(TrainError::Format {
            line: i + 1,
            msg: "feature table must list both metrics per exe in registry order".into(),
        });
    }
    Ok(BehaviorModel {
        registry,
        fits,
        selected,
        r2_threshold,
        tolerance_factor,
        absolute_slack,
    })
}

pub fn load_model(path: &Path) -> Result<BehaviorModel, TrainError> {
    parse_model(&fs::read_to_string(path)?)
}
