//! Line-delimited JSON records, one prediction per line.
//!
//! | model | fields |
//! |-------|--------|
//! | `gaussian` | `mu`, `sigma`, `y` |
//! | `mv_gaussian` | `mu: [..]`, `cov: [[..]]` (row-major), `y: [..]` |
//! | `particles` | `w: [..]`, `pts: [[..]]`, `y: [..]` |
//! | `parametric` | `family` plus that family's parameters, `y` |
//! | `set_provider` | `levels: [..]`, `lo: [..]`, `hi: [..]`, `y` |
//!
//! Every kind accepts an optional integer time index `t`.

use std::io::BufRead;
use std::sync::Arc;

use calcheck::dist::{
    BuiltinFamily, ModelKind, MvGaussianPrediction, ParametricPrediction, ParticleCloudPrediction, PredictionRecord,
    PredictionSetProvider, PredictiveDistribution, TabulatedIntervals,
};
use serde::Serialize;
use serde_json::{Map, Value};

/// A malformed record, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a Value, String> {
    obj.get(name).ok_or_else(|| format!("missing field `{name}`"))
}

fn num(obj: &Map<String, Value>, name: &str) -> Result<f64, String> {
    field(obj, name)?.as_f64().ok_or_else(|| format!("field `{name}`: expected a number"))
}

fn vector(obj: &Map<String, Value>, name: &str) -> Result<Vec<f64>, String> {
    let arr = field(obj, name)?.as_array().ok_or_else(|| format!("field `{name}`: expected an array of numbers"))?;
    arr.iter().map(|v| v.as_f64().ok_or_else(|| format!("field `{name}`: expected an array of numbers"))).collect()
}

fn matrix(obj: &Map<String, Value>, name: &str) -> Result<Vec<Vec<f64>>, String> {
    let bad = || format!("field `{name}`: expected an array of number arrays");
    let rows = field(obj, name)?.as_array().ok_or_else(bad)?;
    rows.iter().map(|r| r.as_array().ok_or_else(bad)?.iter().map(|v| v.as_f64().ok_or_else(bad)).collect()).collect()
}

fn time_index(obj: &Map<String, Value>) -> Result<Option<i64>, String> {
    match obj.get("t") {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v.as_i64().map(Some).ok_or_else(|| "field `t`: expected an integer".to_string()),
    }
}

fn allow_only(obj: &Map<String, Value>, allowed: &[&str]) -> Result<(), String> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(format!("unknown field `{k}`")),
        None => Ok(()),
    }
}

/// Guesses the model kind from the fields of one record line.
pub fn detect_kind(line: &str) -> Option<ModelKind> {
    let v: Value = serde_json::from_str(line).ok()?;
    let obj = v.as_object()?;
    [
        ("family", ModelKind::Parametric),
        ("cov", ModelKind::MvGaussian),
        ("w", ModelKind::Particles),
        ("levels", ModelKind::SetProvider),
        ("sigma", ModelKind::Gaussian),
    ]
    .into_iter()
    .find(|(k, _)| obj.contains_key(*k))
    .map(|(_, kind)| kind)
}

fn domain(name: &str) -> impl Fn(calcheck::Error) -> String + '_ {
    move |e| format!("field `{name}`: {e}")
}

/// Parses one line as a record of the given kind.
pub fn parse_record(text: &str, kind: ModelKind) -> Result<PredictionRecord, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let t = time_index(obj)?;
    let (prediction, y) = match kind {
        ModelKind::Gaussian => {
            allow_only(obj, &["mu", "sigma", "y", "t"])?;
            let g = calcheck::dist::GaussianPrediction::new(num(obj, "mu")?, num(obj, "sigma")?)
                .map_err(domain("sigma"))?;
            (PredictiveDistribution::Gaussian(g), vec![num(obj, "y")?])
        }
        ModelKind::MvGaussian => {
            allow_only(obj, &["mu", "cov", "y", "t"])?;
            let g = MvGaussianPrediction::new(vector(obj, "mu")?, matrix(obj, "cov")?).map_err(domain("cov"))?;
            (PredictiveDistribution::MvGaussian(g), vector(obj, "y")?)
        }
        ModelKind::Particles => {
            allow_only(obj, &["w", "pts", "y", "t"])?;
            let w = vector(obj, "w")?;
            let pts = matrix(obj, "pts")?;
            if w.len() != pts.len() {
                return Err(format!("field `pts`: {} points for {} weights", pts.len(), w.len()));
            }
            let c = ParticleCloudPrediction::new(w, pts).map_err(domain("w"))?;
            (PredictiveDistribution::Particles(c), vector(obj, "y")?)
        }
        ModelKind::Parametric => {
            let mut params = obj.clone();
            params.remove("y");
            params.remove("t");
            let fam: BuiltinFamily =
                serde_json::from_value(Value::Object(params)).map_err(|e| format!("field `family`: {e}"))?;
            let p = ParametricPrediction::builtin(fam).map_err(domain("family"))?;
            (PredictiveDistribution::Parametric(p), vec![num(obj, "y")?])
        }
        ModelKind::SetProvider => {
            allow_only(obj, &["levels", "lo", "hi", "y", "t"])?;
            let tab = TabulatedIntervals::new(vector(obj, "levels")?, vector(obj, "lo")?, vector(obj, "hi")?)
                .map_err(domain("levels"))?;
            (PredictiveDistribution::SetProvider(PredictionSetProvider::new(Arc::new(tab))), vec![num(obj, "y")?])
        }
    };
    if y.iter().any(|v| !v.is_finite()) {
        return Err("field `y`: non-finite outcome".into());
    }
    PredictionRecord::new(prediction, y, t).map_err(domain("y"))
}

#[derive(Serialize)]
struct GaussianOut {
    mu: f64,
    sigma: f64,
    y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<i64>,
}

#[derive(Serialize)]
struct MvOut {
    mu: Vec<f64>,
    cov: Vec<Vec<f64>>,
    y: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<i64>,
}

#[derive(Serialize)]
struct ParticlesOut {
    w: Vec<f64>,
    pts: Vec<Vec<f64>>,
    y: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<i64>,
}

#[derive(Serialize)]
struct ParametricOut {
    #[serde(flatten)]
    family: BuiltinFamily,
    y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<i64>,
}

#[derive(Serialize)]
struct SetOut<'a> {
    levels: &'a [f64],
    lo: &'a [f64],
    hi: &'a [f64],
    y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<i64>,
}

/// One JSON line (no trailing newline). Closure-backed families and level
/// sets have no serial form.
pub fn emit_record(r: &PredictionRecord) -> Result<String, String> {
    let t = r.time_index;
    let json = match &r.prediction {
        PredictiveDistribution::Gaussian(g) => {
            serde_json::to_string(&GaussianOut { mu: g.mu(), sigma: g.sigma(), y: r.outcome[0], t })
        }
        PredictiveDistribution::MvGaussian(g) => {
            let d = g.dim();
            let cov = (0..d).map(|i| (0..d).map(|j| g.cov()[(i, j)]).collect()).collect();
            serde_json::to_string(&MvOut { mu: g.mu().iter().copied().collect(), cov, y: r.outcome.clone(), t })
        }
        PredictiveDistribution::Particles(c) => serde_json::to_string(&ParticlesOut {
            w: c.weights().to_vec(),
            pts: c.points().map(<[f64]>::to_vec).collect(),
            y: r.outcome.clone(),
            t,
        }),
        PredictiveDistribution::Parametric(p) => {
            let family = p.family().builtin().ok_or("custom families cannot be serialized")?;
            serde_json::to_string(&ParametricOut { family, y: r.outcome[0], t })
        }
        PredictiveDistribution::SetProvider(s) => {
            let tab = s.sets().tabulated().ok_or("closure-backed set providers cannot be serialized")?;
            serde_json::to_string(&SetOut { levels: &tab.levels, lo: &tab.lo, hi: &tab.hi, y: r.outcome[0], t })
        }
    };
    json.map_err(|e| e.to_string())
}

/// Lazily parses a line stream, skipping blank lines. The kind is taken from
/// `kind` or detected on the first record; every record must match the
/// first one's dimension.
pub struct RecordReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    kind: Option<ModelKind>,
    dim: Option<usize>,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R, kind: Option<ModelKind>) -> Self {
        RecordReader { lines: reader.lines(), line_no: 0, kind, dim: None }
    }

    pub fn kind(&self) -> Option<ModelKind> {
        self.kind
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<PredictionRecord, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(RecordError { line: self.line_no, message: format!("read error: {e}") })),
            };
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| RecordError { line: self.line_no, message };
            let kind = match self.kind {
                Some(k) => k,
                None => match detect_kind(&line) {
                    Some(k) => {
                        self.kind = Some(k);
                        k
                    }
                    None => return Some(Err(err("cannot tell the model kind from this record".into()))),
                },
            };
            let rec = match parse_record(&line, kind) {
                Ok(r) => r,
                Err(m) => return Some(Err(err(m))),
            };
            let dim = rec.prediction.dim();
            match self.dim {
                None => self.dim = Some(dim),
                Some(d) if d != dim => {
                    return Some(Err(err(format!("dimension {dim} differs from the first record's {d}"))))
                }
                _ => {}
            }
            return Some(Ok(rec));
        }
    }
}

/// Reads every record; an input with no records is an error.
pub fn parse_records<R: BufRead>(
    reader: R,
    kind: Option<ModelKind>,
) -> Result<(Vec<PredictionRecord>, ModelKind), RecordError> {
    let mut rr = RecordReader::new(reader, kind);
    let records = rr.by_ref().collect::<Result<Vec<_>, _>>()?;
    match (records.is_empty(), rr.kind()) {
        (false, Some(k)) => Ok((records, k)),
        _ => Err(RecordError { line: 0, message: "no records in input".into() }),
    }
}

pub fn emit_records(records: &[PredictionRecord]) -> Result<String, String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&emit_record(r)?);
        out.push('\n');
    }
    Ok(out)
}
