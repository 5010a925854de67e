//! On-disk formats: the layers file, the plan file, the gain report and the
//! per-layer matrix files read by `curvalloc gain`.

use std::collections::HashSet;

use curvalloc::StatsVector;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const TOOL_VERSION: &str = concat!("curvalloc ", env!("CARGO_PKG_VERSION"));

/// Tolerance on `sum(q) == 1` for files that supply normalized scores.
const FILE_SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayersFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default = "one_f64")]
    pub cost: f64,
    #[serde(default = "one_u64")]
    pub size: u64,
}

fn one_f64() -> f64 {
    1.0
}

fn one_u64() -> u64 {
    1
}

impl LayersFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("layers file: {e}")))
    }

    /// Validates the file and converts it to normalized layer statistics.
    pub fn to_stats(&self) -> Result<StatsVector, CliError> {
        if self.layers.is_empty() {
            return Err(CliError::Validation("layers: at least one layer is required".into()));
        }
        let with_gain = self.layers.iter().filter(|l| l.zeta2.is_some()).count();
        let with_q = self.layers.iter().filter(|l| l.q.is_some()).count();
        let n = self.layers.len();
        let ids: Vec<String> = self.layers.iter().map(|l| l.id.clone()).collect();
        let costs: Vec<f64> = self.layers.iter().map(|l| l.cost).collect();
        let sizes: Vec<u64> = self.layers.iter().map(|l| l.size).collect();
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(CliError::Validation(format!("layers: duplicate id {dup:?}")));
        }
        let stats = if with_gain == n && with_q == 0 {
            let z: Vec<f64> = self.layers.iter().map(|l| l.zeta2.unwrap()).collect();
            StatsVector::from_gains(&ids, &z, &costs, &sizes)
        } else if with_q == n && with_gain == 0 {
            let q: Vec<f64> = self.layers.iter().map(|l| l.q.unwrap()).collect();
            if q.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(CliError::Validation("q: scores must be finite and >= 0".into()));
            }
            let total: f64 = q.iter().sum();
            if (total - 1.0).abs() > FILE_SIMPLEX_TOL {
                return Err(CliError::Validation(format!("q: scores must sum to 1 (got {total})")));
            }
            let q: Vec<f64> = q.iter().map(|v| v / total).collect();
            StatsVector::from_parts(&ids, &q, &costs, &sizes)
        } else {
            return Err(CliError::Validation(
                "zeta2/q: every layer must give exactly one of zeta2 or q, and the file must not mix them".into(),
            ));
        };
        stats.map_err(CliError::from_core)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Program {
    Alloc,
    Prune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Residuals {
    pub constraint: f64,
    pub kkt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanLayer {
    pub id: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_status: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<f64>,
}

/// Echo of the inputs that produced a plan. Fields not used by the program
/// are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_cap: Option<f64>,
    pub residual_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub program: Program,
    pub lambda_star: f64,
    pub binding: bool,
    pub iterations: usize,
    pub residuals: Residuals,
    pub layers: Vec<PlanLayer>,
    pub params: PlanParams,
    pub tool_version: String,
}

impl PlanFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("plan file: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainLayer {
    pub id: String,
    pub p: usize,
    pub zeta2: f64,
    pub q: f64,
    pub bias_ratio: f64,
    pub lambda_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainDocument {
    pub tau: f64,
    pub layers: Vec<GainLayer>,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretDocument {
    pub program: Program,
    pub regret: f64,
    pub delta: f64,
    pub sigma: f64,
    pub l_x: f64,
    pub l_xq: f64,
    pub bound: f64,
    pub satisfied: bool,
    pub boundary: bool,
    pub distance: f64,
    pub sensitivity_bound: f64,
    pub tool_version: String,
}

/// Serializes a document with stable field order and a trailing newline.
pub fn to_text<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents contain only finite numbers");
    s.push('\n');
    s
}

/// How the numbers of a matrix-file block are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Vector,
    Dense,
    Diag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixBlock {
    pub id: String,
    pub p: usize,
    pub kind: BlockKind,
    pub values: Vec<f64>,
}

/// Parses a matrix file.
///
/// Each block starts with a header `layer <id> p=<dim> [kind=<dense|diag>]`
/// followed by whitespace-separated numbers in row-major order: `p` values for
/// a gradient (no `kind`) or a diagonal, `p*p` for a dense matrix. Blank lines
/// and lines starting with `#` are ignored.
pub fn parse_matrix_file(text: &str) -> Result<Vec<MatrixBlock>, CliError> {
    let mut blocks: Vec<MatrixBlock> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = |msg: String| CliError::Validation(format!("line {}: {msg}", lineno + 1));
        if let Some(rest) = line.strip_prefix("layer ") {
            let mut parts = rest.split_whitespace();
            let id = parts.next().ok_or_else(|| at("missing layer id".into()))?.to_string();
            let mut p = None;
            let mut kind = BlockKind::Vector;
            for tok in parts {
                if let Some(v) = tok.strip_prefix("p=") {
                    p = Some(v.parse::<usize>().map_err(|_| at(format!("bad dimension {v:?}")))?);
                } else if let Some(v) = tok.strip_prefix("kind=") {
                    kind = match v {
                        "dense" => BlockKind::Dense,
                        "diag" => BlockKind::Diag,
                        other => return Err(at(format!("unknown kind {other:?}"))),
                    };
                } else {
                    return Err(at(format!("unexpected token {tok:?}")));
                }
            }
            let p = p.ok_or_else(|| at("missing p=<dim>".into()))?;
            if p == 0 {
                return Err(at("p must be >= 1".into()));
            }
            if blocks.iter().any(|b| b.id == id) {
                return Err(at(format!("duplicate layer {id:?}")));
            }
            blocks.push(MatrixBlock {
                id,
                p,
                kind,
                values: Vec::new(),
            });
            continue;
        }
        let block = blocks
            .last_mut()
            .ok_or_else(|| at("numbers before the first `layer` header".into()))?;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| at(format!("bad number {tok:?}")))?;
            block.values.push(v);
        }
    }
    for b in &blocks {
        let expect = match b.kind {
            BlockKind::Vector | BlockKind::Diag => b.p,
            BlockKind::Dense => b.p * b.p,
        };
        if b.values.len() != expect {
            return Err(CliError::Validation(format!(
                "layer {}: expected {expect} numbers, found {}",
                b.id,
                b.values.len()
            )));
        }
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_defaults_and_normalization() {
        let f = LayersFile::parse(r#"{"layers":[{"id":"a","zeta2":3},{"id":"b","zeta2":1,"cost":2,"size":7}]}"#).unwrap();
        let s = f.to_stats().unwrap();
        assert_eq!(s.scores(), vec![0.75, 0.25]);
        assert_eq!(s.costs(), vec![1.0, 2.0]);
        assert_eq!(s.sizes(), vec![1.0, 7.0]);
    }

    #[test]
    fn layers_q_renormalized() {
        let f = LayersFile::parse(r#"{"tau":0.01,"layers":[{"id":"a","q":0.5000004},{"id":"b","q":0.5}]}"#).unwrap();
        let s = f.to_stats().unwrap();
        assert!((s.scores().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let bad = LayersFile::parse(r#"{"layers":[{"id":"a","q":0.6},{"id":"b","q":0.5}]}"#).unwrap();
        assert!(bad.to_stats().is_err());
    }

    #[test]
    fn layers_rejections() {
        for text in [
            r#"{"layers":[]}"#,
            r#"{"layers":[{"id":"a","q":0.5},{"id":"b","zeta2":1}]}"#,
            r#"{"layers":[{"id":"a","q":0.5,"zeta2":1}]}"#,
            r#"{"layers":[{"id":"a"}]}"#,
            r#"{"layers":[{"id":"a","zeta2":1},{"id":"a","zeta2":1}]}"#,
            r#"{"layers":[{"id":"a","zeta2":1,"cost":0}]}"#,
            r#"{"layers":[{"id":"a","zeta2":0}]}"#,
        ] {
            let r = LayersFile::parse(text).and_then(|f| f.to_stats());
            assert!(matches!(r, Err(CliError::Validation(_))), "{text}");
        }
        assert!(LayersFile::parse(r#"{"layers":[{"id":"a","zeta":1}]}"#).is_err());
        assert!(LayersFile::parse("not json").is_err());
    }

    #[test]
    fn matrix_file_parse() {
        let text = "# grads\nlayer a p=2\n1 2\nlayer b p=2 kind=dense\n2 1\n1 2\nlayer c p=3 kind=diag\n1 2 3\n";
        let blocks = parse_matrix_file(text).unwrap();
        assert_eq!(blocks.len(), 3);
        assert_eq!(blocks[0].kind, BlockKind::Vector);
        assert_eq!(blocks[1].values, vec![2.0, 1.0, 1.0, 2.0]);
        assert_eq!(blocks[2].kind, BlockKind::Diag);
    }

    #[test]
    fn matrix_file_errors() {
        for text in [
            "1 2\n",
            "layer a\n1\n",
            "layer a p=2\n1\n",
            "layer a p=2 kind=sparse\n1 2\n",
            "layer a p=1\n1\nlayer a p=1\n2\n",
            "layer a p=1\nx\n",
            "layer a p=0\n",
        ] {
            assert!(parse_matrix_file(text).is_err(), "{text}");
        }
    }
}
