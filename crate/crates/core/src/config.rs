//! JSON experiment configs.
//!
//! One document per run. Unknown keys are rejected and relative paths are
//! resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::effective::CellOptions;
use crate::error::{Error, Result};
use crate::experiments::{Source, SweepConfig};
use crate::fields::{RandomFieldKind, RandomFieldSpec, TorusField};
use crate::io::Matrix;
use crate::kernels::{Kernel, KernelModel, Modulation, PairRule, PairTable};

/// Derived seed of an independent `μ` factor.
const INDEPENDENT_SEED_MIX: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    P1,
    P2,
    Q1,
    Q2,
    Nonsym,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineSpec {
    pub mean: f64,
    pub amplitude: f64,
    pub n: usize,
}

/// A periodic scalar field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    /// Cell values of a 1-d field.
    Values(Vec<f64>),
    /// Rows of a 2-d field.
    Rows(Vec<Vec<f64>>),
    File { file: PathBuf },
    Constant { constant: f64 },
    /// `mean + amplitude · cos 2πξ₀` sampled at `n` cells per axis.
    Cosine { cosine: CosineSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineSumSpec {
    pub c: f64,
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

/// A periodic pair table `Λ(ξ, η)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TableSpec {
    /// `N × N` values of a 1-d table.
    Rows(Vec<Vec<f64>>),
    File { file: PathBuf },
    Constant { constant: f64 },
    /// `c + a sin 2πξ₀ + b sin 2πη₀`.
    SineSum { sine_sum: SineSumSpec },
    /// `mean + amplitude · cos 2π(ξ₀ - η₀)`.
    CosineDifference { cosine_difference: CosineSpec },
    /// `f(ξ) g(η)`.
    Product { product: (FieldSpec, FieldSpec) },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModulationSpec {
    Constant(f64),
    /// `base + exp(-|x - y|)`.
    ExpDecay(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerboardSpec {
    pub states: Vec<f64>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub cell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RandomSpec {
    Checkerboard(CheckerboardSpec),
    /// Profile on the environment torus `T²`.
    Rotation(FieldSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleSpec {
    /// `g(ω₁) g(ω₂)`, `g = mean + ½ amplitude (cos 2πω⁽⁰⁾ + cos 2πω⁽¹⁾)`.
    CosineProduct { mean: f64, amplitude: f64 },
    /// `c + amplitude · sin 2πω₁⁽⁰⁾ sin 2πω₂⁽⁰⁾`.
    SinePerturbation { c: f64, amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceSpec {
    File { file: PathBuf },
    Inline(Source),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsSpec {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub images: Option<usize>,
    #[serde(default)]
    pub shift: Option<f64>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn dim_default() -> usize {
    1
}
fn cells_default() -> usize {
    16
}
fn near_default() -> f64 {
    crate::operator::DEFAULT_NEAR_CELLS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: Case,
    #[serde(default = "dim_default")]
    pub dim: usize,
    pub alpha: f64,
    pub gamma: f64,
    /// `λ` of p1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<FieldSpec>,
    /// `μ` of p1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<FieldSpec>,
    /// Periodic table of p2 and nonsym.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableSpec>,
    /// Declared Lipschitz bound of a nonsym table; the discrete quotient when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<ModulationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_field: Option<RandomSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_field: Option<RandomSpec>,
    /// q1: drive both factors with the same randomness.
    #[serde(default)]
    pub coupled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleSpec>,
    #[serde(default = "one")]
    pub m: f64,
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<EpsSpec>,
    #[serde(default = "two")]
    pub half_width: f64,
    #[serde(default = "cells_default")]
    pub cells_per_eps: usize,
    #[serde(default = "near_default")]
    pub near_cells: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<SourceSpec>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<CellSpec>,
    /// Overrides the effective kernel scale in sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_eff: Option<f64>,
    /// Side of the averaging box of `ergodic`.
    #[serde(default = "one")]
    pub box_side: f64,
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads a config and resolves its paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_field = |f: &mut FieldSpec| {
            if let FieldSpec::File { file } = f {
                fix(file);
            }
        };
        for f in [&mut self.lambda, &mut self.mu].into_iter().flatten() {
            fix_field(f);
        }
        for r in [&mut self.lambda_field, &mut self.mu_field].into_iter().flatten() {
            if let RandomSpec::Rotation(f) = r {
                fix_field(f);
            }
        }
        match &mut self.table {
            Some(TableSpec::File { file }) => fix(file),
            Some(TableSpec::Product { product }) => {
                fix_field(&mut product.0);
                fix_field(&mut product.1);
            }
            _ => {}
        }
        if let Some(SourceSpec::File { file }) = &mut self.f {
            fix(file);
        }
        if let Some(out) = &mut self.out {
            fix(out);
        }
    }

    /// The ε list (empty when absent).
    pub fn eps_list(&self) -> Vec<f64> {
        match &self.eps {
            None => Vec::new(),
            Some(EpsSpec::One(e)) => vec![*e],
            Some(EpsSpec::Many(v)) => v.clone(),
        }
    }

    pub fn first_seed(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    pub fn cell_options(&self) -> CellOptions {
        let mut o = CellOptions::default();
        if let Some(c) = &self.cell {
            o.n = c.n.or(o.n);
            o.images = c.images.unwrap_or(o.images);
            o.shift = c.shift.or(o.shift);
            o.tol = c.tol.unwrap_or(o.tol);
            o.max_iter = c.max_iter.unwrap_or(o.max_iter);
        }
        o
    }

    fn field(&self, spec: &FieldSpec, dim: usize) -> Result<TorusField> {
        match spec {
            FieldSpec::Values(v) => {
                if dim != 1 {
                    return Err(Error::Config("a flat value list describes a 1-d field".into()));
                }
                TorusField::from_samples(1, v.len(), v.clone())
            }
            FieldSpec::Rows(rows) => TorusField::from_matrix(&rows_matrix(rows)?),
            FieldSpec::File { file } => {
                let m = Matrix::read(file)?;
                if dim == 1 && m.rows != 1 {
                    return Err(Error::Config(format!(
                        "{}: a 1-d field is a single row, found {} rows",
                        file.display(),
                        m.rows
                    )));
                }
                TorusField::from_matrix(&m)
            }
            FieldSpec::Constant { constant } => TorusField::constant(dim, 1, *constant),
            FieldSpec::Cosine { cosine } => {
                let CosineSpec { mean, amplitude, n } = *cosine;
                TorusField::from_fn(dim, n, |x| mean + amplitude * (2.0 * std::f64::consts::PI * x[0]).cos())
            }
        }
    }

    fn pair_table(&self, spec: &TableSpec) -> Result<PairTable> {
        let d = self.dim;
        let tau = 2.0 * std::f64::consts::PI;
        match spec {
            TableSpec::Rows(rows) => PairTable::from_matrix(d, &rows_matrix(rows)?),
            TableSpec::File { file } => PairTable::from_matrix(d, &Matrix::read(file)?),
            TableSpec::Constant { constant } => PairTable::constant(d, *constant),
            TableSpec::SineSum { sine_sum } => {
                let SineSumSpec { c, a, b, n } = *sine_sum;
                PairTable::from_fn(d, n, |x, y| c + a * (tau * x[0]).sin() + b * (tau * y[0]).sin())
            }
            TableSpec::CosineDifference { cosine_difference } => {
                let CosineSpec { mean, amplitude, n } = *cosine_difference;
                PairTable::from_fn(d, n, |x, y| mean + amplitude * (tau * (x[0] - y[0])).cos())
            }
            TableSpec::Product { product } => PairTable::product(&self.field(&product.0, d)?, &self.field(&product.1, d)?),
        }
    }

    fn random(&self, spec: &RandomSpec, seed: u64) -> Result<RandomFieldSpec> {
        let kind = match spec {
            RandomSpec::Checkerboard(c) => RandomFieldKind::Checkerboard {
                states: c.states.clone(),
                weights: c.weights.clone(),
                cell: c.cell,
            },
            RandomSpec::Rotation(f) => RandomFieldKind::TorusRotation {
                profile: self.field(f, 2)?,
            },
        };
        let spec = RandomFieldSpec { kind, seed };
        spec.validate()?;
        Ok(spec)
    }

    fn modulation(&self) -> Modulation {
        match self.modulation {
            None => Modulation::constant(1.0),
            Some(ModulationSpec::Constant(c)) => Modulation::constant(c),
            Some(ModulationSpec::ExpDecay(b)) => Modulation::exp_decay(b),
        }
    }

    /// Builds the kernel model named by `case`.
    pub fn model(&self) -> Result<KernelModel> {
        let need = |what: &str| Error::Config(format!("case {:?} needs the key {what:?}", self.case));
        let seed = self.first_seed();
        Ok(match self.case {
            Case::P1 => KernelModel::P1 {
                lambda: self.field(self.lambda.as_ref().ok_or_else(|| need("lambda"))?, self.dim)?,
                mu: self.field(self.mu.as_ref().ok_or_else(|| need("mu"))?, self.dim)?,
            },
            Case::P2 => KernelModel::P2 {
                modulation: self.modulation(),
                table: self.pair_table(self.table.as_ref().ok_or_else(|| need("table"))?)?,
            },
            Case::Q1 => {
                let mu_seed = if self.coupled { seed } else { seed ^ INDEPENDENT_SEED_MIX };
                KernelModel::Q1 {
                    lambda: self.random(self.lambda_field.as_ref().ok_or_else(|| need("lambda_field"))?, seed)?,
                    mu: self.random(self.mu_field.as_ref().ok_or_else(|| need("mu_field"))?, mu_seed)?,
                }
            }
            Case::Q2 => {
                let rule = match self.rule.as_ref().ok_or_else(|| need("rule"))? {
                    RuleSpec::CosineProduct { mean, amplitude } => PairRule::cosine_product(*mean, *amplitude),
                    RuleSpec::SinePerturbation { c, amplitude } => PairRule::sine_perturbation(*c, *amplitude),
                };
                KernelModel::Q2 {
                    modulation: self.modulation(),
                    rule,
                    seed,
                }
            }
            Case::Nonsym => {
                let table = self.pair_table(self.table.as_ref().ok_or_else(|| need("table"))?)?;
                let lipschitz = self.lipschitz.unwrap_or_else(|| table.lipschitz_quotient());
                KernelModel::NonSym { table, lipschitz }
            }
        })
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::new(self.model()?, self.dim, self.alpha, self.gamma)
    }

    pub fn source(&self) -> Result<Source> {
        match self.f.as_ref().ok_or_else(|| Error::Config("the key \"f\" is required".into()))? {
            SourceSpec::Inline(s) => Ok(s.clone()),
            SourceSpec::File { file } => Ok(Source::Samples(Matrix::read(file)?.data)),
        }
    }

    pub fn sweep(&self) -> Result<SweepConfig> {
        let eps = self.eps_list();
        if eps.is_empty() {
            return Err(Error::Config("the key \"eps\" is required".into()));
        }
        let mut s = SweepConfig::new(self.kernel()?, self.source()?, eps);
        s.m = self.m;
        s.p = self.p;
        s.half_width = self.half_width;
        s.cells_per_eps = self.cells_per_eps;
        s.near_cells = self.near_cells;
        s.seeds = if self.seeds.is_empty() { vec![0] } else { self.seeds.clone() };
        s.tol = self.tol;
        s.cell = self.cell_options();
        s.lambda_eff = self.lambda_eff;
        s.record_wall_time = self.record_wall_time;
        s.validate()?;
        Ok(s)
    }
}

fn rows_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config("table rows have different lengths".into()));
    }
    Matrix::new(rows.len(), cols, rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys() {
        let e = ExperimentConfig::parse(r#"{"case":"p1","alpha":0.5,"gamma":3,"bogus":1}"#).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("bogus"));
    }

    #[test]
    fn p1_config_builds_a_kernel() {
        let c = ExperimentConfig::parse(
            r#"{"case":"p1","alpha":0.5,"gamma":3,"lambda":[1,0.3333333333333333],"mu":[1,3],
                "eps":[0.5,0.25],"f":{"bump":{"radius":1,"amplitude":1}}}"#,
        )
        .unwrap();
        assert_eq!(c.m, 1.0);
        assert_eq!(c.p, 2.0);
        let k = c.kernel().unwrap();
        assert_eq!(k.model().case_name(), "p1");
        let s = c.sweep().unwrap();
        assert_eq!(s.eps, vec![0.5, 0.25]);
    }

    #[test]
    fn missing_pieces_are_config_errors() {
        let c = ExperimentConfig::parse(r#"{"case":"nonsym","alpha":0.5,"gamma":3}"#).unwrap();
        assert!(matches!(c.kernel(), Err(Error::Config(_))));
        let c = ExperimentConfig::parse(r#"{"case":"p1","alpha":0.5,"gamma":3,"lambda":[1],"mu":[1]}"#).unwrap();
        assert!(matches!(c.sweep(), Err(Error::Config(_))));
    }

    #[test]
    fn paths_resolve_against_the_config_directory() {
        let mut c = ExperimentConfig::parse(
            r#"{"case":"p1","alpha":0.5,"gamma":3,"lambda":{"file":"l.txt"},"mu":{"file":"/abs/m.txt"}}"#,
        )
        .unwrap();
        c.resolve_paths(Path::new("/cfg/dir"));
        assert_eq!(c.lambda, Some(FieldSpec::File { file: "/cfg/dir/l.txt".into() }));
        assert_eq!(c.mu, Some(FieldSpec::File { file: "/abs/m.txt".into() }));
    }

    #[test]
    fn q1_seeds_follow_coupling() {
        let text = r#"{"case":"q1","alpha":0.5,"gamma":3,"seeds":[5],
            "lambda_field":{"checkerboard":{"states":[1,2]}},"mu_field":{"checkerboard":{"states":[1,3]}}}"#;
        let c = ExperimentConfig::parse(text).unwrap();
        match c.model().unwrap() {
            KernelModel::Q1 { lambda, mu } => assert_ne!(lambda.seed, mu.seed),
            _ => unreachable!(),
        }
        let mut c = c;
        c.coupled = true;
        match c.model().unwrap() {
            KernelModel::Q1 { lambda, mu } => assert_eq!(lambda.seed, mu.seed),
            _ => unreachable!(),
        }
    }
}
