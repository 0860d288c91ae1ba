//! Multi-environment observational data and its CSV form.
//!
//! The CSV layout is one row per unit with header `env,t,y,x0,…,x{d-1}`,
//! where `env` is a 0-based environment index and `t` is 0 or 1. Numbers are
//! written with Rust's shortest round-trip decimal formatting, so a
//! write/read cycle reproduces every value exactly.

use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::subset::SubsetMask;

/// Minimum number of rows per environment.
pub const MIN_ROWS: usize = 4;

/// One environment: covariates `x` (n×d), binary treatment `t` and outcome `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub x: Array2<f64>,
    pub t: Array1<f64>,
    pub y: Array1<f64>,
}

impl Environment {
    /// Checks shapes, finiteness and that `t` is binary.
    pub fn new(x: Array2<f64>, t: Array1<f64>, y: Array1<f64>) -> Result<Self> {
        let n = x.nrows();
        if t.len() != n || y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "x has {n} rows, t has {}, y has {}",
                t.len(),
                y.len()
            )));
        }
        if let Some(v) = t.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::InvalidInput(format!("treatment value {v} is not 0 or 1")));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite covariate or outcome".into()));
        }
        Ok(Self { x, t, y })
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn treated_count(&self) -> usize {
        self.t.iter().filter(|&&v| v == 1.0).count()
    }

    /// Covariate columns restricted to `subset`.
    pub fn columns(&self, subset: &SubsetMask) -> Array2<f64> {
        self.x.select(Axis(1), subset.indices())
    }

    /// Row indices whose treatment equals `arm`.
    pub fn arm_rows(&self, arm: u8) -> Vec<usize> {
        let target = f64::from(arm);
        (0..self.n()).filter(|&i| self.t[i] == target).collect()
    }
}

/// Data from several environments sharing the same covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiEnvDataset {
    envs: Vec<Environment>,
    covariate_names: Vec<String>,
}

impl MultiEnvDataset {
    pub fn new(envs: Vec<Environment>, covariate_names: Vec<String>) -> Result<Self> {
        if envs.is_empty() {
            return Err(Error::InvalidInput("dataset has no environments".into()));
        }
        let d = covariate_names.len();
        for (e, env) in envs.iter().enumerate() {
            if env.d() != d {
                return Err(Error::DimensionMismatch(format!(
                    "environment {e} has {} covariates, expected {d}",
                    env.d()
                )));
            }
            if env.n() < MIN_ROWS {
                return Err(Error::InvalidInput(format!(
                    "environment {e} has {} rows, at least {MIN_ROWS} are needed",
                    env.n()
                )));
            }
        }
        Ok(Self {
            envs,
            covariate_names,
        })
    }

    /// Builds a dataset with default column names `x0..x{d-1}`.
    pub fn from_envs(envs: Vec<Environment>) -> Result<Self> {
        let d = envs.first().map_or(0, Environment::d);
        Self::new(envs, default_names(d))
    }

    pub fn envs(&self) -> &[Environment] {
        &self.envs
    }

    pub fn env(&self, e: usize) -> &Environment {
        &self.envs[e]
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn d(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn total_rows(&self) -> usize {
        self.envs.iter().map(Environment::n).sum()
    }

    /// Selection needs heterogeneity, which a single environment cannot show.
    pub fn require_multi_env(&self) -> Result<()> {
        if self.n_envs() < 2 {
            return Err(Error::InvalidInput(format!(
                "invariance-based selection needs data collected under at least 2 different \
                 environments, got {}",
                self.n_envs()
            )));
        }
        Ok(())
    }

    /// All environments stacked in index order.
    pub fn pooled(&self) -> Environment {
        let n = self.total_rows();
        let d = self.d();
        let mut x = Array2::zeros((n, d));
        let mut t = Array1::zeros(n);
        let mut y = Array1::zeros(n);
        let mut offset = 0;
        for env in &self.envs {
            let m = env.n();
            x.slice_mut(s![offset..offset + m, ..]).assign(&env.x);
            t.slice_mut(s![offset..offset + m]).assign(&env.t);
            y.slice_mut(s![offset..offset + m]).assign(&env.y);
            offset += m;
        }
        Environment { x, t, y }
    }

    /// Pooled covariates restricted to `subset`.
    pub fn pooled_columns(&self, subset: &SubsetMask) -> Array2<f64> {
        let views: Vec<ArrayView2<f64>> = self.envs.iter().map(|e| e.x.view()).collect();
        ndarray::concatenate(Axis(0), &views)
            .expect("environments share d")
            .select(Axis(1), subset.indices())
    }

    /// Same data with environments reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let envs = order
            .iter()
            .map(|&e| {
                self.envs.get(e).cloned().ok_or_else(|| {
                    Error::InvalidInput(format!("environment {e} does not exist"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(envs, self.covariate_names.clone())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("env,t,y");
        for j in 0..self.d() {
            header.push_str(&format!(",x{j}"));
        }
        writeln!(out, "{header}")?;
        for (e, env) in self.envs.iter().enumerate() {
            for i in 0..env.n() {
                let mut line = format!("{e},{},{}", env.t[i] as u8, env.y[i]);
                for v in env.x.row(i) {
                    line.push(',');
                    line.push_str(&v.to_string());
                }
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Parses the CSV layout. Environment ids must cover `0..E` without gaps.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(input);
        let header = reader.headers().map_err(csv_error)?.clone();
        let d = check_header(&header)?;

        let mut rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(csv_error)?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != d + 3 {
                return Err(Error::Parse {
                    line,
                    column: "*".into(),
                    message: format!("expected {} fields, found {}", d + 3, record.len()),
                });
            }
            let env: usize = record[0].trim().parse().map_err(|_| Error::Parse {
                line,
                column: "env".into(),
                message: format!("'{}' is not a non-negative integer", &record[0]),
            })?;
            let t = match record[1].trim() {
                "0" | "0.0" => 0.0,
                "1" | "1.0" => 1.0,
                other => {
                    return Err(Error::Parse {
                        line,
                        column: "t".into(),
                        message: format!("'{other}' is not a binary treatment"),
                    })
                }
            };
            let y = parse_float(&record[2], line, "y")?;
            if env >= rows.len() {
                rows.resize_with(env + 1, Default::default);
            }
            let slot = &mut rows[env];
            slot.1.push(t);
            slot.2.push(y);
            for j in 0..d {
                let v = parse_float(&record[j + 3], line, &format!("x{j}"))?;
                slot.0.push(v);
            }
        }
        if rows.is_empty() {
            return Err(Error::InvalidInput("CSV contains no data rows".into()));
        }
        let mut envs = Vec::with_capacity(rows.len());
        for (e, (xs, t, y)) in rows.into_iter().enumerate() {
            if t.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "environment ids must be contiguous from 0; environment {e} has no rows"
                )));
            }
            let n = t.len();
            let x = Array2::from_shape_vec((n, d), xs).expect("row-major fill");
            envs.push(Environment::new(x, Array1::from(t), Array1::from(y))?);
        }
        Self::new(envs, default_names(d))
    }
}

pub(crate) fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

fn check_header(header: &csv::StringRecord) -> Result<usize> {
    let fields: Vec<&str> = header.iter().collect();
    let bad = |message: String| Error::Parse {
        line: 1,
        column: "header".into(),
        message,
    };
    if fields.len() < 3 || fields[..3] != ["env", "t", "y"] {
        return Err(bad(format!(
            "header must start with env,t,y; found '{}'",
            fields.join(",")
        )));
    }
    for (j, name) in fields[3..].iter().enumerate() {
        if *name != format!("x{j}") {
            return Err(bad(format!("expected column x{j}, found '{name}'")));
        }
    }
    Ok(fields.len() - 3)
}

fn parse_float(raw: &str, line: u64, column: &str) -> Result<f64> {
    let err = |message: String| Error::Parse {
        line,
        column: column.to_string(),
        message,
    };
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| err(format!("'{raw}' is not a number")))?;
    if !v.is_finite() {
        return Err(err(format!("'{raw}' is not finite")));
    }
    Ok(v)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        column: "*".into(),
        message: e.to_string(),
    }
}
