//! JSON model files and CSV sequence/table files.
//!
//! Model files are one JSON object tagged by `"family"`
//! (`hmm`, `lgssm`, `ssm_continuous`, `ssm_discrete`) with matrices stored
//! as row-major nested arrays. Sequence CSVs hold one row per time step:
//! a bare integer column for symbols, or a header `y0..y{p-1}` optionally
//! followed by `x0..x{d-1}` for continuous observations and inputs.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows};
use crate::model::{
    ContinuousSsmParams, DiscreteSsmParams, DiscretizationRule, Emission, HmmParams,
    InputSequence, LgssmParams, ObservationSequence,
};

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Hmm(HmmParams),
    Lgssm(LgssmParams),
    Continuous(ContinuousSsmParams),
    Discrete(DiscreteSsmParams),
}

impl Model {
    pub fn family_name(&self) -> &'static str {
        match self {
            Model::Hmm(_) => "hmm",
            Model::Lgssm(_) => "lgssm",
            Model::Continuous(_) => "ssm_continuous",
            Model::Discrete(_) => "ssm_discrete",
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.into_model()
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(r)?;
        file.into_model()
    }

    pub fn to_json_string(&self) -> String {
        let file = ModelFile::from_model(self);
        let mut s = serde_json::to_string_pretty(&file).expect("model serialization is infallible");
        s.push('\n');
        s
    }
}

type Rows = Vec<Vec<f64>>;

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum EmissionFile {
    Categorical { probs: Vec<f64> },
    Gaussian { mean: Vec<f64>, cov: Rows },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
enum ModelFile {
    Hmm {
        num_states: usize,
        initial_dist: Vec<f64>,
        transition: Rows,
        emissions: Vec<EmissionFile>,
    },
    Lgssm {
        state_dim: usize,
        input_dim: usize,
        obs_dim: usize,
        #[serde(rename = "A")]
        a: Rows,
        #[serde(rename = "B")]
        b: Rows,
        #[serde(rename = "C")]
        c: Rows,
        #[serde(rename = "Q")]
        q: Rows,
        #[serde(rename = "R")]
        r: Rows,
        init_mean: Vec<f64>,
        init_cov: Rows,
    },
    SsmContinuous {
        state_dim: usize,
        input_dim: usize,
        obs_dim: usize,
        #[serde(rename = "A")]
        a: Rows,
        #[serde(rename = "B")]
        b: Rows,
        #[serde(rename = "C")]
        c: Rows,
        #[serde(rename = "D")]
        d: Rows,
    },
    SsmDiscrete {
        state_dim: usize,
        input_dim: usize,
        obs_dim: usize,
        #[serde(rename = "A_bar")]
        a_bar: Rows,
        #[serde(rename = "B_bar")]
        b_bar: Rows,
        #[serde(rename = "C")]
        c: Rows,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_size: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rule: Option<String>,
    },
}

fn matrix(name: &str, rows: &Rows, nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::Parse(format!(
            "{name} has {} rows, expected {nrows}",
            rows.len()
        )));
    }
    from_rows(rows, ncols).map_err(|e| Error::Parse(format!("{name}: {e}")))
}

fn vector(name: &str, v: &[f64], len: usize) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::Parse(format!(
            "{name} has length {}, expected {len}",
            v.len()
        )));
    }
    Ok(DVector::from_column_slice(v))
}

impl ModelFile {
    fn into_model(self) -> Result<Model> {
        Ok(match self {
            ModelFile::Hmm {
                num_states,
                initial_dist,
                transition,
                emissions,
            } => {
                if initial_dist.len() != num_states {
                    return Err(Error::Parse(format!(
                        "initial_dist has length {}, expected {num_states}",
                        initial_dist.len()
                    )));
                }
                let transition = matrix("transition", &transition, num_states, num_states)?;
                let emissions = emissions
                    .into_iter()
                    .map(|e| match e {
                        EmissionFile::Categorical { probs } => Ok(Emission::Categorical(probs)),
                        EmissionFile::Gaussian { mean, cov } => {
                            let p = mean.len();
                            Ok(Emission::Gaussian {
                                mean: DVector::from_vec(mean),
                                cov: matrix("emission cov", &cov, p, p)?,
                            })
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Model::Hmm(HmmParams {
                    initial: initial_dist,
                    transition,
                    emissions,
                })
            }
            ModelFile::Lgssm {
                state_dim: s,
                input_dim: d,
                obs_dim: p,
                a,
                b,
                c,
                q,
                r,
                init_mean,
                init_cov,
            } => Model::Lgssm(LgssmParams {
                a: matrix("A", &a, s, s)?,
                b: matrix("B", &b, s, d)?,
                c: matrix("C", &c, p, s)?,
                q: matrix("Q", &q, s, s)?,
                r: matrix("R", &r, p, p)?,
                init_mean: vector("init_mean", &init_mean, s)?,
                init_cov: matrix("init_cov", &init_cov, s, s)?,
            }),
            ModelFile::SsmContinuous {
                state_dim: s,
                input_dim: d,
                obs_dim: p,
                a,
                b,
                c,
                d: dm,
            } => Model::Continuous(ContinuousSsmParams {
                a: matrix("A", &a, s, s)?,
                b: matrix("B", &b, s, d)?,
                c: matrix("C", &c, p, s)?,
                d: matrix("D", &dm, p, d)?,
            }),
            ModelFile::SsmDiscrete {
                state_dim: s,
                input_dim: d,
                obs_dim: p,
                a_bar,
                b_bar,
                c,
                step_size,
                rule,
            } => Model::Discrete(DiscreteSsmParams {
                a_bar: matrix("A_bar", &a_bar, s, s)?,
                b_bar: matrix("B_bar", &b_bar, s, d)?,
                c: matrix("C", &c, p, s)?,
                step_size,
                rule: rule.map(|r| r.parse::<DiscretizationRule>()).transpose()?,
            }),
        })
    }

    fn from_model(model: &Model) -> Self {
        match model {
            Model::Hmm(p) => ModelFile::Hmm {
                num_states: p.num_states(),
                initial_dist: p.initial.clone(),
                transition: to_rows(&p.transition),
                emissions: p
                    .emissions
                    .iter()
                    .map(|e| match e {
                        Emission::Categorical(probs) => EmissionFile::Categorical {
                            probs: probs.clone(),
                        },
                        Emission::Gaussian { mean, cov } => EmissionFile::Gaussian {
                            mean: mean.iter().copied().collect(),
                            cov: to_rows(cov),
                        },
                    })
                    .collect(),
            },
            Model::Lgssm(p) => ModelFile::Lgssm {
                state_dim: p.state_dim(),
                input_dim: p.input_dim(),
                obs_dim: p.obs_dim(),
                a: to_rows(&p.a),
                b: to_rows(&p.b),
                c: to_rows(&p.c),
                q: to_rows(&p.q),
                r: to_rows(&p.r),
                init_mean: p.init_mean.iter().copied().collect(),
                init_cov: to_rows(&p.init_cov),
            },
            Model::Continuous(p) => ModelFile::SsmContinuous {
                state_dim: p.a.nrows(),
                input_dim: p.b.ncols(),
                obs_dim: p.c.nrows(),
                a: to_rows(&p.a),
                b: to_rows(&p.b),
                c: to_rows(&p.c),
                d: to_rows(&p.d),
            },
            Model::Discrete(p) => ModelFile::SsmDiscrete {
                state_dim: p.state_dim(),
                input_dim: p.input_dim(),
                obs_dim: p.obs_dim(),
                a_bar: to_rows(&p.a_bar),
                b_bar: to_rows(&p.b_bar),
                c: to_rows(&p.c),
                step_size: p.step_size,
                rule: p.rule.map(|r| r.as_str().to_string()),
            },
        }
    }
}

/// Observations plus (possibly empty) aligned inputs read from one CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceData {
    pub obs: ObservationSequence,
    pub inputs: InputSequence,
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: {field:?} is not a number")))
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r)
}

pub fn read_sequence_csv<R: Read>(r: R) -> Result<SequenceData> {
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for rec in csv_reader(r).records() {
        rows.push(rec?);
    }
    let Some(first) = rows.first() else {
        return Err(Error::Parse("sequence file is empty".into()));
    };
    let has_header = first.iter().any(|f| f.parse::<f64>().is_err());
    let header: Vec<String> = if has_header {
        first.iter().map(str::to_string).collect()
    } else {
        Vec::new()
    };
    let body = if has_header { &rows[1..] } else { &rows[..] };
    let line_of = |i: usize| i + 1 + usize::from(has_header);

    let categorical = !has_header || header == ["y"];
    if categorical {
        if let Some(rec) = body.iter().find(|r| r.len() != 1) {
            return Err(Error::Parse(format!(
                "categorical sequences have one column, found {}",
                rec.len()
            )));
        }
        let symbols = body
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                rec[0].parse::<usize>().map_err(|_| {
                    Error::Parse(format!(
                        "line {}: {:?} is not a symbol index",
                        line_of(i),
                        &rec[0]
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(SequenceData {
            obs: ObservationSequence::Symbols(symbols),
            inputs: InputSequence::empty(),
        });
    }

    let p = header.iter().take_while(|h| h.starts_with('y')).count();
    let d = header.len() - p;
    for (j, name) in header.iter().enumerate() {
        let expected = if j < p {
            format!("y{j}")
        } else {
            format!("x{}", j - p)
        };
        if *name != expected {
            return Err(Error::Parse(format!(
                "header column {j} is {name:?}, expected {expected:?}"
            )));
        }
    }
    if p == 0 {
        return Err(Error::Parse("header names no y columns".into()));
    }
    let mut ys = Vec::with_capacity(body.len());
    let mut xs = Vec::with_capacity(body.len());
    for (i, rec) in body.iter().enumerate() {
        if rec.len() != header.len() {
            return Err(Error::Parse(format!(
                "line {}: {} columns, header has {}",
                line_of(i),
                rec.len(),
                header.len()
            )));
        }
        let vals = rec
            .iter()
            .map(|f| parse_f64(f, line_of(i)))
            .collect::<Result<Vec<_>>>()?;
        ys.push(DVector::from_column_slice(&vals[..p]));
        if d > 0 {
            xs.push(DVector::from_column_slice(&vals[p..]));
        }
    }
    Ok(SequenceData {
        obs: ObservationSequence::vectors(ys)?,
        inputs: if d > 0 {
            InputSequence::new(d, xs)?
        } else {
            InputSequence::empty()
        },
    })
}

pub fn write_sequence_csv<W: Write>(
    mut w: W,
    obs: &ObservationSequence,
    inputs: &InputSequence,
) -> Result<()> {
    match obs {
        ObservationSequence::Symbols(s) => {
            for y in s {
                writeln!(w, "{y}")?;
            }
        }
        ObservationSequence::Vectors(v) => {
            let p = v.first().map_or(0, |y| y.len());
            let d = inputs.dim();
            if d > 0 && inputs.len() != v.len() {
                return Err(Error::Dimension(format!(
                    "{} inputs for {} observations",
                    inputs.len(),
                    v.len()
                )));
            }
            let mut names: Vec<String> = (0..p).map(|j| format!("y{j}")).collect();
            names.extend((0..d).map(|j| format!("x{j}")));
            writeln!(w, "{}", names.join(","))?;
            for (k, y) in v.iter().enumerate() {
                let mut fields: Vec<String> = y.iter().map(|&x| fmt_f64(x)).collect();
                if d > 0 {
                    fields.extend(inputs.items()[k].iter().map(|&x| fmt_f64(x)));
                }
                writeln!(w, "{}", fields.join(","))?;
            }
        }
    }
    Ok(())
}

/// A numeric table with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut records = csv_reader(r).into_records();
        let header = match records.next() {
            Some(rec) => rec?.iter().map(str::to_string).collect::<Vec<_>>(),
            None => return Err(Error::Parse("table is empty".into())),
        };
        let mut table = Table::new(header);
        for (i, rec) in records.enumerate() {
            let rec = rec?;
            if rec.len() != table.header.len() {
                return Err(Error::Parse(format!(
                    "line {}: {} columns, header has {}",
                    i + 2,
                    rec.len(),
                    table.header.len()
                )));
            }
            let row = rec
                .iter()
                .map(|f| parse_f64(f, i + 2))
                .collect::<Result<Vec<_>>>()?;
            table.rows.push(row);
        }
        Ok(table)
    }
}
