//! Observational examples and their CSV form.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    /// Received no incentive.
    Blank,
    Treated,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Blank => "blank",
            Group::Treated => "treated",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blank" => Ok(Group::Blank),
            "treated" => Ok(Group::Treated),
            other => Err(Error::Validation(format!("unknown group `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: u64,
    pub x: Vec<f64>,
    pub t: f64,
    pub attendance: bool,
    pub orders: f64,
    pub group: Group,
}

impl Example {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Validation(format!("example {}: {msg}", self.id)));
        if self.x.iter().any(|v| !v.is_finite()) || !self.t.is_finite() || !self.orders.is_finite() {
            return bad("non-finite value");
        }
        if self.t < 0.0 {
            return bad("negative treatment");
        }
        if self.orders < 0.0 {
            return bad("negative orders");
        }
        if self.group == Group::Blank && self.t != 0.0 {
            return bad("blank example with non-zero treatment");
        }
        if !self.attendance && self.orders != 0.0 {
            return bad("orders recorded without attendance");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    feature_dim: usize,
    examples: Vec<Example>,
}

impl Dataset {
    pub fn new(feature_dim: usize, examples: Vec<Example>) -> Result<Self> {
        for e in &examples {
            if e.x.len() != feature_dim {
                return Err(Error::Validation(format!(
                    "example {} has {} features, expected {feature_dim}",
                    e.id,
                    e.x.len()
                )));
            }
            e.validate()?;
        }
        Ok(Self { feature_dim, examples })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn count(&self, group: Group) -> usize {
        self.examples.iter().filter(|e| e.group == group).count()
    }

    pub fn subset(&self, group: Group) -> Dataset {
        Dataset {
            feature_dim: self.feature_dim,
            examples: self.examples.iter().filter(|e| e.group == group).cloned().collect(),
        }
    }

    pub fn max_treatment(&self) -> f64 {
        self.examples.iter().map(|e| e.t).fold(0.0, f64::max)
    }

    /// Row-stacked features of the selected examples.
    pub fn features(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.feature_dim);
        for &i in idx {
            data.extend_from_slice(&self.examples[i].x);
        }
        Tensor::new(idx.len(), self.feature_dim, data).expect("rows have feature_dim values")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string()];
        header.extend((0..self.feature_dim).map(|j| format!("x_{j}")));
        header.extend(["t", "attendance", "orders", "group"].map(String::from));
        out.write_record(&header).map_err(csv_err)?;
        for e in &self.examples {
            let mut rec = vec![e.id.to_string()];
            rec.extend(e.x.iter().map(|v| v.to_string()));
            rec.push(e.t.to_string());
            rec.push(u8::from(e.attendance).to_string());
            rec.push(e.orders.to_string());
            rec.push(e.group.to_string());
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, origin: &str) -> Result<Self> {
        let parse_err = |line: u64, message: String| Error::Parse {
            path: origin.to_string(),
            message: format!("line {line}: {message}"),
        };
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 5 || cols[0] != "id" || cols[cols.len() - 4..] != ["t", "attendance", "orders", "group"] {
            return Err(parse_err(1, "expected header id,x_0..,t,attendance,orders,group".into()));
        }
        let d = cols.len() - 5;
        for (j, c) in cols[1..=d].iter().enumerate() {
            if *c != format!("x_{j}") {
                return Err(parse_err(1, format!("expected column x_{j}, found `{c}`")));
            }
        }
        let mut examples = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let line = k as u64 + 2;
            let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| parse_err(line, format!("column `{}`: {e}", cols[i])))
            };
            let id = rec[0].parse::<u64>().map_err(|e| parse_err(line, format!("id: {e}")))?;
            let x = (1..=d).map(num).collect::<Result<Vec<_>>>()?;
            let attendance = match &rec[d + 2] {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(line, format!("attendance must be 0 or 1, got `{other}`"))),
            };
            examples.push(Example {
                id,
                x,
                t: num(d + 1)?,
                attendance,
                orders: num(d + 3)?,
                group: rec[d + 4].parse().map_err(|e: Error| parse_err(line, e.to_string()))?,
            });
        }
        Dataset::new(d, examples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| match e {
            Error::Validation(m) => Error::io(path, std::io::Error::other(m)),
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f), &path.display().to_string())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(format!("csv write: {e}"))
}
