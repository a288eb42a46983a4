//! Versioned plain-text model format.
//!
//! ```text
//! MMCE-MODEL v1
//! scheme mmce2
//! head sshaped
//! layers 8 64 64
//! attendance_head <D> <N>
//! orders_head <D> <N>
//! grid <len>
//! <one value per line>
//! group <name> <len>
//! <one value per line>
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a saved
//! model reloads to bit-identical parameters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::heads::{HeadHyper, TreatmentGrid};
use crate::model::{MmceModel, ModelSpec};
use crate::tensor::ParameterStore;

pub const MAGIC: &str = "MMCE-MODEL";
pub const VERSION: &str = "v1";

pub fn to_text(model: &MmceModel) -> String {
    let spec = model.spec();
    let mut s = String::new();
    let layers: Vec<String> = spec.layers.iter().map(|w| w.to_string()).collect();
    // Writing to a String cannot fail.
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "scheme {}", spec.scheme);
    let _ = writeln!(s, "head {}", spec.head);
    let _ = writeln!(s, "layers {}", layers.join(" "));
    let _ = writeln!(s, "attendance_head {} {}", spec.attendance_hyper.ceiling, spec.attendance_hyper.levels);
    let _ = writeln!(s, "orders_head {} {}", spec.orders_hyper.ceiling, spec.orders_hyper.levels);
    let _ = writeln!(s, "grid {}", spec.grid.len());
    for v in spec.grid.values() {
        let _ = writeln!(s, "{v}");
    }
    for (_, g) in model.store().iter() {
        let _ = writeln!(s, "group {} {}", g.name(), g.values().len());
        for v in g.values() {
            let _ = writeln!(s, "{v}");
        }
    }
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    origin: &'a str,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.origin.to_string(),
            message: format!("line {}: {}", self.line, message.into()),
        }
    }

    fn next_line(&mut self) -> Result<Option<&'a str>> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(Some(l.trim_end_matches('\r')))
            }
            None => Ok(None),
        }
    }

    fn require(&mut self) -> Result<&'a str> {
        self.line += 1;
        let line = self.next_line()?;
        line.ok_or_else(|| self.err("unexpected end of file"))
    }

    /// Line of the form `<key> <fields...>`.
    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.require()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`, found `{line}`")));
        }
        Ok(parts.collect())
    }

    fn parse<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        s.parse::<T>().map_err(|e| self.err(format!("{what} `{s}`: {e}")))
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|_| {
                let l = self.require()?;
                self.parse::<f64>(l.trim(), "value")
            })
            .collect()
    }

    fn hyper(&mut self, key: &str) -> Result<HeadHyper> {
        let f = self.keyed(key)?;
        if f.len() != 2 {
            return Err(self.err(format!("`{key}` takes a ceiling and a level count")));
        }
        Ok(HeadHyper {
            ceiling: self.parse(f[0], "ceiling")?,
            levels: self.parse(f[1], "levels")?,
        })
    }
}

pub fn from_text(text: &str, origin: &str) -> Result<MmceModel> {
    let mut ls = Lines {
        inner: text.lines().enumerate(),
        origin,
        line: 0,
    };
    let first = ls.require()?;
    match first.split_whitespace().collect::<Vec<_>>().as_slice() {
        [m, v] if *m == MAGIC && *v == VERSION => {}
        [m, v] if *m == MAGIC => return Err(ls.err(format!("unsupported model version `{v}`, expected {VERSION}"))),
        _ => return Err(ls.err(format!("not a model file, expected `{MAGIC} {VERSION}`"))),
    }
    let scheme = one(&mut ls, "scheme")?;
    let scheme = scheme.parse().map_err(|e: Error| ls.err(e.to_string()))?;
    let head = one(&mut ls, "head")?;
    let head = head.parse().map_err(|e: Error| ls.err(e.to_string()))?;
    let layers = ls
        .keyed("layers")?
        .iter()
        .map(|w| ls.parse::<usize>(w, "layer width"))
        .collect::<Result<Vec<_>>>()?;
    let attendance_hyper = ls.hyper("attendance_head")?;
    let orders_hyper = ls.hyper("orders_head")?;
    let n = one(&mut ls, "grid")?;
    let n = ls.parse::<usize>(n, "grid length")?;
    let grid = TreatmentGrid::new(ls.values(n)?).map_err(|e| ls.err(e.to_string()))?;
    let spec = ModelSpec {
        scheme,
        head,
        layers,
        attendance_hyper,
        orders_hyper,
        grid,
    };

    let mut store = ParameterStore::new();
    while let Some(line) = ls.next_line()? {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [key, name, len] = parts.as_slice() else {
            return Err(ls.err(format!("expected `group <name> <len>`, found `{line}`")));
        };
        if *key != "group" {
            return Err(ls.err(format!("expected `group`, found `{key}`")));
        }
        let len = ls.parse::<usize>(len, "group length")?;
        let values = ls.values(len)?;
        store.add_group(name, values).map_err(|e| ls.err(e.to_string()))?;
    }
    MmceModel::from_parts(spec, store)
}

fn one<'a>(ls: &mut Lines<'a>, key: &str) -> Result<&'a str> {
    let f = ls.keyed(key)?;
    match f.as_slice() {
        [v] => Ok(v),
        _ => Err(ls.err(format!("`{key}` takes exactly one value"))),
    }
}

pub fn save(model: &MmceModel, path: &Path) -> Result<()> {
    fs::write(path, to_text(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<MmceModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, &path.display().to_string())
}
