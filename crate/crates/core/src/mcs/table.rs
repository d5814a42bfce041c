use std::io::{Read, Write};

use super::{McsError, McsResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub p_value: f64,
    pub survives: bool,
}

/// MCS p-values: one row per horizon, one column per model. Survivors are
/// marked with a trailing `*` in CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    pub models: Vec<String>,
    pub rows: Vec<(usize, Vec<Option<Cell>>)>,
}

pub fn mcs_table(results: &[McsResult]) -> McsTable {
    let mut models: Vec<String> = Vec::new();
    for r in results {
        for m in &r.models {
            if !models.contains(m) {
                models.push(m.clone());
            }
        }
    }
    let mut rows: Vec<(usize, Vec<Option<Cell>>)> = results
        .iter()
        .map(|r| {
            let cells = models
                .iter()
                .map(|m| {
                    r.p_value(m).map(|p| Cell {
                        p_value: p,
                        survives: r.survives(m),
                    })
                })
                .collect();
            (r.horizon, cells)
        })
        .collect();
    rows.sort_by_key(|r| r.0);
    McsTable { models, rows }
}

impl McsTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), McsError> {
        let err = |e: csv::Error| McsError::Csv(e.to_string());
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec!["horizon".to_string()];
        header.extend(self.models.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for (h, cells) in &self.rows {
            let mut rec = vec![h.to_string()];
            rec.extend(cells.iter().map(|c| match c {
                Some(c) => format!("{:.3}{}", c.p_value, if c.survives { "*" } else { "" }),
                None => String::new(),
            }));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| McsError::Csv(e.to_string()))
    }

    /// Reads a table written by [`McsTable::write_csv`]; p-values come back
    /// at three decimals.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, McsError> {
        let err = |e: csv::Error| McsError::Csv(e.to_string());
        let mut r = csv::Reader::from_reader(r);
        let header = r.headers().map_err(err)?.clone();
        if header.get(0) != Some("horizon") {
            return Err(McsError::Csv("first column must be `horizon`".into()));
        }
        let models = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(err)?;
            let bad = |v: &str| McsError::Csv(format!("bad cell `{v}`"));
            let h = rec[0].parse().map_err(|_| bad(&rec[0]))?;
            let cells = rec
                .iter()
                .skip(1)
                .map(|v| {
                    if v.is_empty() {
                        return Ok(None);
                    }
                    let (num, survives) = match v.strip_suffix('*') {
                        Some(s) => (s, true),
                        None => (v, false),
                    };
                    let p_value = num.parse().map_err(|_| bad(v))?;
                    Ok(Some(Cell { p_value, survives }))
                })
                .collect::<Result<_, McsError>>()?;
            rows.push((h, cells));
        }
        Ok(Self { models, rows })
    }
}
