//! Dataset CSV files, parameter files and JSON run artifacts.
//!
//! Datasets use the header `id,stratum,x1,x2,cutoff` with `x2` empty for
//! records that were not retested.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::decision::FittedModel;
use crate::error::{Error, Result};
use crate::simulate::MeasurementPair;

pub const CSV_HEADER: [&str; 5] = ["id", "stratum", "x1", "x2", "cutoff"];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Keep rows retested although x1 ≥ cutoff.
    pub retain_retests_above_cutoff: bool,
    /// Allowed strata; any stratum when `None`.
    pub strata: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<MeasurementPair>,
    /// Rows with x2 present and x1 ≥ cutoff that were dropped.
    pub excluded_retests_above_cutoff: usize,
}

fn field<'a>(row: &'a csv::StringRecord, i: usize, line: u64) -> Result<&'a str> {
    row.get(i).map(str::trim).ok_or_else(|| Error::Parse {
        line,
        reason: format!("missing column {}", CSV_HEADER[i]),
    })
}

fn number(s: &str, name: &str, line: u64) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        line,
        reason: format!("{name} '{s}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            reason: format!("{name} must be finite"),
        });
    }
    Ok(v)
}

pub fn read_csv<R: Read>(reader: R, options: &IngestOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            reason: format!("header must be {}, found {}", CSV_HEADER.join(","), header.join(",")),
        });
    }
    let mut records = Vec::new();
    let mut excluded = 0;
    let mut cutoffs: HashMap<String, f64> = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                reason: format!("expected {} fields, found {}", CSV_HEADER.len(), row.len()),
            });
        }
        let id_s = field(&row, 0, line)?;
        let id: u64 = id_s.parse().map_err(|_| Error::Parse {
            line,
            reason: format!("id '{id_s}' is not a non-negative integer"),
        })?;
        let stratum = field(&row, 1, line)?;
        if stratum.is_empty() {
            return Err(Error::Parse {
                line,
                reason: "stratum is empty".into(),
            });
        }
        if let Some(allowed) = &options.strata {
            if !allowed.iter().any(|s| s == stratum) {
                return Err(Error::Parse {
                    line,
                    reason: format!("stratum '{stratum}' is not one of {}", allowed.join(",")),
                });
            }
        }
        let x1 = number(field(&row, 2, line)?, "x1", line)?;
        let x2_s = field(&row, 3, line)?;
        let x2 = (!x2_s.is_empty()).then(|| number(x2_s, "x2", line)).transpose()?;
        let cutoff = number(field(&row, 4, line)?, "cutoff", line)?;
        match cutoffs.get(stratum) {
            Some(&c) if c != cutoff => {
                return Err(Error::Parse {
                    line,
                    reason: format!("stratum {stratum} has cutoff {cutoff} but earlier rows use {c}"),
                })
            }
            Some(_) => {}
            None => {
                cutoffs.insert(stratum.to_string(), cutoff);
            }
        }
        if x2.is_some() && x1 >= cutoff && !options.retain_retests_above_cutoff {
            excluded += 1;
            continue;
        }
        records.push(MeasurementPair {
            id,
            stratum: stratum.to_string(),
            x1,
            x2,
            cutoff,
        });
    }
    Ok(Dataset {
        records,
        excluded_retests_above_cutoff: excluded,
    })
}

pub fn ingest(path: &Path, options: &IngestOptions) -> Result<Dataset> {
    read_csv(File::open(path)?, options)
}

/// Writes records with shortest round-trip float formatting.
pub fn write_csv<W: Write>(writer: W, records: &[MeasurementPair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.id.to_string(),
            r.stratum.clone(),
            r.x1.to_string(),
            r.x2.map(|v| v.to_string()).unwrap_or_default(),
            r.cutoff.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// JSON record of one command: what was asked, with which seed, and what
/// came out. `results` depends only on `spec` and `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub command: String,
    pub spec: Value,
    pub seed: u64,
    pub software_version: String,
    pub results: Value,
    pub elapsed_seconds: f64,
}

impl RunArtifact {
    pub fn new<S: Serialize, R: Serialize>(command: &str, spec: &S, seed: u64, results: &R, elapsed_seconds: f64) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            spec: serde_json::to_value(spec)?,
            seed,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            results: serde_json::to_value(results)?,
            elapsed_seconds,
        })
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writeln!(writer)?;
        Ok(())
    }
}

/// Reads fitted parameters from a bare parameter file or from a `fit-bayes`
/// artifact whose results carry a `fitted` block.
pub fn read_params<R: Read>(reader: R) -> Result<FittedModel> {
    let v: Value = serde_json::from_reader(reader)?;
    let block = v
        .get("results")
        .and_then(|r| r.get("fitted"))
        .cloned()
        .unwrap_or(v);
    Ok(serde_json::from_value(block)?)
}

pub fn load_params(path: &Path) -> Result<FittedModel> {
    read_params(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_pairs, GeneratorSpec, RetestPolicy};
    use crate::stats::MeasurementDensity;

    fn read(s: &str) -> Result<Dataset> {
        read_csv(s.as_bytes(), &IngestOptions::default())
    }

    #[test]
    fn two_rows_one_retested() {
        let d = read("id,stratum,x1,x2,cutoff\n1,M,12.5,12.9,13\n2,M,14.1,,13\n").unwrap();
        assert_eq!(d.records.len(), 2);
        assert_eq!(d.records.iter().filter(|r| r.x2.is_some()).count(), 1);
    }

    #[test]
    fn empty_x2_is_absent() {
        let d = read("id,stratum,x1,x2,cutoff\n7,M,12.9,,13.0\n").unwrap();
        assert_eq!(
            d.records[0],
            MeasurementPair {
                id: 7,
                stratum: "M".into(),
                x1: 12.9,
                x2: None,
                cutoff: 13.0
            }
        );
    }

    #[test]
    fn retests_above_cutoff_excluded_unless_retained() {
        let s = "id,stratum,x1,x2,cutoff\n1,M,13.5,13.1,13\n2,M,12.0,12.2,13\n";
        let d = read(s).unwrap();
        assert_eq!((d.records.len(), d.excluded_retests_above_cutoff), (1, 1));
        let opts = IngestOptions {
            retain_retests_above_cutoff: true,
            ..IngestOptions::default()
        };
        let d = read_csv(s.as_bytes(), &opts).unwrap();
        assert_eq!((d.records.len(), d.excluded_retests_above_cutoff), (2, 0));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let cases = [
            ("id,stratum,x1,x2,cutoff\n1,M,12.5,,13\n2,M,abc,,13\n", 3),
            ("id,stratum,x1,x2,cutoff\n1,M,12.5,,13\n2,M,12,,13\n3,M,inf,,13\n", 4),
            ("id,stratum,x1,x2,cutoff\n1,M,12.5,13\n", 2),
            ("id,stratum,x1,x2,cutoff\nx,M,12.5,,13\n", 2),
            ("id,stratum,x1,x2,cutoff\n1,,12.5,,13\n", 2),
        ];
        for (s, want) in cases {
            match read(s) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{s}"),
                other => panic!("{s}: {other:?}"),
            }
        }
        assert!(matches!(read("a,b,c\n1,2,3\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn inconsistent_cutoff_is_an_error() {
        let r = read("id,stratum,x1,x2,cutoff\n1,M,12.5,,13\n2,F,12.0,,12.5\n3,M,12.0,,12.5\n");
        assert!(matches!(r, Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn undeclared_stratum_is_an_error() {
        let opts = IngestOptions {
            strata: Some(vec!["M".into(), "F".into()]),
            ..IngestOptions::default()
        };
        assert!(read_csv("id,stratum,x1,x2,cutoff\n1,X,12.5,,13\n".as_bytes(), &opts).is_err());
    }

    #[test]
    fn simulated_data_round_trips() {
        let spec = GeneratorSpec {
            stratum: "F".into(),
            population: MeasurementDensity::normal(13.8, 1.0).unwrap(),
            measurement: Some(MeasurementDensity::student_t(0.0, 0.4, 3.0).unwrap()),
            policy: RetestPolicy::new(12.5, 1.5).unwrap(),
            n: 500,
            seed: 4,
            first_id: 10,
        };
        let data = simulate_pairs(&spec).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &data).unwrap();
        let back = read(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.records, data);
        assert_eq!(back.excluded_retests_above_cutoff, 0);
    }

    #[test]
    fn params_from_file_or_artifact() {
        let f = FittedModel::reference();
        let bare = serde_json::to_vec(&f).unwrap();
        assert_eq!(read_params(bare.as_slice()).unwrap(), f);
        let art = RunArtifact::new("fit-bayes", &"spec", 1, &serde_json::json!({ "fitted": f }), 0.1).unwrap();
        let mut buf = Vec::new();
        art.write(&mut buf).unwrap();
        assert_eq!(read_params(buf.as_slice()).unwrap(), f);
        let back: RunArtifact = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, art);
    }
}
