//! Record ingestion and serialization.
//!
//! JSON Lines is the canonical format and round-trips every field. CSV is a
//! flat view: class-id expression columns, binary AU columns, scalar VA
//! columns. Writing a probability-valued prediction to CSV flattens it
//! (argmax class, thresholded AUs).

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::coupling::{AuActivations, VaPair};
use crate::record::{
    AuLabelSet, Demographics, ExprId, ExprPrediction, Labels, Predictions, SampleRecord,
};
use crate::relatedness::ActionUnit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// Infer from the file extension; defaults to JSONL.
    pub fn infer(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format '{other}' (expected jsonl or csv)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Jsonl => "jsonl",
            Format::Csv => "csv",
        })
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("missing required CSV column '{0}'")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
}

/// Read and validate records from a file.
pub fn read_records(path: &Path, format: Format) -> Result<Vec<SampleRecord>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        Format::Jsonl => read_jsonl(BufReader::new(file)),
        Format::Csv => read_csv(file),
    }
}

pub fn write_records(path: &Path, format: Format, records: &[SampleRecord]) -> Result<(), DataError> {
    let file = File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        Format::Jsonl => write_jsonl(BufWriter::new(file), records),
        Format::Csv => write_csv(file, records),
    }
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<SampleRecord>, DataError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|source| DataError::Io { path: format!("line {line_no}"), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| DataError::Malformed { line: line_no, message: e.to_string() })?;
        record
            .validate()
            .map_err(|e| DataError::Malformed { line: line_no, message: e.to_string() })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_jsonl<W: Write>(mut writer: W, records: &[SampleRecord]) -> Result<(), DataError> {
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| DataError::Malformed { line: 0, message: e.to_string() })?;
        writeln!(writer, "{line}")
            .map_err(|source| DataError::Io { path: "<writer>".into(), source })?;
    }
    Ok(())
}

fn csv_headers() -> Vec<String> {
    let mut headers: Vec<String> = [
        "id",
        "video",
        "frame_index",
        "age_group",
        "gender",
        "race",
        "expr_label",
        "compound_label",
        "expr_pred",
        "valence_label",
        "arousal_label",
        "valence_pred",
        "arousal_pred",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for code in ActionUnit::CODES {
        headers.push(format!("au{code}_label"));
        headers.push(format!("au{code}_pred"));
    }
    headers
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<SampleRecord>, DataError> {
    let mut csv_reader = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = csv_reader
        .headers()
        .map_err(|e| DataError::Csv { line: 1, message: e.to_string() })?
        .clone();
    let columns: std::collections::HashMap<&str, usize> =
        headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| columns.get(name).copied();
    let id_col = col("id").ok_or_else(|| DataError::MissingColumn("id".into()))?;

    let mut records = Vec::new();
    for result in csv_reader.records() {
        let row = result.map_err(|e| DataError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |name: &str| -> Option<&str> {
            col(name).and_then(|i| row.get(i)).filter(|v| !v.is_empty())
        };
        let parse_f64 = |name: &str| -> Result<Option<f64>, DataError> {
            field(name)
                .map(|v| {
                    v.parse::<f64>().map_err(|_| DataError::Csv {
                        line,
                        message: format!("column '{name}': expected a number, got '{v}'"),
                    })
                })
                .transpose()
        };
        let parse_expr = |name: &str| -> Result<Option<ExprId>, DataError> {
            field(name)
                .map(|v| {
                    v.parse::<u8>()
                        .map_err(|_| DataError::Csv {
                            line,
                            message: format!("column '{name}': expected a class id, got '{v}'"),
                        })
                        .and_then(|id| {
                            ExprId::try_from(id).map_err(|e| DataError::Csv {
                                line,
                                message: format!("column '{name}': {e}"),
                            })
                        })
                })
                .transpose()
        };
        let parse_bit = |name: &str| -> Result<Option<bool>, DataError> {
            match field(name) {
                None => Ok(None),
                Some("0") => Ok(Some(false)),
                Some("1") => Ok(Some(true)),
                Some(v) => Err(DataError::Csv {
                    line,
                    message: format!("column '{name}': expected 0 or 1, got '{v}'"),
                }),
            }
        };
        let parse_va = |v_name: &str, a_name: &str| -> Result<Option<VaPair>, DataError> {
            match (parse_f64(v_name)?, parse_f64(a_name)?) {
                (None, None) => Ok(None),
                (Some(v), Some(a)) => VaPair::new(v, a).map(Some).map_err(|e| DataError::Csv {
                    line,
                    message: format!("columns '{v_name}'/'{a_name}': {e}"),
                }),
                _ => Err(DataError::Csv {
                    line,
                    message: format!("'{v_name}' and '{a_name}' must be given together"),
                }),
            }
        };

        let id = row.get(id_col).unwrap_or_default();
        if id.is_empty() {
            return Err(DataError::Csv { line, message: "empty id".into() });
        }
        let mut record = SampleRecord::new(id);
        record.video = field("video").map(str::to_string);
        record.frame_index = field("frame_index")
            .map(|v| {
                v.parse::<u64>().map_err(|_| DataError::Csv {
                    line,
                    message: format!("column 'frame_index': expected an integer, got '{v}'"),
                })
            })
            .transpose()?;

        let demographics = Demographics {
            age_group: field("age_group").map(str::to_string),
            gender: field("gender").map(str::to_string),
            race: field("race").map(str::to_string),
        };
        if demographics != Demographics::default() {
            record.demographics = Some(demographics);
        }

        // AU label cells present -> that AU is known
        let mut known = Vec::new();
        let mut active = Vec::new();
        for code in ActionUnit::CODES {
            if let Some(bit) = parse_bit(&format!("au{code}_label"))? {
                known.push(code);
                if bit {
                    active.push(code);
                }
            }
        }
        let aus_label = if known.is_empty() {
            None
        } else {
            Some(AuLabelSet::from_codes(&active, Some(&known)).expect("active subset of known"))
        };

        let labels = Labels {
            expr: parse_expr("expr_label")?,
            compound: field("compound_label").map(str::to_string),
            aus: aus_label,
            va: parse_va("valence_label", "arousal_label")?,
        };
        if !labels.is_empty() {
            record.labels = Some(labels);
        }

        // AU prediction cells are a dense binary vector; absent cells read as 0
        let mut au_pred_bits = [0.0f64; ActionUnit::COUNT];
        let mut any_au_pred = false;
        for unit in ActionUnit::ALL {
            if let Some(bit) = parse_bit(&format!("au{}_pred", unit.code()))? {
                any_au_pred = true;
                au_pred_bits[unit.index()] = bit as u8 as f64;
            }
        }
        let predictions = Predictions {
            expr: parse_expr("expr_pred")?.map(ExprPrediction::ClassId),
            aus: any_au_pred.then(|| AuActivations::new(au_pred_bits).expect("bits in range")),
            va: parse_va("valence_pred", "arousal_pred")?,
        };
        if !predictions.is_empty() {
            record.predictions = Some(predictions);
        }

        record.validate().map_err(|e| DataError::Csv { line, message: e.to_string() })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_csv<W: std::io::Write>(writer: W, records: &[SampleRecord]) -> Result<(), DataError> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    let headers = csv_headers();
    csv_writer
        .write_record(&headers)
        .map_err(|e| DataError::Csv { line: 1, message: e.to_string() })?;

    for record in records {
        let mut row: Vec<String> = Vec::with_capacity(headers.len());
        row.push(record.id.clone());
        row.push(record.video.clone().unwrap_or_default());
        row.push(record.frame_index.map(|f| f.to_string()).unwrap_or_default());
        let demo = record.demographics.clone().unwrap_or_default();
        row.push(demo.age_group.unwrap_or_default());
        row.push(demo.gender.unwrap_or_default());
        row.push(demo.race.unwrap_or_default());
        row.push(
            record.expr_label().map(|e| e.index().to_string()).unwrap_or_default(),
        );
        row.push(
            record
                .labels
                .as_ref()
                .and_then(|l| l.compound.clone())
                .unwrap_or_default(),
        );
        row.push(
            record
                .expr_prediction()
                .map(|p| p.class().index().to_string())
                .unwrap_or_default(),
        );
        let label_va = record.va_label();
        row.push(label_va.map(|va| va.valence.to_string()).unwrap_or_default());
        row.push(label_va.map(|va| va.arousal.to_string()).unwrap_or_default());
        let pred_va = record.va_prediction();
        row.push(pred_va.map(|va| va.valence.to_string()).unwrap_or_default());
        row.push(pred_va.map(|va| va.arousal.to_string()).unwrap_or_default());

        let au_labels = record.au_labels();
        let au_preds = record.au_predictions().map(AuActivations::thresholded);
        for unit in ActionUnit::ALL {
            row.push(
                au_labels
                    .and_then(|l| l.value(unit))
                    .map(|b| (b as u8).to_string())
                    .unwrap_or_default(),
            );
            row.push(
                au_preds
                    .as_ref()
                    .map(|p| (p[unit.index()] as u8).to_string())
                    .unwrap_or_default(),
            );
        }
        csv_writer
            .write_record(&row)
            .map_err(|e| DataError::Csv { line: 0, message: e.to_string() })?;
    }
    csv_writer.flush().map_err(|source| DataError::Io { path: "<writer>".into(), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::ExprDistribution;
    use crate::relatedness::Expression;

    fn sample_jsonl() -> &'static str {
        concat!(
            r#"{"id":"a","demographics":{"gender":"f"},"labels":{"expr":1,"va":{"valence":0.5,"arousal":0.1}},"predictions":{"expr":[0.05,0.7,0.05,0.05,0.05,0.05,0.05],"va":{"valence":0.4,"arousal":0.0}}}"#,
            "\n",
            r#"{"id":"b","labels":{"aus":{"active":[1,12],"known":[1,2,12]}},"predictions":{"aus":[0.9,0.1,0,0,0,0,0,0,0,0.8,0,0,0,0,0,0.7,0]}}"#,
            "\n"
        )
    }

    #[test]
    fn jsonl_round_trip_is_idempotent() {
        let records = read_jsonl(BufReader::new(sample_jsonl().as_bytes())).unwrap();
        assert_eq!(records.len(), 2);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &records).unwrap();
        let reread = read_jsonl(BufReader::new(&buf[..])).unwrap();
        assert_eq!(records, reread);
        let mut buf2 = Vec::new();
        write_jsonl(&mut buf2, &reread).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn empty_input_yields_empty_list() {
        assert!(read_jsonl(BufReader::new("".as_bytes())).unwrap().is_empty());
        assert!(read_jsonl(BufReader::new("\n\n".as_bytes())).unwrap().is_empty());
    }

    #[test]
    fn invalid_simplex_is_rejected_with_line_number() {
        let line = r#"{"id":"x","predictions":{"expr":[0.1,0.1,0.1,0.1,0.1,0.1,0.2]}}"#;
        let bad = format!("{}\n{}\n", sample_jsonl().lines().next().unwrap(), line);
        let err = read_jsonl(BufReader::new(bad.as_bytes())).unwrap_err();
        match err {
            DataError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn record_without_payload_is_rejected() {
        let line = r#"{"id":"empty"}"#;
        let err = read_jsonl(BufReader::new(line.as_bytes())).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 1, .. }));
    }

    #[test]
    fn csv_round_trip_for_flat_records() {
        let records = vec![{
            let mut r = SampleRecord::new("c1");
            r.video = Some("v".into());
            r.frame_index = Some(3);
            r.demographics = Some(Demographics {
                age_group: Some("20-39".into()),
                gender: Some("m".into()),
                race: None,
            });
            r.labels = Some(Labels {
                expr: Some(ExprId(Expression::Surprise)),
                compound: None,
                aus: Some(AuLabelSet::from_codes(&[1, 2], Some(&[1, 2, 4])).unwrap()),
                va: Some(VaPair::new(0.25, 0.75).unwrap()),
            });
            r.predictions = Some(Predictions {
                expr: Some(ExprPrediction::ClassId(ExprId(Expression::Surprise))),
                aus: Some(AuActivations::from_active_codes(&[1]).unwrap()),
                va: Some(VaPair::new(0.2, 0.7).unwrap()),
            });
            r
        }];
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).unwrap();
        let reread = read_csv(&buf[..]).unwrap();
        assert_eq!(records, reread);
    }

    #[test]
    fn csv_flattens_distribution_predictions() {
        let mut r = SampleRecord::new("d1");
        r.labels = Some(Labels { expr: Some(ExprId(Expression::Fear)), ..Default::default() });
        r.predictions = Some(Predictions {
            expr: Some(ExprPrediction::Distribution(
                ExprDistribution::new([0.0, 0.0, 0.0, 0.9, 0.1, 0.0, 0.0]).unwrap(),
            )),
            ..Default::default()
        });
        let mut buf = Vec::new();
        write_csv(&mut buf, &[r]).unwrap();
        let reread = read_csv(&buf[..]).unwrap();
        assert_eq!(
            reread[0].expr_prediction(),
            Some(&ExprPrediction::ClassId(ExprId(Expression::Fear)))
        );
    }

    #[test]
    fn csv_rejects_bad_cells() {
        let csv = "id,expr_label\nx,9\n";
        assert!(matches!(read_csv(csv.as_bytes()), Err(DataError::Csv { line: 2, .. })));
        let csv = "id,au1_label\nx,2\n";
        assert!(matches!(read_csv(csv.as_bytes()), Err(DataError::Csv { line: 2, .. })));
        let csv = "id,valence_label\nx,0.5\n";
        assert!(read_csv(csv.as_bytes()).is_err());
    }
}
