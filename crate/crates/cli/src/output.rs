//! CSV and JSON-lines emission with a metadata preamble.

use std::io::Write;

use clap::ValueEnum;
use lln_energy::record::{Record, Value};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

fn json_value(v: &Value) -> serde_json::Value {
    match v {
        Value::Int(x) => json!(x),
        Value::Num(x) if x.is_finite() => json!(x),
        Value::Text(s) => json!(s),
        Value::Bool(b) => json!(b),
        Value::Num(_) | Value::Undefined | Value::Diverges => json!(v.to_string()),
    }
}

/// Writes `meta` then `rows`. CSV gets `# key: value` comment lines; JSON
/// lines get a leading `{"meta": {...}}` object so every line stays valid
/// JSON.
pub fn emit(out: &mut impl Write, format: Format, meta: &[(&str, String)], rows: &[Record]) -> anyhow::Result<()> {
    match format {
        Format::Csv => {
            for (k, v) in meta {
                writeln!(out, "# {k}: {v}")?;
            }
            let mut w = csv::Writer::from_writer(&mut *out);
            if let Some(first) = rows.first() {
                w.write_record(first.keys())?;
            }
            for row in rows {
                w.write_record(row.iter().map(|(_, v)| v.to_string()))?;
            }
            w.flush()?;
        }
        Format::Jsonl => {
            let meta: serde_json::Map<String, serde_json::Value> =
                meta.iter().map(|(k, v)| ((*k).to_owned(), json!(v))).collect();
            writeln!(out, "{}", json!({ "meta": meta }))?;
            for row in rows {
                // built by hand to keep column order
                let fields: Vec<String> = row
                    .iter()
                    .map(|(k, v)| format!("{}:{}", json!(k), json_value(v)))
                    .collect();
                writeln!(out, "{{{}}}", fields.join(","))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<Record> {
        let mut r = Record::default();
        r.push("mss", Value::Int(64));
        r.push("total_bits", Value::Num(5.888e6));
        r.push("s_f", Value::Undefined);
        r.push("total_joules", Value::Diverges);
        vec![r]
    }

    #[test]
    fn csv_with_comments() {
        let mut buf = Vec::new();
        emit(&mut buf, Format::Csv, &[("seed", "7".into())], &rows()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# seed: 7\nmss,total_bits,s_f,total_joules\n64,5.888e6,undefined,diverges\n"
        );
    }

    #[test]
    fn jsonl_lines_parse() {
        let mut buf = Vec::new();
        emit(&mut buf, Format::Jsonl, &[("seed", "7".into())], &rows()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines[0]["meta"]["seed"], "7");
        assert_eq!(lines[1]["total_bits"], 5.888e6);
        assert_eq!(lines[1]["total_joules"], "diverges");
        assert!(text.lines().nth(1).unwrap().starts_with("{\"mss\":64,"));
    }
}
