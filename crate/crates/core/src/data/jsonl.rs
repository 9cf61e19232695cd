//! One JSON object per line. `kind` is `user`, `event` (the default) or
//! `sample`; events and samples carry `user_id`, `step` and the nine record
//! attributes, samples add `click` and `purchase` labels.

use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use super::{Dataset, Event, Labels, Sample};
use crate::embeddings::{InteractionRecord, UserProfile};
use crate::error::{FimError, Result};

type Obj = Map<String, Value>;

fn field<'a>(obj: &'a Obj, line: usize, name: &'static str) -> Result<&'a Value> {
    obj.get(name).ok_or(FimError::MissingField { line, field: name.to_string() })
}

fn string(obj: &Obj, line: usize, name: &'static str) -> Result<String> {
    match field(obj, line, name)? {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(FimError::Parse { line, message: format!("`{name}` must be a string, got {other}") }),
    }
}

fn number(obj: &Obj, line: usize, name: &'static str) -> Result<f64> {
    field(obj, line, name)?
        .as_f64()
        .ok_or_else(|| FimError::Parse { line, message: format!("`{name}` must be a number") })
}

fn integer(obj: &Obj, line: usize, name: &'static str) -> Result<i64> {
    field(obj, line, name)?
        .as_i64()
        .ok_or_else(|| FimError::Parse { line, message: format!("`{name}` must be an integer") })
}

fn flag(obj: &Obj, line: usize, name: &'static str) -> Result<bool> {
    match field(obj, line, name)? {
        Value::Bool(b) => Ok(*b),
        Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
        Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
        other => Err(FimError::Parse { line, message: format!("`{name}` must be 0 or 1, got {other}") }),
    }
}

fn record(obj: &Obj, line: usize) -> Result<InteractionRecord> {
    let time_span = integer(obj, line, "time_span")?;
    let time_span = u32::try_from(time_span)
        .map_err(|_| FimError::Parse { line, message: format!("`time_span` out of range: {time_span}") })?;
    let r = InteractionRecord {
        goods_id: string(obj, line, "goods_id")?,
        author_id: string(obj, line, "author_id")?,
        source_domain: string(obj, line, "source_domain")?,
        action: string(obj, line, "action")?,
        brand: string(obj, line, "brand")?,
        category: string(obj, line, "category")?,
        time_span,
        price: number(obj, line, "price")?,
        payment_amount: number(obj, line, "payment_amount")?,
    };
    r.validate().map_err(|e| FimError::Parse { line, message: e.to_string() })?;
    Ok(r)
}

/// Parses JSONL text; `line` numbers in errors are 1-based.
pub fn parse_jsonl(text: &str) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let obj = match serde_json::from_str::<Value>(raw) {
            Ok(Value::Object(o)) => o,
            Ok(_) => return Err(FimError::Parse { line, message: "expected a JSON object".into() }),
            Err(e) => return Err(FimError::Parse { line, message: e.to_string() }),
        };
        let kind = match obj.get("kind") {
            None => "event",
            Some(Value::String(s)) => s.as_str(),
            Some(other) => return Err(FimError::Parse { line, message: format!("bad kind {other}") }),
        };
        let user_id = string(&obj, line, "user_id")?;
        match kind {
            "user" => {
                let profile = UserProfile { age: string(&obj, line, "age")?, gender: string(&obj, line, "gender")? };
                ds.users.entry(user_id).or_default().profile = Some(profile);
            }
            "event" => {
                let event = Event { step: integer(&obj, line, "step")?, record: record(&obj, line)? };
                ds.users.entry(user_id).or_default().events.push(event);
            }
            "sample" => {
                let labels = Labels { click: flag(&obj, line, "click")?, purchase: flag(&obj, line, "purchase")? };
                ds.samples.push(Sample {
                    user_id,
                    step: integer(&obj, line, "step")?,
                    target: record(&obj, line)?,
                    labels,
                });
            }
            other => return Err(FimError::Parse { line, message: format!("unknown kind `{other}`") }),
        }
    }
    for log in ds.users.values_mut() {
        log.events.sort_by_key(|e| e.step);
    }
    Ok(ds)
}

pub fn load_jsonl(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| FimError::io(path, e))?;
    parse_jsonl(&text)
}

#[derive(Serialize)]
struct UserLine<'a> {
    kind: &'static str,
    user_id: &'a str,
    age: &'a str,
    gender: &'a str,
}

#[derive(Serialize)]
struct RecordLine<'a> {
    kind: &'static str,
    user_id: &'a str,
    step: i64,
    #[serde(flatten)]
    record: &'a InteractionRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    click: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    purchase: Option<u8>,
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

/// Users (profile line, then events) in id order, then samples.
pub fn write_jsonl(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| FimError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_all(ds, &mut w).and_then(|_| w.flush()).map_err(|e| FimError::io(path, e))
}

fn write_all<W: Write>(ds: &Dataset, w: &mut W) -> std::io::Result<()> {
    for (user_id, log) in &ds.users {
        if let Some(p) = &log.profile {
            write_line(w, &UserLine { kind: "user", user_id, age: &p.age, gender: &p.gender })?;
        }
        for e in &log.events {
            let line =
                RecordLine { kind: "event", user_id, step: e.step, record: &e.record, click: None, purchase: None };
            write_line(w, &line)?;
        }
    }
    for s in &ds.samples {
        write_line(
            w,
            &RecordLine {
                kind: "sample",
                user_id: &s.user_id,
                step: s.step,
                record: &s.target,
                click: Some(s.labels.click as u8),
                purchase: Some(s.labels.purchase as u8),
            },
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"user_id":"u1","step":3,"goods_id":"g1","author_id":"a1","source_domain":"feed","action":"purchase","brand":"b1","category":"food","time_span":1,"price":9.5,"payment_amount":9.5}"#;

    #[test]
    fn empty_text_is_empty_dataset() {
        assert_eq!(parse_jsonl("").unwrap(), Dataset::default());
    }

    #[test]
    fn one_line_populates_all_attributes() {
        let ds = parse_jsonl(GOOD).unwrap();
        let r = &ds.users["u1"].events[0].record;
        assert_eq!(r.goods_id, "g1");
        assert_eq!(r.brand, "b1");
        assert_eq!(r.time_span, 1);
        assert_eq!(r.payment_amount, 9.5);
    }

    #[test]
    fn missing_brand_names_field_and_line() {
        let bad = GOOD.replace(r#""brand":"b1","#, "");
        let err = parse_jsonl(&format!("{GOOD}\n{bad}")).unwrap_err();
        assert!(matches!(err, FimError::MissingField { line: 2, ref field } if field == "brand"), "{err}");
        assert!(err.to_string().contains("brand") && err.to_string().contains('2'));
    }

    #[test]
    fn negative_price_and_garbage_are_rejected() {
        let neg = GOOD.replace("\"price\":9.5", "\"price\":-1");
        assert!(matches!(parse_jsonl(&neg).unwrap_err(), FimError::Parse { line: 1, .. }));
        assert!(matches!(parse_jsonl("\n{oops").unwrap_err(), FimError::Parse { line: 2, .. }));
    }
}
