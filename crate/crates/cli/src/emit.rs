//! Report serialization with reproducible floats.
//!
//! Every f64 is printed with 17 significant digits in scientific notation,
//! the shortest count that round-trips any double exactly. Two runs that
//! compute the same numbers therefore emit the same bytes, and a consumer
//! that parses a report back gets bit-identical values.

use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::Value;

fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

struct SciFormatter;

impl Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        writer.write_all(sci(value).as_bytes())
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.write_f64(writer, value as f64)
    }
}

/// Serializes a report as JSON with exact-round-trip floats, indented for
/// reading, newline-terminated.
pub fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let pretty = serde_json::ser::PrettyFormatter::new();
    let mut out = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut out, SciPretty { inner: SciFormatter, pretty });
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out)?)
}

/// Pretty indentation with the scientific float rule layered on top.
struct SciPretty<'a> {
    inner: SciFormatter,
    pretty: serde_json::ser::PrettyFormatter<'a>,
}

impl Formatter for SciPretty<'_> {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.write_f64(writer, value)
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.write_f32(writer, value)
    }

    fn begin_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.pretty.begin_array(writer)
    }

    fn end_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.pretty.end_array(writer)
    }

    fn begin_array_value<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.pretty.begin_array_value(writer, first)
    }

    fn end_array_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.pretty.end_array_value(writer)
    }

    fn begin_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.pretty.begin_object(writer)
    }

    fn end_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.pretty.end_object(writer)
    }

    fn begin_object_key<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.pretty.begin_object_key(writer, first)
    }

    fn end_object_key<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.pretty.end_object_key(writer)
    }

    fn begin_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.pretty.begin_object_value(writer)
    }

    fn end_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.pretty.end_object_value(writer)
    }
}

/// Serializes a report as CSV: one `key,value` row per leaf of the JSON
/// tree, keys as dotted paths with array indices, alphabetical within each
/// object. Floats follow the same 17-digit rule as the JSON output.
pub fn to_csv<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let tree = serde_json::to_value(value)?;
    let mut out = String::from("key,value\n");
    flatten("", &tree, &mut out);
    Ok(out)
}

fn flatten(path: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let next = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                flatten(&next, child, out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                flatten(&format!("{path}.{i}"), child, out);
            }
        }
        leaf => {
            out.push_str(&csv_field(path));
            out.push(',');
            out.push_str(&csv_field(&leaf_text(leaf)));
            out.push('\n');
        }
    }
}

fn leaf_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => sci(x),
            _ => n.to_string(),
        },
        Value::String(s) => s.clone(),
        _ => unreachable!("containers handled by the caller"),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
