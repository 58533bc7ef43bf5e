use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Categorical,
    Numeric,
}

impl FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical" => Ok(FieldKind::Categorical),
            "numeric" => Ok(FieldKind::Numeric),
            other => Err(Error::Config(format!("unknown field kind '{other}'"))),
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldKind::Categorical => "categorical",
            FieldKind::Numeric => "numeric",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

/// Ordered field declarations; one `name<TAB>kind` line per field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub fields: Vec<FieldSpec>,
}

impl Schema {
    pub fn categorical(names: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            fields: names
                .into_iter()
                .map(|name| FieldSpec {
                    name: name.into(),
                    kind: FieldKind::Categorical,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let name = parts.next().unwrap_or_default().trim();
            let kind = parts
                .next()
                .ok_or_else(|| Error::data(i + 1, format!("schema line for '{name}' has no kind")))?;
            if name.is_empty() {
                return Err(Error::data(i + 1, "empty field name in schema"));
            }
            if fields.iter().any(|f: &FieldSpec| f.name == name) {
                return Err(Error::data(i + 1, format!("duplicate field '{name}'")));
            }
            let kind = kind
                .trim()
                .parse()
                .map_err(|e: Error| Error::data(i + 1, e.to_string()))?;
            fields.push(FieldSpec {
                name: name.to_string(),
                kind,
            });
        }
        if fields.is_empty() {
            return Err(Error::Dataset("schema declares no fields".into()));
        }
        Ok(Self { fields })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.fields
            .iter()
            .map(|f| format!("{}\t{}\n", f.name, f.kind))
            .collect()
    }
}

/// One raw record: label plus one optional token per schema field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRow {
    /// 1-based source line, 0 when the row did not come from a file.
    pub line: usize,
    pub label: u8,
    pub values: Vec<Option<String>>,
}

/// Parses `label<TAB>v1<TAB>...` lines; empty cells are missing values.
pub fn parse_raw_tsv(text: &str, schema: &Schema) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split('\t');
        let label = match cells.next().map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => {
                return Err(Error::data(
                    lineno,
                    format!("label must be 0 or 1, got {:?}", other.unwrap_or("")),
                ))
            }
        };
        let mut values = Vec::with_capacity(schema.len());
        for field in &schema.fields {
            let cell = cells.next().ok_or_else(|| {
                Error::data(lineno, format!("missing column for field '{}'", field.name))
            })?;
            if field.kind == FieldKind::Numeric && !cell.is_empty() {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::data(
                        lineno,
                        format!("field '{}' expects a number, got '{cell}'", field.name),
                    )
                })?;
            }
            values.push((!cell.is_empty()).then(|| cell.to_string()));
        }
        if cells.next().is_some() {
            return Err(Error::data(
                lineno,
                format!(
                    "unknown field: column {} is beyond the last schema field '{}'",
                    schema.len() + 2,
                    schema.fields.last().map_or("", |f| f.name.as_str())
                ),
            ));
        }
        rows.push(RawRow {
            line: lineno,
            label,
            values,
        });
    }
    Ok(rows)
}

pub fn read_raw_tsv(path: &Path, schema: &Schema) -> Result<Vec<RawRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_raw_tsv(&text, schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::parse("a\tcategorical\nx\tnumeric\n").unwrap()
    }

    #[test]
    fn schema_round_trip() {
        let s = schema();
        assert_eq!(Schema::parse(&s.to_text()).unwrap(), s);
        assert!(Schema::parse("a\tordinal\n").is_err());
        assert!(Schema::parse("a\tcategorical\na\tnumeric\n").is_err());
    }

    #[test]
    fn parses_rows_with_missing_values() {
        let rows = parse_raw_tsv("1\tfoo\t3.5\n0\t\t\n", &schema()).unwrap();
        assert_eq!(rows[0].values, vec![Some("foo".into()), Some("3.5".into())]);
        assert_eq!(rows[1].values, vec![None, None]);
        assert_eq!(rows[1].line, 2);
    }

    #[test]
    fn bad_label_reports_line() {
        let err = parse_raw_tsv("1\ta\t1\n2\ta\t1\n", &schema()).unwrap_err();
        match err {
            Error::Data { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn column_mismatch_names_field() {
        let err = parse_raw_tsv("1\ta\n", &schema()).unwrap_err();
        assert!(err.to_string().contains("'x'"), "{err}");
        let err = parse_raw_tsv("1\ta\t1\textra\n", &schema()).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");
        let err = parse_raw_tsv("1\ta\tnope\n", &schema()).unwrap_err();
        assert!(err.to_string().contains("'x'"), "{err}");
    }
}
