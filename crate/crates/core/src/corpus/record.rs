use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionCategory {
    Visual,
    Contextual,
    Form,
    Content,
    Context,
    Unlabeled,
}

impl CaptionCategory {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim().to_lowercase().as_str() {
            "visual" => Self::Visual,
            "contextual" => Self::Contextual,
            "form" => Self::Form,
            "content" => Self::Content,
            "context" => Self::Context,
            "" | "unlabeled" => Self::Unlabeled,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub category: CaptionCategory,
}

impl Caption {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            category: CaptionCategory::Unlabeled,
        }
    }
}

/// Where an artwork's pixels come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    /// Image file; relative paths resolve against the corpus file's directory.
    Path(PathBuf),
    /// Precomputed 64x64x3 pixel grid in `[0, 1]`, row-major, channel last.
    Features(Vec<f64>),
}

/// One artwork's image reference, metadata and reference captions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtworkRecord {
    pub id: String,
    pub image: ImageRef,
    pub author: String,
    pub title: String,
    pub technique: String,
    #[serde(rename = "type")]
    pub type_: String,
    pub school: String,
    pub timeframe: String,
    /// Kept for round-tripping only; nothing downstream reads it.
    pub date: String,
    pub captions: Vec<Caption>,
}

impl ArtworkRecord {
    /// Record with the given id and title and every other field empty.
    pub fn bare(id: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image: ImageRef::Features(Vec::new()),
            author: String::new(),
            title: title.into(),
            technique: String::new(),
            type_: String::new(),
            school: String::new(),
            timeframe: String::new(),
            date: String::new(),
            captions: Vec::new(),
        }
    }

    /// Resolves a relative image path against `base`.
    pub fn resolve_image(&mut self, base: &Path) {
        if let ImageRef::Path(p) = &mut self.image {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Jsonl,
        }
    }
}

const REQUIRED: [&str; 4] = ["id", "image", "title", "captions"];
const OPTIONAL: [&str; 6] = ["author", "technique", "type", "school", "timeframe", "date"];

fn text_field(obj: &serde_json::Map<String, Value>, key: &str, line: usize) -> Result<String, CorpusError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(other) => Err(CorpusError::MalformedRecord {
            line,
            message: format!("field `{key}` must be a string, got {other}"),
        }),
    }
}

fn parse_captions(value: &Value, line: usize) -> Result<Vec<Caption>, CorpusError> {
    let arr = value.as_array().ok_or_else(|| CorpusError::MalformedRecord {
        line,
        message: "`captions` must be an array".into(),
    })?;
    arr.iter()
        .map(|c| match c {
            Value::String(s) => Ok(Caption::new(s.clone())),
            Value::Object(o) => {
                let text = o.get("text").and_then(Value::as_str).ok_or_else(|| {
                    CorpusError::MalformedRecord {
                        line,
                        message: "caption without `text`".into(),
                    }
                })?;
                let cat = o.get("category").and_then(Value::as_str).unwrap_or("");
                let category = CaptionCategory::parse(cat).ok_or_else(|| CorpusError::MalformedRecord {
                    line,
                    message: format!("unknown caption category `{cat}`"),
                })?;
                Ok(Caption {
                    text: text.to_string(),
                    category,
                })
            }
            _ => Err(CorpusError::MalformedRecord {
                line,
                message: "caption must be a string or object".into(),
            }),
        })
        .collect()
}

fn parse_image(value: &Value, line: usize) -> Result<ImageRef, CorpusError> {
    match value {
        Value::String(s) => Ok(ImageRef::Path(PathBuf::from(s))),
        Value::Array(a) => a
            .iter()
            .map(|v| v.as_f64())
            .collect::<Option<Vec<f64>>>()
            .map(ImageRef::Features)
            .ok_or_else(|| CorpusError::MalformedRecord {
                line,
                message: "`image` array must hold numbers".into(),
            }),
        _ => Err(CorpusError::MalformedRecord {
            line,
            message: "`image` must be a path or a number array".into(),
        }),
    }
}

/// Parses one JSONL object (1-based `line` for error reports).
pub fn parse_json_record(text: &str, line: usize) -> Result<ArtworkRecord, CorpusError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CorpusError::MalformedRecord {
        line,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| CorpusError::MalformedRecord {
        line,
        message: "expected a JSON object".into(),
    })?;
    for key in REQUIRED {
        if !obj.contains_key(key) {
            return Err(CorpusError::MissingField {
                line,
                field: key.to_string(),
            });
        }
    }
    let id = text_field(obj, "id", line)?;
    if id.is_empty() {
        return Err(CorpusError::MissingField {
            line,
            field: "id".into(),
        });
    }
    let [author, technique, type_, school, timeframe, date] =
        OPTIONAL.map(|k| text_field(obj, k, line));
    Ok(ArtworkRecord {
        id,
        image: parse_image(&obj["image"], line)?,
        author: author?,
        title: text_field(obj, "title", line)?,
        technique: technique?,
        type_: type_?,
        school: school?,
        timeframe: timeframe?,
        date: date?,
        captions: parse_captions(&obj["captions"], line)?,
    })
}

fn check_unique(records: &[ArtworkRecord]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(CorpusError::DuplicateId(r.id.clone()));
        }
    }
    Ok(())
}

pub fn parse_jsonl_str(text: &str) -> Result<Vec<ArtworkRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_json_record(line, i + 1)?);
    }
    check_unique(&out)?;
    Ok(out)
}

/// CSV variant: same columns as the JSONL keys, captions separated by `|`.
pub fn parse_csv_str(text: &str) -> Result<Vec<ArtworkRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::MalformedRecord {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    for key in REQUIRED {
        if col(key).is_none() {
            return Err(CorpusError::MissingField {
                line: 1,
                field: key.to_string(),
            });
        }
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| CorpusError::MalformedRecord {
            line,
            message: e.to_string(),
        })?;
        let get = |name: &str| col(name).and_then(|c| row.get(c)).unwrap_or("").to_string();
        let id = get("id");
        if id.is_empty() {
            return Err(CorpusError::MissingField {
                line,
                field: "id".into(),
            });
        }
        let image_raw = get("image");
        let numbers: Option<Vec<f64>> = image_raw
            .split_whitespace()
            .map(|t| t.parse::<f64>().ok())
            .collect();
        let image = match numbers {
            Some(v) if !v.is_empty() => ImageRef::Features(v),
            _ => ImageRef::Path(PathBuf::from(image_raw)),
        };
        let captions = get("captions")
            .split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Caption::new)
            .collect();
        out.push(ArtworkRecord {
            id,
            image,
            author: get("author"),
            title: get("title"),
            technique: get("technique"),
            type_: get("type"),
            school: get("school"),
            timeframe: get("timeframe"),
            date: get("date"),
            captions,
        });
    }
    check_unique(&out)?;
    Ok(out)
}

/// Reads a corpus file in file order. Relative image paths are resolved
/// against the file's directory.
pub fn parse_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<ArtworkRecord>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = match format {
        CorpusFormat::Jsonl => parse_jsonl_str(&text)?,
        CorpusFormat::Csv => parse_csv_str(&text)?,
    };
    let base = path.parent().unwrap_or(Path::new("."));
    for r in &mut records {
        r.resolve_image(base);
    }
    Ok(records)
}

/// Serializes records as JSONL in the same schema `parse_corpus` reads.
pub fn to_jsonl(records: &[ArtworkRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}
