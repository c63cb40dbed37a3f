//! Email datasets and label files.
//!
//! Emails are read from JSON Lines (`id`, `subject`, `body`, `metadata`) or CSV
//! (`id`, `subject`, `body` plus any number of metadata columns). Labels are
//! JSON Lines of `{email_id, label_name, value}`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pricing::estimate_tokens;
use crate::schema::LabelSchema;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Email {
    pub id: String,
    #[serde(default)]
    pub subject: String,
    pub body: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    #[serde(default)]
    pub token_count_estimate: u64,
}

impl Email {
    pub fn new(id: &str, subject: &str, body: &str) -> Self {
        let mut email = Self {
            id: id.to_string(),
            subject: subject.to_string(),
            body: body.to_string(),
            metadata: BTreeMap::new(),
            token_count_estimate: 0,
        };
        email.refresh_token_estimate();
        email
    }

    /// Recomputes the token estimate from subject and body.
    pub fn refresh_token_estimate(&mut self) {
        let chars = self.subject.chars().count() + self.body.chars().count();
        let tokens = estimate_tokens(&self.subject) + estimate_tokens(&self.body);
        self.token_count_estimate = if chars > 0 { tokens.max(1) } else { 0 };
    }
}

/// Emails with unique ids, in input order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    emails: Vec<Email>,
}

impl Dataset {
    pub fn new(emails: Vec<Email>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(emails.len());
        for e in &emails {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateEmailId(e.id.clone()));
            }
        }
        Ok(Self { emails })
    }

    pub fn emails(&self) -> &[Email] {
        &self.emails
    }

    pub fn into_emails(self) -> Vec<Email> {
        self.emails
    }

    pub fn len(&self) -> usize {
        self.emails.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emails.is_empty()
    }

    pub fn from_jsonl<R: Read>(reader: R) -> Result<Self> {
        let mut emails = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut email: Email = serde_json::from_str(&line).map_err(|e| Error::Parse {
                location: format!("line {}", lineno + 1),
                detail: e.to_string(),
            })?;
            if email.token_count_estimate == 0 {
                email.refresh_token_estimate();
            }
            emails.push(email);
        }
        Self::new(emails)
    }

    pub fn to_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for email in &self.emails {
            serde_json::to_writer(&mut w, email)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads CSV with `id`, `subject`, `body` columns; every other column is
    /// kept as metadata.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let id_col = col("id").ok_or_else(|| Error::Parse {
            location: "csv header".into(),
            detail: "missing `id` column".into(),
        })?;
        let body_col = col("body").ok_or_else(|| Error::Parse {
            location: "csv header".into(),
            detail: "missing `body` column".into(),
        })?;
        let subject_col = col("subject");
        let mut emails = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let field = |i: usize| record.get(i).unwrap_or("").to_string();
            let metadata = headers
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != id_col && *i != body_col && Some(*i) != subject_col)
                .map(|(i, h)| (h.to_string(), field(i)))
                .collect();
            let mut email = Email {
                id: field(id_col),
                subject: subject_col.map(field).unwrap_or_default(),
                body: field(body_col),
                metadata,
                token_count_estimate: 0,
            };
            email.refresh_token_estimate();
            emails.push(email);
        }
        Self::new(emails)
    }

    /// Loads a dataset, picking the format from the file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::from_csv(file),
            _ => Self::from_jsonl(file),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_jsonl(File::create(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub email_id: String,
    pub label_name: String,
    pub value: i32,
}

/// Label values keyed by email id, then label name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTable {
    values: BTreeMap<String, BTreeMap<String, i32>>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, email_id: &str, label: &str, value: i32) {
        self.values
            .entry(email_id.to_string())
            .or_default()
            .insert(label.to_string(), value);
    }

    pub fn get(&self, email_id: &str, label: &str) -> Option<i32> {
        self.values.get(email_id)?.get(label).copied()
    }

    /// Like [`get`](Self::get) but reports a missing baseline label.
    pub fn require(&self, email_id: &str, label: &str) -> Result<i32> {
        self.get(email_id, label)
            .ok_or_else(|| Error::MissingBaselineLabel {
                email_id: email_id.to_string(),
                label: label.to_string(),
            })
    }

    pub fn for_email(&self, email_id: &str) -> Option<&BTreeMap<String, i32>> {
        self.values.get(email_id)
    }

    pub fn len(&self) -> usize {
        self.values.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = LabelRecord> + '_ {
        self.values.iter().flat_map(|(id, labels)| {
            labels.iter().map(move |(name, &value)| LabelRecord {
                email_id: id.clone(),
                label_name: name.clone(),
                value,
            })
        })
    }

    /// Checks every value against the schema.
    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        for r in self.records() {
            schema.check_value(&r.label_name, r.value)?;
        }
        Ok(())
    }

    pub fn from_jsonl<R: Read>(reader: R) -> Result<Self> {
        let mut table = Self::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: LabelRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                location: format!("line {}", lineno + 1),
                detail: e.to_string(),
            })?;
            table.insert(&r.email_id, &r.label_name, r.value);
        }
        Ok(table)
    }

    pub fn to_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for r in self.records() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_jsonl(File::create(path)?)
    }
}
