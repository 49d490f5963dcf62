// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON-lines corpora and the whitespace tokenizer.
//!
//! Each line is an object with either `prompt_tokens` (token ids) or `text`
//! (whitespace-tokenized), a `context_span` `[start, end)` in token
//! positions, and `answers`, a list of token-position spans. `id` is optional
//! and defaults to the 1-based line number.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Instruction preceding the context in converted QA prompts.
pub const QA_INSTRUCTION: &str = "Answer the question based on the following text";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub context_span: [usize; 2],
    #[serde(default)]
    pub answers: Vec<Vec<usize>>,
}

/// A corpus line resolved to token ids.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSample {
    pub id: String,
    pub tokens: Vec<u32>,
    /// Display text per token.
    pub texts: Vec<String>,
    pub context_span: (usize, usize),
    pub answers: Vec<Vec<usize>>,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Whitespace tokenizer: each word maps to `fnv1a(word) mod vocab_size`.
pub fn tokenize(text: &str, vocab_size: usize) -> (Vec<u32>, Vec<String>) {
    text.split_whitespace()
        .map(|w| ((fnv1a(w.as_bytes()) % vocab_size as u64) as u32, w.to_string()))
        .unzip()
}

impl CorpusLine {
    pub fn resolve(self, line_no: usize, vocab_size: usize) -> std::result::Result<CorpusSample, String> {
        let (tokens, texts) = match (self.prompt_tokens, self.text) {
            (Some(ids), None) => {
                if let Some(bad) = ids.iter().find(|&&t| t as usize >= vocab_size) {
                    return Err(format!("token id {bad} outside vocabulary of {vocab_size}"));
                }
                let texts = ids.iter().map(|t| format!("t{t}")).collect();
                (ids, texts)
            }
            (None, Some(text)) => tokenize(&text, vocab_size),
            _ => return Err("exactly one of prompt_tokens and text is required".into()),
        };
        let [start, end] = self.context_span;
        if start >= end || end > tokens.len() {
            return Err(format!("context_span [{start}, {end}) invalid for {} tokens", tokens.len()));
        }
        for span in &self.answers {
            if span.is_empty() || span.iter().any(|&p| p < start || p >= end) {
                return Err(format!("answer span {span:?} not inside the context"));
            }
        }
        Ok(CorpusSample {
            id: self.id.unwrap_or_else(|| format!("line{line_no:05}")),
            tokens,
            texts,
            context_span: (start, end),
            answers: self.answers,
        })
    }
}

/// Reads a corpus; errors name the offending line.
pub fn read_corpus(path: &Path, vocab_size: usize) -> CliResult<Vec<CorpusSample>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| CliError::Data(format!("{}:{line_no}: {msg}", path.display()));
        let parsed: CorpusLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        samples.push(parsed.resolve(line_no, vocab_size).map_err(bad)?);
    }
    let mut ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Data(format!("{}: duplicate sample id {:?}", path.display(), w[0])));
    }
    Ok(samples)
}

/// A question-answering record to convert into a corpus line.
#[derive(Clone, Debug, Deserialize)]
pub struct QaRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub question: String,
    pub context: String,
    /// Answer strings; each is located as a word sequence in the context.
    #[serde(default)]
    pub answers: Vec<String>,
}

/// Builds `"<instruction>: <context> Question: <question> Answer:"` as words,
/// with the context span and answer spans in word positions.
pub fn convert_qa(record: &QaRecord) -> CorpusLine {
    let mut words: Vec<&str> = QA_INSTRUCTION.split_whitespace().collect();
    words.push(":");
    let start = words.len();
    let context: Vec<&str> = record.context.split_whitespace().collect();
    words.extend(&context);
    let end = words.len();
    words.push("Question:");
    words.extend(record.question.split_whitespace());
    words.push("Answer:");
    let mut answers = Vec::new();
    for answer in &record.answers {
        let needle: Vec<&str> = answer.split_whitespace().collect();
        if needle.is_empty() || needle.len() > context.len() {
            continue;
        }
        if let Some(off) = context.windows(needle.len()).position(|w| w == needle.as_slice()) {
            let span: Vec<usize> = (start + off..start + off + needle.len()).collect();
            if !answers.contains(&span) {
                answers.push(span);
            }
        }
    }
    CorpusLine { id: record.id.clone(), prompt_tokens: None, text: Some(words.join(" ")), context_span: [start, end], answers }
}
