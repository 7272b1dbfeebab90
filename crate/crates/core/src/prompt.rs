//! Domain types shared across the crate and prompt assembly.
//!
//! A [`PromptTemplate`] has a body with the `{instruction}`, `{examples}` and
//! `{query}` slots, and a per-example format with `{input}` and `{output}`.
//! Literal braces are written `{{` and `}}`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: String,
    pub output: String,
}

impl Example {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Result<Self> {
        let example = Example {
            input: input.into(),
            output: output.into(),
        };
        example.validate()?;
        Ok(example)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.trim().is_empty() {
            return Err(Error::InvalidTask("example input is blank".into()));
        }
        if self.output.trim().is_empty() {
            return Err(Error::InvalidTask("example output is blank".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SequenceGeneration,
    Classification,
}

/// One few-shot instance: instruction, example pool and the query to answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclTask {
    pub id: String,
    pub instruction: String,
    pub examples: Vec<Example>,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    pub task_kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_space: Option<Vec<String>>,
}

impl IclTask {
    /// Checks the structural invariants. The permutation cap is enforced
    /// where orderings are enumerated, since the pool may be larger than the
    /// number of shots actually used.
    pub fn validate(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::InvalidTask(format!("task {}: example pool is empty", self.id)));
        }
        for example in &self.examples {
            example
                .validate()
                .map_err(|e| Error::InvalidTask(format!("task {}: {e}", self.id)))?;
        }
        if self.task_kind == TaskKind::Classification {
            let labels = match &self.label_space {
                Some(labels) if !labels.is_empty() => labels,
                _ => {
                    return Err(Error::InvalidTask(format!(
                        "task {}: classification requires a non-empty label_space",
                        self.id
                    )))
                }
            };
            if let Some(gold) = &self.ground_truth {
                if !labels.iter().any(|l| l == gold) {
                    return Err(Error::InvalidTask(format!(
                        "task {}: ground_truth {gold:?} is not in label_space",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// A copy of the task restricted to the given pool indices, in that order.
    pub fn with_examples(&self, indices: &[usize]) -> IclTask {
        IclTask {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Where an ordering came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OrderingSource {
    Exhaustive { rank: usize },
    Anchored { rank: usize },
    Topk,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ordering {
    pub indices: Vec<usize>,
    pub source: OrderingSource,
}

impl Ordering {
    pub fn new(indices: Vec<usize>, source: OrderingSource) -> Self {
        Ordering { indices, source }
    }

    /// Rank within its plan, if it came from one.
    pub fn rank(&self) -> usize {
        match self.source {
            OrderingSource::Exhaustive { rank } | OrderingSource::Anchored { rank } => rank,
            OrderingSource::Topk | OrderingSource::Random { .. } => 0,
        }
    }

    /// Fails unless `indices` is a permutation of `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        check_permutation(&self.indices, n)
    }
}

pub(crate) fn check_permutation(indices: &[usize], n: usize) -> Result<()> {
    if indices.len() != n {
        return Err(Error::InvalidOrdering(format!(
            "expected {n} indices, got {}",
            indices.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in indices {
        if i >= n {
            return Err(Error::InvalidOrdering(format!("index {i} out of range 0..{n}")));
        }
        if seen[i] {
            return Err(Error::InvalidOrdering(format!("index {i} repeated")));
        }
        seen[i] = true;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Slot {
    Lit(String),
    Instruction,
    Examples,
    Query,
    Input,
    Output,
}

fn parse_slots(text: &str, allowed: &[&str]) -> Result<Vec<Slot>> {
    let mut slots = Vec::new();
    let mut lit = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                lit.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                lit.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(c) => name.push(c),
                        None => {
                            return Err(Error::Template(format!("unterminated placeholder {{{name}")))
                        }
                    }
                }
                if !allowed.contains(&name.as_str()) {
                    return Err(Error::Template(format!(
                        "unknown placeholder {{{name}}} (use {{{{ and }}}} for literal braces)"
                    )));
                }
                if !lit.is_empty() {
                    slots.push(Slot::Lit(core::mem::take(&mut lit)));
                }
                slots.push(match name.as_str() {
                    "instruction" => Slot::Instruction,
                    "examples" => Slot::Examples,
                    "query" => Slot::Query,
                    "input" => Slot::Input,
                    _ => Slot::Output,
                });
            }
            '}' => return Err(Error::Template("unmatched '}'".into())),
            c => lit.push(c),
        }
    }
    if !lit.is_empty() {
        slots.push(Slot::Lit(lit));
    }
    for name in allowed {
        let count = slots
            .iter()
            .filter(|s| match (s, *name) {
                (Slot::Instruction, "instruction")
                | (Slot::Examples, "examples")
                | (Slot::Query, "query")
                | (Slot::Input, "input")
                | (Slot::Output, "output") => true,
                _ => false,
            })
            .count();
        if count != 1 {
            return Err(Error::Template(format!(
                "placeholder {{{name}}} must appear exactly once, found {count}"
            )));
        }
    }
    Ok(slots)
}

/// Prompt layout: `body` holds the three task slots, `example_format` is
/// applied to each example, and rendered examples are joined with
/// `example_separator`. `examples_header` is emitted in front of the
/// examples block only when the block is present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    body: String,
    example_format: String,
    example_separator: String,
    examples_header: String,
    body_slots: Vec<Slot>,
    example_slots: Vec<Slot>,
}

impl PromptTemplate {
    pub fn new(
        body: impl Into<String>,
        example_format: impl Into<String>,
        example_separator: impl Into<String>,
    ) -> Result<Self> {
        Self::with_header(body, example_format, example_separator, "")
    }

    pub fn with_header(
        body: impl Into<String>,
        example_format: impl Into<String>,
        example_separator: impl Into<String>,
        examples_header: impl Into<String>,
    ) -> Result<Self> {
        let body = body.into();
        let example_format = example_format.into();
        let body_slots = parse_slots(&body, &["instruction", "examples", "query"])?;
        let example_slots = parse_slots(&example_format, &["input", "output"])?;
        Ok(PromptTemplate {
            body,
            example_format,
            example_separator: example_separator.into(),
            examples_header: examples_header.into(),
            body_slots,
            example_slots,
        })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn example_format(&self) -> &str {
        &self.example_format
    }

    pub fn example_separator(&self) -> &str {
        &self.example_separator
    }

    pub fn examples_header(&self) -> &str {
        &self.examples_header
    }

    pub fn render_example(&self, example: &Example) -> String {
        let mut out = String::new();
        for slot in &self.example_slots {
            match slot {
                Slot::Lit(s) => out.push_str(s),
                Slot::Input => out.push_str(&example.input),
                Slot::Output => out.push_str(&example.output),
                _ => unreachable!("example format only holds input/output slots"),
            }
        }
        out
    }

    fn render(&self, task: &IclTask, examples: Option<&str>) -> String {
        let mut out = String::new();
        // newlines to drop from the literal after a removed examples slot
        let mut strip: Option<usize> = None;
        for slot in &self.body_slots {
            match slot {
                Slot::Lit(s) => {
                    let s = match strip {
                        Some(n) => {
                            let leading = s.len() - s.trim_start_matches('\n').len();
                            &s[leading.min(n)..]
                        }
                        None => s.as_str(),
                    };
                    out.push_str(s);
                }
                Slot::Instruction => out.push_str(&task.instruction),
                Slot::Query => out.push_str(&task.query),
                Slot::Examples => match examples {
                    Some(block) => out.push_str(block),
                    None => {
                        let trailing = out.len() - out.trim_end_matches('\n').len();
                        strip = Some(if out.is_empty() { usize::MAX } else { trailing });
                        continue;
                    }
                },
                _ => unreachable!("body only holds task slots"),
            }
            strip = None;
        }
        out
    }
}

/// Renders the instruction, the examples in `ordering` order, and the query.
pub fn assemble_prompt(template: &PromptTemplate, task: &IclTask, ordering: &Ordering) -> Result<String> {
    ordering.validate(task.examples.len())?;
    let mut block = template.examples_header.clone();
    for (pos, &i) in ordering.indices.iter().enumerate() {
        if pos > 0 {
            block.push_str(&template.example_separator);
        }
        block.push_str(&template.render_example(&task.examples[i]));
    }
    Ok(template.render(task, Some(&block)))
}

/// The same prompt with the examples slot removed. Newlines that open the
/// literal after the slot are dropped up to the number that close the text
/// before it, so a blank-line separator appears once. Independent of any
/// ordering.
pub fn assemble_example_free_prompt(template: &PromptTemplate, task: &IclTask) -> String {
    template.render(task, None)
}

/// One generated output for one ordering, with its scores in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub ordering: Ordering,
    pub output_text: String,
    pub output_tokens: Vec<String>,
    pub gen_logprobs: Vec<f64>,
    pub naive_score: f64,
    pub phi: Option<f64>,
}

impl Candidate {
    pub fn new(ordering: Ordering, output_text: String, output_tokens: Vec<String>, gen_logprobs: Vec<f64>) -> Self {
        let naive_score = gen_logprobs.iter().sum();
        Candidate {
            ordering,
            output_text,
            output_tokens,
            gen_logprobs,
            naive_score,
            phi: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.output_text.trim().is_empty()
    }
}

impl core::fmt::Display for Ordering {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let parts: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}
