//! Prompt assembly for each agent role, documentation packing, and code
//! extraction from replies.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchdata::BenchmarkEntry;
use crate::eval::OutputSpec;
use crate::sandbox::{ErrorClass, ExecutionReport, Outcome};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot read corpus {path}: {source}")]
    Corpus {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("correction prompt needs a failing execution report")]
    NotAFailure,
    #[error("code is empty")]
    EmptyCode,
    #[error("reply is empty")]
    EmptyReply,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSection {
    pub title: String,
    pub text: String,
}

/// Engine documentation split into titled sections plus example programs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocCorpus {
    pub sections: Vec<DocSection>,
    pub examples: Vec<String>,
}

impl DocCorpus {
    /// Reads `*.md` / `*.txt` files of `dir` as sections and every file under
    /// `dir/examples` as a snippet, both in file-name order. Markdown files
    /// are split at `#`/`##` headings; text before the first heading is
    /// titled with the file stem.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PromptError::Corpus { path, source }
        };
        let mut corpus = DocCorpus::default();
        if !dir.exists() {
            return Ok(corpus);
        }
        for path in sorted_files(dir).map_err(io(dir))? {
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
            if !matches!(ext, "md" | "txt") {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(io(&path))?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("doc");
            corpus.sections.extend(split_sections(stem, &text, ext == "md"));
        }
        let ex_dir = dir.join("examples");
        if ex_dir.is_dir() {
            for path in sorted_files(&ex_dir).map_err(io(&ex_dir))? {
                let text = std::fs::read_to_string(&path).map_err(io(&path))?;
                if !text.trim().is_empty() {
                    corpus.examples.push(text);
                }
            }
        }
        Ok(corpus)
    }
}

fn sorted_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn split_sections(stem: &str, text: &str, markdown: bool) -> Vec<DocSection> {
    let mut out = Vec::new();
    let mut title = stem.to_string();
    let mut body = String::new();
    let flush = |title: &str, body: &mut String, out: &mut Vec<DocSection>| {
        if !body.trim().is_empty() {
            out.push(DocSection {
                title: title.to_string(),
                text: body.trim().to_string(),
            });
        }
        body.clear();
    };
    for line in text.lines() {
        let heading = markdown
            .then(|| line.strip_prefix("## ").or_else(|| line.strip_prefix("# ")))
            .flatten();
        match heading {
            Some(h) => {
                flush(&title, &mut body, &mut out);
                title = h.trim().to_string();
            }
            None => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    flush(&title, &mut body, &mut out);
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPack {
    pub doc_excerpts: Vec<(String, String)>,
    pub example_snippets: Vec<String>,
    pub token_estimate: usize,
}

/// chars / 4, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn terms(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Picks the sections and snippets most related to the prompt that fit the
/// token budget. Candidates are ranked by how many distinct prompt terms
/// they share (ties by corpus order, sections before snippets) and taken
/// greedily, skipping any that would overflow. Output keeps corpus order.
pub fn pack_context(docs: &DocCorpus, entry: &BenchmarkEntry, budget: usize) -> ContextPack {
    let query = terms(&entry.prompt);
    struct Cand {
        order: usize,
        overlap: usize,
        cost: usize,
    }
    let n_sec = docs.sections.len();
    let mut cands: Vec<Cand> = docs
        .sections
        .iter()
        .map(|s| (format!("{} {}", s.title, s.text), section_cost(s)))
        .chain(docs.examples.iter().map(|e| (e.clone(), estimate_tokens(e))))
        .enumerate()
        .map(|(order, (text, cost))| Cand {
            order,
            overlap: terms(&text).intersection(&query).count(),
            cost,
        })
        .collect();
    cands.sort_by(|a, b| b.overlap.cmp(&a.overlap).then(a.order.cmp(&b.order)));

    let mut used = 0usize;
    let mut chosen = Vec::new();
    for c in &cands {
        if used + c.cost <= budget {
            used += c.cost;
            chosen.push(c.order);
        }
    }
    chosen.sort_unstable();
    let mut pack = ContextPack {
        token_estimate: used,
        ..ContextPack::default()
    };
    for i in chosen {
        if i < n_sec {
            let s = &docs.sections[i];
            pack.doc_excerpts.push((s.title.clone(), s.text.clone()));
        } else {
            pack.example_snippets.push(docs.examples[i - n_sec].clone());
        }
    }
    pack
}

fn section_cost(s: &DocSection) -> usize {
    estimate_tokens(&s.title) + estimate_tokens(&s.text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub system: String,
    pub user: String,
}

/// Integral values print without a fractional part.
fn num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn output_spec_lines(spec: &OutputSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "- Set the resolution to {}x{} pixels", spec.width, spec.height);
    let _ = writeln!(s, "- Use a frame rate of {} fps", num(spec.fps));
    let _ = writeln!(s, "- Generate a {}-second video", num(spec.duration_secs));
    let _ = writeln!(s, "- Save the output file as \"{}\"", spec.filename);
    for extra in &spec.extra_required_files {
        let _ = writeln!(s, "- Also save the file \"{extra}\"");
    }
    if spec.background {
        s.push_str("- Set visualization parameter to False (run in background mode)");
    } else {
        s.push_str("- Set visualization parameter to True (show the viewer)");
    }
    s
}

fn render_docs(ctx: &ContextPack) -> String {
    ctx.doc_excerpts
        .iter()
        .map(|(t, x)| format!("### {t}\n{x}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn render_generation_prompt(entry: &BenchmarkEntry, ctx: &ContextPack, spec: &OutputSpec) -> PromptText {
    let user = format!(
        "You are an expert programmer specializing in physical simulations using the
Genesis physics engine. Your task is to implement the following physical
scenario:

[INSTRUCTION]: {user_prompt}

Please generate Python code that implements this scenario using the Genesis
physics engine.
Your code should:

1. Initialize the Genesis environment with appropriate parameters
2. Create all necessary physical objects with realistic properties
3. Configure the correct physical interactions and constraints
4. Set up an appropriate camera angle to visualize the phenomenon
5. Run the simulation and save the output video

The code should be physically accurate, following these laws:
- Respect conservation laws (energy, momentum, etc.)
- Use realistic parameters for mass, friction, elasticity, etc.
- Implement correct collision detection and response
- Apply appropriate forces and constraints

For the output specifications:
{spec_lines}

Here are some relevant examples and documentation to help you:
[CONTEXT]: {genesis_documentation}
[EXAMPLES]: {relevant_code_examples}

Your implementation should be complete, executable, and produce a simulation
that accurately reflects the described scenario.",
        user_prompt = entry.prompt,
        spec_lines = output_spec_lines(spec),
        genesis_documentation = render_docs(ctx),
        relevant_code_examples = ctx.example_snippets.join("\n\n"),
    );
    PromptText {
        system: String::new(),
        user,
    }
}

/// The innermost `File "...", line N` frame of the last traceback, with the
/// source line that follows it when present.
fn last_frame(stderr: &str) -> Option<String> {
    let lines: Vec<&str> = stderr.lines().collect();
    let i = lines.iter().rposition(|l| l.trim_start().starts_with("File \""))?;
    let mut out = lines[i].trim().to_string();
    if let Some(next) = lines.get(i + 1) {
        let t = next.trim();
        if !t.is_empty() && !t.starts_with("File \"") && !looks_like_exception(t) {
            out.push_str("\n    ");
            out.push_str(t);
        }
    }
    Some(out)
}

fn looks_like_exception(line: &str) -> bool {
    let head = line.split(':').next().unwrap_or("");
    !head.is_empty()
        && !head.contains(' ')
        && (head.ends_with("Error") || head.ends_with("Exception") || head.contains('.'))
}

/// Final exception line, or the last non-empty stderr line.
fn error_line(stderr: &str) -> Option<&str> {
    let mut nonempty = stderr.lines().map(str::trim).filter(|l| !l.is_empty());
    let all: Vec<&str> = nonempty.by_ref().collect();
    all.iter()
        .rev()
        .find(|l| looks_like_exception(l))
        .or(all.last())
        .copied()
}

pub fn describe_failure(report: &ExecutionReport) -> String {
    let class = report.error_class.unwrap_or(ErrorClass::Other);
    let mut s = format!("Error class: {}\n", class.as_str());
    match report.outcome {
        Outcome::Timeout => {
            let _ = writeln!(s, "The program exceeded the execution time limit and was killed.");
        }
        Outcome::SpawnFailure => {
            let _ = writeln!(s, "The interpreter could not be started.");
        }
        _ => {
            if let Some(code) = report.exit_code {
                let _ = writeln!(s, "Exit code: {code}");
            }
        }
    }
    if let Some(frame) = last_frame(&report.stderr_tail) {
        let _ = writeln!(s, "Location: {frame}");
    }
    match error_line(&report.stderr_tail) {
        Some(line) => {
            let _ = writeln!(s, "{line}");
        }
        None if report.outcome == Outcome::NonzeroExit => {
            let _ = writeln!(s, "(no error output)");
        }
        None => {}
    }
    s
}

pub fn render_correction_prompt(
    entry: &BenchmarkEntry,
    code: &str,
    report: &ExecutionReport,
) -> Result<PromptText, PromptError> {
    if report.succeeded() {
        return Err(PromptError::NotAFailure);
    }
    let user = format!(
        "The following program was written for this physical simulation task but \
failed when executed.

[INSTRUCTION]: {prompt}

[CODE]:
```python
{code}
```

[ERROR]:
{error}
Fix the error and return the complete corrected program in a single \
```python code block. Keep everything that already works unchanged.",
        prompt = entry.prompt,
        code = code.trim_end(),
        error = describe_failure(report),
    );
    Ok(PromptText {
        system: "You are an expert at debugging physics simulation code.".into(),
        user,
    })
}

pub fn render_refinement_prompt(entry: &BenchmarkEntry, code: &str) -> Result<PromptText, PromptError> {
    if code.trim().is_empty() {
        return Err(PromptError::EmptyCode);
    }
    let user = format!(
        "The following program runs successfully for this physical simulation task.

[INSTRUCTION]: {prompt}

[CODE]:
```python
{code}
```

Improve its physical accuracy and code quality: use realistic masses, \
friction, elasticity and time steps, and make the scene reflect the \
instruction more faithfully. Preserve the existing code structure and keep \
the output settings (resolution, frame rate, duration, output file name and \
background mode) exactly as they are. Return the complete program in a \
single ```python code block.",
        prompt = entry.prompt,
        code = code.trim_end(),
    );
    Ok(PromptText {
        system: "You are an expert at refining physics simulation code.".into(),
        user,
    })
}

/// Largest fenced block (first wins ties); the whole reply when there is no
/// fence. An unclosed fence runs to the end of the reply.
pub fn extract_code(reply: &str) -> Result<String, PromptError> {
    if reply.trim().is_empty() {
        return Err(PromptError::EmptyReply);
    }
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for line in reply.lines() {
        let fence = line.trim_start().starts_with("```");
        match (&mut current, fence) {
            (None, true) => current = Some(String::new()),
            (Some(_), true) => blocks.push(current.take().unwrap()),
            (Some(buf), false) => {
                buf.push_str(line);
                buf.push('\n');
            }
            (None, false) => {}
        }
    }
    if let Some(buf) = current {
        blocks.push(buf);
    }
    if blocks.is_empty() {
        return Ok(reply.to_string());
    }
    let mut best = 0;
    for (i, b) in blocks.iter().enumerate() {
        if b.trim_end().len() > blocks[best].trim_end().len() {
            best = i;
        }
    }
    let code = blocks[best].trim_end().to_string();
    if code.trim().is_empty() {
        return Err(PromptError::EmptyCode);
    }
    Ok(code)
}
