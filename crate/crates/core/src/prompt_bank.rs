//! Per-category normal/anomaly prompt sets.
//!
//! Prompt sets come from a text-completion backend ([`generate_prompts`]),
//! from fixed templates ([`render_template_prompts`]) or from a hand-edited
//! bank file. Banks persist as JSON lines, one record per
//! `(category, polarity)`:
//!
//! ```text
//! {"schema_version":1,"category":"bottle","display_name":"bottle","polarity":"normal","provenance":"template","prompts":["a photo of a bottle", ...]}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CategoryId, Label};

pub const SCHEMA_VERSION: u32 = 1;

/// Default number of prompts requested per polarity.
pub const DEFAULT_N_PROMPTS: usize = 10;

/// Completion attempts beyond the first when too few prompts are parsed.
pub const MAX_COMPLETION_RETRIES: usize = 2;

pub const DEFAULT_NORMAL_INSTRUCTION: &str = "List {n} short photo captions describing a normal, defect-free {category} in an industrial product photo. One caption per line.";
pub const DEFAULT_ANOMALY_INSTRUCTION: &str = "List {n} short photo captions describing a damaged or defective {category} in an industrial product photo, mentioning a plausible defect. One caption per line.";

const NORMAL_TEMPLATES: [&str; 3] = [
    "a photo of a {name}",
    "a photo of a flawless {name}",
    "a cropped photo of a {name}",
];
const ANOMALY_TEMPLATES: [&str; 3] = [
    "a photo of a damaged {name}",
    "a photo of a {name} with defect",
    "a photo of a broken {name}",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LlmGenerated,
    Template,
    Manual,
}

/// Ordered, duplicate-free prompts for one polarity of one category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptSet {
    category: CategoryId,
    polarity: Label,
    prompts: Vec<String>,
    provenance: Provenance,
}

impl PromptSet {
    pub fn new(
        category: CategoryId,
        polarity: Label,
        prompts: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::InvalidPromptSet(format!(
                "{category}/{polarity}: no prompts"
            )));
        }
        let mut seen = HashSet::new();
        for p in &prompts {
            if p.trim().is_empty() {
                return Err(Error::InvalidPromptSet(format!(
                    "{category}/{polarity}: blank prompt"
                )));
            }
            if !seen.insert(p.as_str()) {
                return Err(Error::InvalidPromptSet(format!(
                    "{category}/{polarity}: duplicate prompt {p:?}"
                )));
            }
        }
        Ok(Self {
            category,
            polarity,
            prompts,
            provenance,
        })
    }

    pub fn category(&self) -> &CategoryId {
        &self.category
    }

    pub fn polarity(&self) -> Label {
        self.polarity
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

/// Normal and anomaly prompt sets of one category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptPair {
    pub normal: PromptSet,
    pub anomaly: PromptSet,
}

impl PromptPair {
    pub fn new(normal: PromptSet, anomaly: PromptSet) -> Result<Self> {
        if normal.polarity != Label::Normal || anomaly.polarity != Label::Anomaly {
            return Err(Error::InvalidPromptSet("polarities swapped".into()));
        }
        if normal.category != anomaly.category {
            return Err(Error::InvalidPromptSet(format!(
                "categories differ: {} vs {}",
                normal.category, anomaly.category
            )));
        }
        Ok(Self { normal, anomaly })
    }

    pub fn category(&self) -> &CategoryId {
        &self.normal.category
    }

    pub fn get(&self, polarity: Label) -> &PromptSet {
        match polarity {
            Label::Normal => &self.normal,
            Label::Anomaly => &self.anomaly,
        }
    }
}

/// Fixed-template prompts for `category`, the CLIP-style baseline.
pub fn render_template_prompts(category: &CategoryId) -> PromptPair {
    let render = |templates: &[&str], polarity| {
        let prompts = templates
            .iter()
            .map(|t| t.replace("{name}", category.display_name()))
            .collect();
        PromptSet::new(category.clone(), polarity, prompts, Provenance::Template)
            .expect("templates are distinct")
    };
    PromptPair {
        normal: render(&NORMAL_TEMPLATES, Label::Normal),
        anomaly: render(&ANOMALY_TEMPLATES, Label::Anomaly),
    }
}

/// A free-form text completion backend.
pub trait PromptGeneratorBackend: Send + Sync {
    fn complete(&self, instruction: &str) -> Result<String>;

    /// Whether repeated calls with the same instruction return the same text.
    fn is_deterministic(&self) -> bool {
        false
    }

    fn concurrency_safe(&self) -> bool {
        false
    }
}

impl<T: PromptGeneratorBackend + ?Sized> PromptGeneratorBackend for Box<T> {
    fn complete(&self, instruction: &str) -> Result<String> {
        (**self).complete(instruction)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }

    fn concurrency_safe(&self) -> bool {
        (**self).concurrency_safe()
    }
}

/// Instruction templates sent to the generator. `{n}` and `{category}` are substituted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTemplates {
    pub normal: String,
    pub anomaly: String,
}

impl Default for InstructionTemplates {
    fn default() -> Self {
        Self {
            normal: DEFAULT_NORMAL_INSTRUCTION.to_owned(),
            anomaly: DEFAULT_ANOMALY_INSTRUCTION.to_owned(),
        }
    }
}

impl InstructionTemplates {
    pub fn render(&self, polarity: Label, category: &CategoryId, n: usize) -> String {
        let template = match polarity {
            Label::Normal => &self.normal,
            Label::Anomaly => &self.anomaly,
        };
        template
            .replace("{n}", &n.to_string())
            .replace("{category}", category.display_name())
    }
}

/// Splits a completion into candidate prompts.
///
/// Accepts numbered (`1. text`, `2) text`), bulleted and bare lines. Blank
/// and duplicate lines are dropped; order is preserved.
pub fn parse_completion(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in text.lines() {
        let cleaned = strip_list_marker(line.trim());
        let cleaned = cleaned
            .trim_matches(|c: char| c == '"' || c == '\u{201c}' || c == '\u{201d}')
            .trim();
        if cleaned.is_empty() {
            continue;
        }
        if seen.insert(cleaned.to_owned()) {
            out.push(cleaned.to_owned());
        }
    }
    out
}

fn strip_list_marker(line: &str) -> &str {
    for bullet in ["- ", "* ", "\u{2022} "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return rest.trim_start();
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    line
}

/// Asks `backend` for `n_prompts` normal and anomaly captions of `category`.
pub fn generate_prompts(
    backend: &dyn PromptGeneratorBackend,
    category: &CategoryId,
    n_prompts: usize,
    templates: &InstructionTemplates,
) -> Result<PromptPair> {
    if n_prompts == 0 {
        return Err(Error::Config("n_prompts must be at least 1".into()));
    }
    let normal = generate_set(backend, category, Label::Normal, n_prompts, templates)?;
    let anomaly = generate_set(backend, category, Label::Anomaly, n_prompts, templates)?;
    Ok(PromptPair { normal, anomaly })
}

fn generate_set(
    backend: &dyn PromptGeneratorBackend,
    category: &CategoryId,
    polarity: Label,
    n_prompts: usize,
    templates: &InstructionTemplates,
) -> Result<PromptSet> {
    let instruction = templates.render(polarity, category, n_prompts);
    let mut prompts: Vec<String> = Vec::new();
    let mut attempts = 0;
    while attempts <= MAX_COMPLETION_RETRIES && prompts.len() < n_prompts {
        attempts += 1;
        let completion = backend.complete(&instruction)?;
        for p in parse_completion(&completion) {
            if !prompts.contains(&p) {
                prompts.push(p);
            }
        }
        log::debug!(
            "{category}/{polarity}: attempt {attempts} gave {} usable prompts",
            prompts.len()
        );
    }
    if prompts.is_empty() {
        return Err(Error::MalformedCompletion {
            category: category.name().to_owned(),
            polarity: polarity.to_string(),
            attempts,
        });
    }
    if prompts.len() < n_prompts {
        log::warn!(
            "{category}/{polarity}: only {} of {n_prompts} prompts after {attempts} attempts",
            prompts.len()
        );
    }
    prompts.truncate(n_prompts);
    PromptSet::new(category.clone(), polarity, prompts, Provenance::LlmGenerated)
}

/// Prompt sets keyed by category; every category holds both polarities.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PromptBank {
    entries: BTreeMap<String, PromptPair>,
}

impl PromptBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the pair for its category.
    pub fn insert(&mut self, pair: PromptPair) -> Option<PromptPair> {
        self.entries.insert(pair.category().name().to_owned(), pair)
    }

    pub fn get(&self, category: &str) -> Option<&PromptPair> {
        self.entries.get(category)
    }

    pub fn contains(&self, category: &str) -> bool {
        self.entries.contains_key(category)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptPair> {
        self.entries.values()
    }

    pub fn schema_version(&self) -> u32 {
        SCHEMA_VERSION
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankRecord {
    schema_version: u32,
    category: String,
    #[serde(default)]
    display_name: Option<String>,
    polarity: Label,
    provenance: Provenance,
    prompts: Vec<String>,
}

/// Serializes `bank` to JSON lines, normal record first for each category.
pub fn bank_to_string(bank: &PromptBank) -> String {
    let mut out = String::new();
    for pair in bank.iter() {
        for set in [&pair.normal, &pair.anomaly] {
            let record = BankRecord {
                schema_version: SCHEMA_VERSION,
                category: set.category.name().to_owned(),
                display_name: Some(set.category.display_name().to_owned()),
                polarity: set.polarity,
                provenance: set.provenance,
                prompts: set.prompts.clone(),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn bank_from_str(text: &str) -> Result<PromptBank> {
    let mut halves: BTreeMap<String, (Option<PromptSet>, Option<PromptSet>)> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: BankRecord = serde_json::from_str(line)
            .map_err(|e| Error::Schema(format!("line {}: {e}", lineno + 1)))?;
        if record.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "line {}: unsupported schema_version {}",
                lineno + 1,
                record.schema_version
            )));
        }
        let category = match record.display_name {
            Some(d) => CategoryId::with_display_name(record.category, d)?,
            None => CategoryId::new(record.category)?,
        };
        let set = PromptSet::new(category, record.polarity, record.prompts, record.provenance)
            .map_err(|e| Error::Schema(format!("line {}: {e}", lineno + 1)))?;
        let slot = halves.entry(set.category.name().to_owned()).or_default();
        let target = match set.polarity {
            Label::Normal => &mut slot.0,
            Label::Anomaly => &mut slot.1,
        };
        if target.is_some() {
            return Err(Error::Schema(format!(
                "line {}: duplicate {}/{} record",
                lineno + 1,
                set.category,
                set.polarity
            )));
        }
        *target = Some(set);
    }
    let mut bank = PromptBank::new();
    for (name, (normal, anomaly)) in halves {
        match (normal, anomaly) {
            (Some(normal), Some(anomaly)) => {
                let pair = PromptPair::new(normal, anomaly).map_err(|e| Error::Schema(e.to_string()))?;
                bank.insert(pair);
            }
            (None, _) => return Err(Error::Schema(format!("category {name} has no normal record"))),
            (_, None) => return Err(Error::Schema(format!("category {name} has no anomaly record"))),
        }
    }
    Ok(bank)
}

/// Writes `bank` atomically (temporary file, then rename).
pub fn save_bank(bank: &PromptBank, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bank_to_string(bank).as_bytes())
        .and_then(|_| file.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_bank(path: &Path) -> Result<PromptBank> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    bank_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;
    use std::sync::Mutex;

    struct Scripted(Mutex<VecDeque<String>>);

    impl Scripted {
        fn new<I: IntoIterator<Item = &'static str>>(items: I) -> Self {
            Self(Mutex::new(items.into_iter().map(String::from).collect()))
        }
    }

    impl PromptGeneratorBackend for Scripted {
        fn complete(&self, _instruction: &str) -> Result<String> {
            Ok(self.0.lock().unwrap().pop_front().unwrap_or_default())
        }
    }

    fn bottle() -> CategoryId {
        CategoryId::new("bottle").unwrap()
    }

    #[test]
    fn templates_substitute_the_name() {
        let pair = render_template_prompts(&bottle());
        assert!(pair.normal.prompts().contains(&"a photo of a bottle".to_owned()));
        assert!(pair.anomaly.prompts().contains(&"a photo of a damaged bottle".to_owned()));
        assert_eq!(pair.normal.len(), 3);
        assert_eq!(pair.anomaly.len(), 3);
        assert_eq!(pair.normal.provenance(), Provenance::Template);
        assert_eq!(pair, render_template_prompts(&bottle()));
    }

    #[test]
    fn parser_accepts_numbered_and_bare_lines() {
        let text = "1. a photo of a glass bottle\n2) an intact bottle\n- bulleted\nbare line\n\n  3.   spaced  \n1. a photo of a glass bottle";
        assert_eq!(
            parse_completion(text),
            vec!["a photo of a glass bottle", "an intact bottle", "bulleted", "bare line", "spaced"]
        );
        // a leading number that is part of the caption stays
        assert_eq!(parse_completion("3.5mm jack"), vec!["3.5mm jack"]);
        assert_eq!(parse_completion("\"quoted\""), vec!["quoted"]);
    }

    #[test]
    fn generate_takes_backend_lines() {
        let backend = Scripted::new([
            "1. a photo of a glass bottle\n2. an intact bottle on white background",
            "1. a cracked bottle\n2. a bottle with a chipped rim",
        ]);
        let pair = generate_prompts(&backend, &bottle(), 2, &InstructionTemplates::default()).unwrap();
        assert_eq!(
            pair.normal.prompts(),
            &["a photo of a glass bottle", "an intact bottle on white background"]
        );
        assert_eq!(pair.anomaly.len(), 2);
        assert_eq!(pair.normal.provenance(), Provenance::LlmGenerated);
    }

    #[test]
    fn generate_retries_then_fails_on_empty() {
        let backend = Scripted::new(["", "", ""]);
        let err = generate_prompts(&backend, &bottle(), 3, &InstructionTemplates::default()).unwrap_err();
        assert!(matches!(err, Error::MalformedCompletion { attempts: 3, .. }), "{err}");
    }

    #[test]
    fn generate_retries_accumulate_distinct_lines() {
        let backend = Scripted::new(["1. a\n2. b", "1. b\n2. c", "1. x\n2. y", "1. z"]);
        let pair = generate_prompts(&backend, &bottle(), 3, &InstructionTemplates::default()).unwrap();
        assert_eq!(pair.normal.prompts(), &["a", "b", "c"]);
        // the anomaly call starts at the third completion
        assert_eq!(pair.anomaly.prompts(), &["x", "y", "z"]);
    }

    #[test]
    fn generate_rejects_zero_prompts() {
        let backend = Scripted::new([]);
        assert!(generate_prompts(&backend, &bottle(), 0, &InstructionTemplates::default()).is_err());
    }

    #[test]
    fn instructions_render_defaults() {
        let t = InstructionTemplates::default();
        assert_eq!(
            t.render(Label::Normal, &bottle(), 10),
            "List 10 short photo captions describing a normal, defect-free bottle in an industrial product photo. One caption per line."
        );
        assert!(t.render(Label::Anomaly, &bottle(), 4).starts_with("List 4 short photo captions describing a damaged or defective bottle"));
    }

    #[test]
    fn prompt_set_invariants() {
        let c = bottle();
        assert!(PromptSet::new(c.clone(), Label::Normal, vec![], Provenance::Manual).is_err());
        assert!(PromptSet::new(c.clone(), Label::Normal, vec!["  ".into()], Provenance::Manual).is_err());
        assert!(PromptSet::new(c, Label::Normal, vec!["a".into(), "a".into()], Provenance::Manual).is_err());
    }

    #[test]
    fn bank_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.jsonl");

        let empty = PromptBank::new();
        save_bank(&empty, &path).unwrap();
        assert_eq!(load_bank(&path).unwrap(), empty);

        let mut bank = PromptBank::new();
        bank.insert(render_template_prompts(&bottle()));
        bank.insert(render_template_prompts(&CategoryId::new("metal_nut").unwrap()));
        save_bank(&bank, &path).unwrap();
        assert_eq!(load_bank(&path).unwrap(), bank);
    }

    #[test]
    fn bank_missing_polarity_is_schema_error() {
        let text = r#"{"schema_version":1,"category":"cable","polarity":"normal","provenance":"manual","prompts":["a cable"]}"#;
        assert!(matches!(bank_from_str(text), Err(Error::Schema(_))));
    }

    #[test]
    fn bank_rejects_unknown_version_and_duplicates() {
        let v2 = r#"{"schema_version":2,"category":"cable","polarity":"normal","provenance":"manual","prompts":["a cable"]}"#;
        assert!(matches!(bank_from_str(v2), Err(Error::Schema(_))));
        let line = r#"{"schema_version":1,"category":"cable","polarity":"normal","provenance":"manual","prompts":["a cable"]}"#;
        assert!(matches!(bank_from_str(&format!("{line}\n{line}")), Err(Error::Schema(_))));
        assert!(matches!(load_bank(Path::new("/nonexistent/bank.jsonl")), Err(Error::Io { .. })));
    }
}
