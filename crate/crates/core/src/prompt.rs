//! `%[name]%` prompt templates and extraction of the JSON objects that LLM
//! replies are asked to contain.
//!
//! The delimiter grammar is deliberately tiny: a placeholder opens with `%[`,
//! closes with the next `]%`, and has no nesting or escaping. Rendering is a
//! single left-to-right pass, so bound values are never re-scanned.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::scenario::{KcWarning, KnowledgeComponent};

const OPEN: &str = "%[";
const CLOSE: &str = "]%";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("empty template text")]
    EmptyTemplate,
    #[error("malformed placeholder at byte {offset}")]
    MalformedPlaceholder { offset: usize },
    #[error("missing variables: {}", .0.join(", "))]
    MissingVariable(Vec<String>),
    #[error("variable `{0}` has an empty value")]
    EmptyValue(String),
    #[error("invalid variable name `{0}`")]
    InvalidName(String),
    #[error("no JSON object found in text")]
    NoJsonFound,
    #[error("missing keys: {}", .0.join(", "))]
    MissingKey(Vec<String>),
    #[error("key `{0}` has an empty value")]
    EmptyKey(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("reading template: {0}")]
    Io(String),
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(char::is_whitespace) && !name.contains(OPEN) && !name.contains(CLOSE)
}

/// Segment of a parsed template.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(std::ops::Range<usize>),
    Placeholder(String),
}

fn segments(text: &str) -> Result<Vec<Segment>, PromptError> {
    let mut out = Vec::new();
    let mut cursor = 0;
    while let Some(rel) = text[cursor..].find(OPEN) {
        let open = cursor + rel;
        let name_start = open + OPEN.len();
        let close = text[name_start..]
            .find(CLOSE)
            .map(|r| name_start + r)
            .ok_or(PromptError::MalformedPlaceholder { offset: open })?;
        let name = &text[name_start..close];
        if !valid_name(name) {
            return Err(PromptError::MalformedPlaceholder { offset: open });
        }
        if open > cursor {
            out.push(Segment::Literal(cursor..open));
        }
        out.push(Segment::Placeholder(name.to_string()));
        cursor = close + CLOSE.len();
    }
    if cursor < text.len() {
        out.push(Segment::Literal(cursor..text.len()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: String,
    raw_text: String,
    placeholders: Vec<String>,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    /// Parses an anonymous template. Placeholders are reported in
    /// first-occurrence order without duplicates.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        Self::parse_named("inline", text)
    }

    pub fn parse_named(id: impl Into<String>, text: &str) -> Result<Self, PromptError> {
        if text.is_empty() {
            return Err(PromptError::EmptyTemplate);
        }
        let segments = segments(text)?;
        let mut placeholders: Vec<String> = Vec::new();
        for seg in &segments {
            if let Segment::Placeholder(name) = seg {
                if !placeholders.contains(name) {
                    placeholders.push(name.clone());
                }
            }
        }
        Ok(Self { id: id.into(), raw_text: text.to_string(), placeholders, segments })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }

    pub fn placeholders(&self) -> &[String] {
        &self.placeholders
    }

    /// Substitutes every placeholder. Fails listing all unbound names.
    pub fn render(&self, vars: &VariableSet) -> Result<RenderedPrompt, PromptError> {
        let missing: Vec<String> =
            self.placeholders.iter().filter(|p| vars.get(p).is_none()).cloned().collect();
        if !missing.is_empty() {
            return Err(PromptError::MissingVariable(missing));
        }
        let mut text = String::with_capacity(self.raw_text.len());
        for seg in &self.segments {
            match seg {
                Segment::Literal(range) => text.push_str(&self.raw_text[range.clone()]),
                Segment::Placeholder(name) => text.push_str(vars.get(name).unwrap_or_default()),
            }
        }
        let bindings_used = VariableSet {
            bindings: self
                .placeholders
                .iter()
                .filter_map(|p| vars.get(p).map(|v| (p.clone(), v.to_string())))
                .collect(),
        };
        Ok(RenderedPrompt { text, source_template_id: self.id.clone(), bindings_used })
    }
}

/// Placeholder bindings. Values are non-empty after trimming.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSet {
    bindings: BTreeMap<String, String>,
}

impl VariableSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: impl Into<String>, value: impl Into<String>) -> Result<(), PromptError> {
        let name = name.into();
        let value = value.into();
        if !valid_name(&name) {
            return Err(PromptError::InvalidName(name));
        }
        if value.trim().is_empty() {
            return Err(PromptError::EmptyValue(name));
        }
        self.bindings.insert(name, value);
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<String>) -> Result<Self, PromptError> {
        self.bind(name, value)?;
        Ok(self)
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self, PromptError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut set = Self::new();
        for (k, v) in pairs {
            set.bind(k, v)?;
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.bindings.get(name).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub source_template_id: String,
    pub bindings_used: VariableSet,
}

impl fmt::Display for RenderedPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        const BUNDLED: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../templates/", $name, ".txt")))),*
        ];
    };
}

bundled!(
    "lesson_creation",
    "scenario_extraction",
    "tree_expansion",
    "kc_shortfall",
    "matrix_questions",
    "scenario_context",
    "assessment",
    "tutor_turn",
    "turn_repair",
    "session_summary",
    "theme_annotation",
    "json_repair",
);

/// Named templates. Starts with the bundled set; a `templates/` directory can
/// override or extend it (file stem = template id).
#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateLibrary {
    pub fn bundled() -> Self {
        let templates = BUNDLED
            .iter()
            .map(|(id, text)| {
                let t = PromptTemplate::parse_named(*id, text).expect("bundled templates parse");
                (id.to_string(), t)
            })
            .collect();
        Self { templates }
    }

    pub fn with_directory(mut self, dir: &Path) -> Result<Self, PromptError> {
        let entries = std::fs::read_dir(dir).map_err(|e| PromptError::Io(e.to_string()))?;
        for entry in entries {
            let path = entry.map_err(|e| PromptError::Io(e.to_string()))?.path();
            if !path.is_file() {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Io(e.to_string()))?;
            let template = PromptTemplate::parse_named(id, &text)?;
            self.templates.insert(id.to_string(), template);
        }
        Ok(self)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates.get(id).ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

/// Shared bundled library.
pub fn bundled(id: &str) -> &'static PromptTemplate {
    use std::sync::OnceLock;
    static LIB: OnceLock<TemplateLibrary> = OnceLock::new();
    LIB.get_or_init(TemplateLibrary::bundled)
        .get(id)
        .unwrap_or_else(|_| panic!("no bundled template `{id}`"))
}

/// One JSON object pulled out of free-form LLM text.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedJsonObject {
    pub raw_span: String,
    pub parsed: Map<String, Value>,
    /// Set when the object came out of a top-level array.
    pub unwrapped_from_array: bool,
}

impl ExtractedJsonObject {
    /// String view of a field. Numbers and booleans are rendered as text.
    pub fn get_str(&self, key: &str) -> Option<String> {
        match self.parsed.get(key)? {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            _ => None,
        }
    }
}

/// Finds the end of a balanced `{...}` / `[...]` span, string-aware.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_value_at(text: &str, start: usize) -> Option<(Value, usize)> {
    let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
    match stream.next() {
        Some(Ok(value)) => Some((value, start + stream.byte_offset())),
        _ => None,
    }
}

/// Returns every top-level JSON object in `llm_text`, in order.
///
/// Prose and code fences around the objects are ignored. A malformed span is
/// skipped as a whole so that objects nested inside it are not reported. A
/// top-level array is unwrapped into its object elements, each flagged with
/// `unwrapped_from_array`.
pub fn extract_json_objects(llm_text: &str) -> Result<Vec<ExtractedJsonObject>, PromptError> {
    let bytes = llm_text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b != b'{' && b != b'[' {
            i += 1;
            continue;
        }
        match parse_value_at(llm_text, i) {
            Some((Value::Object(map), end)) => {
                out.push(ExtractedJsonObject {
                    raw_span: llm_text[i..end].to_string(),
                    parsed: map,
                    unwrapped_from_array: false,
                });
                i = end;
            }
            Some((Value::Array(items), end)) => {
                for item in items {
                    if let Value::Object(map) = item {
                        let raw_span = Value::Object(map.clone()).to_string();
                        out.push(ExtractedJsonObject { raw_span, parsed: map, unwrapped_from_array: true });
                    }
                }
                i = end;
            }
            _ => {
                i = balanced_end(bytes, i).unwrap_or(i + 1);
            }
        }
    }
    if out.is_empty() {
        Err(PromptError::NoJsonFound)
    } else {
        Ok(out)
    }
}

/// Returns the first top-level JSON array of strings in `llm_text`.
/// Non-string elements are skipped.
pub fn extract_string_array(llm_text: &str) -> Result<Vec<String>, PromptError> {
    let bytes = llm_text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'[' {
            i += 1;
            continue;
        }
        match parse_value_at(llm_text, i) {
            Some((Value::Array(items), end)) => {
                let strings: Vec<String> =
                    items.into_iter().filter_map(|v| v.as_str().map(str::to_string)).collect();
                if !strings.is_empty() {
                    return Ok(strings);
                }
                i = end;
            }
            _ => i = balanced_end(bytes, i).unwrap_or(i + 1),
        }
    }
    Err(PromptError::NoJsonFound)
}

/// The eleven keys of the lesson-creation JSON format, in template order.
pub const KC_KEYS: [&str; 11] = [
    "theAvatar",
    "theLang",
    "theKC",
    "theType",
    "theTarget",
    "theTutorName",
    "theContext",
    "theEnvironment",
    "theUserName",
    "theStyle",
    "theObjective",
];

/// Longest English `theKC` accepted without a length warning.
pub const KC_MAX_ENGLISH_WORDS: usize = 3;

/// Checks the key contract of a generated knowledge component.
///
/// Value language is not enforced; `expected_lang` only decides whether the
/// English word-count rule applies.
pub fn validate_kc_object(
    obj: &ExtractedJsonObject,
    expected_lang: &str,
) -> Result<KnowledgeComponent, PromptError> {
    let missing: Vec<String> =
        KC_KEYS.iter().filter(|k| !obj.parsed.contains_key(**k)).map(|k| k.to_string()).collect();
    if !missing.is_empty() {
        return Err(PromptError::MissingKey(missing));
    }
    let field = |k: &str| obj.get_str(k).unwrap_or_default().trim().to_string();
    let kc = field("theKC");
    if kc.is_empty() {
        return Err(PromptError::EmptyKey("theKC".into()));
    }
    let mut warnings = Vec::new();
    if expected_lang.trim().eq_ignore_ascii_case("english")
        && kc.split_whitespace().count() > KC_MAX_ENGLISH_WORDS
    {
        warnings.push(KcWarning::LengthViolation);
    }
    if obj.unwrapped_from_array {
        warnings.push(KcWarning::UnwrappedFromArray);
    }
    Ok(KnowledgeComponent {
        the_avatar: field("theAvatar"),
        the_lang: field("theLang"),
        the_kc: kc,
        the_type: field("theType"),
        the_target: field("theTarget"),
        the_tutor_name: field("theTutorName"),
        the_context: field("theContext"),
        the_environment: field("theEnvironment"),
        the_user_name: field("theUserName"),
        the_style: field("theStyle"),
        the_objective: field("theObjective"),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_placeholder() {
        let t = PromptTemplate::parse("presented in %[theLang]%.").unwrap();
        assert_eq!(t.placeholders(), ["theLang"]);
    }

    #[test]
    fn no_placeholders() {
        let t = PromptTemplate::parse("no variables here").unwrap();
        assert!(t.placeholders().is_empty());
    }

    #[test]
    fn unterminated_placeholder_is_malformed() {
        assert_eq!(
            PromptTemplate::parse("broken %[theLang"),
            Err(PromptError::MalformedPlaceholder { offset: 7 })
        );
        assert!(matches!(
            PromptTemplate::parse("a %[the Lang]% b"),
            Err(PromptError::MalformedPlaceholder { .. })
        ));
        assert!(matches!(PromptTemplate::parse("%[]%"), Err(PromptError::MalformedPlaceholder { .. })));
        assert_eq!(PromptTemplate::parse(""), Err(PromptError::EmptyTemplate));
    }

    #[test]
    fn placeholders_deduplicated_in_first_occurrence_order() {
        let t = PromptTemplate::parse("%[b]% %[a]% %[b]%").unwrap();
        assert_eq!(t.placeholders(), ["b", "a"]);
    }

    #[test]
    fn render_substitutes_values() {
        let t = PromptTemplate::parse("give me %[theNumber]% concepts").unwrap();
        let vars = VariableSet::new().with("theNumber", "5").unwrap();
        assert_eq!(t.render(&vars).unwrap().text, "give me 5 concepts");
    }

    #[test]
    fn render_without_placeholders_is_identity() {
        let t = PromptTemplate::parse("plain text, 100% literal ]% [%").unwrap();
        let vars = VariableSet::new().with("x", "y").unwrap();
        assert_eq!(t.render(&vars).unwrap().text, t.raw_text());
    }

    #[test]
    fn render_reports_every_missing_name() {
        let t = PromptTemplate::parse("%[theLang]% %[theKC]% %[theDomain]%").unwrap();
        let vars = VariableSet::new().with("theLang", "English").unwrap();
        assert_eq!(
            t.render(&vars),
            Err(PromptError::MissingVariable(vec!["theKC".into(), "theDomain".into()]))
        );
    }

    #[test]
    fn values_are_not_rescanned() {
        let t = PromptTemplate::parse("[%[a]%]").unwrap();
        let vars = VariableSet::new().with("a", "%[b]%").unwrap();
        assert_eq!(t.render(&vars).unwrap().text, "[%[b]%]");
    }

    #[test]
    fn blank_values_rejected() {
        assert_eq!(VariableSet::new().with("a", "  "), Err(PromptError::EmptyValue("a".into())));
    }

    #[test]
    fn lesson_creation_has_twelve_variables() {
        let t = bundled("lesson_creation");
        let mut names = t.placeholders().to_vec();
        names.sort();
        let mut expected = vec![
            "theAvatar",
            "theContext",
            "theDomain",
            "theEnvironment",
            "theKC",
            "theLang",
            "theNumber",
            "theObjective",
            "theTarget",
            "theTutorName",
            "theType",
            "theUserName",
        ];
        expected.sort();
        assert_eq!(names, expected);
        assert!(t.raw_text().contains("Do not put all in one array."));
    }

    #[test]
    fn every_bundled_template_parses() {
        let lib = TemplateLibrary::bundled();
        assert_eq!(lib.ids().count(), BUNDLED.len());
    }

    #[test]
    fn no_json_found() {
        assert_eq!(extract_json_objects("no json at all"), Err(PromptError::NoJsonFound));
        assert_eq!(extract_json_objects(""), Err(PromptError::NoJsonFound));
    }

    #[test]
    fn fenced_object() {
        let objs = extract_json_objects("```json\n{\"theKC\":\"Working Memory\"}\n```").unwrap();
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0].get_str("theKC").as_deref(), Some("Working Memory"));
        assert_eq!(objs[0].raw_span, "{\"theKC\":\"Working Memory\"}");
    }

    #[test]
    fn malformed_span_does_not_leak_inner_objects() {
        let text = r#"{"a": {"b": 1},} then {"c": 2}"#;
        let objs = extract_json_objects(text).unwrap();
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0].get_str("c").as_deref(), Some("2"));
    }

    #[test]
    fn braces_inside_strings() {
        let objs = extract_json_objects(r#"x {"a":"}{"} y {"b":"]"}"#).unwrap();
        assert_eq!(objs.len(), 2);
    }

    #[test]
    fn array_is_unwrapped_with_flag() {
        let objs = extract_json_objects(r#"[{"a":1},{"b":2}, 3]"#).unwrap();
        assert_eq!(objs.len(), 2);
        assert!(objs.iter().all(|o| o.unwrapped_from_array));
    }

    #[test]
    fn string_array_extraction() {
        let labels = extract_string_array("Sure: [\"a\", \"b\", 3]").unwrap();
        assert_eq!(labels, ["a", "b"]);
        assert_eq!(extract_string_array("[1, 2]"), Err(PromptError::NoJsonFound));
    }

    fn kc_object(kc: &str, skip: Option<&str>) -> ExtractedJsonObject {
        let mut map = Map::new();
        for key in KC_KEYS {
            if Some(key) == skip {
                continue;
            }
            let v = if key == "theKC" { kc.to_string() } else { format!("{key} value") };
            map.insert(key.to_string(), Value::String(v));
        }
        ExtractedJsonObject { raw_span: Value::Object(map.clone()).to_string(), parsed: map, unwrapped_from_array: false }
    }

    #[test]
    fn valid_kc_has_no_warnings() {
        let kc = validate_kc_object(&kc_object("Behavior Reinforcement", None), "English").unwrap();
        assert_eq!(kc.the_kc, "Behavior Reinforcement");
        assert!(kc.warnings.is_empty());
    }

    #[test]
    fn missing_key_listed() {
        assert_eq!(
            validate_kc_object(&kc_object("Memory", Some("theObjective")), "English"),
            Err(PromptError::MissingKey(vec!["theObjective".into()]))
        );
    }

    #[test]
    fn long_english_kc_flagged_not_rejected() {
        let name = "a very long knowledge component name";
        let kc = validate_kc_object(&kc_object(name, None), "English").unwrap();
        assert_eq!(kc.warnings, vec![KcWarning::LengthViolation]);
        let kc = validate_kc_object(&kc_object(name, None), "Chinese Mandarin").unwrap();
        assert!(kc.warnings.is_empty());
        let three = validate_kc_object(&kc_object("Short Term Memory", None), "english").unwrap();
        assert!(three.warnings.is_empty());
    }
}
