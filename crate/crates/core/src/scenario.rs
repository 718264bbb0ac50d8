//! Learning-scenario construction: the scenario spec, the category tree,
//! knowledge-component generation and the KC x wh-question matrix.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::prompt::{self, extract_json_objects, extract_string_array, validate_kc_object, PromptError, VariableSet};
use crate::provider::{ask, ChatMessage, ChatProvider, ProviderError, EXTRACTION_TEMPERATURE, DIALOGUE_TEMPERATURE};
use crate::wh::{self, WhType};

pub const MAX_CONCEPTS: u32 = 50;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("incomplete selection, missing: {}", join_levels(.0))]
    IncompleteSelection(Vec<TreeLevel>),
    #[error("unknown pedagogy `{0}`")]
    InvalidPedagogy(String),
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("extraction failed: {0}")]
    ExtractionFailed(String),
    #[error("no JSON object found in provider output")]
    NoJsonFound,
    #[error(transparent)]
    Prompt(PromptError),
}

impl From<PromptError> for ScenarioError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::NoJsonFound => ScenarioError::NoJsonFound,
            other => ScenarioError::Prompt(other),
        }
    }
}

fn join_levels(levels: &[TreeLevel]) -> String {
    levels.iter().map(|l| l.key()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pedagogy {
    Socratic,
    #[serde(rename = "BLOOM")]
    Bloom,
    #[serde(rename = "TIMSS")]
    Timss,
    GameBased,
    TeachableAgent,
}

impl Pedagogy {
    pub const ALL: [Pedagogy; 5] =
        [Pedagogy::Socratic, Pedagogy::Bloom, Pedagogy::Timss, Pedagogy::GameBased, Pedagogy::TeachableAgent];

    pub fn label(self) -> &'static str {
        match self {
            Pedagogy::Socratic => "Socratic",
            Pedagogy::Bloom => "BLOOM",
            Pedagogy::Timss => "TIMSS",
            Pedagogy::GameBased => "GameBased",
            Pedagogy::TeachableAgent => "TeachableAgent",
        }
    }
}

impl fmt::Display for Pedagogy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Pedagogy {
    type Err = ScenarioError;

    /// Accepts the canonical labels plus common spellings such as
    /// "Socratic Method" or "Game-based learning".
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        let p = if key.starts_with("socratic") {
            Pedagogy::Socratic
        } else if key.starts_with("bloom") {
            Pedagogy::Bloom
        } else if key.starts_with("timss") {
            Pedagogy::Timss
        } else if key.starts_with("gamebased") || key.starts_with("game") {
            Pedagogy::GameBased
        } else if key.starts_with("teachableagent") {
            Pedagogy::TeachableAgent
        } else {
            return Err(ScenarioError::InvalidPedagogy(s.to_string()));
        };
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyStatus {
    Implemented,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PedagogyDescriptor {
    pub pedagogy: Pedagogy,
    pub name: &'static str,
    pub description: &'static str,
    pub status: PolicyStatus,
}

/// The selectable pedagogies. Only the Socratic dialogue policy is built.
pub fn list_pedagogies() -> Vec<PedagogyDescriptor> {
    use Pedagogy::*;
    let d = |pedagogy, name, description| PedagogyDescriptor {
        pedagogy,
        name,
        description,
        status: if pedagogy == Socratic { PolicyStatus::Implemented } else { PolicyStatus::Stub },
    };
    vec![
        d(Socratic, "Socratic Method", "Guides learners with wh-questions instead of handing over answers."),
        d(Bloom, "BLOOM", "Tutors concepts and skills at all six levels of Bloom's taxonomy."),
        d(Timss, "TIMSS", "Tutors along the cognitive domains used by the TIMSS assessments."),
        d(GameBased, "Game-based Learning", "Wraps practice in a quiz game, e.g. Who Wants to Be a Millionaire."),
        d(TeachableAgent, "Teachable Agents", "The learner explains concepts to an agent that needs help understanding them."),
    ]
}

/// Everything the lesson-creation prompt and the dialogue need to know about
/// a scenario. Serializes with the template's variable names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(rename = "theLang")]
    pub lang: String,
    #[serde(rename = "theKC")]
    pub kc: String,
    #[serde(rename = "theNumber")]
    pub number: u32,
    #[serde(rename = "theDomain")]
    pub domain: String,
    #[serde(rename = "theTarget")]
    pub target: String,
    #[serde(rename = "theAvatar")]
    pub avatar: String,
    #[serde(rename = "theTutorName")]
    pub tutor_name: String,
    #[serde(rename = "theContext")]
    pub context: String,
    #[serde(rename = "theEnvironment")]
    pub environment: String,
    #[serde(rename = "theUserName")]
    pub user_name: String,
    #[serde(rename = "theType")]
    pub pedagogy: Pedagogy,
    #[serde(rename = "theObjective")]
    pub objective: String,
    #[serde(rename = "theStyle")]
    pub style: String,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(1..=MAX_CONCEPTS).contains(&self.number) {
            return Err(ScenarioError::InvalidSpec(format!("theNumber must be in 1..={MAX_CONCEPTS}")));
        }
        for (key, value) in self.display_fields() {
            if value.trim().is_empty() {
                return Err(ScenarioError::InvalidSpec(format!("{key} is empty")));
            }
        }
        Ok(())
    }

    fn display_fields(&self) -> [(&'static str, &str); 11] {
        [
            ("theLang", &self.lang),
            ("theKC", &self.kc),
            ("theDomain", &self.domain),
            ("theTarget", &self.target),
            ("theAvatar", &self.avatar),
            ("theTutorName", &self.tutor_name),
            ("theContext", &self.context),
            ("theEnvironment", &self.environment),
            ("theUserName", &self.user_name),
            ("theObjective", &self.objective),
            ("theStyle", &self.style),
        ]
    }

    /// The twelve lesson-creation variables (`theStyle` is not one of them).
    pub fn variables(&self) -> VariableSet {
        let mut vars = VariableSet::new();
        let number = self.number.to_string();
        let pedagogy = self.pedagogy.label();
        let pairs: [(&str, &str); 12] = [
            ("theLang", &self.lang),
            ("theKC", &self.kc),
            ("theNumber", &number),
            ("theDomain", &self.domain),
            ("theTarget", &self.target),
            ("theAvatar", &self.avatar),
            ("theTutorName", &self.tutor_name),
            ("theContext", &self.context),
            ("theEnvironment", &self.environment),
            ("theUserName", &self.user_name),
            ("theType", pedagogy),
            ("theObjective", &self.objective),
        ];
        for (k, v) in pairs {
            // blank values are caught by validate(); skip rather than fail here
            let _ = vars.bind(k, v);
        }
        vars
    }

    /// Bindings for a specific KC: its own name and context override the seed.
    fn variables_for(&self, kc: &KnowledgeComponent) -> VariableSet {
        let mut vars = self.variables();
        let _ = vars.bind("theKC", kc.the_kc.clone());
        if !kc.the_context.trim().is_empty() {
            let _ = vars.bind("theContext", kc.the_context.clone());
        }
        vars
    }
}

/// Caller-supplied values for fields that neither the tree nor the learner's
/// text determine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioDefaults {
    pub lang: String,
    pub number: u32,
    pub pedagogy: Pedagogy,
    pub user_name: String,
    pub tutor_name: String,
    pub avatar: String,
    pub style: String,
    pub target: String,
    pub environment: String,
}

impl Default for ScenarioDefaults {
    fn default() -> Self {
        Self {
            lang: "English".into(),
            number: 5,
            pedagogy: Pedagogy::Socratic,
            user_name: "Learner".into(),
            tutor_name: "Tutor".into(),
            avatar: "owl".into(),
            style: "Conversational".into(),
            target: "College Students".into(),
            environment: "Online Learning".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeLevel {
    Domain,
    Subdomain,
    Objective,
    Context,
    Concepts,
    #[serde(alias = "target_learners", alias = "targets")]
    Target,
    #[serde(alias = "environments")]
    Environment,
    Pedagogy,
}

impl TreeLevel {
    pub const ALL: [TreeLevel; 8] = [
        TreeLevel::Domain,
        TreeLevel::Subdomain,
        TreeLevel::Objective,
        TreeLevel::Context,
        TreeLevel::Concepts,
        TreeLevel::Target,
        TreeLevel::Environment,
        TreeLevel::Pedagogy,
    ];

    pub fn key(self) -> &'static str {
        match self {
            TreeLevel::Domain => "domain",
            TreeLevel::Subdomain => "subdomain",
            TreeLevel::Objective => "objective",
            TreeLevel::Context => "context",
            TreeLevel::Concepts => "concepts",
            TreeLevel::Target => "target",
            TreeLevel::Environment => "environment",
            TreeLevel::Pedagogy => "pedagogy",
        }
    }

    pub fn depth(self) -> usize {
        Self::ALL.iter().position(|l| *l == self).unwrap_or(0)
    }

    /// Levels whose candidates come from the LLM rather than a fixed list.
    pub fn is_generated(self) -> bool {
        matches!(self, TreeLevel::Objective | TreeLevel::Context | TreeLevel::Concepts)
    }
}

impl fmt::Display for TreeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for TreeLevel {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.trim().to_lowercase()))
            .map_err(|_| ScenarioError::InvalidSpec(format!("unknown tree level `{s}`")))
    }
}

const DOMAINS: &[&str] = &[
    "Computer Science",
    "Business",
    "Engineering",
    "Psychology",
    "Nursing",
    "Mathematics",
    "Physics",
    "Economics",
];

fn subdomains(domain: &str) -> &'static [&'static str] {
    match domain {
        "Psychology" => &[
            "Educational Psychology",
            "Cognitive Psychology",
            "Developmental Psychology",
            "Social Psychology",
            "Clinical Psychology",
        ],
        "Computer Science" => &["Algorithms", "Computer Architecture", "Machine Learning", "Databases", "Networking"],
        "Business" => &["Marketing", "Finance", "Management", "Entrepreneurship"],
        "Engineering" => &["Mechanical Engineering", "Electrical Engineering", "Civil Engineering"],
        "Nursing" => &["Patient Care", "Pharmacology", "Community Health"],
        "Mathematics" => &["Algebra", "Calculus", "Statistics", "Geometry"],
        "Physics" => &["Mechanics", "Electromagnetism", "Thermodynamics"],
        "Economics" => &["Microeconomics", "Macroeconomics", "Behavioral Economics"],
        _ => &[],
    }
}

const TARGETS: &[&str] =
    &["College Students", "Graduate Students", "Online Learners", "High School Students", "Working Professionals"];
const ENVIRONMENTS: &[&str] =
    &["Online Discussions", "Online Learning", "Classroom", "Blended Learning", "Self-Paced Study"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelState {
    pub level: TreeLevel,
    pub candidates: Vec<String>,
    pub selected: Option<String>,
}

/// The eight-level selection tree. A level can be selected or expanded only
/// once every level above it has a selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTree {
    levels: Vec<LevelState>,
}

impl Default for CategoryTree {
    fn default() -> Self {
        Self::new()
    }
}

impl CategoryTree {
    /// A tree with the fixed vocabularies filled in.
    pub fn new() -> Self {
        let levels = TreeLevel::ALL
            .into_iter()
            .map(|level| {
                let candidates: Vec<String> = match level {
                    TreeLevel::Domain => DOMAINS.iter().map(|s| s.to_string()).collect(),
                    TreeLevel::Target => TARGETS.iter().map(|s| s.to_string()).collect(),
                    TreeLevel::Environment => ENVIRONMENTS.iter().map(|s| s.to_string()).collect(),
                    TreeLevel::Pedagogy => list_pedagogies().iter().map(|p| p.name.to_string()).collect(),
                    _ => Vec::new(),
                };
                LevelState { level, candidates, selected: None }
            })
            .collect();
        Self { levels }
    }

    pub fn levels(&self) -> &[LevelState] {
        &self.levels
    }

    pub fn level(&self, level: TreeLevel) -> &LevelState {
        &self.levels[level.depth()]
    }

    pub fn candidates(&self, level: TreeLevel) -> &[String] {
        &self.level(level).candidates
    }

    pub fn selected(&self, level: TreeLevel) -> Option<&str> {
        self.level(level).selected.as_deref()
    }

    pub fn selections(&self) -> BTreeMap<TreeLevel, String> {
        self.levels.iter().filter_map(|l| Some((l.level, l.selected.clone()?))).collect()
    }

    fn unselected_above(&self, level: TreeLevel) -> Vec<TreeLevel> {
        self.levels[..level.depth()].iter().filter(|l| l.selected.is_none()).map(|l| l.level).collect()
    }

    /// Selects `label` at `level`, clearing selections below it. Labels that
    /// are not yet candidates are added.
    pub fn select(&mut self, level: TreeLevel, label: &str) -> Result<(), ScenarioError> {
        let missing = self.unselected_above(level);
        if !missing.is_empty() {
            return Err(ScenarioError::IncompleteSelection(missing));
        }
        let label = label.trim();
        if label.is_empty() {
            return Err(ScenarioError::InvalidSpec(format!("empty selection for {level}")));
        }
        let depth = level.depth();
        let state = &mut self.levels[depth];
        if !state.candidates.iter().any(|c| c == label) {
            state.candidates.push(label.to_string());
        }
        state.selected = Some(label.to_string());
        for below in &mut self.levels[depth + 1..] {
            below.selected = None;
        }
        if level == TreeLevel::Domain {
            let subs = &mut self.levels[TreeLevel::Subdomain.depth()].candidates;
            for s in subdomains(label) {
                if !subs.iter().any(|c| c == s) {
                    subs.push(s.to_string());
                }
            }
        }
        Ok(())
    }

    fn merge_candidates(&mut self, level: TreeLevel, labels: Vec<String>) {
        let state = &mut self.levels[level.depth()];
        for label in labels {
            let label = label.trim().to_string();
            if !label.is_empty() && !state.candidates.contains(&label) {
                state.candidates.push(label);
            }
        }
    }
}

/// Builds a spec from a complete set of tree selections.
///
/// The subdomain refines the domain choice in the tree but has no spec field
/// of its own.
pub fn build_from_tree(
    selections: &BTreeMap<TreeLevel, String>,
    defaults: &ScenarioDefaults,
) -> Result<ScenarioSpec, ScenarioError> {
    let missing: Vec<TreeLevel> = TreeLevel::ALL
        .into_iter()
        .filter(|l| selections.get(l).is_none_or(|v| v.trim().is_empty()))
        .collect();
    if !missing.is_empty() {
        return Err(ScenarioError::IncompleteSelection(missing));
    }
    let get = |l: TreeLevel| selections[&l].trim().to_string();
    let spec = ScenarioSpec {
        lang: defaults.lang.clone(),
        kc: get(TreeLevel::Concepts),
        number: defaults.number,
        domain: get(TreeLevel::Domain),
        target: get(TreeLevel::Target),
        avatar: defaults.avatar.clone(),
        tutor_name: defaults.tutor_name.clone(),
        context: get(TreeLevel::Context),
        environment: get(TreeLevel::Environment),
        user_name: defaults.user_name.clone(),
        pedagogy: get(TreeLevel::Pedagogy).parse()?,
        objective: get(TreeLevel::Objective),
        style: defaults.style.clone(),
    };
    spec.validate()?;
    Ok(spec)
}

fn field(obj: &prompt::ExtractedJsonObject, key: &str) -> Option<String> {
    obj.get_str(key).map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
}

fn spec_from_object(obj: &prompt::ExtractedJsonObject, defaults: &ScenarioDefaults) -> Option<ScenarioSpec> {
    let domain = field(obj, "theDomain")?;
    let kc = field(obj, "theKC")?;
    let objective = field(obj, "theObjective")?;
    let number = field(obj, "theNumber")
        .and_then(|n| n.parse::<u32>().ok())
        .filter(|n| (1..=MAX_CONCEPTS).contains(n))
        .unwrap_or(defaults.number);
    let pedagogy = field(obj, "theType").and_then(|t| t.parse().ok()).unwrap_or(defaults.pedagogy);
    let spec = ScenarioSpec {
        lang: field(obj, "theLang").unwrap_or_else(|| defaults.lang.clone()),
        kc,
        number,
        domain,
        target: field(obj, "theTarget").unwrap_or_else(|| defaults.target.clone()),
        avatar: field(obj, "theAvatar").unwrap_or_else(|| defaults.avatar.clone()),
        tutor_name: field(obj, "theTutorName").unwrap_or_else(|| defaults.tutor_name.clone()),
        context: field(obj, "theContext").unwrap_or_else(|| objective.clone()),
        environment: field(obj, "theEnvironment").unwrap_or_else(|| defaults.environment.clone()),
        user_name: field(obj, "theUserName").unwrap_or_else(|| defaults.user_name.clone()),
        pedagogy,
        objective,
        style: field(obj, "theStyle").unwrap_or_else(|| defaults.style.clone()),
    };
    spec.validate().ok().map(|_| spec)
}

/// Asks the provider to fill a spec from a learner's free-text request.
///
/// `theDomain`, `theKC` and `theObjective` must come back filled; every other
/// field falls back to `defaults` (the context falls back to the objective).
/// One repair round is attempted before giving up.
pub fn build_from_text(
    free_text: &str,
    provider: &dyn ChatProvider,
    defaults: &ScenarioDefaults,
) -> Result<ScenarioSpec, ScenarioError> {
    if free_text.trim().is_empty() {
        return Err(ScenarioError::Precondition("free text is empty".into()));
    }
    let vars = VariableSet::new().with("theRequest", free_text.trim())?;
    let prompt = prompt::bundled("scenario_extraction").render(&vars)?.text;
    let mut messages = vec![ChatMessage::user(prompt)];
    for _round in 0..2 {
        let reply = ask(provider, messages.clone(), EXTRACTION_TEMPERATURE)?;
        let parsed = extract_json_objects(&reply).ok().and_then(|objs| objs.iter().find_map(|o| spec_from_object(o, defaults)));
        if let Some(spec) = parsed {
            return Ok(spec);
        }
        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user(prompt::bundled("json_repair").raw_text()));
    }
    Err(ScenarioError::ExtractionFailed("no usable scenario object after one repair retry".into()))
}

/// Fills `level` with provider-suggested candidates. Existing candidates and
/// every selection are kept; new labels are appended without duplicates.
pub fn expand_tree_level(
    tree: &CategoryTree,
    level: TreeLevel,
    provider: &dyn ChatProvider,
    lang: &str,
) -> Result<CategoryTree, ScenarioError> {
    let missing = tree.unselected_above(level);
    if !missing.is_empty() {
        return Err(ScenarioError::Precondition(format!(
            "cannot expand {level} before selecting {}",
            join_levels(&missing)
        )));
    }
    let selections: String = tree.levels[..level.depth()]
        .iter()
        .filter_map(|l| Some(format!("- {}: {}", l.level, l.selected.as_deref()?)))
        .collect::<Vec<_>>()
        .join("\n");
    let vars = VariableSet::new()
        .with("theLang", if lang.trim().is_empty() { "English" } else { lang })?
        .with("theSelections", if selections.is_empty() { "(none)".to_string() } else { selections })?
        .with("theLevel", level.key())?;
    let prompt = prompt::bundled("tree_expansion").render(&vars)?.text;
    let mut messages = vec![ChatMessage::user(prompt)];
    for _round in 0..2 {
        let reply = ask(provider, messages.clone(), EXTRACTION_TEMPERATURE)?;
        if let Ok(labels) = extract_string_array(&reply) {
            let mut next = tree.clone();
            next.merge_candidates(level, labels);
            return Ok(next);
        }
        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user(prompt::bundled("json_repair").raw_text()));
    }
    Err(ScenarioError::ExtractionFailed(format!("no label array for {level} after one repair retry")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KcWarning {
    /// English `theKC` longer than three words.
    LengthViolation,
    /// Came out of a top-level array.
    UnwrappedFromArray,
}

/// One generated concept, carrying every key of the lesson-creation JSON
/// format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeComponent {
    #[serde(rename = "theAvatar")]
    pub the_avatar: String,
    #[serde(rename = "theLang")]
    pub the_lang: String,
    #[serde(rename = "theKC")]
    pub the_kc: String,
    #[serde(rename = "theType")]
    pub the_type: String,
    #[serde(rename = "theTarget")]
    pub the_target: String,
    #[serde(rename = "theTutorName")]
    pub the_tutor_name: String,
    #[serde(rename = "theContext")]
    pub the_context: String,
    #[serde(rename = "theEnvironment")]
    pub the_environment: String,
    #[serde(rename = "theUserName")]
    pub the_user_name: String,
    #[serde(rename = "theStyle")]
    pub the_style: String,
    #[serde(rename = "theObjective")]
    pub the_objective: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<KcWarning>,
}

impl KnowledgeComponent {
    /// A KC seeded from the spec itself, for callers that skip generation.
    pub fn from_spec(spec: &ScenarioSpec) -> Self {
        Self {
            the_avatar: spec.avatar.clone(),
            the_lang: spec.lang.clone(),
            the_kc: spec.kc.clone(),
            the_type: spec.pedagogy.label().to_string(),
            the_target: spec.target.clone(),
            the_tutor_name: spec.tutor_name.clone(),
            the_context: spec.context.clone(),
            the_environment: spec.environment.clone(),
            the_user_name: spec.user_name.clone(),
            the_style: spec.style.clone(),
            the_objective: spec.objective.clone(),
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenerationWarning {
    /// Fewer valid concepts than requested, even after the repair round.
    Shortfall { requested: u32, returned: u32 },
    /// Objects that failed the key contract.
    Rejected { count: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KcBatch {
    pub kcs: Vec<KnowledgeComponent>,
    pub warnings: Vec<GenerationWarning>,
}

fn collect_kcs(reply: &str, lang: &str, into: &mut Vec<KnowledgeComponent>) -> u32 {
    let Ok(objects) = extract_json_objects(reply) else { return 0 };
    let mut rejected = 0;
    for obj in &objects {
        match validate_kc_object(obj, lang) {
            Ok(kc) => into.push(kc),
            Err(_) => rejected += 1,
        }
    }
    rejected
}

/// Generates up to `spec.number` knowledge components with the
/// lesson-creation prompt, re-prompting once on a shortfall.
pub fn generate_kcs(spec: &ScenarioSpec, provider: &dyn ChatProvider) -> Result<KcBatch, ScenarioError> {
    spec.validate()?;
    let wanted = spec.number as usize;
    let prompt = prompt::bundled("lesson_creation").render(&spec.variables())?.text;
    let first = ask(provider, vec![ChatMessage::user(prompt.clone())], EXTRACTION_TEMPERATURE)?;
    let mut kcs = Vec::new();
    let mut rejected = collect_kcs(&first, &spec.lang, &mut kcs);
    if kcs.len() < wanted {
        let found = kcs.len();
        let vars = VariableSet::new()
            .with("theFound", found.to_string())?
            .with("theNumber", wanted.to_string())?
            .with("theMissing", (wanted - found).to_string())?
            .with("theDomain", spec.domain.clone())?;
        let repair = prompt::bundled("kc_shortfall").render(&vars)?.text;
        let messages = vec![ChatMessage::user(prompt), ChatMessage::assistant(first), ChatMessage::user(repair)];
        let second = ask(provider, messages, EXTRACTION_TEMPERATURE)?;
        rejected += collect_kcs(&second, &spec.lang, &mut kcs);
    }
    if kcs.is_empty() {
        return Err(ScenarioError::NoJsonFound);
    }
    kcs.truncate(wanted);
    let mut warnings = Vec::new();
    if rejected > 0 {
        warnings.push(GenerationWarning::Rejected { count: rejected });
    }
    if kcs.len() < wanted {
        warnings.push(GenerationWarning::Shortfall { requested: spec.number, returned: kcs.len() as u32 });
    }
    Ok(KcBatch { kcs, warnings })
}

/// A usable opening question: its first sentence carries the column's
/// wh-word and the whole question ends with `?`.
pub fn cell_is_valid(question: &str, wh: WhType) -> bool {
    let q = question.trim();
    let first = wh::sentences(q).into_iter().next().unwrap_or("");
    wh.occurs_in(first) && q.ends_with('?')
}

/// KC rows x wh-question columns of opening questions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioMatrix {
    pub kcs: Vec<KnowledgeComponent>,
    pub wh_types: [WhType; 5],
    /// `(kc index, wh index)` to question. Only valid questions are stored.
    pub cells: BTreeMap<(usize, usize), String>,
    /// Cells that stayed noncompliant after regeneration.
    pub invalid: Vec<(usize, usize)>,
}

impl ScenarioMatrix {
    pub fn new(kcs: Vec<KnowledgeComponent>) -> Self {
        Self { kcs, wh_types: WhType::ALL, cells: BTreeMap::new(), invalid: Vec::new() }
    }

    pub fn cell(&self, kc_index: usize, wh: WhType) -> Option<&str> {
        self.cells.get(&(kc_index, wh.index())).map(String::as_str)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixWire {
    kcs: Vec<KnowledgeComponent>,
    wh: Vec<WhType>,
    cells: BTreeMap<String, String>,
    #[serde(default)]
    invalid: Vec<String>,
}

fn cell_key((r, c): (usize, usize)) -> String {
    format!("{r},{c}")
}

fn parse_cell_key(key: &str) -> Option<(usize, usize)> {
    let (r, c) = key.split_once(',')?;
    Some((r.trim().parse().ok()?, c.trim().parse().ok()?))
}

impl Serialize for ScenarioMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MatrixWire {
            kcs: self.kcs.clone(),
            wh: self.wh_types.to_vec(),
            cells: self.cells.iter().map(|(k, v)| (cell_key(*k), v.clone())).collect(),
            invalid: self.invalid.iter().map(|k| cell_key(*k)).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScenarioMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let wire = MatrixWire::deserialize(d)?;
        if wire.wh != WhType::ALL {
            return Err(D::Error::custom("wh must be [What, Why, How, Who, When]"));
        }
        let mut cells = BTreeMap::new();
        for (k, v) in wire.cells {
            let key = parse_cell_key(&k).ok_or_else(|| D::Error::custom(format!("bad cell key `{k}`")))?;
            cells.insert(key, v);
        }
        let invalid = wire
            .invalid
            .iter()
            .map(|k| parse_cell_key(k).ok_or_else(|| D::Error::custom(format!("bad cell key `{k}`"))))
            .collect::<Result<_, _>>()?;
        Ok(Self { kcs: wire.kcs, wh_types: WhType::ALL, cells, invalid })
    }
}

fn request_questions(
    spec: &ScenarioSpec,
    kc: &KnowledgeComponent,
    wanted: &[WhType],
    provider: &dyn ChatProvider,
) -> Result<BTreeMap<WhType, String>, ScenarioError> {
    let keys = wanted.iter().map(|w| format!("\"{}\"", w.word())).collect::<Vec<_>>().join(", ");
    let mut vars = spec.variables_for(kc);
    vars.bind("theWhKeys", keys)?;
    let prompt = prompt::bundled("matrix_questions").render(&vars)?.text;
    let reply = ask(provider, vec![ChatMessage::user(prompt)], DIALOGUE_TEMPERATURE)?;
    let mut out = BTreeMap::new();
    if let Ok(objects) = extract_json_objects(&reply) {
        for wh in wanted {
            let found = objects.iter().find_map(|o| {
                o.parsed
                    .iter()
                    .find(|(k, _)| k.trim().trim_end_matches('?').eq_ignore_ascii_case(wh.word()))
                    .and_then(|(_, v)| v.as_str())
            });
            if let Some(q) = found {
                out.insert(*wh, q.trim().to_string());
            }
        }
    }
    Ok(out)
}

/// Opening questions for one KC: one request for all five wh-types, then one
/// more request for whichever cells came back noncompliant.
fn questions_for_kc(
    spec: &ScenarioSpec,
    kc: &KnowledgeComponent,
    provider: &dyn ChatProvider,
) -> Result<(BTreeMap<WhType, String>, Vec<WhType>), ScenarioError> {
    let mut valid = BTreeMap::new();
    let mut pending: Vec<WhType> = WhType::ALL.to_vec();
    for _round in 0..2 {
        let got = request_questions(spec, kc, &pending, provider)?;
        pending.retain(|wh| match got.get(wh) {
            Some(q) if cell_is_valid(q, *wh) => {
                valid.insert(*wh, q.clone());
                false
            }
            _ => true,
        });
        if pending.is_empty() {
            break;
        }
    }
    Ok((valid, pending))
}

/// Builds the KC x wh matrix with one provider call per KC (plus at most one
/// regeneration call per KC).
pub fn generate_matrix(
    spec: &ScenarioSpec,
    kcs: &[KnowledgeComponent],
    provider: &dyn ChatProvider,
) -> Result<ScenarioMatrix, ScenarioError> {
    if kcs.is_empty() {
        return Err(ScenarioError::Precondition("no knowledge components".into()));
    }
    let mut matrix = ScenarioMatrix::new(kcs.to_vec());
    for (row, kc) in kcs.iter().enumerate() {
        let (valid, failed) = questions_for_kc(spec, kc, provider)?;
        for (wh, q) in valid {
            matrix.cells.insert((row, wh.index()), q);
        }
        matrix.invalid.extend(failed.into_iter().map(|wh| (row, wh.index())));
    }
    Ok(matrix)
}

/// Regenerates a single opening question, for sessions started from a cell
/// that was left empty.
pub fn regenerate_cell(
    spec: &ScenarioSpec,
    kc: &KnowledgeComponent,
    wh: WhType,
    provider: &dyn ChatProvider,
) -> Result<Option<String>, ScenarioError> {
    let got = request_questions(spec, kc, &[wh], provider)?;
    Ok(got.get(&wh).filter(|q| cell_is_valid(q, wh)).cloned())
}
