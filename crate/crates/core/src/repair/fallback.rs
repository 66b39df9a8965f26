use std::collections::BTreeMap;
use std::fmt;

use serde_json::{Map, Value};

use super::{repair_response, RepairOutcome, RepairReport};
use crate::hashing::seeded_hash;

pub const DEFAULT_MAX_RECTIFY_ROUNDS: u32 = 2;

pub const HAIR_COLOURS: [&str; 5] = ["black", "brown", "blonde", "red", "grey"];
pub const EYE_COLOURS: [&str; 5] = ["brown", "blue", "green", "grey", "hazel"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Text,
    /// A list of strings; a comma-separated string is split.
    TextList,
    Number,
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Object,
    /// An array of objects, each following the field list.
    List,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub shape: Shape,
    pub fields: Vec<FieldSpec>,
}

impl Schema {
    pub fn object(fields: &[(&str, FieldKind)]) -> Self {
        Self::new(Shape::Object, fields)
    }

    pub fn list(fields: &[(&str, FieldKind)]) -> Self {
        Self::new(Shape::List, fields)
    }

    fn new(shape: Shape, fields: &[(&str, FieldKind)]) -> Self {
        Self {
            shape,
            fields: fields
                .iter()
                .map(|(name, kind)| FieldSpec {
                    name: name.to_string(),
                    kind: *kind,
                })
                .collect(),
        }
    }

    /// True when `value` has this schema's shape and every present field has
    /// its declared kind. Absent fields are allowed.
    pub fn conforms(&self, value: &Value) -> bool {
        match self.shape {
            Shape::Object => value.as_object().is_some_and(|o| self.object_conforms(o)),
            Shape::List => value
                .as_array()
                .is_some_and(|a| a.iter().all(|v| v.as_object().is_some_and(|o| self.object_conforms(o)))),
        }
    }

    fn object_conforms(&self, obj: &Map<String, Value>) -> bool {
        obj.iter().all(|(k, v)| {
            self.fields.iter().find(|f| &f.name == k).is_some_and(|f| match f.kind {
                FieldKind::Text => v.is_string(),
                FieldKind::TextList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
                FieldKind::Number => v.is_number(),
                FieldKind::Any => !v.is_null(),
            })
        })
    }
}

/// What to put in a field the response failed to provide.
#[derive(Clone)]
pub enum FieldRule {
    LeaveNull,
    Fixed(Value),
    /// Called with a seed derived from the policy seed and the field name.
    Generated(fn(u64) -> Value),
}

impl fmt::Debug for FieldRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LeaveNull => f.write_str("LeaveNull"),
            Self::Fixed(v) => f.debug_tuple("Fixed").field(v).finish(),
            Self::Generated(_) => f.write_str("Generated(..)"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FallbackPolicy {
    rules: BTreeMap<String, FieldRule>,
    seed: u64,
}

impl FallbackPolicy {
    /// Leave-null for every field of the schema.
    pub fn for_schema(schema: &Schema) -> Self {
        Self {
            rules: schema
                .fields
                .iter()
                .map(|f| (f.name.clone(), FieldRule::LeaveNull))
                .collect(),
            seed: 0,
        }
    }

    pub fn with_rule(mut self, field: &str, rule: FieldRule) -> Self {
        self.rules.insert(field.to_string(), rule);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn rule(&self, field: &str) -> &FieldRule {
        self.rules.get(field).unwrap_or(&FieldRule::LeaveNull)
    }

    pub fn covers(&self, schema: &Schema) -> bool {
        schema.fields.iter().all(|f| self.rules.contains_key(&f.name))
    }

    fn default_for(&self, field: &str, salt: usize) -> Option<Value> {
        match self.rule(field) {
            FieldRule::LeaveNull => None,
            FieldRule::Fixed(v) => Some(v.clone()),
            FieldRule::Generated(g) => {
                Some(g(seeded_hash(self.seed, &[field, &salt.to_string()])))
            }
        }
    }
}

/// A hair colour and an eye colour picked from fixed palettes.
pub fn default_appearance(seed: u64) -> Value {
    let hair = HAIR_COLOURS[(seed % 5) as usize];
    let eyes = EYE_COLOURS[((seed / 5) % 5) as usize];
    Value::String(format!("{hair} hair, {eyes} eyes"))
}

/// Asks the model to fix its own malformed output. Returning `None` means
/// no new text could be obtained.
pub trait Rectifier {
    fn rectify(&self, malformed: &str) -> Option<String>;
}

impl<F> Rectifier for F
where
    F: Fn(&str) -> Option<String>,
{
    fn rectify(&self, malformed: &str) -> Option<String> {
        self(malformed)
    }
}

fn normalize_key(k: &str) -> String {
    k.trim().to_lowercase().replace([' ', '-'], "_")
}

fn lookup<'a>(obj: &'a Map<String, Value>, field: &str) -> Option<&'a Value> {
    if let Some(v) = obj.get(field) {
        return Some(v);
    }
    let want = normalize_key(field);
    let singular = want.strip_suffix('s').unwrap_or(&want).to_string();
    obj.iter()
        .find(|(k, _)| normalize_key(k) == want)
        .or_else(|| {
            obj.iter().find(|(k, _)| {
                let k = normalize_key(k);
                k.strip_suffix('s').unwrap_or(&k) == singular
            })
        })
        .map(|(_, v)| v)
}

fn coerce(kind: FieldKind, v: &Value) -> Option<Value> {
    match (kind, v) {
        (_, Value::Null) => None,
        (FieldKind::Any, v) => Some(v.clone()),
        (FieldKind::Text, Value::String(s)) => Some(Value::String(s.clone())),
        (FieldKind::Text, Value::Number(n)) => Some(Value::String(n.to_string())),
        (FieldKind::Text, Value::Bool(b)) => Some(Value::String(b.to_string())),
        (FieldKind::Text, Value::Array(items)) => {
            let parts: Vec<String> = items.iter().filter_map(scalar_text).collect();
            (!parts.is_empty()).then(|| Value::String(parts.join(", ")))
        }
        (FieldKind::Text, Value::Object(_)) => None,
        (FieldKind::TextList, Value::Array(items)) => Some(Value::Array(
            items
                .iter()
                .filter_map(scalar_text)
                .map(Value::String)
                .collect(),
        )),
        (FieldKind::TextList, Value::String(s)) => Some(Value::Array(
            s.split(',')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(|p| Value::String(p.to_string()))
                .collect(),
        )),
        (FieldKind::TextList, Value::Number(_) | Value::Bool(_)) => {
            scalar_text(v).map(|s| Value::Array(vec![Value::String(s)]))
        }
        (FieldKind::TextList, Value::Object(_)) => None,
        (FieldKind::Number, Value::Number(n)) => Some(Value::Number(n.clone())),
        (FieldKind::Number, Value::String(s)) => s
            .trim()
            .parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
            .map(Value::Number),
        (FieldKind::Number, _) => None,
    }
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn conform_object(
    schema: &Schema,
    obj: &Map<String, Value>,
    policy: &FallbackPolicy,
    salt: usize,
    defaulted: &mut Vec<String>,
) -> Map<String, Value> {
    let mut out = Map::new();
    for field in &schema.fields {
        let value = lookup(obj, &field.name).and_then(|v| coerce(field.kind, v));
        let value = match value {
            Some(v) => Some(v),
            None => {
                let d = policy.default_for(&field.name, salt);
                if d.is_some() && !defaulted.contains(&field.name) {
                    defaulted.push(field.name.clone());
                }
                d.and_then(|v| coerce(field.kind, &v))
            }
        };
        if let Some(v) = value {
            out.insert(field.name.clone(), v);
        }
    }
    out
}

/// Shapes a parsed value to the schema, or `None` when it cannot be.
fn conform(
    schema: &Schema,
    value: &Value,
    policy: &FallbackPolicy,
    defaulted: &mut Vec<String>,
) -> Option<Value> {
    match schema.shape {
        Shape::Object => {
            let obj = match value {
                Value::Object(o) => o,
                Value::Array(items) => items.iter().find_map(Value::as_object)?,
                _ => return None,
            };
            Some(Value::Object(conform_object(schema, obj, policy, 0, defaulted)))
        }
        Shape::List => {
            let items: Vec<Value> = match value {
                Value::Array(items) => items.clone(),
                Value::Object(o) => {
                    // {"characters": [...]} style wrappers.
                    match o.values().find(|v| {
                        v.as_array().is_some_and(|a| !a.is_empty() && a.iter().all(Value::is_object))
                    }) {
                        Some(Value::Array(inner)) => inner.clone(),
                        _ => vec![value.clone()],
                    }
                }
                _ => return None,
            };
            let first = schema.fields.first()?;
            let conformed = items
                .iter()
                .enumerate()
                .filter_map(|(i, item)| match item {
                    Value::Object(o) => Some(conform_object(schema, o, policy, i, defaulted)),
                    Value::String(s) if first.kind == FieldKind::Text => {
                        let mut o = Map::new();
                        o.insert(first.name.clone(), Value::String(s.clone()));
                        Some(conform_object(schema, &o, policy, i, defaulted))
                    }
                    _ => None,
                })
                .filter(|o| !o.is_empty())
                .map(Value::Object)
                .collect();
            Some(Value::Array(conformed))
        }
    }
}

fn fallback_value(schema: &Schema, policy: &FallbackPolicy, defaulted: &mut Vec<String>) -> Value {
    match schema.shape {
        Shape::Object => Value::Object(conform_object(schema, &Map::new(), policy, 0, defaulted)),
        Shape::List => Value::Array(Vec::new()),
    }
}

pub fn parse_with_fallback(
    raw: &str,
    schema: &Schema,
    policy: &FallbackPolicy,
    rectifier: Option<&dyn Rectifier>,
) -> (Value, RepairReport) {
    parse_with_fallback_rounds(raw, schema, policy, rectifier, DEFAULT_MAX_RECTIFY_ROUNDS)
}

/// Extract, repair and strictly parse `raw`; when that fails, hand the text
/// to the rectifier up to `max_rounds` times; when that fails too, build the
/// value from the policy alone. Always returns a value of the schema's shape.
pub fn parse_with_fallback_rounds(
    raw: &str,
    schema: &Schema,
    policy: &FallbackPolicy,
    rectifier: Option<&dyn Rectifier>,
    max_rounds: u32,
) -> (Value, RepairReport) {
    let mut defaulted = Vec::new();
    let mut report = repair_response(raw);
    if let Some(value) = report.value.as_ref().and_then(|v| conform(schema, v, policy, &mut defaulted)) {
        report.defaulted_fields = defaulted;
        return (value, report);
    }

    let mut rounds = 0;
    if let Some(rectifier) = rectifier {
        let mut malformed = raw.to_string();
        while rounds < max_rounds {
            rounds += 1;
            let Some(fixed) = rectifier.rectify(&malformed) else {
                continue;
            };
            let mut attempt = repair_response(&fixed);
            let mut attempt_defaulted = Vec::new();
            if let Some(value) = attempt
                .value
                .as_ref()
                .and_then(|v| conform(schema, v, policy, &mut attempt_defaulted))
            {
                attempt.outcome = RepairOutcome::Repaired;
                attempt.rectify_rounds = rounds;
                attempt.defaulted_fields = attempt_defaulted;
                return (value, attempt);
            }
            malformed = fixed;
        }
    }

    let value = fallback_value(schema, policy, &mut defaulted);
    report.outcome = RepairOutcome::Failed;
    report.value = None;
    report.rectify_rounds = rounds;
    report.defaulted_fields = defaulted;
    (value, report)
}
