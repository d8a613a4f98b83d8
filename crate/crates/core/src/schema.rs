//! Tabular feature space description and input encoding.
//!
//! Encoding layout follows feature declaration order. Numeric features take
//! one slot, min-max scaled to [0, 1] (integral features are rounded first);
//! categorical features take one slot per label as a one-hot block. Network
//! files must be trained against exactly this layout.
//!
//! Schema JSON:
//!
//! ```json
//! {"features": [
//!    {"name": "age", "kind": "numeric", "lower": 17, "upper": 90, "integral": true},
//!    {"name": "sex", "kind": "categorical", "values": ["Female", "Male"], "protected": true}],
//!  "consistency_rules": [
//!    {"forbidden": [{"feature": "sex", "value": "Female"},
//!                   {"feature": "relationship", "value": "Husband"}]}]}
//! ```

use std::ops::Range;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_PROTECTED_DOMAIN: usize = 256;
const MAX_REJECTION_TRIES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric {
        lower: f64,
        upper: f64,
        #[serde(default)]
        integral: bool,
    },
    Categorical {
        values: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
    #[serde(default)]
    pub protected: bool,
}

impl FeatureSpec {
    pub fn numeric(name: &str, lower: f64, upper: f64, integral: bool) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric {
                lower,
                upper,
                integral,
            },
            protected: false,
        }
    }

    pub fn categorical(name: &str, values: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical {
                values: values.iter().map(|v| v.to_string()).collect(),
            },
            protected: false,
        }
    }

    pub fn protected(mut self) -> Self {
        self.protected = true;
        self
    }

    pub fn width(&self) -> usize {
        match &self.kind {
            FeatureKind::Numeric { .. } => 1,
            FeatureKind::Categorical { values } => values.len(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }

    /// (lower, upper, integral) for numeric features.
    pub fn numeric_range(&self) -> Option<(f64, f64, bool)> {
        match self.kind {
            FeatureKind::Numeric {
                lower,
                upper,
                integral,
            } => Some((lower, upper, integral)),
            FeatureKind::Categorical { .. } => None,
        }
    }

    pub fn labels(&self) -> Option<&[String]> {
        match &self.kind {
            FeatureKind::Categorical { values } => Some(values),
            FeatureKind::Numeric { .. } => None,
        }
    }

    /// Number of admissible values for finite domains.
    pub fn domain_size(&self) -> Option<usize> {
        match &self.kind {
            FeatureKind::Categorical { values } => Some(values.len()),
            FeatureKind::Numeric {
                lower,
                upper,
                integral: true,
            } => Some((upper.floor() - lower.ceil()) as usize + 1),
            FeatureKind::Numeric { .. } => None,
        }
    }

    fn finite_domain(&self) -> Vec<FeatureValue> {
        match &self.kind {
            FeatureKind::Categorical { values } => (0..values.len()).map(FeatureValue::Cat).collect(),
            FeatureKind::Numeric { lower, upper, .. } => {
                let (lo, hi) = (lower.ceil() as i64, upper.floor() as i64);
                (lo..=hi).map(|v| FeatureValue::Num(v as f64)).collect()
            }
        }
    }

    fn check_value(&self, value: FeatureValue) -> std::result::Result<(), String> {
        match (&self.kind, value) {
            (FeatureKind::Numeric { lower, upper, .. }, FeatureValue::Num(v)) => {
                if !v.is_finite() || v < *lower || v > *upper {
                    Err(format!("value {v} outside [{lower}, {upper}]"))
                } else {
                    Ok(())
                }
            }
            (FeatureKind::Categorical { values }, FeatureValue::Cat(i)) if i < values.len() => Ok(()),
            (FeatureKind::Categorical { values }, FeatureValue::Cat(i)) => {
                Err(format!("label index {i} out of range for {} labels", values.len()))
            }
            _ => Err("value kind does not match feature kind".into()),
        }
    }

    fn parse_raw(&self, raw: &RawValue) -> std::result::Result<FeatureValue, String> {
        let value = match (&self.kind, raw) {
            (FeatureKind::Numeric { .. }, RawValue::Number(v)) => FeatureValue::Num(*v),
            (FeatureKind::Numeric { .. }, RawValue::Label(s)) => FeatureValue::Num(
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("cannot parse `{s}` as a number"))?,
            ),
            (FeatureKind::Categorical { values }, RawValue::Label(s)) => FeatureValue::Cat(
                values
                    .iter()
                    .position(|v| v == s)
                    .ok_or_else(|| format!("unknown label `{s}`"))?,
            ),
            (FeatureKind::Categorical { values }, RawValue::Number(v)) => {
                let text = format_number(*v);
                FeatureValue::Cat(
                    values
                        .iter()
                        .position(|l| *l == text)
                        .ok_or_else(|| format!("unknown label `{text}`"))?,
                )
            }
        };
        self.check_value(value)?;
        Ok(value)
    }

    fn to_raw(&self, value: FeatureValue) -> RawValue {
        match (&self.kind, value) {
            (FeatureKind::Categorical { values }, FeatureValue::Cat(i)) => RawValue::Label(values[i].clone()),
            (_, FeatureValue::Num(v)) => RawValue::Number(v),
            (_, FeatureValue::Cat(i)) => RawValue::Number(i as f64),
        }
    }

    pub fn format_value(&self, value: FeatureValue) -> String {
        match self.to_raw(value) {
            RawValue::Label(s) => s,
            RawValue::Number(v) => format_number(v),
        }
    }
}

pub(crate) fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// External (file-level) feature value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Number(f64),
    Label(String),
}

/// Feature name to raw value, in schema order.
pub type RawInstance = IndexMap<String, RawValue>;

/// Internal feature value: a number or a label index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureValue {
    Num(f64),
    Cat(usize),
}

impl FeatureValue {
    pub fn as_num(self) -> f64 {
        match self {
            FeatureValue::Num(v) => v,
            FeatureValue::Cat(i) => i as f64,
        }
    }

    pub fn matches(self, other: FeatureValue) -> bool {
        match (self, other) {
            (FeatureValue::Num(a), FeatureValue::Num(b)) => (a - b).abs() < 1e-9,
            (FeatureValue::Cat(a), FeatureValue::Cat(b)) => a == b,
            _ => false,
        }
    }
}

/// One row of the feature space; values aligned with schema feature order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub values: Vec<FeatureValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleAtom {
    pub feature: String,
    pub value: RawValue,
}

/// Conjunction of feature=value atoms that must never hold together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRule {
    pub forbidden: Vec<RuleAtom>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SchemaFile {
    features: Vec<FeatureSpec>,
    #[serde(default)]
    consistency_rules: Vec<ConsistencyRule>,
}

#[derive(Clone, Debug)]
struct CompiledRule {
    atoms: Vec<(usize, FeatureValue)>,
    protected_only: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
    consistency_rules: Vec<ConsistencyRule>,
    layout: Vec<Range<usize>>,
    input_width: usize,
    protected: Vec<usize>,
    unprotected: Vec<usize>,
    combos: Vec<Vec<FeatureValue>>,
    rules: Vec<CompiledRule>,
}

impl TryFrom<SchemaFile> for FeatureSchema {
    type Error = Error;

    fn try_from(file: SchemaFile) -> Result<Self> {
        FeatureSchema::new(file.features, file.consistency_rules)
    }
}

impl From<FeatureSchema> for SchemaFile {
    fn from(schema: FeatureSchema) -> Self {
        SchemaFile {
            features: schema.features,
            consistency_rules: schema.consistency_rules,
        }
    }
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>, consistency_rules: Vec<ConsistencyRule>) -> Result<Self> {
        let err = |m: String| Err(Error::Schema(m));
        if features.is_empty() {
            return err("schema declares no features".into());
        }
        let mut layout = Vec::with_capacity(features.len());
        let mut offset = 0;
        for (i, f) in features.iter().enumerate() {
            if features[..i].iter().any(|g| g.name == f.name) {
                return err(format!("duplicate feature `{}`", f.name));
            }
            match &f.kind {
                FeatureKind::Numeric {
                    lower,
                    upper,
                    integral,
                } => {
                    if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                        return err(format!("feature `{}` needs finite lower < upper", f.name));
                    }
                    if *integral && upper.floor() < lower.ceil() {
                        return err(format!("integral feature `{}` has no integer in range", f.name));
                    }
                    if f.protected && !integral {
                        return err(format!("protected feature `{}` must be categorical or integral", f.name));
                    }
                }
                FeatureKind::Categorical { values } => {
                    let distinct = values
                        .iter()
                        .enumerate()
                        .all(|(j, v)| !values[..j].contains(v));
                    if values.len() < 2 || !distinct {
                        return err(format!("categorical feature `{}` needs >= 2 distinct labels", f.name));
                    }
                }
            }
            if f.protected && f.domain_size().unwrap_or(usize::MAX) > MAX_PROTECTED_DOMAIN {
                return err(format!("protected feature `{}` has too large a domain", f.name));
            }
            layout.push(offset..offset + f.width());
            offset += f.width();
        }
        let protected: Vec<usize> = (0..features.len()).filter(|&i| features[i].protected).collect();
        let unprotected: Vec<usize> = (0..features.len()).filter(|&i| !features[i].protected).collect();
        if protected.is_empty() {
            return err("schema declares no protected feature".into());
        }

        let mut rules = Vec::with_capacity(consistency_rules.len());
        for (r, rule) in consistency_rules.iter().enumerate() {
            if rule.forbidden.is_empty() {
                return err(format!("consistency rule {r} is empty"));
            }
            let mut atoms = Vec::new();
            for atom in &rule.forbidden {
                let idx = features
                    .iter()
                    .position(|f| f.name == atom.feature)
                    .ok_or_else(|| Error::Schema(format!("rule {r}: unknown feature `{}`", atom.feature)))?;
                let spec = &features[idx];
                if !spec.protected && !spec.is_categorical() {
                    return err(format!(
                        "rule {r}: non-protected feature `{}` must be categorical to appear in a rule",
                        spec.name
                    ));
                }
                let value = spec
                    .parse_raw(&atom.value)
                    .map_err(|m| Error::Schema(format!("rule {r}: {m}")))?;
                atoms.push((idx, value));
            }
            let protected_only = atoms.iter().all(|(i, _)| features[*i].protected);
            rules.push(CompiledRule { atoms, protected_only });
        }

        let mut schema = Self {
            features,
            consistency_rules,
            layout,
            input_width: offset,
            protected,
            unprotected,
            combos: Vec::new(),
            rules,
        };
        schema.combos = schema.build_combos();
        if schema.combos.len() < 2 {
            return err(format!(
                "protected space has {} valid combination(s); at least 2 required",
                schema.combos.len()
            ));
        }
        Ok(schema)
    }

    fn build_combos(&self) -> Vec<Vec<FeatureValue>> {
        let domains: Vec<Vec<FeatureValue>> =
            self.protected.iter().map(|&i| self.features[i].finite_domain()).collect();
        let mut out = Vec::new();
        let mut odometer = vec![0usize; domains.len()];
        'outer: loop {
            let combo: Vec<FeatureValue> = odometer.iter().zip(&domains).map(|(&d, dom)| dom[d]).collect();
            let forbidden = self.rules.iter().filter(|r| r.protected_only).any(|r| {
                r.atoms.iter().all(|&(f, v)| {
                    let pos = self.protected.iter().position(|&p| p == f).expect("protected atom");
                    combo[pos].matches(v)
                })
            });
            if !forbidden {
                out.push(combo);
            }
            for d in (0..domains.len()).rev() {
                odometer[d] += 1;
                if odometer[d] < domains[d].len() {
                    continue 'outer;
                }
                odometer[d] = 0;
            }
            break;
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| match e.is_data() {
            true => Error::Schema(format!("{}: {e}", path.display())),
            false => Error::json(path, e),
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn feature(&self, index: usize) -> &FeatureSpec {
        &self.features[index]
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    /// Input-vector index range of feature `index`.
    pub fn slots(&self, index: usize) -> Range<usize> {
        self.layout[index].clone()
    }

    pub fn protected_features(&self) -> &[usize] {
        &self.protected
    }

    pub fn unprotected_features(&self) -> &[usize] {
        &self.unprotected
    }

    /// Protected value combinations that survive protected-only rules, in
    /// lexicographic order over protected declaration order.
    pub fn protected_combinations(&self) -> &[Vec<FeatureValue>] {
        &self.combos
    }

    /// Number of distinct protected groups.
    pub fn k(&self) -> usize {
        self.combos.len()
    }

    pub fn combo_label(&self, combo: usize) -> String {
        self.protected
            .iter()
            .zip(&self.combos[combo])
            .map(|(&f, &v)| format!("{}={}", self.features[f].name, self.features[f].format_value(v)))
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn combo_of(&self, instance: &Instance) -> Option<usize> {
        self.combos.iter().position(|c| {
            self.protected
                .iter()
                .zip(c)
                .all(|(&f, &v)| instance.values[f].matches(v))
        })
    }

    pub fn validate(&self, instance: &Instance) -> Result<()> {
        if instance.values.len() != self.features.len() {
            return Err(Error::Instance(format!(
                "expected {} feature values, got {}",
                self.features.len(),
                instance.values.len()
            )));
        }
        for (f, &v) in self.features.iter().zip(&instance.values) {
            f.check_value(v)
                .map_err(|m| Error::Instance(format!("feature `{}`: {m}", f.name)))?;
        }
        Ok(())
    }

    /// True when some consistency rule forbids this instance.
    pub fn violates_rules(&self, instance: &Instance) -> bool {
        self.rules
            .iter()
            .any(|r| r.atoms.iter().all(|&(f, v)| instance.values[f].matches(v)))
    }

    pub(crate) fn rule_atoms(&self) -> impl Iterator<Item = &[(usize, FeatureValue)]> {
        self.rules.iter().filter(|r| !r.protected_only).map(|r| r.atoms.as_slice())
    }

    pub fn encode<T: Scalar>(&self, instance: &Instance) -> Result<Vec<T>> {
        self.validate(instance)?;
        let mut out = vec![T::zero(); self.input_width];
        self.encode_into(instance, &mut out);
        Ok(out)
    }

    /// Encodes without validation; `out` must have `input_width` entries.
    pub fn encode_into<T: Scalar>(&self, instance: &Instance, out: &mut [T]) {
        for (i, f) in self.features.iter().enumerate() {
            self.encode_feature(i, f, instance.values[i], out);
        }
    }

    fn encode_feature<T: Scalar>(&self, index: usize, spec: &FeatureSpec, value: FeatureValue, out: &mut [T]) {
        let slots = self.layout[index].clone();
        match (&spec.kind, value) {
            (
                FeatureKind::Numeric {
                    lower,
                    upper,
                    integral,
                },
                v,
            ) => {
                let mut v = v.as_num();
                if *integral {
                    v = v.round();
                }
                out[slots.start] = T::lit(((v - lower) / (upper - lower)).clamp(0.0, 1.0));
            }
            (FeatureKind::Categorical { .. }, v) => {
                let hot = match v {
                    FeatureValue::Cat(c) => c,
                    FeatureValue::Num(x) => x as usize,
                };
                for (j, slot) in slots.enumerate() {
                    out[slot] = if j == hot { T::one() } else { T::zero() };
                }
            }
        }
    }

    /// Nearest-domain inverse of [`encode`](Self::encode).
    pub fn decode<T: Scalar>(&self, vector: &[T]) -> Result<Instance> {
        if vector.len() != self.input_width {
            return Err(Error::Dimension {
                expected: self.input_width,
                got: vector.len(),
            });
        }
        let values = self
            .features
            .iter()
            .zip(&self.layout)
            .map(|(f, slots)| match &f.kind {
                FeatureKind::Numeric {
                    lower,
                    upper,
                    integral,
                } => {
                    let u = vector[slots.start].as_f64().clamp(0.0, 1.0);
                    let mut v = lower + u * (upper - lower);
                    if *integral {
                        v = v.round().clamp(lower.ceil(), upper.floor());
                    }
                    FeatureValue::Num(v.clamp(*lower, *upper))
                }
                FeatureKind::Categorical { .. } => {
                    let block = &vector[slots.clone()];
                    let mut best = 0;
                    for (j, &v) in block.iter().enumerate().skip(1) {
                        if v > block[best] {
                            best = j;
                        }
                    }
                    FeatureValue::Cat(best)
                }
            })
            .collect();
        Ok(Instance { values })
    }

    /// Copy of `instance` with its protected values replaced by combination `combo`.
    pub fn with_combo(&self, instance: &Instance, combo: usize) -> Instance {
        let mut out = instance.clone();
        for (&f, &v) in self.protected.iter().zip(&self.combos[combo]) {
            out.values[f] = v;
        }
        out
    }

    /// Valid protected combinations for this instance (static filter plus
    /// rules that mention non-protected features).
    pub fn valid_combos(&self, instance: &Instance) -> Vec<usize> {
        (0..self.combos.len())
            .filter(|&c| {
                !self.rules.iter().filter(|r| !r.protected_only).any(|r| {
                    r.atoms.iter().all(|&(f, v)| {
                        match self.protected.iter().position(|&p| p == f) {
                            Some(pos) => self.combos[c][pos].matches(v),
                            None => instance.values[f].matches(v),
                        }
                    })
                })
            })
            .collect()
    }

    /// The K counterfactual variants of `instance`.
    pub fn enumerate_counterfactuals(&self, instance: &Instance) -> Result<Vec<Instance>> {
        self.validate(instance)?;
        let combos = self.valid_combos(instance);
        if combos.is_empty() {
            return Err(Error::Schema("no protected combination is consistent with this instance".into()));
        }
        Ok(combos.into_iter().map(|c| self.with_combo(instance, c)).collect())
    }

    /// Encodings of every valid counterfactual, sharing the non-protected slots.
    pub fn counterfactual_encodings<T: Scalar>(&self, instance: &Instance) -> Result<Vec<(usize, Vec<T>)>> {
        self.validate(instance)?;
        let combos = self.valid_combos(instance);
        if combos.is_empty() {
            return Err(Error::Schema("no protected combination is consistent with this instance".into()));
        }
        let mut base = vec![T::zero(); self.input_width];
        self.encode_into(instance, &mut base);
        Ok(combos
            .into_iter()
            .map(|c| {
                let mut v = base.clone();
                for (&f, &value) in self.protected.iter().zip(&self.combos[c]) {
                    self.encode_feature(f, &self.features[f], value, &mut v);
                }
                (c, v)
            })
            .collect())
    }

    pub fn random_value<R: Rng + ?Sized>(&self, feature: usize, rng: &mut R) -> FeatureValue {
        match &self.features[feature].kind {
            FeatureKind::Numeric {
                lower,
                upper,
                integral: true,
            } => FeatureValue::Num(rng.random_range(lower.ceil() as i64..=upper.floor() as i64) as f64),
            FeatureKind::Numeric { lower, upper, .. } => FeatureValue::Num(rng.random_range(*lower..=*upper)),
            FeatureKind::Categorical { values } => FeatureValue::Cat(rng.random_range(0..values.len())),
        }
    }

    /// Uniform instance over the domain, rejecting rule violations.
    pub fn random_instance<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Instance> {
        for _ in 0..MAX_REJECTION_TRIES {
            let values = (0..self.features.len()).map(|i| self.random_value(i, rng)).collect();
            let inst = Instance { values };
            if !self.violates_rules(&inst) {
                return Ok(inst);
            }
        }
        Err(Error::Schema(format!(
            "random sampling rejected {MAX_REJECTION_TRIES} consecutive draws"
        )))
    }

    pub fn to_raw(&self, instance: &Instance) -> RawInstance {
        self.features
            .iter()
            .zip(&instance.values)
            .map(|(f, &v)| (f.name.clone(), f.to_raw(v)))
            .collect()
    }

    pub fn from_raw(&self, raw: &RawInstance) -> Result<Instance> {
        if let Some(unknown) = raw.keys().find(|k| self.feature_index(k).is_none()) {
            return Err(Error::Instance(format!("unknown feature `{unknown}`")));
        }
        let values = self
            .features
            .iter()
            .map(|f| {
                let raw = raw
                    .get(&f.name)
                    .ok_or_else(|| Error::Instance(format!("feature `{}` not assigned", f.name)))?;
                f.parse_raw(raw)
                    .map_err(|m| Error::Instance(format!("feature `{}`: {m}", f.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Instance { values })
    }

    pub fn parse_value(&self, feature: usize, raw: &RawValue) -> std::result::Result<FeatureValue, String> {
        self.features[feature].parse_raw(raw)
    }
}
