//! Expression/AU relatedness knowledge base.
//!
//! Associations between the seven basic expressions and the 17-AU registry,
//! split into prototypical AUs (marked active by every annotator, weight 1)
//! and observational AUs (marked active by a fraction of annotators, weight
//! equal to that fraction). A compound-expression table built on top of the
//! same registry drives the zero-shot compound scorer.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The seven basic expression classes in canonical order.
///
/// Every 7-vector in this crate (probability simplices, indicator scores,
/// confusion-matrix axes) is indexed in this order, neutral first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expression {
    Neutral,
    Happiness,
    Sadness,
    Fear,
    Anger,
    Surprise,
    Disgust,
}

impl Expression {
    pub const COUNT: usize = 7;

    pub const ALL: [Expression; 7] = [
        Expression::Neutral,
        Expression::Happiness,
        Expression::Sadness,
        Expression::Fear,
        Expression::Anger,
        Expression::Surprise,
        Expression::Disgust,
    ];

    /// Position in the canonical ordering (neutral = 0).
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Expression> {
        Expression::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Expression::Neutral => "neutral",
            Expression::Happiness => "happiness",
            Expression::Sadness => "sadness",
            Expression::Fear => "fear",
            Expression::Anger => "anger",
            Expression::Surprise => "surprise",
            Expression::Disgust => "disgust",
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Expression {
    type Err = TableError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expression::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| TableError::UnknownExpression(s.to_string()))
    }
}

/// One of the 17 facial action units tracked by this crate.
///
/// The registry is the aggregate AU set of the supported annotation schemes;
/// `index` is the position in ascending code order and is the layout of every
/// 17-vector in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ActionUnit(u8);

impl ActionUnit {
    pub const COUNT: usize = 17;

    /// Registry codes in canonical ascending order.
    pub const CODES: [u8; 17] = [1, 2, 4, 5, 6, 7, 9, 10, 11, 12, 15, 17, 20, 23, 24, 25, 26];

    pub const ALL: [ActionUnit; 17] = {
        let mut all = [ActionUnit(0); 17];
        let mut i = 0;
        while i < 17 {
            all[i] = ActionUnit(Self::CODES[i]);
            i += 1;
        }
        all
    };

    pub fn from_code(code: u8) -> Result<ActionUnit, TableError> {
        if Self::CODES.contains(&code) {
            Ok(ActionUnit(code))
        } else {
            Err(TableError::UnknownAuCode(code))
        }
    }

    pub fn from_index(index: usize) -> Option<ActionUnit> {
        Self::ALL.get(index).copied()
    }

    pub fn code(self) -> u8 {
        self.0
    }

    /// Position 0..17 in ascending code order.
    pub fn index(self) -> usize {
        Self::CODES.iter().position(|&c| c == self.0).expect("validated code")
    }
}

impl fmt::Display for ActionUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AU{}", self.0)
    }
}

impl TryFrom<u8> for ActionUnit {
    type Error = TableError;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        ActionUnit::from_code(code)
    }
}

impl From<ActionUnit> for u8 {
    fn from(au: ActionUnit) -> u8 {
        au.code()
    }
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("unknown action unit code {0}; registry is {:?}", ActionUnit::CODES)]
    UnknownAuCode(u8),
    #[error("unknown expression '{0}'")]
    UnknownExpression(String),
    #[error("observational weight {weight} for AU{au} under '{expr}' must be in (0, 1]")]
    WeightOutOfRange { expr: String, au: u8, weight: f64 },
    #[error("AU{au} listed more than once under '{expr}'")]
    DuplicateAu { expr: String, au: u8 },
    #[error("neutral cannot carry AU associations")]
    NeutralAssociation,
    #[error("compound '{0}' has an empty AU set")]
    EmptyCompoundAuSet(String),
    #[error("compound '{name}': {reason}")]
    InvalidCompound { name: String, reason: String },
    #[error("compound table is empty")]
    EmptyCompoundTable,
    #[error("failed to parse table configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Expression/AU association table.
///
/// Immutable after construction; `weight` is 1 for prototypical entries, the
/// annotator fraction for observational entries and 0 otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct RelatednessTable {
    prototypical: [[bool; ActionUnit::COUNT]; Expression::COUNT],
    observational: [[f64; ActionUnit::COUNT]; Expression::COUNT],
}

/// Built-in associations: (expression, prototypical codes, observational (code, weight)).
const BUILTIN_ASSOCIATIONS: [(Expression, &[u8], &[(u8, f64)]); 6] = [
    (Expression::Happiness, &[12, 25], &[(6, 0.51)]),
    (Expression::Sadness, &[4, 15], &[(1, 0.6), (6, 0.5), (11, 0.26), (17, 0.67)]),
    (Expression::Fear, &[1, 4, 20, 25], &[(2, 0.57), (5, 0.63), (26, 0.33)]),
    (Expression::Anger, &[4, 7, 24], &[(10, 0.26), (17, 0.52), (23, 0.29)]),
    (Expression::Surprise, &[1, 2, 25, 26], &[(5, 0.66)]),
    (Expression::Disgust, &[9, 10, 17], &[(4, 0.31), (24, 0.26)]),
];

impl RelatednessTable {
    /// The built-in annotator-study table.
    pub fn builtin() -> RelatednessTable {
        let mut prototypical = [[false; ActionUnit::COUNT]; Expression::COUNT];
        let mut observational = [[0.0; ActionUnit::COUNT]; Expression::COUNT];
        for (expr, protos, obs) in BUILTIN_ASSOCIATIONS {
            for &code in protos {
                let au = ActionUnit::from_code(code).expect("builtin AU code");
                prototypical[expr.index()][au.index()] = true;
            }
            for &(code, w) in obs {
                let au = ActionUnit::from_code(code).expect("builtin AU code");
                observational[expr.index()][au.index()] = w;
            }
        }
        RelatednessTable { prototypical, observational }
    }

    /// 1 iff `au` is prototypical or observational for `expr`.
    pub fn indicator(&self, au: ActionUnit, expr: Expression) -> bool {
        self.prototypical[expr.index()][au.index()]
            || self.observational[expr.index()][au.index()] > 0.0
    }

    /// 1 for prototypical entries, annotator fraction for observational, 0 otherwise.
    pub fn weight(&self, au: ActionUnit, expr: Expression) -> f64 {
        if self.prototypical[expr.index()][au.index()] {
            1.0
        } else {
            self.observational[expr.index()][au.index()]
        }
    }

    /// Sum of `weight` over the whole registry for one expression.
    pub fn weight_sum(&self, expr: Expression) -> f64 {
        ActionUnit::ALL.iter().map(|&au| self.weight(au, expr)).sum()
    }

    pub fn is_prototypical(&self, au: ActionUnit, expr: Expression) -> bool {
        self.prototypical[expr.index()][au.index()]
    }

    pub fn prototypical_aus(&self, expr: Expression) -> impl Iterator<Item = ActionUnit> + '_ {
        ActionUnit::ALL
            .into_iter()
            .filter(move |au| self.prototypical[expr.index()][au.index()])
    }

    pub fn observational_aus(&self, expr: Expression) -> impl Iterator<Item = (ActionUnit, f64)> + '_ {
        ActionUnit::ALL.into_iter().filter_map(move |au| {
            let w = self.observational[expr.index()][au.index()];
            (w > 0.0).then_some((au, w))
        })
    }

    /// All AUs associated with `expr`, prototypical or observational.
    pub fn associated_aus(&self, expr: Expression) -> impl Iterator<Item = ActionUnit> + '_ {
        ActionUnit::ALL.into_iter().filter(move |&au| self.indicator(au, expr))
    }

    /// Config document equivalent to this table.
    pub fn to_config(&self) -> TableConfig {
        let mut expressions = BTreeMap::new();
        for expr in Expression::ALL {
            if expr == Expression::Neutral {
                continue;
            }
            expressions.insert(
                expr.name().to_string(),
                ExpressionOverride {
                    prototypical: self.prototypical_aus(expr).map(ActionUnit::code).collect(),
                    observational: self
                        .observational_aus(expr)
                        .map(|(au, w)| (au.code(), w))
                        .collect(),
                },
            );
        }
        TableConfig { expressions, compounds: Vec::new() }
    }
}

impl Default for RelatednessTable {
    fn default() -> Self {
        RelatednessTable::builtin()
    }
}

/// One compound expression: a blend of two non-neutral basic expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct Compound {
    pub name: String,
    pub constituents: (Expression, Expression),
    /// AUs associated with the compound, ascending code order.
    pub aus: Vec<ActionUnit>,
    /// Whether the valence-sign bonus applies to this compound.
    pub d_va_eligible: bool,
}

/// Ordered list of compound expressions; order is the scorer's tie-break.
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundTable {
    compounds: Vec<Compound>,
}

/// Built-in compound classes: (name, constituents, valence-bonus eligible).
const BUILTIN_COMPOUNDS: [(&str, Expression, Expression, bool); 11] = [
    ("happily-surprised", Expression::Happiness, Expression::Surprise, true),
    ("happily-disgusted", Expression::Happiness, Expression::Disgust, true),
    ("sadly-fearful", Expression::Sadness, Expression::Fear, false),
    ("sadly-angry", Expression::Sadness, Expression::Anger, false),
    ("sadly-surprised", Expression::Sadness, Expression::Surprise, false),
    ("sadly-disgusted", Expression::Sadness, Expression::Disgust, false),
    ("fearfully-angry", Expression::Fear, Expression::Anger, false),
    ("fearfully-surprised", Expression::Fear, Expression::Surprise, false),
    ("angrily-surprised", Expression::Anger, Expression::Surprise, false),
    ("angrily-disgusted", Expression::Anger, Expression::Disgust, false),
    ("disgustedly-surprised", Expression::Disgust, Expression::Surprise, false),
];

impl CompoundTable {
    /// The built-in 11-class compound table. Each compound's AU set is the
    /// union of its constituents' prototypical and observational AUs under
    /// `table`.
    pub fn builtin(table: &RelatednessTable) -> CompoundTable {
        let compounds = BUILTIN_COMPOUNDS
            .into_iter()
            .map(|(name, a, b, d_va)| Compound {
                name: name.to_string(),
                constituents: (a, b),
                aus: union_aus(table, a, b),
                d_va_eligible: d_va,
            })
            .collect();
        CompoundTable { compounds }
    }

    pub fn compounds(&self) -> &[Compound] {
        &self.compounds
    }

    pub fn len(&self) -> usize {
        self.compounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.compounds.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Compound> {
        self.compounds.get(index)
    }

    pub fn by_name(&self, name: &str) -> Option<(usize, &Compound)> {
        self.compounds.iter().enumerate().find(|(_, c)| c.name == name)
    }
}

fn union_aus(table: &RelatednessTable, a: Expression, b: Expression) -> Vec<ActionUnit> {
    ActionUnit::ALL
        .into_iter()
        .filter(|&au| table.indicator(au, a) || table.indicator(au, b))
        .collect()
}

/// Override document for both tables.
///
/// Expressions listed under `[expressions.<name>]` have their association
/// sets replaced wholesale; a non-empty `[[compounds]]` list replaces the
/// whole compound table. An empty document yields the built-in tables.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TableConfig {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub expressions: BTreeMap<String, ExpressionOverride>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compounds: Vec<CompoundSpec>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ExpressionOverride {
    #[serde(default)]
    pub prototypical: Vec<u8>,
    /// `(code, annotator fraction)` pairs, fraction in (0, 1].
    #[serde(default)]
    pub observational: Vec<(u8, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompoundSpec {
    pub name: String,
    /// Names of the two constituent basic expressions.
    pub constituents: (String, String),
    /// Associated AU codes; omitted = union of the constituents' AUs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aus: Option<Vec<u8>>,
    #[serde(default)]
    pub d_va: bool,
}

/// Parse a config document and apply it on top of the built-in tables.
pub fn load_tables(document: &str) -> Result<(RelatednessTable, CompoundTable), TableError> {
    let config: TableConfig = toml::from_str(document)?;
    apply_config(&config)
}

pub fn load_tables_from_path<P: AsRef<Path>>(
    path: P,
) -> Result<(RelatednessTable, CompoundTable), TableError> {
    let path = path.as_ref();
    let document = std::fs::read_to_string(path).map_err(|source| TableError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_tables(&document)
}

pub fn apply_config(config: &TableConfig) -> Result<(RelatednessTable, CompoundTable), TableError> {
    let mut table = RelatednessTable::builtin();

    for (name, entry) in &config.expressions {
        let expr: Expression = name.parse()?;
        if expr == Expression::Neutral
            && !(entry.prototypical.is_empty() && entry.observational.is_empty())
        {
            return Err(TableError::NeutralAssociation);
        }
        let e = expr.index();
        table.prototypical[e] = [false; ActionUnit::COUNT];
        table.observational[e] = [0.0; ActionUnit::COUNT];
        for &code in &entry.prototypical {
            let au = ActionUnit::from_code(code)?;
            if table.prototypical[e][au.index()] {
                return Err(TableError::DuplicateAu { expr: name.clone(), au: code });
            }
            table.prototypical[e][au.index()] = true;
        }
        for &(code, weight) in &entry.observational {
            let au = ActionUnit::from_code(code)?;
            if !(weight > 0.0 && weight <= 1.0) {
                return Err(TableError::WeightOutOfRange { expr: name.clone(), au: code, weight });
            }
            if table.prototypical[e][au.index()] || table.observational[e][au.index()] > 0.0 {
                return Err(TableError::DuplicateAu { expr: name.clone(), au: code });
            }
            table.observational[e][au.index()] = weight;
        }
    }

    let compounds = if config.compounds.is_empty() {
        CompoundTable::builtin(&table)
    } else {
        let mut seen = Vec::new();
        let mut compounds = Vec::with_capacity(config.compounds.len());
        for spec in &config.compounds {
            if seen.contains(&&spec.name) {
                return Err(TableError::InvalidCompound {
                    name: spec.name.clone(),
                    reason: "duplicate compound name".to_string(),
                });
            }
            seen.push(&spec.name);
            let a: Expression = spec.constituents.0.parse()?;
            let b: Expression = spec.constituents.1.parse()?;
            if a == Expression::Neutral || b == Expression::Neutral {
                return Err(TableError::InvalidCompound {
                    name: spec.name.clone(),
                    reason: "constituents must be non-neutral".to_string(),
                });
            }
            if a == b {
                return Err(TableError::InvalidCompound {
                    name: spec.name.clone(),
                    reason: "constituents must be distinct".to_string(),
                });
            }
            let aus = match &spec.aus {
                None => union_aus(&table, a, b),
                Some(codes) => {
                    let mut aus: Vec<ActionUnit> = codes
                        .iter()
                        .map(|&c| ActionUnit::from_code(c))
                        .collect::<Result<_, _>>()?;
                    aus.sort();
                    aus.dedup();
                    aus
                }
            };
            if aus.is_empty() {
                return Err(TableError::EmptyCompoundAuSet(spec.name.clone()));
            }
            compounds.push(Compound {
                name: spec.name.clone(),
                constituents: (a, b),
                aus,
                d_va_eligible: spec.d_va,
            });
        }
        CompoundTable { compounds }
    };

    Ok((table, compounds))
}
