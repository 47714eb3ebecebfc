//! The typed constraint algebra: numeric limits, temporal windows,
//! enumerated lists and string patterns, plus the cumulative extension and
//! a fail-closed marker for unrecognized types.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, FixedOffset, TimeZone};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::glob::{Glob, PatternError};
use crate::stateful::CumulativeLimitConstraint;
use crate::value::{Decimal, Timestamp, TypedValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericOperator {
    Eq,
    Lt,
    Lte,
    Gt,
    Gte,
}

impl NumericOperator {
    pub fn apply(self, actual: &Decimal, bound: &Decimal) -> bool {
        match self {
            NumericOperator::Eq => actual == bound,
            NumericOperator::Lt => actual < bound,
            NumericOperator::Lte => actual <= bound,
            NumericOperator::Gt => actual > bound,
            NumericOperator::Gte => actual >= bound,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            NumericOperator::Eq => "==",
            NumericOperator::Lt => "<",
            NumericOperator::Lte => "<=",
            NumericOperator::Gt => ">",
            NumericOperator::Gte => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericLimitConstraint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub field: String,
    pub operator: NumericOperator,
    pub value: Decimal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub currency: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Weekday {
    Monday,
    Tuesday,
    Wednesday,
    Thursday,
    Friday,
    Saturday,
    Sunday,
}

impl Weekday {
    pub const ALL: [Weekday; 7] = [
        Weekday::Monday,
        Weekday::Tuesday,
        Weekday::Wednesday,
        Weekday::Thursday,
        Weekday::Friday,
        Weekday::Saturday,
        Weekday::Sunday,
    ];

    fn from_chrono(d: chrono::Weekday) -> Self {
        Weekday::ALL[d.num_days_from_monday() as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalWindowConstraint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub field: String,
    pub valid_from: Timestamp,
    pub valid_until: Timestamp,
    pub timezone: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_days: Option<BTreeSet<Weekday>>,
}

/// Resolves a timezone designator: `UTC`, `Z`, a fixed `±hh:mm` offset, or
/// an IANA zone name. Returns the weekday of `t` in that zone.
pub fn weekday_in_zone(t: &Timestamp, zone: &str) -> Option<Weekday> {
    if zone == "UTC" || zone == "Z" {
        return Some(Weekday::from_chrono(t.utc().weekday()));
    }
    if let Some(offset) = parse_fixed_offset(zone) {
        return Some(Weekday::from_chrono(offset.from_utc_datetime(&t.utc().naive_utc()).weekday()));
    }
    let tz: chrono_tz::Tz = zone.parse().ok()?;
    Some(Weekday::from_chrono(t.utc().with_timezone(&tz).weekday()))
}

fn parse_fixed_offset(zone: &str) -> Option<FixedOffset> {
    let (sign, rest) = match zone.as_bytes().first()? {
        b'+' => (1, &zone[1..]),
        b'-' => (-1, &zone[1..]),
        _ => return None,
    };
    let (h, m) = rest.split_once(':')?;
    if h.len() != 2 || m.len() != 2 {
        return None;
    }
    let h: i32 = h.parse().ok()?;
    let m: i32 = m.parse().ok()?;
    if h > 23 || m > 59 {
        return None;
    }
    FixedOffset::east_opt(sign * (h * 3600 + m * 60))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnumeratedListConstraint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub field: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denied: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Prefix,
    Suffix,
    RestrictedGlob,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StringPatternConstraint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub field: String,
    #[serde(rename = "match")]
    pub match_kind: MatchKind,
    pub pattern: String,
}

/// Canonical glob form of a pattern constraint. Literal `*` characters in
/// exact/prefix/suffix patterns stay literal.
pub fn normalize_pattern(c: &StringPatternConstraint) -> Result<Glob, PatternError> {
    use crate::glob::GlobToken::{Literal, Star};
    let lit = |s: &str| s.chars().map(Literal).collect::<Vec<_>>();
    Ok(match c.match_kind {
        MatchKind::Exact => Glob::literal(&c.pattern),
        MatchKind::Prefix => Glob::from_tokens(lit(&c.pattern).into_iter().chain([Star])),
        MatchKind::Suffix => Glob::from_tokens([Star].into_iter().chain(lit(&c.pattern))),
        MatchKind::RestrictedGlob => Glob::parse(&c.pattern)?,
    })
}

/// A constraint type this engine does not recognize. Kept byte-exact for
/// audit; it never passes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownConstraint {
    pub type_tag: String,
    pub raw: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Constraint {
    NumericLimit(NumericLimitConstraint),
    TemporalWindow(TemporalWindowConstraint),
    EnumeratedList(EnumeratedListConstraint),
    StringPattern(StringPatternConstraint),
    CumulativeLimit(CumulativeLimitConstraint),
    Unknown(UnknownConstraint),
}

/// Constraint family, used to group constraints for attenuation checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    NumericLimit,
    TemporalWindow,
    EnumeratedList,
    StringPattern,
    CumulativeLimit,
    Unknown,
}

impl Family {
    pub fn type_tag(self) -> &'static str {
        match self {
            Family::NumericLimit => "NumericLimitConstraint",
            Family::TemporalWindow => "TemporalWindowConstraint",
            Family::EnumeratedList => "EnumeratedListConstraint",
            Family::StringPattern => "StringPatternConstraint",
            Family::CumulativeLimit => "CumulativeLimitConstraint",
            Family::Unknown => "Unknown",
        }
    }
}

impl Constraint {
    pub fn family(&self) -> Family {
        match self {
            Constraint::NumericLimit(_) => Family::NumericLimit,
            Constraint::TemporalWindow(_) => Family::TemporalWindow,
            Constraint::EnumeratedList(_) => Family::EnumeratedList,
            Constraint::StringPattern(_) => Family::StringPattern,
            Constraint::CumulativeLimit(_) => Family::CumulativeLimit,
            Constraint::Unknown(_) => Family::Unknown,
        }
    }

    pub fn type_tag(&self) -> &str {
        match self {
            Constraint::Unknown(u) => &u.type_tag,
            other => other.family().type_tag(),
        }
    }

    /// Semantic identifier the constraint is evaluated against.
    pub fn field(&self) -> Option<&str> {
        Some(match self {
            Constraint::NumericLimit(c) => &c.field,
            Constraint::TemporalWindow(c) => &c.field,
            Constraint::EnumeratedList(c) => &c.field,
            Constraint::StringPattern(c) => &c.field,
            Constraint::CumulativeLimit(c) => &c.field,
            Constraint::Unknown(u) => return u.raw.get("field").and_then(Value::as_str),
        })
    }

    pub fn id(&self) -> Option<&str> {
        match self {
            Constraint::NumericLimit(c) => c.id.as_deref(),
            Constraint::TemporalWindow(c) => c.id.as_deref(),
            Constraint::EnumeratedList(c) => c.id.as_deref(),
            Constraint::StringPattern(c) => c.id.as_deref(),
            Constraint::CumulativeLimit(c) => c.id.as_deref(),
            Constraint::Unknown(u) => u.raw.get("id").and_then(Value::as_str),
        }
    }

    /// Identifier for traces and audit: the declared id, else `#<position>`.
    pub fn label(&self, index: usize) -> String {
        self.id().map(str::to_string).unwrap_or_else(|| format!("#{}", index + 1))
    }

    pub fn is_stateful(&self) -> bool {
        matches!(self, Constraint::CumulativeLimit(_))
    }

    pub fn currency(&self) -> Option<&str> {
        match self {
            Constraint::NumericLimit(c) => c.currency.as_deref(),
            Constraint::CumulativeLimit(c) => c.currency.as_deref(),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Constraint::NumericLimit(c) => {
                if c.currency.is_some() && c.unit.is_some() {
                    return Err("currency and unit are mutually exclusive".into());
                }
            }
            Constraint::TemporalWindow(c) => {
                if c.valid_from > c.valid_until {
                    return Err("valid_from is after valid_until".into());
                }
            }
            Constraint::EnumeratedList(c) => {
                if c.allowed.is_none() && c.denied.is_none() {
                    return Err("enumerated list needs an allowed or denied set".into());
                }
                if c.allowed.as_ref().is_some_and(|s| s.is_empty()) || c.denied.as_ref().is_some_and(|s| s.is_empty()) {
                    return Err("enumerated sets must be non-empty when present".into());
                }
            }
            Constraint::StringPattern(c) => {
                normalize_pattern(c).map_err(|e| e.to_string())?;
            }
            Constraint::CumulativeLimit(c) => c.validate()?,
            Constraint::Unknown(_) => {}
        }
        Ok(())
    }
}

impl Serialize for Constraint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let body = match self {
            Constraint::NumericLimit(c) => serde_json::to_value(c),
            Constraint::TemporalWindow(c) => serde_json::to_value(c),
            Constraint::EnumeratedList(c) => serde_json::to_value(c),
            Constraint::StringPattern(c) => serde_json::to_value(c),
            Constraint::CumulativeLimit(c) => serde_json::to_value(c),
            Constraint::Unknown(u) => return u.raw.serialize(s),
        }
        .map_err(serde::ser::Error::custom)?;
        let Value::Object(mut map) = body else {
            return Err(serde::ser::Error::custom("constraint body must be an object"));
        };
        map.insert("type".into(), Value::String(self.type_tag().to_string()));
        Value::Object(map).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Constraint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = Value::deserialize(d)?;
        let Value::Object(mut map) = raw.clone() else {
            return Err(serde::de::Error::custom("constraint must be an object"));
        };
        let Some(Value::String(tag)) = map.remove("type") else {
            return Err(serde::de::Error::custom("constraint is missing its type discriminator"));
        };
        let body = Value::Object(map);
        let err = |e: serde_json::Error| serde::de::Error::custom(format!("{tag}: {e}"));
        let c = match tag.as_str() {
            "NumericLimitConstraint" => Constraint::NumericLimit(serde_json::from_value(body).map_err(err)?),
            "TemporalWindowConstraint" => Constraint::TemporalWindow(serde_json::from_value(body).map_err(err)?),
            "EnumeratedListConstraint" => Constraint::EnumeratedList(serde_json::from_value(body).map_err(err)?),
            "StringPatternConstraint" => Constraint::StringPattern(serde_json::from_value(body).map_err(err)?),
            "CumulativeLimitConstraint" => Constraint::CumulativeLimit(serde_json::from_value(body).map_err(err)?),
            _ => Constraint::Unknown(UnknownConstraint { type_tag: tag, raw }),
        };
        c.validate().map_err(serde::de::Error::custom)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConstraintResult {
    Pass(String),
    Fail(String),
}

impl ConstraintResult {
    pub fn passed(&self) -> bool {
        matches!(self, ConstraintResult::Pass(_))
    }

    pub fn detail(&self) -> &str {
        match self {
            ConstraintResult::Pass(d) | ConstraintResult::Fail(d) => d,
        }
    }
}

fn money(currency: Option<&str>, v: &Decimal) -> String {
    match currency {
        Some(c) => format!("{c} {v}"),
        None => v.to_string(),
    }
}

/// Evaluates one constraint against an already-resolved value. Any mismatch
/// between constraint family and value kind fails.
pub fn evaluate_constraint(constraint: &Constraint, value: &TypedValue, context_currency: Option<&str>) -> ConstraintResult {
    use ConstraintResult::{Fail, Pass};
    match constraint {
        Constraint::NumericLimit(c) => {
            let Some(actual) = value.as_decimal() else {
                return Fail(format!("{} is not numeric", value.kind()));
            };
            if let Some(cur) = &c.currency {
                match context_currency {
                    Some(ctx) if ctx == cur => {}
                    Some(ctx) => return Fail(format!("currency {ctx} does not match {cur}")),
                    None => return Fail(format!("request carries no currency, constraint requires {cur}")),
                }
            }
            let cur = c.currency.as_deref();
            let text = format!("{} {} {}", money(cur, &actual), c.operator.symbol(), money(cur, &c.value));
            if c.operator.apply(&actual, &c.value) {
                Pass(text)
            } else {
                Fail(text)
            }
        }
        Constraint::TemporalWindow(c) => {
            let Some(t) = value.as_timestamp() else {
                return Fail(format!("{} is not a timestamp", value.kind()));
            };
            let Some(day) = weekday_in_zone(&t, &c.timezone) else {
                return Fail(format!("unresolvable timezone {:?}", c.timezone));
            };
            if t < c.valid_from || t > c.valid_until {
                return Fail(format!("{t} is outside {}..{}", c.valid_from, c.valid_until));
            }
            if let Some(days) = &c.allowed_days {
                if !days.contains(&day) {
                    return Fail(format!("{day:?} in {} is not an allowed day", c.timezone));
                }
            }
            Pass(format!("{t} is within the authorized time window"))
        }
        Constraint::EnumeratedList(c) => {
            let Some(text) = value.as_text() else {
                return Fail(format!("{} is not categorical", value.kind()));
            };
            if c.denied.as_ref().is_some_and(|d| d.contains(text)) {
                return Fail(format!("{text} is in the denied set"));
            }
            match &c.allowed {
                Some(a) if !a.contains(text) => Fail(format!("{text} is not in the allowed set")),
                Some(a) => Pass(format!("{text} is in {{{}}}", a.iter().cloned().collect::<Vec<_>>().join(", "))),
                None => Pass(format!("{text} is not denied")),
            }
        }
        Constraint::StringPattern(c) => {
            let Some(text) = value.as_text() else {
                return Fail(format!("{} is not a string", value.kind()));
            };
            match normalize_pattern(c) {
                Ok(g) if g.matches(text) => Pass(format!("{text} matches {g}")),
                Ok(g) => Fail(format!("{text} does not match {g}")),
                Err(e) => Fail(e.to_string()),
            }
        }
        Constraint::CumulativeLimit(_) => Fail("cumulative limits require a state authority".into()),
        Constraint::Unknown(u) => Fail(format!("unrecognized constraint type {}", u.type_tag)),
    }
}

/// Why a child constraint list fails to narrow its parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widened(pub String);

impl fmt::Display for Widened {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

type Groups<'a> = BTreeMap<(String, Family), Vec<&'a Constraint>>;

fn group(list: &[Constraint]) -> Groups<'_> {
    let mut g: Groups<'_> = BTreeMap::new();
    for c in list {
        let field = c.field().unwrap_or_default().to_string();
        g.entry((field, c.family())).or_default().push(c);
    }
    g
}

/// Checks that `child` is at least as restrictive as `parent`: every parent
/// constraint is represented by the same field and family in the child, and
/// the child's satisfying set for each group is contained in the parent's.
pub fn check_attenuation(child: &[Constraint], parent: &[Constraint]) -> Result<(), Widened> {
    if let Some(u) = child.iter().chain(parent).find(|c| c.family() == Family::Unknown) {
        return Err(Widened(format!("cannot verify narrowing of unrecognized type {}", u.type_tag())));
    }
    let child_groups = group(child);
    for ((field, family), parents) in group(parent) {
        let Some(children) = child_groups.get(&(field.clone(), family)) else {
            return Err(Widened(format!("parent {} on {field} is not represented", family.type_tag())));
        };
        let ok = match family {
            Family::NumericLimit => numeric_narrows(children, &parents),
            Family::TemporalWindow => temporal_narrows(children, &parents),
            Family::EnumeratedList => enumerated_narrows(children, &parents),
            Family::StringPattern => pattern_narrows(children, &parents),
            Family::CumulativeLimit => crate::stateful::cumulative_narrows(children, &parents),
            Family::Unknown => Err("unrecognized".to_string()),
        };
        ok.map_err(|why| Widened(format!("{} on {field}: {why}", family.type_tag())))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Bound {
    value: Decimal,
    inclusive: bool,
}

/// Intersection of half-lines/points over the decimals.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct Interval {
    lower: Option<Bound>,
    upper: Option<Bound>,
}

impl Interval {
    fn from_constraints(list: &[&Constraint]) -> Interval {
        let mut iv = Interval::default();
        for c in list {
            let Constraint::NumericLimit(n) = c else { continue };
            let b = |inclusive| Bound {
                value: n.value.clone(),
                inclusive,
            };
            match n.operator {
                NumericOperator::Eq => {
                    iv.tighten_lower(b(true));
                    iv.tighten_upper(b(true));
                }
                NumericOperator::Gt => iv.tighten_lower(b(false)),
                NumericOperator::Gte => iv.tighten_lower(b(true)),
                NumericOperator::Lt => iv.tighten_upper(b(false)),
                NumericOperator::Lte => iv.tighten_upper(b(true)),
            }
        }
        iv
    }

    fn tighten_lower(&mut self, b: Bound) {
        let replace = match &self.lower {
            None => true,
            Some(cur) => b.value > cur.value || (b.value == cur.value && !b.inclusive),
        };
        if replace {
            self.lower = Some(b);
        }
    }

    fn tighten_upper(&mut self, b: Bound) {
        let replace = match &self.upper {
            None => true,
            Some(cur) => b.value < cur.value || (b.value == cur.value && !b.inclusive),
        };
        if replace {
            self.upper = Some(b);
        }
    }

    fn is_empty(&self) -> bool {
        match (&self.lower, &self.upper) {
            (Some(l), Some(u)) => l.value > u.value || (l.value == u.value && !(l.inclusive && u.inclusive)),
            _ => false,
        }
    }

    fn within(&self, outer: &Interval) -> bool {
        if self.is_empty() {
            return true;
        }
        let lower_ok = match (&outer.lower, &self.lower) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(o), Some(i)) => i.value > o.value || (i.value == o.value && (o.inclusive || !i.inclusive)),
        };
        let upper_ok = match (&outer.upper, &self.upper) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(o), Some(i)) => i.value < o.value || (i.value == o.value && (o.inclusive || !i.inclusive)),
        };
        lower_ok && upper_ok
    }
}

fn numeric_units(list: &[&Constraint]) -> BTreeSet<(Option<String>, Option<String>)> {
    list.iter()
        .filter_map(|c| match c {
            Constraint::NumericLimit(n) => Some((n.currency.clone(), n.unit.clone())),
            _ => None,
        })
        .collect()
}

fn numeric_narrows(children: &[&Constraint], parents: &[&Constraint]) -> Result<(), String> {
    let units = numeric_units(parents);
    let child_units = numeric_units(children);
    if units.len() != 1 || child_units != units {
        return Err("currency or unit differs".into());
    }
    if Interval::from_constraints(children).within(&Interval::from_constraints(parents)) {
        Ok(())
    } else {
        Err("child range is not contained in parent range".into())
    }
}

fn temporal_narrows(children: &[&Constraint], parents: &[&Constraint]) -> Result<(), String> {
    let windows = |list: &[&Constraint]| -> Vec<TemporalWindowConstraint> {
        list.iter()
            .filter_map(|c| match c {
                Constraint::TemporalWindow(t) => Some(t.clone()),
                _ => None,
            })
            .collect()
    };
    let (cw, pw) = (windows(children), windows(parents));
    let resolvable = |t: &TemporalWindowConstraint| weekday_in_zone(&t.valid_from, &t.timezone).is_some();
    if !cw.iter().all(resolvable) {
        return Ok(());
    }
    if !pw.iter().all(resolvable) {
        return Err("parent timezone is unresolvable".into());
    }
    let child_from = cw.iter().map(|t| t.valid_from).max().expect("non-empty group");
    let child_until = cw.iter().map(|t| t.valid_until).min().expect("non-empty group");
    if child_from > child_until {
        return Ok(());
    }
    for p in &pw {
        if child_from < p.valid_from || child_until > p.valid_until {
            return Err("child window is not inside parent window".into());
        }
        if let Some(pdays) = &p.allowed_days {
            let covered = cw.iter().any(|c| {
                c.timezone == p.timezone && c.allowed_days.as_ref().is_some_and(|cd| cd.is_subset(pdays))
            });
            if !covered {
                return Err("child allowed days are not a subset in the same timezone".into());
            }
        }
    }
    Ok(())
}

/// Satisfying set of a conjunction of enumerated constraints:
/// `allowed` (None = every string) minus `denied`.
struct CategorySet {
    allowed: Option<BTreeSet<String>>,
    denied: BTreeSet<String>,
}

impl CategorySet {
    fn from_constraints(list: &[&Constraint]) -> CategorySet {
        let mut allowed: Option<BTreeSet<String>> = None;
        let mut denied = BTreeSet::new();
        for c in list {
            let Constraint::EnumeratedList(e) = c else { continue };
            if let Some(a) = &e.allowed {
                allowed = Some(match allowed {
                    None => a.clone(),
                    Some(cur) => cur.intersection(a).cloned().collect(),
                });
            }
            if let Some(d) = &e.denied {
                denied.extend(d.iter().cloned());
            }
        }
        CategorySet { allowed, denied }
    }

    fn contains(&self, v: &str) -> bool {
        !self.denied.contains(v) && self.allowed.as_ref().is_none_or(|a| a.contains(v))
    }

    fn within(&self, outer: &CategorySet) -> bool {
        match (&self.allowed, &outer.allowed) {
            (Some(a), _) => a.iter().filter(|v| !self.denied.contains(*v)).all(|v| outer.contains(v)),
            (None, Some(_)) => false,
            (None, None) => outer.denied.is_subset(&self.denied),
        }
    }
}

fn enumerated_narrows(children: &[&Constraint], parents: &[&Constraint]) -> Result<(), String> {
    if CategorySet::from_constraints(children).within(&CategorySet::from_constraints(parents)) {
        Ok(())
    } else {
        Err("child admits a value the parent does not".into())
    }
}

fn pattern_narrows(children: &[&Constraint], parents: &[&Constraint]) -> Result<(), String> {
    let globs = |list: &[&Constraint]| -> Result<Vec<Glob>, String> {
        list.iter()
            .filter_map(|c| match c {
                Constraint::StringPattern(p) => Some(normalize_pattern(p).map_err(|e| e.to_string())),
                _ => None,
            })
            .collect()
    };
    let (cg, pg) = (globs(children)?, globs(parents)?);
    for p in &pg {
        if !cg.iter().any(|c| p.subsumes(c)) {
            return Err(format!("no child pattern is contained in {p}"));
        }
    }
    Ok(())
}

impl FromStr for NumericOperator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
    }
}
