//! Feed specifications, scripted mock sources and the extractors that turn
//! raw source points into feed values.
//!
//! Decimal arithmetic is exact: raw literals are parsed into rationals and
//! only floored once, after merging and scaling.

use std::collections::BTreeMap;

use num_rational::Ratio;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto;
use crate::types::{DataValue, FeedId, Tick};

type Decimal = Ratio<i128>;

/// How a multiset of values collapses to one. Used both for merging source
/// points inside an extractor and for aggregating peer reveals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    /// Lower median: element `(k - 1) / 2` of the ascending sort.
    Median,
    /// Floor of the arithmetic mean.
    Average,
    /// Most frequent value, ties broken by the smallest.
    Mode,
}

/// Lower median of a non-empty slice.
pub fn lower_median<T: Ord + Clone>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort();
    Some(sorted[(sorted.len() - 1) / 2].clone())
}

/// Most frequent element; among equally frequent ones the smallest wins.
pub fn mode<T: Ord + Clone>(values: &[T]) -> Option<T> {
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_insert(0) += 1;
    }
    // BTreeMap iterates ascending, and max_by_key keeps the last maximum,
    // so iterate in reverse to keep the smallest.
    counts
        .into_iter()
        .rev()
        .max_by_key(|(_, c)| *c)
        .map(|(v, _)| v.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputType {
    Integer,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceRef {
    pub id: String,
    #[serde(default = "yes")]
    pub mandatory: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedSpec {
    pub feed_id: FeedId,
    pub sources: Vec<SourceRef>,
    /// Combines the points of one extractor's sources.
    pub merge_rule: AggregationRule,
    /// Combines the revealed values of all oracles.
    pub aggregation: AggregationRule,
    /// Decimal places kept: output is `floor(merged * 10^scale)`.
    #[serde(default)]
    pub scale: u32,
    #[serde(default = "integer_output")]
    pub output: OutputType,
}

fn integer_output() -> OutputType {
    OutputType::Integer
}

impl FeedSpec {
    pub fn validate(&self) -> Result<(), ExtractorError> {
        if !self.sources.iter().any(|s| s.mandatory) {
            return Err(ExtractorError::NoMandatorySource(self.feed_id.clone()));
        }
        if self.scale > 18 {
            return Err(ExtractorError::Invalid(format!(
                "feed {}: scale {} exceeds 18",
                self.feed_id, self.scale
            )));
        }
        if self.output == OutputType::Text
            && (self.merge_rule != AggregationRule::Mode
                || self.aggregation != AggregationRule::Mode)
        {
            return Err(ExtractorError::Invalid(format!(
                "feed {}: text feeds support only the mode rule",
                self.feed_id
            )));
        }
        Ok(())
    }

    pub fn source(&self, id: &str) -> Option<&SourceRef> {
        self.sources.iter().find(|s| s.id == id)
    }
}

/// A source literal: an integer, or a string holding a decimal or text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Int(i64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum RawValue {
    Number(Decimal),
    Text(String),
}

/// Parses `-12.345`-style decimals exactly.
pub fn parse_decimal(s: &str) -> Option<Decimal> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part
        .chars()
        .chain(frac_part.chars())
        .all(|c| c.is_ascii_digit())
    {
        return None;
    }
    if frac_part.len() > 18 {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mantissa: i128 = if digits.is_empty() {
        0
    } else {
        digits.parse().ok()?
    };
    let denom = 10i128.pow(frac_part.len() as u32);
    let v = Decimal::new(mantissa, denom);
    Some(if neg { -v } else { v })
}

impl Literal {
    fn parse(&self, output: OutputType) -> Result<RawValue, ExtractorError> {
        match (self, output) {
            (Literal::Int(v), OutputType::Integer) => {
                Ok(RawValue::Number(Decimal::from_integer(*v as i128)))
            }
            (Literal::Str(s), OutputType::Integer) => parse_decimal(s)
                .map(RawValue::Number)
                .ok_or_else(|| ExtractorError::BadLiteral(s.clone())),
            (Literal::Int(v), OutputType::Text) => Ok(RawValue::Text(v.to_string())),
            (Literal::Str(s), OutputType::Text) => Ok(RawValue::Text(s.clone())),
        }
    }
}

/// Value script of a mock source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Script {
    /// Same value every tick.
    Constant(Literal),
    /// `values[t]`, holding the last entry once the list runs out.
    Sequence(Vec<Literal>),
    /// Latest point at or before the tick; silent before the first point.
    Points(BTreeMap<Tick, Literal>),
    /// Seeded walk: each tick moves by -step, 0 or +step.
    RandomWalk { start: Literal, step: Literal },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceFaultKind {
    Silent,
    WrongValue(Literal),
    /// Serves the previous tick's value.
    Delayed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceFault {
    pub from: Tick,
    /// Inclusive.
    pub to: Tick,
    pub kind: SourceFaultKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub id: String,
    pub script: Script,
    #[serde(default)]
    pub faults: Vec<SourceFault>,
}

/// A scripted external data API.
#[derive(Debug, Clone)]
pub struct MockSource {
    id: String,
    script: Script,
    faults: Vec<SourceFault>,
    walk: Vec<Literal>,
}

impl MockSource {
    /// `seed` drives random-walk scripts; `horizon` is the last tick served.
    pub fn new(config: &SourceConfig, seed: u64, horizon: Tick) -> Self {
        let walk = match &config.script {
            Script::RandomWalk { start, step } => {
                materialize_walk(&config.id, start, step, seed, horizon)
            }
            _ => Vec::new(),
        };
        Self {
            id: config.id.clone(),
            script: config.script.clone(),
            faults: config.faults.clone(),
            walk,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    fn scripted(&self, tick: Tick) -> Option<&Literal> {
        match &self.script {
            Script::Constant(v) => Some(v),
            Script::Sequence(vs) => vs.get(tick as usize).or_else(|| vs.last()),
            Script::Points(points) => points.range(..=tick).next_back().map(|(_, v)| v),
            Script::RandomWalk { .. } => self.walk.get(tick as usize).or_else(|| self.walk.last()),
        }
    }

    fn fault_at(&self, tick: Tick) -> Option<&SourceFaultKind> {
        self.faults
            .iter()
            .find(|f| (f.from..=f.to).contains(&tick))
            .map(|f| &f.kind)
    }

    /// The literal served at `tick`, or `None` if the source is silent.
    pub fn read(&self, tick: Tick) -> Option<Literal> {
        match self.fault_at(tick) {
            Some(SourceFaultKind::Silent) => None,
            Some(SourceFaultKind::WrongValue(v)) => Some(v.clone()),
            Some(SourceFaultKind::Delayed) => self.scripted(tick.saturating_sub(1)).cloned(),
            None => self.scripted(tick).cloned(),
        }
    }
}

fn materialize_walk(
    id: &str,
    start: &Literal,
    step: &Literal,
    seed: u64,
    horizon: Tick,
) -> Vec<Literal> {
    let (Ok(RawValue::Number(mut v)), Ok(RawValue::Number(step))) = (
        start.parse(OutputType::Integer),
        step.parse(OutputType::Integer),
    ) else {
        return vec![start.clone()];
    };
    let mut key = seed.to_be_bytes().to_vec();
    key.extend_from_slice(id.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(crypto::hash(&key).0);
    let mut out = Vec::with_capacity(horizon as usize + 1);
    for _ in 0..=horizon {
        out.push(Literal::Str(format_decimal(&v)));
        match rng.next_u32() % 3 {
            0 => v -= step,
            1 => v += step,
            _ => {}
        }
    }
    out
}

/// Renders a decimal with a terminating expansion as `-12.345`; anything
/// else as `n/d`.
fn format_decimal(v: &Decimal) -> String {
    let denom = *v.denom();
    if denom == 1 {
        return v.numer().to_string();
    }
    let Some(places) = (1..=18u32).find(|p| 10i128.pow(*p) % denom == 0) else {
        return format!("{}/{}", v.numer(), denom);
    };
    let scale = 10u128.pow(places);
    let n = v.numer().unsigned_abs() * (scale / denom as u128);
    let sign = if *v.numer() < 0 { "-" } else { "" };
    format!(
        "{sign}{}.{:0width$}",
        n / scale,
        n % scale,
        width = places as usize
    )
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractorError {
    #[error("unknown feed {0}")]
    UnknownFeed(FeedId),
    #[error("unknown source {0}")]
    UnknownSource(String),
    #[error("mandatory source {0} is silent")]
    MandatorySilent(String),
    #[error("no source produced a point")]
    NoData,
    #[error("cannot parse literal {0:?}")]
    BadLiteral(String),
    #[error("feed {0} has no mandatory source")]
    NoMandatorySource(FeedId),
    #[error("binding omits mandatory source {0}")]
    MissingMandatory(String),
    #[error("value does not fit in 64 bits")]
    Overflow,
    #[error("{0}")]
    Invalid(String),
}

/// Parameters handed to the extractor for one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Params<'a> {
    pub feed_id: &'a FeedId,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DataPoint {
    pub feed_id: FeedId,
    pub tick: Tick,
    pub value: DataValue,
}

/// The subset of a feed's sources one node reads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub feed_id: FeedId,
    pub sources: Vec<String>,
}

/// Feed specifications plus the mock sources they read from.
#[derive(Debug, Clone, Default)]
pub struct FeedRegistry {
    feeds: BTreeMap<FeedId, FeedSpec>,
    sources: BTreeMap<String, MockSource>,
}

impl FeedRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_feed(&mut self, spec: FeedSpec) -> Result<(), ExtractorError> {
        spec.validate()?;
        self.feeds.insert(spec.feed_id.clone(), spec);
        Ok(())
    }

    pub fn add_source(&mut self, source: MockSource) {
        self.sources.insert(source.id.clone(), source);
    }

    pub fn feed(&self, id: &FeedId) -> Option<&FeedSpec> {
        self.feeds.get(id)
    }

    pub fn feeds(&self) -> impl Iterator<Item = &FeedSpec> {
        self.feeds.values()
    }

    /// Checks a binding against the feed spec. Every mandatory source must be
    /// bound; recommended ones are optional.
    pub fn check_binding(&self, binding: &Binding) -> Result<(), ExtractorError> {
        let spec = self
            .feeds
            .get(&binding.feed_id)
            .ok_or_else(|| ExtractorError::UnknownFeed(binding.feed_id.clone()))?;
        for id in &binding.sources {
            if spec.source(id).is_none() || !self.sources.contains_key(id) {
                return Err(ExtractorError::UnknownSource(id.clone()));
            }
        }
        if let Some(missing) = spec
            .sources
            .iter()
            .find(|s| s.mandatory && !binding.sources.contains(&s.id))
        {
            return Err(ExtractorError::MissingMandatory(missing.id.clone()));
        }
        Ok(())
    }

    /// Runs one extraction through `binding`.
    pub fn extract(
        &self,
        binding: &Binding,
        params: Params<'_>,
    ) -> Result<DataPoint, ExtractorError> {
        let spec = self
            .feeds
            .get(params.feed_id)
            .ok_or_else(|| ExtractorError::UnknownFeed(params.feed_id.clone()))?;
        let mut points = Vec::with_capacity(binding.sources.len());
        for id in &binding.sources {
            let source = self
                .sources
                .get(id)
                .ok_or_else(|| ExtractorError::UnknownSource(id.clone()))?;
            let mandatory = spec.source(id).is_some_and(|s| s.mandatory);
            match source.read(params.tick) {
                Some(lit) => points.push(lit.parse(spec.output)?),
                None if mandatory => return Err(ExtractorError::MandatorySilent(id.clone())),
                None => {}
            }
        }
        let value = merge(&points, spec)?;
        Ok(DataPoint {
            feed_id: spec.feed_id.clone(),
            tick: params.tick,
            value,
        })
    }
}

/// Merges raw points by the feed's rule and applies the decimal transform.
pub fn merge(points: &[RawValue], spec: &FeedSpec) -> Result<DataValue, ExtractorError> {
    if points.is_empty() {
        return Err(ExtractorError::NoData);
    }
    if spec.output == OutputType::Text {
        let texts: Vec<String> = points
            .iter()
            .map(|p| match p {
                RawValue::Text(s) => s.clone(),
                RawValue::Number(n) => n.to_string(),
            })
            .collect();
        return Ok(DataValue::Text(mode(&texts).expect("non-empty")));
    }
    let numbers: Vec<Decimal> = points
        .iter()
        .map(|p| match p {
            RawValue::Number(n) => Ok(*n),
            RawValue::Text(s) => Err(ExtractorError::BadLiteral(s.clone())),
        })
        .collect::<Result<_, _>>()?;
    let merged = match spec.merge_rule {
        AggregationRule::Median => lower_median(&numbers).expect("non-empty"),
        AggregationRule::Mode => mode(&numbers).expect("non-empty"),
        AggregationRule::Average => {
            let sum = numbers
                .iter()
                .fold(Decimal::from_integer(0), |acc, n| acc + n);
            sum / Decimal::from_integer(numbers.len() as i128)
        }
    };
    let scaled = merged * Decimal::from_integer(10i128.pow(spec.scale));
    let floored = scaled.floor().to_integer();
    i64::try_from(floored)
        .map(DataValue::Int)
        .map_err(|_| ExtractorError::Overflow)
}
