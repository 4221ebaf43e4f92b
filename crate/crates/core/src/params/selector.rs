//! Trainability selectors.
//!
//! A [`Selector`] describes which parameters receive optimizer updates. It
//! resolves against a [`Layout`] into a [`TrainableSet`], which maps entry
//! names to either the whole tensor or a sorted list of coordinates.
//!
//! Text form (used in config files and on the command line):
//!
//! ```text
//! full | bitfit | none
//! pattern:<glob>[|<glob>...]
//! rand_uniform:<budget>[@seed]
//! rand_rowcol:<budget>[@seed]
//! ```
//!
//! `<budget>` is `bitfit` (match the bias count), a fraction containing a
//! `.` such as `0.01`, or an integer coordinate count. Globs use `*` as the
//! only wildcard; it matches any run of characters including dots.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::names::{self, BiasKind, MLM_PREFIX};
use super::store::Layout;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glob {
    source: String,
    alternatives: Vec<String>,
}

impl Glob {
    pub fn parse(source: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Pattern {
            pattern: source.to_string(),
            reason: reason.to_string(),
        };
        let mut alternatives = Vec::new();
        for alt in source.split('|') {
            let alt = alt.trim();
            if alt.is_empty() {
                return Err(bad("empty alternative"));
            }
            if let Some(c) = alt
                .chars()
                .find(|c| !(c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '*' | '-')))
            {
                return Err(bad(&format!("unsupported character `{c}`")));
            }
            alternatives.push(alt.to_string());
        }
        Ok(Self {
            source: source.to_string(),
            alternatives,
        })
    }

    pub fn matches(&self, name: &str) -> bool {
        self.alternatives
            .iter()
            .any(|a| wildcard_match(a.as_bytes(), name.as_bytes()))
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn alternatives(&self) -> &[String] {
        &self.alternatives
    }
}

fn wildcard_match(pattern: &[u8], text: &[u8]) -> bool {
    let (mut p, mut t) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while t < text.len() {
        if p < pattern.len() && pattern[p] == b'*' {
            star = Some((p, t));
            p += 1;
        } else if p < pattern.len() && pattern[p] == text[t] {
            p += 1;
            t += 1;
        } else if let Some((sp, st)) = star {
            p = sp + 1;
            t = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    pattern[p..].iter().all(|&c| c == b'*')
}

/// Size of a random baseline's coordinate budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    /// As many coordinates as the BitFit regime trains in the encoder.
    MatchBitFit,
    Fraction(f64),
    Count(usize),
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::MatchBitFit => write!(f, "bitfit"),
            Budget::Fraction(x) => write!(f, "{x:?}"),
            Budget::Count(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Budget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "bitfit" {
            return Ok(Budget::MatchBitFit);
        }
        if s.contains(['.', 'e', 'E']) {
            let f: f64 = s.parse().map_err(|_| Error::Selector(s.to_string()))?;
            return Ok(Budget::Fraction(f));
        }
        s.parse()
            .map(Budget::Count)
            .map_err(|_| Error::Selector(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectorKind {
    Full,
    BitFit,
    Pattern(Glob),
    RandUniform { budget: Budget, seed: u64 },
    RandRowCol { budget: Budget, seed: u64 },
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selector {
    pub kind: SelectorKind,
    /// Entries trainable regardless of kind (task heads by default).
    pub always_trainable: Glob,
}

const DEFAULT_RANDOM_SEED: u64 = 17;

impl Selector {
    pub fn new(kind: SelectorKind) -> Self {
        Self {
            kind,
            always_trainable: Glob::parse("classifier.*|tagger.*").expect("static glob"),
        }
    }

    pub fn full() -> Self {
        Self::new(SelectorKind::Full)
    }

    pub fn bitfit() -> Self {
        Self::new(SelectorKind::BitFit)
    }

    pub fn none() -> Self {
        Self::new(SelectorKind::None)
    }

    pub fn pattern(glob: &str) -> Result<Self> {
        Ok(Self::new(SelectorKind::Pattern(Glob::parse(glob)?)))
    }

    /// Only the listed bias kinds, in every layer.
    pub fn biases(kinds: &[BiasKind]) -> Self {
        let glob = kinds
            .iter()
            .map(|k| k.pattern())
            .collect::<Vec<_>>()
            .join("|");
        Self::pattern(&glob).expect("generated glob is valid")
    }

    pub fn rand_uniform(budget: Budget, seed: u64) -> Self {
        Self::new(SelectorKind::RandUniform { budget, seed })
    }

    pub fn rand_rowcol(budget: Budget, seed: u64) -> Self {
        Self::new(SelectorKind::RandRowCol { budget, seed })
    }

    /// Resolves to the trainable entries (and coordinates) of `layout`.
    pub fn resolve(&self, layout: &Layout) -> Result<TrainableSet> {
        let mut set = TrainableSet::default();
        let encoder: Vec<_> = layout
            .specs
            .iter()
            .filter(|s| is_encoder(&s.name))
            .collect();
        match &self.kind {
            SelectorKind::Full => {
                for s in &layout.specs {
                    set.entries.insert(s.name.clone(), Coverage::All);
                }
            }
            SelectorKind::BitFit => {
                for s in encoder.iter().filter(|s| names::is_bias(&s.name)) {
                    set.entries.insert(s.name.clone(), Coverage::All);
                }
            }
            SelectorKind::Pattern(glob) => {
                for alt in glob.alternatives() {
                    let single = Glob::parse(alt)?;
                    if !encoder.iter().any(|s| single.matches(&s.name)) {
                        set.warnings
                            .push(format!("pattern `{alt}` matched no parameters"));
                    }
                }
                for s in encoder.iter().filter(|s| glob.matches(&s.name)) {
                    set.entries.insert(s.name.clone(), Coverage::All);
                }
            }
            SelectorKind::RandUniform { budget, seed } => {
                let total: usize = encoder.iter().map(|s| s.len()).sum();
                let fraction = match *budget {
                    Budget::MatchBitFit => bitfit_count(layout) as f64 / total as f64,
                    Budget::Fraction(f) => f,
                    Budget::Count(n) => n as f64 / total as f64,
                };
                for (name, coords) in sample_rand_uniform(layout, fraction, *seed)? {
                    set.entries.insert(name, Coverage::Coords(coords));
                }
            }
            SelectorKind::RandRowCol { budget, seed } => {
                let total: usize = encoder.iter().map(|s| s.len()).sum();
                let count = match *budget {
                    Budget::MatchBitFit => bitfit_count(layout),
                    Budget::Fraction(f) => (f * total as f64).ceil() as usize,
                    Budget::Count(n) => n,
                };
                for (name, coords) in sample_rand_rowcol(layout, count, *seed)? {
                    set.entries.insert(name, Coverage::Coords(coords));
                }
            }
            SelectorKind::None => {}
        }
        for s in &layout.specs {
            if self.always_trainable.matches(&s.name) {
                set.entries.insert(s.name.clone(), Coverage::All);
            }
        }
        // Keep layout order so downstream iteration is stable.
        let order: IndexMap<&str, usize> = layout
            .specs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.as_str(), i))
            .collect();
        set.entries
            .sort_by(|a, _, b, _| order.get(a.as_str()).cmp(&order.get(b.as_str())));
        Ok(set)
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SelectorKind::Full => write!(f, "full"),
            SelectorKind::BitFit => write!(f, "bitfit"),
            SelectorKind::None => write!(f, "none"),
            SelectorKind::Pattern(g) => write!(f, "pattern:{}", g.as_str()),
            SelectorKind::RandUniform { budget, seed } => write!(f, "rand_uniform:{budget}@{seed}"),
            SelectorKind::RandRowCol { budget, seed } => write!(f, "rand_rowcol:{budget}@{seed}"),
        }
    }
}

impl FromStr for Selector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let random = |arg: Option<&str>| -> Result<(Budget, u64)> {
            let arg = arg.unwrap_or("bitfit");
            let (budget, seed) = match arg.split_once('@') {
                Some((b, seed)) => (
                    b,
                    seed.parse()
                        .map_err(|_| Error::Selector(format!("bad seed in `{s}`")))?,
                ),
                None => (arg, DEFAULT_RANDOM_SEED),
            };
            Ok((budget.parse()?, seed))
        };
        let kind = match (head, arg) {
            ("full", None) => SelectorKind::Full,
            ("bitfit", None) => SelectorKind::BitFit,
            ("none", None) => SelectorKind::None,
            ("pattern", Some(glob)) => SelectorKind::Pattern(Glob::parse(glob)?),
            ("rand_uniform", arg) => {
                let (budget, seed) = random(arg)?;
                SelectorKind::RandUniform { budget, seed }
            }
            ("rand_rowcol", arg) => {
                let (budget, seed) = random(arg)?;
                SelectorKind::RandRowCol { budget, seed }
            }
            _ => return Err(Error::Selector(s.to_string())),
        };
        Ok(Self::new(kind))
    }
}

impl Serialize for Selector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Selector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Encoder parameters: everything except task heads and the MLM projection.
pub fn is_encoder(name: &str) -> bool {
    !names::is_head(name) && !name.starts_with(MLM_PREFIX)
}

/// Number of encoder bias coordinates, the BitFit budget.
pub fn bitfit_count(layout: &Layout) -> usize {
    layout
        .specs
        .iter()
        .filter(|s| is_encoder(&s.name) && names::is_bias(&s.name))
        .map(|s| s.len())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// Sorted, distinct flat indices.
    Coords(Vec<usize>),
}

impl Coverage {
    pub fn count(&self, len: usize) -> usize {
        match self {
            Coverage::All => len,
            Coverage::Coords(c) => c.len(),
        }
    }
}

/// Coordinate masks keyed by entry name.
pub type CoordMask = IndexMap<String, Vec<usize>>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainableSet {
    pub entries: IndexMap<String, Coverage>,
    /// Non-fatal diagnostics, such as pattern alternatives that matched nothing.
    pub warnings: Vec<String>,
}

impl TrainableSet {
    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn coverage(&self, name: &str) -> Option<&Coverage> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Trainable coordinate count over `layout`.
    pub fn count(&self, layout: &Layout) -> usize {
        layout
            .specs
            .iter()
            .filter_map(|s| self.entries.get(&s.name).map(|c| c.count(s.len())))
            .sum()
    }

    pub fn is_trainable_coord(&self, name: &str, index: usize) -> bool {
        match self.entries.get(name) {
            Some(Coverage::All) => true,
            Some(Coverage::Coords(c)) => c.binary_search(&index).is_ok(),
            None => false,
        }
    }
}

/// Draws `ceil(fraction * total)` encoder coordinates without replacement.
pub fn sample_rand_uniform(layout: &Layout, fraction: f64, seed: u64) -> Result<CoordMask> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} outside (0, 1)"
        )));
    }
    let specs: Vec<_> = layout.specs.iter().filter(|s| is_encoder(&s.name)).collect();
    let total: usize = specs.iter().map(|s| s.len()).sum();
    let amount = ((fraction * total as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut rng = RngStream::new(seed, "rand-uniform");
    let mut picks = rng.sample_indices(total, amount.min(total));
    picks.sort_unstable();

    let mut mask = CoordMask::new();
    let mut offset = 0;
    let mut it = picks.into_iter().peekable();
    for s in specs {
        let end = offset + s.len();
        let mut coords = Vec::new();
        while let Some(&p) = it.peek() {
            if p >= end {
                break;
            }
            coords.push(p - offset);
            it.next();
        }
        if !coords.is_empty() {
            mask.insert(s.name.clone(), coords);
        }
        offset = end;
    }
    Ok(mask)
}

/// Samples whole rows and columns of encoder weight matrices, uniformly among
/// candidates, until at least `budget` coordinates are covered.
pub fn sample_rand_rowcol(layout: &Layout, budget: usize, seed: u64) -> Result<CoordMask> {
    #[derive(Clone, Copy)]
    enum Line {
        Row(usize, usize),
        Col(usize, usize),
    }
    let mats: Vec<_> = layout
        .specs
        .iter()
        .filter(|s| is_encoder(&s.name) && s.shape.len() == 2)
        .collect();
    let mut lines = Vec::new();
    for (m, s) in mats.iter().enumerate() {
        lines.extend((0..s.shape[0]).map(|r| Line::Row(m, r)));
        lines.extend((0..s.shape[1]).map(|c| Line::Col(m, c)));
    }
    let min_len = mats
        .iter()
        .map(|s| s.shape[0].min(s.shape[1]))
        .min()
        .ok_or_else(|| Error::InvalidArgument("layout has no weight matrices".into()))?;
    if budget < min_len {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} is smaller than every row and column (min {min_len})"
        )));
    }

    let mut rng = RngStream::new(seed, "rand-rowcol");
    let mut covered: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); mats.len()];
    let mut realized = 0usize;
    let mut remaining = lines.len();
    while realized < budget && remaining > 0 {
        let pick = rng.below(remaining);
        lines.swap(pick, remaining - 1);
        remaining -= 1;
        let (m, coords): (usize, Vec<usize>) = match lines[remaining] {
            Line::Row(m, r) => {
                let cols = mats[m].shape[1];
                (m, (0..cols).map(|c| r * cols + c).collect())
            }
            Line::Col(m, c) => {
                let cols = mats[m].shape[1];
                (m, (0..mats[m].shape[0]).map(|r| r * cols + c).collect())
            }
        };
        for idx in coords {
            if covered[m].insert(idx) {
                realized += 1;
            }
        }
    }
    Ok(mats
        .iter()
        .zip(covered)
        .filter(|(_, c)| !c.is_empty())
        .map(|(s, c)| (s.name.clone(), c.into_iter().collect()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    pub trainable_count: usize,
    pub total_count: usize,
    /// Task-head coordinates included in both counts above.
    pub head_count: usize,
    /// Encoder coordinates in the trainable set (heads excluded).
    pub encoder_trainable: usize,
    pub encoder_total: usize,
}

impl ParamCount {
    pub fn fraction(&self) -> f64 {
        self.trainable_count as f64 / self.total_count as f64
    }

    /// Share of the pretrained encoder that changes; the `%Param` convention.
    pub fn encoder_fraction(&self) -> f64 {
        self.encoder_trainable as f64 / self.encoder_total as f64
    }

    pub fn encoder_percent(&self) -> f64 {
        100.0 * self.encoder_fraction()
    }
}

/// Exact trainable and total coordinate counts of `selector` over `layout`.
///
/// Totals include embeddings and task heads; the MLM projection, which exists
/// only during pretraining, is ignored.
pub fn count_params(layout: &Layout, selector: &Selector) -> Result<ParamCount> {
    let counted = Layout {
        specs: layout
            .specs
            .iter()
            .filter(|s| !s.name.starts_with(MLM_PREFIX))
            .cloned()
            .collect(),
    };
    let set = selector.resolve(&counted)?;
    let mut c = ParamCount {
        trainable_count: 0,
        total_count: 0,
        head_count: 0,
        encoder_trainable: 0,
        encoder_total: 0,
    };
    for s in &counted.specs {
        let n = s.len();
        let t = set.coverage(&s.name).map_or(0, |cov| cov.count(n));
        c.total_count += n;
        c.trainable_count += t;
        if names::is_head(&s.name) {
            c.head_count += n;
        } else {
            c.encoder_total += n;
            c.encoder_trainable += t;
        }
    }
    Ok(c)
}

/// A labelled selector, one row of a regime comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub id: String,
    pub label: String,
    pub selector: Selector,
}

impl Regime {
    pub fn new(id: &str, label: &str, selector: Selector) -> Self {
        Self {
            id: id.to_string(),
            label: label.to_string(),
            selector,
        }
    }

    /// Full fine-tuning, BitFit, the bias subsets, the frozen encoder, and the
    /// two budget-matched random baselines.
    pub fn standard() -> Vec<Regime> {
        use BiasKind::{Intermediate, Query};
        vec![
            Regime::new("full", "Full-FT", Selector::full()),
            Regime::new("bitfit", "BitFit", Selector::bitfit()),
            Regime::new("bq_bm2", "b_m2,b_q", Selector::biases(&[Query, Intermediate])),
            Regime::new("bm2", "b_m2", Selector::biases(&[Intermediate])),
            Regime::new("bq", "b_q", Selector::biases(&[Query])),
            Regime::new("frozen", "Frozen", Selector::none()),
            Regime::new(
                "rand_uniform",
                "rand uniform",
                Selector::rand_uniform(Budget::MatchBitFit, DEFAULT_RANDOM_SEED),
            ),
            Regime::new(
                "rand_rowcol",
                "rand row/col",
                Selector::rand_rowcol(Budget::MatchBitFit, DEFAULT_RANDOM_SEED),
            ),
        ]
    }

    pub fn by_id(id: &str) -> Option<Regime> {
        Self::standard().into_iter().find(|r| r.id == id)
    }

    pub fn is_full(&self) -> bool {
        matches!(self.selector.kind, SelectorKind::Full)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamSpec;

    fn matrix_layout(r: usize, c: usize) -> Layout {
        Layout {
            specs: vec![ParamSpec::new("m.weight", vec![r, c])],
        }
    }

    #[test]
    fn glob_semantics() {
        let g = Glob::parse("*.key.bias").unwrap();
        assert!(g.matches("encoder.layer.0.attention.self.key.bias"));
        assert!(!g.matches("encoder.layer.0.attention.self.key.weight"));
        let u = Glob::parse("a.*|*.c").unwrap();
        assert!(u.matches("a.b") && u.matches("x.c") && !u.matches("b.a"));
        assert!(Glob::parse("*").unwrap().matches("anything.at.all"));
    }

    #[test]
    fn invalid_globs_rejected() {
        assert!(Glob::parse("a||b").is_err());
        assert!(Glob::parse("a[0]").is_err());
        assert!(Glob::parse("").is_err());
    }

    #[test]
    fn selector_text_round_trip() {
        for text in [
            "full",
            "bitfit",
            "none",
            "pattern:*.attention.self.query.bias|*.intermediate.dense.bias",
            "rand_uniform:bitfit@3",
            "rand_rowcol:0.05@9",
            "rand_uniform:120@1",
        ] {
            let s: Selector = text.parse().unwrap();
            assert_eq!(s.to_string(), text);
        }
        assert!("bogus".parse::<Selector>().is_err());
        assert!("pattern:a[".parse::<Selector>().is_err());
    }

    #[test]
    fn rowcol_single_pick_on_square_matrix() {
        let layout = matrix_layout(4, 4);
        let mask = sample_rand_rowcol(&layout, 4, 5).unwrap();
        let coords = &mask["m.weight"];
        assert_eq!(coords.len(), 4);
        let rows: BTreeSet<_> = coords.iter().map(|c| c / 4).collect();
        let cols: BTreeSet<_> = coords.iter().map(|c| c % 4).collect();
        assert!(rows.len() == 1 || cols.len() == 1);
    }

    #[test]
    fn rowcol_budget_too_small() {
        assert!(sample_rand_rowcol(&matrix_layout(4, 6), 3, 0).is_err());
    }

    #[test]
    fn uniform_fraction_bounds() {
        let layout = matrix_layout(10, 10);
        assert!(sample_rand_uniform(&layout, 0.0, 0).is_err());
        assert!(sample_rand_uniform(&layout, 1.0, 0).is_err());
        let m = sample_rand_uniform(&layout, 0.25, 0).unwrap();
        assert_eq!(m["m.weight"].len(), 25);
    }

    #[test]
    fn pattern_without_match_warns() {
        let set = Selector::pattern("*.nothing.bias")
            .unwrap()
            .resolve(&matrix_layout(2, 2))
            .unwrap();
        assert!(set.entries.is_empty());
        assert_eq!(set.warnings.len(), 1);
    }
}
