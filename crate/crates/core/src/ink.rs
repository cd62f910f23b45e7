//! Online handwriting data model and an InkML subset reader.
//!
//! Only `trace`, `traceGroup`, `annotation` and `traceView` are interpreted;
//! any other element is skipped.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const BACKGROUND: &str = "background";

const XML_NS: &str = "http://www.w3.org/XML/1998/namespace";

#[derive(Debug, Error)]
pub enum InkError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("trace {trace_id}: cannot parse coordinate token {token:?}")]
    BadTrace { trace_id: String, token: String },
    #[error("traceView references unknown trace {0:?}")]
    DanglingRef(String),
    #[error("document contains no traces")]
    EmptyGraphic,
    #[error("duplicate trace id {0:?}")]
    DuplicateTraceId(String),
    #[error("trace {0:?} belongs to more than one labeled symbol")]
    OverlappingSymbols(String),
    #[error("split fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub id: String,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolAnnotation {
    pub label: String,
    pub stroke_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InkGraphic {
    pub id: String,
    pub strokes: Vec<Stroke>,
    pub symbols: Vec<SymbolAnnotation>,
}

impl InkGraphic {
    pub fn points(&self) -> impl Iterator<Item = &Point> {
        self.strokes.iter().flat_map(|s| s.points.iter())
    }

    pub fn stroke(&self, id: &str) -> Option<&Stroke> {
        self.strokes.iter().find(|s| s.id == id)
    }

    /// Strokes of one symbol, in graphic order.
    pub fn symbol_strokes<'a>(&'a self, sym: &'a SymbolAnnotation) -> impl Iterator<Item = &'a Stroke> + 'a {
        self.strokes.iter().filter(move |s| sym.stroke_ids.contains(&s.id))
    }

    /// Applies `f` to every point, keeping stroke and symbol structure.
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> InkGraphic {
        InkGraphic {
            id: self.id.clone(),
            strokes: self
                .strokes
                .iter()
                .map(|s| Stroke { id: s.id.clone(), points: s.points.iter().map(|p| f(*p)).collect() })
                .collect(),
            symbols: self.symbols.clone(),
        }
    }
}

/// Class names with index 0 reserved for the background class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassVocabulary {
    /// Builds a vocabulary from symbol class names (background is prepended).
    /// Duplicates are dropped; order of first appearance is kept.
    pub fn from_classes<I, S>(classes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut names = vec![BACKGROUND.to_string()];
        let mut index = HashMap::from([(BACKGROUND.to_string(), 0)]);
        for c in classes {
            let c = c.into();
            if !index.contains_key(&c) {
                index.insert(c.clone(), names.len());
                names.push(c);
            }
        }
        Self { names, index }
    }

    /// Parses the full name list, which must start with `background`.
    pub fn from_names(names: Vec<String>) -> Option<Self> {
        if names.first().map(String::as_str) != Some(BACKGROUND) {
            return None;
        }
        let vocab = Self::from_classes(names[1..].iter().cloned());
        (vocab.names.len() == names.len()).then_some(vocab)
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total entries including background.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of symbol classes (excluding background).
    pub fn num_classes(&self) -> usize {
        self.names.len() - 1
    }
}

/// Background followed by the distinct labels of all graphics, sorted.
pub fn build_vocabulary(graphics: &[InkGraphic]) -> ClassVocabulary {
    let labels: BTreeSet<&str> =
        graphics.iter().flat_map(|g| g.symbols.iter().map(|s| s.label.as_str())).filter(|l| *l != BACKGROUND).collect();
    ClassVocabulary::from_classes(labels)
}

/// Seeded shuffle, then the first `ceil(fraction * n)` items go to training.
pub fn split_train_val<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), InkError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(InkError::BadFraction(fraction));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fraction * items.len() as f64).ceil() as usize;
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let val = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, val))
}

fn element_id(node: roxmltree::Node) -> Option<String> {
    node.attribute((XML_NS, "id")).or_else(|| node.attribute("id")).map(str::to_string)
}

fn parse_trace_points(trace_id: &str, text: &str) -> Result<Vec<Point>, InkError> {
    let bad = |token: &str| InkError::BadTrace { trace_id: trace_id.to_string(), token: token.to_string() };
    let mut points = Vec::new();
    for chunk in text.split(',') {
        let chunk = chunk.trim();
        if chunk.is_empty() {
            continue;
        }
        let mut channels = chunk.split_whitespace();
        let mut coord = || -> Result<f64, InkError> {
            let tok = channels.next().ok_or_else(|| bad(chunk))?;
            match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(bad(tok)),
            }
        };
        let x = coord()?;
        let y = coord()?;
        points.push(Point::new(x, y));
    }
    if points.is_empty() {
        return Err(bad(text.trim()));
    }
    Ok(points)
}

fn truth_label(group: roxmltree::Node) -> Option<String> {
    group
        .children()
        .filter(|c| c.has_tag_name("annotation") && c.attribute("type") == Some("truth"))
        .find_map(|c| c.text().map(|t| t.trim().to_string()))
        .filter(|t| !t.is_empty())
}

/// traceView refs owned by `group`: its own plus those of unlabeled
/// descendant groups. Labeled descendants claim their own refs.
fn collect_refs(group: roxmltree::Node, out: &mut Vec<String>) {
    for child in group.children().filter(|c| c.is_element()) {
        if child.has_tag_name("traceView") {
            if let Some(r) = child.attribute("traceDataRef") {
                out.push(r.trim_start_matches('#').to_string());
            }
        } else if child.has_tag_name("traceGroup") && truth_label(child).is_none() {
            collect_refs(child, out);
        }
    }
}

/// Parses an InkML document into strokes and truth-labeled symbols.
pub fn parse_inkml(document: &[u8]) -> Result<InkGraphic, InkError> {
    let text = std::str::from_utf8(document).map_err(|e| InkError::MalformedXml(e.to_string()))?;
    let doc = roxmltree::Document::parse(text).map_err(|e| InkError::MalformedXml(e.to_string()))?;
    let root = doc.root_element();

    let mut strokes = Vec::new();
    let mut seen = HashSet::new();
    for (ordinal, trace) in root.descendants().filter(|n| n.has_tag_name("trace")).enumerate() {
        let id = element_id(trace).unwrap_or_else(|| ordinal.to_string());
        if !seen.insert(id.clone()) {
            return Err(InkError::DuplicateTraceId(id));
        }
        let points = parse_trace_points(&id, trace.text().unwrap_or(""))?;
        strokes.push(Stroke { id, points });
    }
    if strokes.is_empty() {
        return Err(InkError::EmptyGraphic);
    }

    let mut symbols = Vec::new();
    let mut owner: HashSet<String> = HashSet::new();
    for group in root.descendants().filter(|n| n.has_tag_name("traceGroup")) {
        let Some(label) = truth_label(group) else { continue };
        let mut refs = Vec::new();
        collect_refs(group, &mut refs);
        if refs.is_empty() {
            continue;
        }
        for r in &refs {
            if !seen.contains(r) {
                return Err(InkError::DanglingRef(r.clone()));
            }
            if !owner.insert(r.clone()) {
                return Err(InkError::OverlappingSymbols(r.clone()));
            }
        }
        symbols.push(SymbolAnnotation { label, stroke_ids: refs.into_iter().collect() });
    }

    let id = root
        .children()
        .filter(|c| c.has_tag_name("annotation") && c.attribute("type") == Some("UI"))
        .find_map(|c| c.text().map(|t| t.trim().to_string()))
        .or_else(|| element_id(root))
        .unwrap_or_default();
    Ok(InkGraphic { id, strokes, symbols })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(body: &str) -> Vec<u8> {
        format!(r#"<ink xmlns="http://www.w3.org/2003/InkML">{body}</ink>"#).into_bytes()
    }

    #[test]
    fn single_trace() {
        let g = parse_inkml(&doc(r#"<trace id="0">0 0, 10 0</trace>"#)).unwrap();
        assert_eq!(g.strokes.len(), 1);
        assert_eq!(g.strokes[0].points, vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0)]);
        assert!(g.symbols.is_empty());
    }

    #[test]
    fn labeled_group() {
        let g = parse_inkml(&doc(r#"<trace id="0">0 0, 1 1</trace><trace id="1">5 5 0.3 12</trace>
               <traceGroup xml:id="9"><annotation type="truth">x</annotation>
               <traceView traceDataRef="0"/><traceView traceDataRef="1"/></traceGroup>"#))
        .unwrap();
        assert_eq!(g.strokes.len(), 2);
        assert_eq!(g.strokes[1].points, vec![Point::new(5.0, 5.0)]);
        assert_eq!(g.symbols.len(), 1);
        assert_eq!(g.symbols[0].label, "x");
        assert_eq!(g.symbols[0].stroke_ids, BTreeSet::from(["0".to_string(), "1".to_string()]));
    }

    #[test]
    fn bad_token() {
        let err = parse_inkml(&doc(r#"<trace id="t7">1.2.3 4</trace>"#)).unwrap_err();
        match err {
            InkError::BadTrace { trace_id, token } => {
                assert_eq!(trace_id, "t7");
                assert_eq!(token, "1.2.3");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_inkml(&doc(r#"<trace>4</trace>"#)), Err(InkError::BadTrace { .. })));
        assert!(matches!(parse_inkml(&doc(r#"<trace>  </trace>"#)), Err(InkError::BadTrace { .. })));
    }

    #[test]
    fn error_cases() {
        assert!(matches!(parse_inkml(b"<ink><trace>0 0</ink>"), Err(InkError::MalformedXml(_))));
        assert!(matches!(parse_inkml(&doc("")), Err(InkError::EmptyGraphic)));
        let dangling = doc(r#"<trace id="0">0 0</trace><traceGroup><annotation type="truth">a</annotation>
               <traceView traceDataRef="5"/></traceGroup>"#);
        assert!(matches!(parse_inkml(&dangling), Err(InkError::DanglingRef(r)) if r == "5"));
        let dup = doc(r#"<trace id="0">0 0</trace><trace id="0">1 1</trace>"#);
        assert!(matches!(parse_inkml(&dup), Err(InkError::DuplicateTraceId(_))));
    }

    #[test]
    fn missing_ids_use_ordinals_and_unknown_elements_skip() {
        let g = parse_inkml(&doc(r#"<definitions><foo/></definitions><trace>0 0</trace><trace>1 1</trace>"#)).unwrap();
        let ids: Vec<_> = g.strokes.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["0", "1"]);
    }

    #[test]
    fn nested_groups_innermost_label_wins() {
        let g = parse_inkml(&doc(r#"<trace id="0">0 0</trace><trace id="1">1 1</trace><trace id="2">2 2</trace>
               <traceGroup xml:id="8"><annotation type="truth">Segmentation</annotation>
                 <traceGroup xml:id="9"><annotation type="truth">x</annotation>
                   <traceView traceDataRef="0"/></traceGroup>
                 <traceGroup xml:id="10"><annotation type="truth">+</annotation>
                   <traceGroup><traceView traceDataRef="1"/></traceGroup>
                   <traceView traceDataRef="2"/></traceGroup>
               </traceGroup>"#))
        .unwrap();
        let labels: Vec<_> = g.symbols.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["x", "+"]);
        assert_eq!(g.symbols[1].stroke_ids.len(), 2);
    }

    #[test]
    fn vocabulary() {
        assert_eq!(build_vocabulary(&[]).names(), ["background"]);
        let mk = |labels: &[&str]| InkGraphic {
            id: String::new(),
            strokes: vec![],
            symbols: labels
                .iter()
                .map(|l| SymbolAnnotation { label: l.to_string(), stroke_ids: BTreeSet::new() })
                .collect(),
        };
        let v = build_vocabulary(&[mk(&["arrow", "text"]), mk(&["arrow"])]);
        assert_eq!(v.names(), ["background", "arrow", "text"]);
        assert_eq!(v.lookup("text"), Some(2));
        assert_eq!(v.name(1), Some("arrow"));
        assert_eq!(v.num_classes(), 2);
        assert_eq!(ClassVocabulary::from_names(v.names().to_vec()), Some(v));
        assert_eq!(ClassVocabulary::from_names(vec!["arrow".into()]), None);
    }

    #[test]
    fn split_examples() {
        let items: Vec<u32> = (0..10).collect();
        let (tr, va) = split_train_val(&items, 0.8, 7).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        let mut all: Vec<u32> = tr.iter().chain(va.iter()).copied().collect();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(split_train_val(&items, 0.8, 7).unwrap(), (tr, va));
        assert!(matches!(split_train_val(&items, 1.5, 7), Err(InkError::BadFraction(_))));
        assert!(matches!(split_train_val(&items, 0.0, 7), Err(InkError::BadFraction(_))));
    }

    proptest! {
        #[test]
        fn split_partitions(n in 0usize..60, frac in 0.01..0.99f64, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let (tr, va) = split_train_val(&items, frac, seed).unwrap();
            prop_assert_eq!(tr.len() + va.len(), n);
            prop_assert_eq!(tr.len(), (frac * n as f64).ceil() as usize);
            let set: HashSet<usize> = tr.iter().chain(va.iter()).copied().collect();
            prop_assert_eq!(set.len(), n);
            prop_assert_eq!(split_train_val(&items, frac, seed).unwrap(), (tr, va));
        }

        #[test]
        fn vocabulary_permutation_invariant(labels in proptest::collection::vec("[a-e]{1,2}", 0..12), seed in any::<u64>()) {
            let graphics: Vec<InkGraphic> = labels.iter().map(|l| InkGraphic {
                id: String::new(),
                strokes: vec![],
                symbols: vec![SymbolAnnotation { label: l.clone(), stroke_ids: BTreeSet::new() }],
            }).collect();
            let mut shuffled = graphics.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(build_vocabulary(&graphics), build_vocabulary(&shuffled));
        }
    }
}
