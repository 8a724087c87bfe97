//! SemEval 2010 Task 8 ingestion.
//!
//! Records are four lines: `<id>\t"<sentence with <e1>..</e1> and <e2>..</e2>>"`,
//! the directed label, a `Comment:` line and a blank separator.

use std::path::Path;

use super::{Argument, Dataset, Format, RelationInstance, Role};
use crate::error::{Error, Result};

pub const OTHER: &str = "Other";

/// The nine directed relation types.
pub const RELATION_TYPES: [&str; 9] = [
    "Cause-Effect",
    "Component-Whole",
    "Content-Container",
    "Entity-Destination",
    "Entity-Origin",
    "Instrument-Agency",
    "Member-Collection",
    "Message-Topic",
    "Product-Producer",
];

/// All 19 labels: each type in both directions, plus `Other`.
pub fn semeval_labels() -> Vec<String> {
    let mut out: Vec<String> = RELATION_TYPES
        .iter()
        .flat_map(|t| [format!("{t}(e1,e2)"), format!("{t}(e2,e1)")])
        .collect();
    out.push(OTHER.to_string());
    out.sort();
    out
}

/// Splits a directed label into its type and whether it points e1→e2.
/// Returns `None` for `Other` and for labels outside the 19-label set.
pub fn parse_directed(label: &str) -> Option<(&str, bool)> {
    let (name, dir) = match label.strip_suffix("(e1,e2)") {
        Some(n) => (n, true),
        None => (label.strip_suffix("(e2,e1)")?, false),
    };
    RELATION_TYPES.iter().find(|t| **t == name).map(|t| (*t, dir))
}

pub fn is_semeval_label(label: &str) -> bool {
    label == OTHER || parse_directed(label).is_some()
}

/// Splits text into words, detaching leading and trailing punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    const PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '"', '(', ')', '[', ']', '\''];
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lead: Vec<char> = raw.chars().take_while(|c| PUNCT.contains(c)).collect();
        let rest = &raw[lead.iter().map(|c| c.len_utf8()).sum::<usize>()..];
        let core = rest.trim_end_matches(PUNCT);
        let trail = &rest[core.len()..];
        out.extend(lead.iter().map(|c| c.to_string()));
        if !core.is_empty() {
            out.push(core.to_string());
        }
        out.extend(trail.chars().map(|c| c.to_string()));
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Tag {
    None,
    E1,
    E2,
}

type Span = (usize, usize);

/// Parses a marked-up sentence into tokens and the two entity spans.
fn parse_markup(sentence: &str) -> std::result::Result<(Vec<String>, Span, Span), String> {
    let mut tokens = Vec::new();
    let mut spans: [Option<(usize, usize)>; 2] = [None, None];
    let mut current = Tag::None;
    let mut rest = sentence;
    loop {
        let next = rest.find('<');
        let (text, after) = match next {
            Some(i) => (&rest[..i], Some(&rest[i..])),
            None => (rest, None),
        };
        let start = tokens.len();
        tokens.extend(tokenize(text));
        if current != Tag::None && tokens.len() > start {
            let slot = &mut spans[(current == Tag::E2) as usize];
            let begin = slot.map_or(start, |(s, _)| s);
            *slot = Some((begin, tokens.len() - 1));
        }
        let Some(after) = after else { break };
        let tag_end = after.find('>').ok_or("unterminated entity tag")? + 1;
        let tag = &after[..tag_end];
        match (tag, current) {
            ("<e1>", Tag::None) if spans[0].is_none() => current = Tag::E1,
            ("<e2>", Tag::None) if spans[1].is_none() => current = Tag::E2,
            ("</e1>", Tag::E1) => current = Tag::None,
            ("</e2>", Tag::E2) => current = Tag::None,
            ("<e1>" | "<e2>", Tag::E1 | Tag::E2) => return Err("nested entity markers".into()),
            _ => return Err(format!("unbalanced entity markup at `{tag}`")),
        }
        rest = &after[tag_end..];
    }
    if current != Tag::None {
        return Err("unclosed entity marker".into());
    }
    match spans {
        [Some(e1), Some(e2)] => Ok((tokens, e1, e2)),
        _ => Err("sentence must mark both <e1> and <e2>".into()),
    }
}

pub fn parse_semeval(text: &str, origin: &Path) -> Result<Dataset> {
    let lines: Vec<&str> = text.lines().collect();
    let mut instances = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let line_no = i + 1;
        let (_, quoted) = lines[i]
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, line_no, "expected `<id>\\t\"<sentence>\"`"))?;
        let sentence = quoted.trim().trim_matches('"');
        let (tokens, e1, e2) = parse_markup(sentence).map_err(|msg| Error::parse(origin, line_no, msg))?;

        let label = lines
            .get(i + 1)
            .map(|l| l.trim())
            .ok_or_else(|| Error::parse(origin, line_no + 1, "missing relation line"))?;
        if !is_semeval_label(label) {
            return Err(Error::parse(origin, line_no + 1, format!("unknown relation `{label}`")));
        }
        match lines.get(i + 2) {
            Some(l) if l.trim_start().starts_with("Comment") => {}
            _ => return Err(Error::parse(origin, line_no + 2, "expected a `Comment:` line")),
        }
        if let Some(l) = lines.get(i + 3) {
            if !l.trim().is_empty() {
                return Err(Error::parse(origin, line_no + 3, "expected a blank separator line"));
            }
        }

        let inst = RelationInstance {
            tokens,
            arg1: Argument {
                start: e1.0,
                end: e1.1,
                role: Role::Subject,
                entity_type: None,
            },
            arg2: Argument {
                start: e2.0,
                end: e2.1,
                role: Role::Object,
                entity_type: None,
            },
            label: label.to_string(),
        };
        inst.validate()
            .map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
        instances.push(inst);
        i += 4;
    }
    Dataset::new(Format::Semeval, semeval_labels(), instances)
}

pub fn load_semeval(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_semeval(&text, path)
}
