//! Word-internal byte-pair encoding.
//!
//! Text is NFC-normalized and split on whitespace. Each word becomes a
//! sequence of characters whose last symbol carries [`END_OF_WORD`]; training
//! repeatedly merges the most frequent adjacent pair (ties go to the
//! lexicographically smallest `(left, right)`), and encoding replays the
//! learned merges in rank order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";

/// Fallback for symbols outside the trained alphabet. Always id 0.
pub const OOV: &str = "<oov>";

pub const START: &str = "<start>";
pub const DELIM1: &str = "<delim1>";
pub const DELIM2: &str = "<delim2>";
pub const CLF: &str = "<clf>";
/// Entity mask used by the UNK masking strategy.
pub const UNK_MASK: &str = "<UNK>";

const HEADER: &str = "bpe-vocab";
const VERSION: &str = "v1";

/// Normalization applied to every input before tokenization: NFC plus
/// collapsing whitespace runs to single spaces.
pub fn normalize(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
    merges: Vec<(String, String)>,
    merge_ranks: HashMap<(String, String), usize>,
    specials: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<usize>,
    /// Character span of each id in the normalized text.
    pub offsets: Vec<(usize, usize)>,
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let last = chars.len() - 1;
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i == last {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

/// Interned-symbol state of the trainer.
struct Trainer {
    symbols: Vec<String>,
    symbol_ids: HashMap<String, u32>,
    words: Vec<(Vec<u32>, usize)>,
    pair_counts: HashMap<(u32, u32), usize>,
    pair_words: HashMap<(u32, u32), BTreeSet<usize>>,
}

impl Trainer {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.symbol_ids.get(s) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(s.to_string());
        self.symbol_ids.insert(s.to_string(), id);
        id
    }

    fn add_word_pairs(&mut self, w: usize) {
        let (syms, freq) = &self.words[w];
        for pair in syms.windows(2) {
            let key = (pair[0], pair[1]);
            *self.pair_counts.entry(key).or_default() += freq;
            self.pair_words.entry(key).or_default().insert(w);
        }
    }

    fn remove_word_pairs(&mut self, w: usize) {
        let (syms, freq) = &self.words[w];
        for pair in syms.windows(2) {
            let key = (pair[0], pair[1]);
            let count = self.pair_counts.get_mut(&key).expect("pair was counted");
            *count -= freq;
            if *count == 0 {
                self.pair_counts.remove(&key);
            }
        }
    }

    fn best_pair(&self) -> Option<(u32, u32)> {
        let name = |p: &(u32, u32)| (&self.symbols[p.0 as usize], &self.symbols[p.1 as usize]);
        self.pair_counts
            .iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| name(pb).cmp(&name(pa))))
            .map(|(p, _)| *p)
    }

    fn merge(&mut self, pair: (u32, u32), merged: u32) {
        let affected: Vec<usize> = self.pair_words.remove(&pair).into_iter().flatten().collect();
        for w in affected {
            if !self.words[w].0.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            self.remove_word_pairs(w);
            let syms = &mut self.words[w].0;
            *syms = apply_merge(syms, pair, merged);
            self.add_word_pairs(w);
        }
    }
}

fn apply_merge<T: Copy + PartialEq>(syms: &[T], pair: (T, T), merged: T) -> Vec<T> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
            out.push(merged);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

/// Learns a vocabulary of `target_vocab_size` tokens (the [`OOV`] fallback
/// and every base symbol included). Training stops early when no adjacent
/// pair is left to merge.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], target_vocab_size: usize) -> Result<Vocab> {
    let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
    for line in corpus {
        for word in normalize(line.as_ref()).split(' ').filter(|w| !w.is_empty()) {
            *word_freq.entry(word.to_string()).or_default() += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(Error::Input("BPE training corpus contains no words".into()));
    }

    let mut trainer = Trainer {
        symbols: Vec::new(),
        symbol_ids: HashMap::new(),
        words: Vec::new(),
        pair_counts: HashMap::new(),
        pair_words: HashMap::new(),
    };
    let mut base = BTreeSet::new();
    for (word, freq) in &word_freq {
        let syms = word_symbols(word);
        let ids = syms.iter().map(|s| trainer.intern(s)).collect();
        base.extend(syms);
        trainer.words.push((ids, *freq));
    }
    let base_count = base.len() + 1;
    if target_vocab_size < base_count {
        return Err(Error::Input(format!(
            "target vocabulary size {target_vocab_size} is below the {base_count} base symbols"
        )));
    }
    for w in 0..trainer.words.len() {
        trainer.add_word_pairs(w);
    }

    let mut tokens: Vec<String> = std::iter::once(OOV.to_string()).chain(base).collect();
    let mut known: BTreeSet<String> = tokens.iter().cloned().collect();
    let mut merges = Vec::new();
    while tokens.len() < target_vocab_size {
        let Some(pair) = trainer.best_pair() else { break };
        let left = trainer.symbols[pair.0 as usize].clone();
        let right = trainer.symbols[pair.1 as usize].clone();
        let product = format!("{left}{right}");
        let merged = trainer.intern(&product);
        trainer.merge(pair, merged);
        if known.insert(product.clone()) {
            tokens.push(product);
        }
        merges.push((left, right));
    }

    let mut specials = BTreeMap::new();
    specials.insert(OOV.to_string(), 0);
    Vocab::from_parts(tokens, merges, specials)
}

impl Vocab {
    fn from_parts(
        id_to_token: Vec<String>,
        merges: Vec<(String, String)>,
        specials: BTreeMap<String, usize>,
    ) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, tok) in id_to_token.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id).is_some() {
                return Err(Error::Input(format!("duplicate token `{tok}`")));
            }
        }
        let merge_ranks = merges
            .iter()
            .enumerate()
            .map(|(rank, pair)| (pair.clone(), rank))
            .collect();
        Ok(Vocab {
            id_to_token,
            token_to_id,
            merges,
            merge_ranks,
            specials,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Special tokens by name (their surface form).
    pub fn specials(&self) -> &BTreeMap<String, usize> {
        &self.specials
    }

    pub fn special_id(&self, name: &str) -> Option<usize> {
        self.specials.get(name).copied()
    }

    pub fn is_special(&self, id: usize) -> bool {
        self.id_to_token.get(id).is_some_and(|t| self.specials.contains_key(t))
    }

    pub fn oov_id(&self) -> usize {
        self.specials[OOV]
    }

    /// Appends special tokens after the existing ids. Merges are untouched.
    pub fn extend_with_special_tokens<S: AsRef<str>>(&self, names: &[S]) -> Result<Vocab> {
        let mut out = self.clone();
        for name in names {
            let name = name.as_ref();
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::Input(format!("invalid special token name `{name}`")));
            }
            if out.token_to_id.contains_key(name) {
                return Err(Error::Input(format!("special token `{name}` already in vocabulary")));
            }
            let id = out.id_to_token.len();
            out.id_to_token.push(name.to_string());
            out.token_to_id.insert(name.to_string(), id);
            out.specials.insert(name.to_string(), id);
        }
        Ok(out)
    }

    /// Like [`extend_with_special_tokens`](Self::extend_with_special_tokens)
    /// but skips names already registered as specials.
    pub fn ensure_special_tokens<S: AsRef<str>>(&self, names: &[S]) -> Result<Vocab> {
        let mut seen = BTreeSet::new();
        let missing: Vec<&str> = names
            .iter()
            .map(AsRef::as_ref)
            .filter(|n| !self.specials.contains_key(*n) && seen.insert(*n))
            .collect();
        self.extend_with_special_tokens(&missing)
    }

    fn encode_word(&self, word: &str) -> Vec<(String, usize, usize)> {
        let mut syms: Vec<(String, usize, usize)> = word_symbols(word)
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s, i, i + 1))
            .collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.merge_ranks.get(&(w[0].0.clone(), w[1].0.clone())))
                .min();
            let Some(&rank) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && &syms[i].0 == left && &syms[i + 1].0 == right {
                    out.push((format!("{left}{right}"), syms[i].1, syms[i + 1].2));
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            syms = out;
        }
        syms
    }

    /// Tokenizes plain text. Never yields special ids other than the
    /// [`OOV`] fallback for symbols outside the trained alphabet.
    pub fn encode(&self, text: &str) -> Encoding {
        let text = normalize(text);
        let mut ids = Vec::new();
        let mut offsets = Vec::new();
        let mut char_pos = 0;
        for word in text.split(' ').filter(|w| !w.is_empty()) {
            for (sym, start, end) in self.encode_word(word) {
                let id = match self.token_to_id.get(&sym) {
                    Some(&id) if !self.specials.contains_key(&sym) => id,
                    _ => self.oov_id(),
                };
                ids.push(id);
                offsets.push((char_pos + start, char_pos + end));
            }
            char_pos += word.chars().count() + 1;
        }
        Encoding { ids, offsets }
    }

    /// Inverse of [`encode`](Self::encode) on normalized text. Special tokens
    /// are rendered as standalone words.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut words: Vec<String> = Vec::new();
        let mut current = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(Error::Index {
                what: "vocabulary",
                index: id,
                bound: self.len(),
            })?;
            if self.specials.contains_key(tok) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(tok.to_string());
            } else if let Some(stem) = tok.strip_suffix(END_OF_WORD) {
                current.push_str(stem);
                words.push(std::mem::take(&mut current));
            } else {
                current.push_str(tok);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
        Ok(words.join(" "))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER} {VERSION} {} {}", self.len(), self.merges.len());
        for (id, tok) in self.id_to_token.iter().enumerate() {
            let _ = writeln!(out, "{id}\t{tok}");
        }
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l}\t{r}");
        }
        let mut specials: Vec<(&String, &usize)> = self.specials.iter().collect();
        specials.sort_by_key(|(_, id)| **id);
        for (name, id) in specials {
            let _ = writeln!(out, "special\t{name}\t{id}");
        }
        out
    }

    /// Hex SHA-256 of the serialized vocabulary.
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vocab> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: impl AsRef<Path>) -> Result<Vocab> {
        let origin = origin.as_ref();
        let err = |line: usize, msg: String| Error::parse(origin, line, msg);
        let mut lines = text.split_terminator('\n').enumerate().map(|(i, l)| (i + 1, l));

        let (_, header) = lines.next().ok_or_else(|| err(1, "empty vocabulary file".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        let (size, num_merges) = match fields.as_slice() {
            [HEADER, VERSION, v, m] => (
                v.parse::<usize>().map_err(|_| err(1, format!("bad size `{v}`")))?,
                m.parse::<usize>()
                    .map_err(|_| err(1, format!("bad merge count `{m}`")))?,
            ),
            _ => return Err(err(1, format!("expected `{HEADER} {VERSION} <V> <merges>`"))),
        };

        let mut tokens = Vec::with_capacity(size);
        let mut seen = BTreeSet::new();
        for expected_id in 0..size {
            let (no, line) = lines
                .next()
                .ok_or_else(|| err(expected_id + 2, "missing token line".into()))?;
            let (id, tok) = line
                .split_once('\t')
                .ok_or_else(|| err(no, "expected `<id>\\t<token>`".into()))?;
            let id: usize = id.parse().map_err(|_| err(no, format!("bad id `{id}`")))?;
            if id != expected_id {
                return Err(err(no, format!("expected id {expected_id}, found {id}")));
            }
            if tok.is_empty() || tok.contains('\t') {
                return Err(err(no, format!("malformed token `{tok}`")));
            }
            if !seen.insert(tok) {
                return Err(err(no, format!("duplicate token `{tok}`")));
            }
            tokens.push(tok.to_string());
        }

        let mut merges = Vec::with_capacity(num_merges);
        for _ in 0..num_merges {
            let (no, line) = lines.next().ok_or_else(|| err(size + 2, "missing merge line".into()))?;
            let parts: Vec<&str> = line.split('\t').collect();
            let [l, r] = parts.as_slice() else {
                return Err(err(no, "expected `<left>\\t<right>`".into()));
            };
            for sym in [*l, *r, &format!("{l}{r}")] {
                if !seen.contains(sym) {
                    return Err(err(no, format!("merge symbol `{sym}` is not in the vocabulary")));
                }
            }
            merges.push((l.to_string(), r.to_string()));
        }

        let mut specials = BTreeMap::new();
        for (no, line) in lines {
            let parts: Vec<&str> = line.split('\t').collect();
            let ["special", name, id] = parts.as_slice() else {
                return Err(err(no, "expected `special\\t<name>\\t<id>`".into()));
            };
            let id: usize = id.parse().map_err(|_| err(no, format!("bad id `{id}`")))?;
            if tokens.get(id).map(String::as_str) != Some(*name) {
                return Err(err(no, format!("special `{name}` does not match token {id}")));
            }
            if specials.insert(name.to_string(), id).is_some() {
                return Err(err(no, format!("duplicate special `{name}`")));
            }
        }
        if !specials.contains_key(OOV) {
            return Err(err(1, format!("vocabulary lacks the `{OOV}` special")));
        }
        Vocab::from_parts(tokens, merges, specials)
    }
}
