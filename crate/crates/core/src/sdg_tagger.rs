//! Controlled-vocabulary SDG tagging.
//!
//! Phrases are matched on whole tokens with a token-level Aho–Corasick
//! automaton, one over raw tokens for case-sensitive entries and one over
//! lowercased tokens for the rest. Overlapping matches are all reported.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{Corpus, Project, SdgTag};

pub const MAX_PHRASE_TOKENS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyEntry {
    pub sdg: u8,
    /// Normalized phrase: tokens joined by single spaces, lowercased unless
    /// the entry is case-sensitive.
    pub phrase: String,
    pub case_sensitive: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum SdgError {
    #[error("line {line}: SDG number {value:?} is not in 1..17")]
    BadSdgNumber { line: u64, value: String },
    #[error("line {line}: duplicate entry ({sdg}, {phrase:?})")]
    DuplicateEntry { line: u64, sdg: u8, phrase: String },
    #[error("line {line}: {reason}")]
    BadRow { line: u64, reason: String },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Splits on anything that is not alphanumeric. No stopword removal, so that
/// phrases such as "zero hunger" or "life on land" keep every token.
pub fn tokens(text: &str) -> Vec<&str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn fold(token: &str) -> String {
    token.to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdgMatch {
    pub sdg: u8,
    pub phrase: String,
    /// Token offsets where the phrase starts.
    pub positions: Vec<usize>,
    pub count: usize,
}

/// Token-level Aho–Corasick automaton over interned symbols.
#[derive(Debug, Clone, Default)]
struct Automaton {
    symbols: HashMap<String, u32>,
    goto: Vec<HashMap<u32, usize>>,
    fail: Vec<usize>,
    /// (entry index, phrase length) for every pattern ending at the node,
    /// including those reached through failure links.
    out: Vec<Vec<(usize, usize)>>,
}

impl Automaton {
    fn build(patterns: &[(usize, Vec<String>)]) -> Self {
        let mut a = Automaton {
            goto: vec![HashMap::new()],
            fail: vec![0],
            out: vec![Vec::new()],
            ..Default::default()
        };
        for (entry, toks) in patterns {
            let mut node = 0;
            for t in toks {
                let next_sym = a.symbols.len() as u32;
                let sym = *a.symbols.entry(t.clone()).or_insert(next_sym);
                node = match a.goto[node].get(&sym) {
                    Some(&n) => n,
                    None => {
                        a.goto.push(HashMap::new());
                        a.fail.push(0);
                        a.out.push(Vec::new());
                        let n = a.goto.len() - 1;
                        a.goto[node].insert(sym, n);
                        n
                    }
                };
            }
            a.out[node].push((*entry, toks.len()));
        }
        let mut queue: VecDeque<usize> = a.goto[0].values().copied().collect();
        while let Some(node) = queue.pop_front() {
            let edges: Vec<(u32, usize)> = a.goto[node].iter().map(|(s, n)| (*s, *n)).collect();
            for (sym, child) in edges {
                let mut f = a.fail[node];
                let target = loop {
                    if let Some(&n) = a.goto[f].get(&sym) {
                        break n;
                    }
                    if f == 0 {
                        break 0;
                    }
                    f = a.fail[f];
                };
                a.fail[child] = target;
                let inherited = a.out[target].clone();
                a.out[child].extend(inherited);
                queue.push_back(child);
            }
        }
        a
    }

    /// Calls `hit(entry, start)` for every occurrence.
    fn scan<'t>(&self, toks: impl Iterator<Item = &'t str>, mut hit: impl FnMut(usize, usize)) {
        let mut node = 0;
        for (i, t) in toks.enumerate() {
            let Some(&sym) = self.symbols.get(t) else {
                node = 0;
                continue;
            };
            node = loop {
                if let Some(&n) = self.goto[node].get(&sym) {
                    break n;
                }
                if node == 0 {
                    break 0;
                }
                node = self.fail[node];
            };
            for &(entry, len) in &self.out[node] {
                hit(entry, i + 1 - len);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdgVocabulary {
    entries: Vec<VocabularyEntry>,
    raw: Automaton,
    folded: Automaton,
}

impl SdgVocabulary {
    pub fn new(entries: Vec<VocabularyEntry>) -> Self {
        let mut raw = Vec::new();
        let mut folded = Vec::new();
        for (i, e) in entries.iter().enumerate() {
            let toks: Vec<String> = e.phrase.split(' ').map(str::to_string).collect();
            if e.case_sensitive {
                raw.push((i, toks));
            } else {
                folded.push((i, toks));
            }
        }
        SdgVocabulary {
            raw: Automaton::build(&raw),
            folded: Automaton::build(&folded),
            entries,
        }
    }

    pub fn entries(&self) -> &[VocabularyEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sdgs(&self) -> BTreeSet<u8> {
        self.entries.iter().map(|e| e.sdg).collect()
    }

    /// Matches in a plain text, sorted by (sdg, phrase).
    pub fn tag_text(&self, text: &str) -> Vec<SdgMatch> {
        let raw = tokens(text);
        let folded: Vec<String> = raw.iter().map(|t| fold(t)).collect();
        let mut hits: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        self.raw
            .scan(raw.iter().copied(), |e, start| hits.entry(e).or_default().push(start));
        self.folded
            .scan(folded.iter().map(String::as_str), |e, start| {
                hits.entry(e).or_default().push(start)
            });
        let mut out: Vec<SdgMatch> = hits
            .into_iter()
            .map(|(e, mut positions)| {
                positions.sort_unstable();
                let entry = &self.entries[e];
                SdgMatch {
                    sdg: entry.sdg,
                    phrase: entry.phrase.clone(),
                    count: positions.len(),
                    positions,
                }
            })
            .collect();
        out.sort_by(|a, b| (a.sdg, &a.phrase).cmp(&(b.sdg, &b.phrase)));
        out
    }

    pub fn tag(&self, project: &Project) -> Vec<SdgMatch> {
        self.tag_text(&project.text())
    }
}

/// Normalizes and validates one entry.
pub fn make_entry(sdg: u8, phrase: &str, case_sensitive: bool) -> Result<VocabularyEntry, String> {
    let toks = tokens(phrase);
    if toks.is_empty() {
        return Err("phrase is empty after normalization".into());
    }
    if toks.len() > MAX_PHRASE_TOKENS {
        return Err(format!("phrase has {} tokens (max {MAX_PHRASE_TOKENS})", toks.len()));
    }
    let joined = toks.join(" ");
    Ok(VocabularyEntry {
        sdg,
        phrase: if case_sensitive { joined } else { fold(&joined) },
        case_sensitive,
    })
}

pub fn load_vocabulary(path: &Path) -> Result<SdgVocabulary, SdgError> {
    parse_vocabulary(&std::fs::read_to_string(path)?)
}

pub fn parse_vocabulary(data: &str) -> Result<SdgVocabulary, SdgError> {
    let mut rdr = csv::Reader::from_reader(data.trim_start_matches('\u{feff}').as_bytes());
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let raw_sdg = rec.get(0).unwrap_or("").trim();
        let sdg = match raw_sdg.parse::<u8>() {
            Ok(n) if (1..=17).contains(&n) => n,
            _ => {
                return Err(SdgError::BadSdgNumber {
                    line,
                    value: raw_sdg.to_string(),
                })
            }
        };
        let case_sensitive = match rec.get(2).unwrap_or("").trim().to_lowercase().as_str() {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" | "" => false,
            other => {
                return Err(SdgError::BadRow {
                    line,
                    reason: format!("bad caseSensitive value {other:?}"),
                })
            }
        };
        let entry = make_entry(sdg, rec.get(1).unwrap_or(""), case_sensitive)
            .map_err(|reason| SdgError::BadRow { line, reason })?;
        if !seen.insert((entry.sdg, entry.phrase.clone())) {
            return Err(SdgError::DuplicateEntry {
                line,
                sdg,
                phrase: entry.phrase,
            });
        }
        entries.push(entry);
    }
    Ok(SdgVocabulary::new(entries))
}

/// Tags every project; keys follow corpus order.
pub fn tag_corpus(corpus: &Corpus, vocab: &SdgVocabulary) -> BTreeMap<String, Vec<SdgMatch>> {
    corpus
        .projects
        .par_iter()
        .map(|p| (p.project_id.clone(), vocab.tag(p)))
        .collect()
}

/// Collapses matches to one tag per SDG.
pub fn to_tags(matches: &[SdgMatch]) -> Vec<SdgTag> {
    let mut by_sdg: BTreeMap<u8, Vec<String>> = BTreeMap::new();
    for m in matches {
        by_sdg.entry(m.sdg).or_default().push(m.phrase.clone());
    }
    by_sdg
        .into_iter()
        .map(|(sdg, matched_phrases)| SdgTag { sdg, matched_phrases })
        .collect()
}

pub fn write_tags_csv<W: std::io::Write>(
    tags: &BTreeMap<String, Vec<SdgMatch>>,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["projectId", "sdg", "phrase", "count"])?;
    for (id, matches) in tags {
        for m in matches {
            w.write_record([id.as_str(), &m.sdg.to_string(), &m.phrase, &m.count.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(rows: &str) -> SdgVocabulary {
        parse_vocabulary(&format!("sdg,phrase,caseSensitive\n{rows}")).unwrap()
    }

    #[test]
    fn loads_and_validates_entries() {
        let v = vocab("13,climate change,false\n");
        assert_eq!(v.entries()[0], VocabularyEntry { sdg: 13, phrase: "climate change".into(), case_sensitive: false });
        assert!(matches!(
            parse_vocabulary("sdg,phrase,caseSensitive\n18,poverty,false\n"),
            Err(SdgError::BadSdgNumber { line: 2, .. })
        ));
        assert!(matches!(
            parse_vocabulary("sdg,phrase,caseSensitive\n6,Clean Water,false\n6,clean  water,false\n"),
            Err(SdgError::DuplicateEntry { line: 3, .. })
        ));
        assert!(parse_vocabulary("sdg,phrase,caseSensitive\n6,--,false\n").is_err());
        assert!(parse_vocabulary("sdg,phrase,caseSensitive\n6,a b c d e f,false\n").is_err());
    }

    #[test]
    fn shipped_vocabulary_loads_clean() {
        let v = parse_vocabulary(include_str!("../data/sdg_vocabulary.csv")).unwrap();
        assert_eq!(v.len(), 150);
        assert_eq!(v.sdgs(), (1..=17).collect());
    }

    #[test]
    fn single_phrase_in_context() {
        let v = vocab("13,climate change,false\n");
        let m = v.tag_text("Tools for mitigating climate change impacts on coasts");
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].sdg, m[0].count, m[0].positions.clone()), (13, 1, vec![3]));
    }

    #[test]
    fn token_boundaries() {
        let v = vocab("13,change,false\n");
        assert!(v.tag_text("Messages exchanged daily").is_empty());
        assert_eq!(v.tag_text("change-driven").len(), 1);
    }

    #[test]
    fn counts_per_phrase() {
        let v = vocab("6,clean water,false\n6,sanitation,false\n");
        let m = v.tag_text("Clean water and sanitation. Sanitation needs clean water.");
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].phrase.as_str(), m[0].count), ("clean water", 2));
        assert_eq!((m[1].phrase.as_str(), m[1].count), ("sanitation", 2));
        let tags = to_tags(&m);
        assert_eq!(tags.len(), 1);
        assert_eq!(tags[0].matched_phrases, vec!["clean water", "sanitation"]);
    }

    #[test]
    fn overlapping_and_nested_matches() {
        let v = vocab("7,renewable energy,false\n7,energy,false\n7,energy energy,false\n");
        let m = v.tag_text("renewable energy energy energy");
        let got: Vec<(&str, Vec<usize>)> = m.iter().map(|m| (m.phrase.as_str(), m.positions.clone())).collect();
        assert_eq!(
            got,
            vec![
                ("energy", vec![1, 2, 3]),
                ("energy energy", vec![1, 2]),
                ("renewable energy", vec![0]),
            ]
        );
    }

    #[test]
    fn case_sensitive_entries_need_exact_case() {
        let v = vocab("3,AIDS,true\n3,malaria,false\n");
        let m = v.tag_text("Malaria and AIDS; first aids kits");
        assert_eq!(m.iter().map(|m| (m.phrase.as_str(), m.count)).collect::<Vec<_>>(), vec![("AIDS", 1), ("malaria", 1)]);
    }

    #[test]
    fn same_phrase_under_two_goals() {
        let v = vocab("14,marine pollution,false\n6,marine pollution,false\n");
        let m = v.tag_text("reducing marine pollution");
        assert_eq!(m.iter().map(|m| m.sdg).collect::<Vec<_>>(), vec![6, 14]);
    }
}
