use serde::{Deserialize, Serialize};

use super::prompt::option_label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    LetterLogprob,
    ParsedRanking,
    ParsedChoice,
    Mock,
}

/// Candidate preference extracted from one response. `ranking` lists
/// candidate indices best first; it may hold only the top choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceDistribution {
    /// Per candidate, higher is preferred. Unranked candidates score 0.
    pub scores: Vec<f64>,
    pub ranking: Vec<usize>,
    pub provenance: Provenance,
}

impl ChoiceDistribution {
    /// Builds scores `M - rank` for ranked candidates.
    pub fn from_ranking(m: usize, ranking: Vec<usize>, provenance: Provenance) -> Self {
        let mut scores = vec![0.0; m];
        for (r, &i) in ranking.iter().enumerate() {
            scores[i] = (m - r) as f64;
        }
        ChoiceDistribution { scores, ranking, provenance }
    }

    pub fn top(&self) -> usize {
        self.ranking[0]
    }

    /// Whether the response supplied more than the top choice.
    pub fn is_ranked(&self) -> bool {
        self.ranking.len() > 1
    }

    /// True iff `candidate` is among the first `k` ranked entries. A
    /// top-1-only distribution therefore counts only its top choice.
    pub fn in_top_k(&self, candidate: usize, k: usize) -> bool {
        self.ranking.iter().take(k).any(|&i| i == candidate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unparseable {
    pub response: String,
}

const PREFIXES: &[&str] = &[
    "the answer is",
    "answer is",
    "answer:",
    "answer",
    "the best option is",
    "the best choice is",
    "i recommend",
    "i would recommend",
    "recommendation:",
    "options",
    "option",
    "choice:",
];

fn strip_prefixes(mut s: &str) -> &str {
    loop {
        let t = s.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '\'' | '(' | '[' | '*' | ':' | '-'));
        let lower = t.to_ascii_lowercase();
        match PREFIXES.iter().find(|p| lower.starts_with(*p)) {
            Some(p) => s = &t[p.len()..],
            None => return t,
        }
    }
}

fn letter_index(c: char, m: usize) -> Option<usize> {
    let i = (c as u32).checked_sub('A' as u32)? as usize;
    (c.is_ascii_uppercase() && i < m).then_some(i)
}

/// Option letter at the start of the answer, followed by end of text,
/// whitespace or punctuation. A response that begins with a full candidate
/// title is not read as a letter.
fn leading_letter(response: &str, candidates: &[String]) -> Option<usize> {
    let s = strip_prefixes(response);
    if candidates.iter().any(|t| !t.is_empty() && s.starts_with(t.as_str())) {
        return None;
    }
    let mut chars = s.chars();
    let first = chars.next()?;
    let i = letter_index(first, candidates.len())?;
    match chars.next() {
        None => Some(i),
        Some(c) if c.is_whitespace() => (!starts_prose(first, chars.as_str())).then_some(i),
        Some(c) if c.is_ascii_punctuation() => Some(i),
        _ => None,
    }
}

/// "I would pick ..." and "A film like ..." open sentences, not answers.
fn starts_prose(letter: char, rest: &str) -> bool {
    let word: String = rest.trim_start().chars().take_while(|c| c.is_alphabetic()).collect();
    matches!(letter, 'A' | 'I') && word.starts_with(|c: char| c.is_lowercase()) && word != "is"
}

fn unique_title(response: &str, candidates: &[String]) -> Option<usize> {
    let hits: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_empty() && response.contains(t.as_str()))
        .map(|(i, _)| i)
        .collect();
    // A title that is a substring of another matched title is not a rival.
    let maximal: Vec<usize> = hits
        .iter()
        .copied()
        .filter(|&i| !hits.iter().any(|&j| j != i && candidates[j].len() > candidates[i].len() && candidates[j].contains(candidates[i].as_str())))
        .collect();
    (maximal.len() == 1).then(|| maximal[0])
}

fn entry_to_candidate(entry: &str, candidates: &[String]) -> Option<usize> {
    let e = entry.trim().trim_matches(|c: char| matches!(c, '"' | '\'' | '*' | ',' | ';')).trim();
    let e = e.strip_suffix('.').unwrap_or(e).trim();
    if let Some(i) = candidates.iter().position(|t| t == e) {
        return Some(i);
    }
    let mut chars = e.chars();
    if let Some(i) = chars.next().and_then(|c| letter_index(c, candidates.len())) {
        if chars.next().map_or(true, |c| c.is_whitespace() || c.is_ascii_punctuation()) {
            return Some(i);
        }
    }
    candidates.iter().position(|t| t.eq_ignore_ascii_case(e)).or_else(|| unique_title(e, candidates))
}

/// Numbered list `1. X 2. Y ...` (or `1) X`), numbers consecutive from 1.
/// The flag tells whether the list opens the response.
fn ranked_list(response: &str, candidates: &[String]) -> Option<(Vec<usize>, bool)> {
    let bytes = response.as_bytes();
    let mut markers: Vec<(usize, usize, usize)> = Vec::new();
    let mut expect = 1usize;
    let mut i = 0;
    while i < bytes.len() {
        let boundary = i == 0 || bytes[i - 1].is_ascii_whitespace();
        if boundary && bytes[i].is_ascii_digit() {
            let start = i;
            let mut j = i;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j < bytes.len() && (bytes[j] == b'.' || bytes[j] == b')') {
                if let Ok(n) = response[start..j].parse::<usize>() {
                    if n == expect {
                        markers.push((n, start, j + 1));
                        expect += 1;
                        i = j + 1;
                        continue;
                    }
                }
            }
        }
        i += 1;
    }
    if markers.is_empty() {
        return None;
    }
    let mut out: Vec<usize> = Vec::new();
    for (idx, &(_, _, body_start)) in markers.iter().enumerate() {
        let end = markers.get(idx + 1).map_or(response.len(), |m| m.1);
        let body = response[body_start..end].lines().next().unwrap_or("");
        let c = entry_to_candidate(body, candidates)?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    let opens = response.trim_start().len() == response.len() - markers[0].1;
    Some((out, opens))
}

/// Reads a candidate choice from free text. The top choice comes from, in
/// order: a leading option letter, a unique verbatim title, a numbered
/// list. A numbered list also supplies the full ranking when it agrees with
/// the top choice. A response that opens with a numbered list skips the
/// title search, since a list naming several titles is not ambiguous.
pub fn parse_choice(response: &str, candidates: &[String]) -> Result<ChoiceDistribution, Unparseable> {
    let m = candidates.len();
    let list = ranked_list(response, candidates);
    let list_first = matches!(list, Some((_, true)));
    let top = leading_letter(response, candidates).or_else(|| if list_first { None } else { unique_title(response, candidates) });
    let list = list.map(|l| l.0);
    let dist = match (top, list) {
        (Some(t), Some(l)) if l.first() == Some(&t) => ChoiceDistribution::from_ranking(m, l, Provenance::ParsedRanking),
        (Some(t), _) => ChoiceDistribution::from_ranking(m, vec![t], Provenance::ParsedChoice),
        (None, Some(l)) if !l.is_empty() => ChoiceDistribution::from_ranking(m, l, Provenance::ParsedRanking),
        _ => return Err(Unparseable { response: response.to_owned() }),
    };
    Ok(dist)
}

/// Distribution from per-letter log-probabilities. Letters outside the
/// options and non-finite values are ignored.
pub fn from_letter_logprobs(logprobs: &[(String, f64)], m: usize) -> Option<ChoiceDistribution> {
    let mut best: Vec<Option<f64>> = vec![None; m];
    for (tok, lp) in logprobs {
        let t = tok.trim();
        let mut cs = t.chars();
        let (Some(c), None) = (cs.next(), cs.next()) else { continue };
        let Some(i) = letter_index(c, m) else { continue };
        if !lp.is_finite() {
            continue;
        }
        if best[i].map_or(true, |b| *lp > b) {
            best[i] = Some(*lp);
        }
    }
    let mut ranked: Vec<(usize, f64)> = best.iter().enumerate().filter_map(|(i, b)| b.map(|v| (i, v))).collect();
    if ranked.is_empty() {
        return None;
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let floor = ranked.last().map(|r| r.1).unwrap_or(0.0) - 1.0;
    let mut scores = vec![floor; m];
    for &(i, v) in &ranked {
        scores[i] = v;
    }
    Some(ChoiceDistribution { scores, ranking: ranked.into_iter().map(|r| r.0).collect(), provenance: Provenance::LetterLogprob })
}

/// Label for candidate `i` as used in responses.
pub fn label(i: usize) -> String {
    option_label(i).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cands(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("Film number {i}")).collect()
    }

    #[test]
    fn bare_letter() {
        let d = parse_choice("C", &cands(20)).unwrap();
        assert_eq!(d.top(), 2);
        assert!(!d.is_ranked());
    }

    #[test]
    fn every_letter_with_answer_prefix() {
        let c = cands(20);
        for i in 0..20 {
            let d = parse_choice(&format!("Answer: {}.", option_label(i)), &c).unwrap();
            assert_eq!(d.top(), i);
        }
    }

    #[test]
    fn letter_out_of_range_is_not_a_choice() {
        assert!(parse_choice("Z", &cands(3)).is_err());
        assert!(parse_choice("", &cands(3)).is_err());
    }

    #[test]
    fn title_match() {
        let c = vec!["Go West".to_owned(), "A League of Their Own".to_owned(), "Kazaam".to_owned()];
        assert_eq!(parse_choice("I think A League of Their Own fits.", &c).unwrap().top(), 1);
        assert_eq!(parse_choice("A League of Their Own", &c).unwrap().top(), 1);
        assert!(parse_choice("Go West or Kazaam", &c).is_err());
    }

    #[test]
    fn nested_titles_prefer_longest() {
        let c = vec!["Heat".to_owned(), "Heat Wave".to_owned()];
        assert_eq!(parse_choice("Watch Heat Wave", &c).unwrap().top(), 1);
    }

    #[test]
    fn ranked_list_of_letters_and_titles() {
        let c = cands(5);
        let d = parse_choice("1. C\n2. A\n3. Film number 4", &c).unwrap();
        assert_eq!(d.ranking, vec![2, 0, 4]);
        assert_eq!(d.provenance, Provenance::ParsedRanking);
        assert!(d.in_top_k(4, 3) && !d.in_top_k(4, 2));
        let d = parse_choice("B\n1. B 2. D 3. E", &c).unwrap();
        assert_eq!(d.ranking, vec![1, 3, 4]);
    }

    #[test]
    fn disagreeing_list_keeps_top_only() {
        let d = parse_choice("B. Also: 1. C 2. D", &cands(5)).unwrap();
        assert_eq!(d.ranking, vec![1]);
    }

    #[test]
    fn logprob_distribution() {
        let lp = vec![(" B".to_owned(), -0.1), ("A".to_owned(), -2.0), ("Q".to_owned(), -0.01), ("B".to_owned(), -3.0)];
        let d = from_letter_logprobs(&lp, 3).unwrap();
        assert_eq!(d.ranking, vec![1, 0]);
        assert_eq!(d.scores[1], -0.1);
        assert!(d.scores.iter().all(|s| s.is_finite()));
    }
}
