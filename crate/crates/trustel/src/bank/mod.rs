//! Question bank, dialogue domain and survey instrument loading.
//!
//! A bank directory holds `questions.json` (a JSON array, one record per
//! question), a `domains/` directory with one JSON document per dialogue
//! domain, and optionally `instruments.json`. Every problem found is
//! reported with the file and, where it can be pinned down, the line.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::value::RawValue;
use trustel_core::dialogue::{AnswerText, DialogueDomain, DomainDefinition};
use trustel_core::protocol::{Question, QuestionBank};
use trustel_core::survey::{default_instruments, InstrumentDefinition, InstrumentKind};

mod shipped;

/// Happy-path utterance lists must reach the answer within this many turns.
pub const HAPPY_PATH_MAX_TURNS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoadIssue {
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    pub message: String,
}

impl fmt::Display for LoadIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(id) = &self.question_id {
            write!(f, " [{id}]")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{} problem(s) in question bank; first: {}", .issues.len(), .issues[0])]
pub struct BankError {
    pub issues: Vec<LoadIssue>,
}

/// A validated bank: questions, their compiled dialogue domains and the
/// survey instruments.
#[derive(Debug, Clone)]
pub struct Bank {
    pub questions: QuestionBank,
    pub domains: BTreeMap<String, DialogueDomain>,
    pub instruments: Vec<InstrumentDefinition>,
}

impl Bank {
    /// The bank compiled into the binary.
    pub fn shipped() -> Bank {
        let domains = shipped::DOMAINS.iter().map(|(name, text)| (name.to_string(), text.to_string())).collect();
        load_sources("questions.json", shipped::QUESTIONS, domains, None).expect("shipped bank is valid")
    }

    /// Loads `dir/questions.json`, `dir/domains/*.json` and, if present,
    /// `dir/instruments.json`.
    pub fn load_dir(dir: &Path) -> Result<Bank, BankError> {
        Bank::load(&dir.join("questions.json"), &dir.join("domains"), Some(&dir.join("instruments.json")))
    }

    pub fn load(questions: &Path, domains_dir: &Path, instruments: Option<&Path>) -> Result<Bank, BankError> {
        let io = |path: &Path, e: std::io::Error| BankError {
            issues: vec![LoadIssue {
                file: path.display().to_string(),
                line: None,
                question_id: None,
                message: e.to_string(),
            }],
        };
        let text = fs::read_to_string(questions).map_err(|e| io(questions, e))?;
        let mut domains = Vec::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(domains_dir)
            .map_err(|e| io(domains_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        entries.sort();
        for p in entries {
            let body = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
            domains.push((p.display().to_string(), body));
        }
        let instruments = match instruments {
            Some(p) if p.exists() => Some((p.display().to_string(), fs::read_to_string(p).map_err(|e| io(p, e))?)),
            _ => None,
        };
        load_sources(&questions.display().to_string(), &text, domains, instruments)
    }

    pub fn domain(&self, id: &str) -> Option<&DialogueDomain> {
        self.domains.get(id)
    }

    pub fn instrument(&self, kind: InstrumentKind) -> Option<&InstrumentDefinition> {
        self.instruments.iter().find(|d| d.kind == kind)
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.get(id)
    }

    /// Question sets for consecutive series; a bank without set tags is a
    /// single anonymous set.
    pub fn series_bank(&self, series_index: usize) -> (Option<String>, QuestionBank) {
        let sets = self.questions.sets();
        if sets.is_empty() {
            return (None, self.questions.clone());
        }
        let set = sets[series_index % sets.len()].clone();
        let bank = self.questions.subset(&set);
        (Some(set), bank)
    }
}

/// The answer texts a question can produce, correct and (if any) wrong.
pub fn answer_variants(q: &Question) -> Vec<AnswerText> {
    let mut out = vec![AnswerText {
        text: q.correct_answer.clone(),
        unit_variants: q.unit_answers.iter().map(|(u, a)| (u.clone(), a.correct.clone())).collect(),
    }];
    if let Some(w) = &q.scripted_wrong_answer {
        out.push(AnswerText {
            text: w.clone(),
            unit_variants: q
                .unit_answers
                .iter()
                .map(|(u, a)| (u.clone(), a.wrong.clone().unwrap_or_else(|| a.correct.clone())))
                .collect(),
        });
    }
    out
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn issue(file: &str, line: Option<usize>, question_id: Option<&str>, message: impl Into<String>) -> LoadIssue {
    LoadIssue { file: file.to_owned(), line, question_id: question_id.map(str::to_owned), message: message.into() }
}

fn parse_questions(file: &str, src: &str, issues: &mut Vec<LoadIssue>) -> Option<(Vec<Question>, Vec<usize>)> {
    let raws: Vec<&RawValue> = match serde_json::from_str(src) {
        Ok(r) => r,
        Err(e) => {
            issues.push(issue(file, Some(e.line()), None, format!("expected a JSON array of questions: {e}")));
            return None;
        }
    };
    let mut questions = Vec::new();
    let mut lines = Vec::new();
    let mut ok = true;
    for raw in raws {
        let offset = raw.get().as_ptr() as usize - src.as_ptr() as usize;
        let line = line_of(src, offset);
        match serde_json::from_str::<Question>(raw.get()) {
            Ok(q) => {
                questions.push(q);
                lines.push(line);
            }
            Err(e) => {
                ok = false;
                let id = serde_json::from_str::<serde_json::Value>(raw.get())
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_owned));
                issues.push(issue(file, Some(line + e.line() - 1), id.as_deref(), e.to_string()));
            }
        }
    }
    ok.then_some((questions, lines))
}

fn load_sources(
    questions_file: &str,
    questions_src: &str,
    domain_sources: Vec<(String, String)>,
    instruments_src: Option<(String, String)>,
) -> Result<Bank, BankError> {
    let mut issues = Vec::new();

    let mut domains = BTreeMap::new();
    for (file, body) in &domain_sources {
        let def: DomainDefinition = match serde_json::from_str(body) {
            Ok(d) => d,
            Err(e) => {
                issues.push(issue(file, Some(e.line()), None, e.to_string()));
                continue;
            }
        };
        match DialogueDomain::compile(&def) {
            Ok(d) => {
                if domains.insert(d.domain_id.clone(), d).is_some() {
                    issues.push(issue(file, None, None, format!("duplicate domain id `{}`", def.domain_id)));
                }
            }
            Err(e) => issues.push(issue(file, None, None, e.to_string())),
        }
    }

    let instruments = match instruments_src {
        None => default_instruments(),
        Some((file, body)) => match serde_json::from_str::<Vec<InstrumentDefinition>>(&body) {
            Ok(list) => {
                for d in &list {
                    if let Err(e) = d.check() {
                        issues.push(issue(&file, None, None, format!("{} instrument: {e}", d.kind)));
                    }
                }
                for kind in InstrumentKind::ALL {
                    if list.iter().filter(|d| d.kind == kind).count() != 1 {
                        issues.push(issue(&file, None, None, format!("expected exactly one {kind} instrument")));
                    }
                }
                list
            }
            Err(e) => {
                issues.push(issue(&file, Some(e.line()), None, e.to_string()));
                Vec::new()
            }
        },
    };

    let parsed = parse_questions(questions_file, questions_src, &mut issues);
    let mut questions = None;
    if let Some((qs, lines)) = parsed {
        match QuestionBank::new(qs.clone()) {
            Ok(bank) => {
                for bi in bank.check_domains(|id| domains.get(id).map(DialogueDomain::has_clarification)) {
                    issues.push(issue(questions_file, Some(lines[bi.index]), Some(&bi.id), bi.error.to_string()));
                }
                for (q, line) in bank.questions().iter().zip(&lines) {
                    let Some(d) = domains.get(&q.domain_id) else { continue };
                    if d.happy_path.is_empty() {
                        issues.push(issue(questions_file, Some(*line), Some(&q.id), "domain has no happy path"));
                        continue;
                    }
                    for answer in answer_variants(q) {
                        if d.happy_path_turns(&answer, HAPPY_PATH_MAX_TURNS).is_none() {
                            issues.push(issue(
                                questions_file,
                                Some(*line),
                                Some(&q.id),
                                format!("happy path of domain `{}` does not reach the answer", d.domain_id),
                            ));
                            break;
                        }
                    }
                }
                questions = Some(bank);
            }
            Err(bank_issues) => {
                for bi in bank_issues {
                    issues.push(issue(questions_file, Some(lines[bi.index]), Some(&bi.id), bi.error.to_string()));
                }
            }
        }
    }

    match questions {
        Some(questions) if issues.is_empty() => Ok(Bank { questions, domains, instruments }),
        _ => {
            issues.sort_by(|a, b| (&a.file, a.line).cmp(&(&b.file, b.line)));
            Err(BankError { issues })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use trustel_core::protocol::{Difficulty, EASY_PER_SERIES, DIFFICULT_PER_SERIES};

    #[test]
    fn shipped_bank_has_two_full_sets() {
        let bank = Bank::shipped();
        assert_eq!(bank.questions.sets(), ["A", "B"]);
        for i in 0..2 {
            let (_, b) = bank.series_bank(i);
            assert_eq!(b.count(Difficulty::Easy), EASY_PER_SERIES);
            assert_eq!(b.count(Difficulty::Difficult), DIFFICULT_PER_SERIES);
            assert!(b.questions().iter().filter(|q| q.multi_turn).count() >= 2);
        }
        assert_eq!(bank.domains.len(), 36);
    }

    #[test]
    fn reports_line_of_bad_record() {
        let src = "[\n  {\"id\": \"e1\", \"prompt_text\": \"x\", \"difficulty\": \"easy\", \"correct_answer\": \"a\", \"domain_id\": \"d\"},\n  {\"id\": \"d1\", \"prompt_text\": \"y\",\n   \"difficulty\": \"difficult\", \"correct_answer\": \"b\", \"domain_id\": \"d\"}\n]\n";
        let domain = r#"{"domain_id": "d", "fallback_text": "no",
            "states": {"initial": {"rules": [{"pattern": "* hola *", "intent": "ask_answer"}], "templates": {"ask_answer": "{answer}"}},
                       "answered": {}},
            "happy_path": ["hola"]}"#;
        let err = load_sources("q.json", src, vec![("d.json".into(), domain.into())], None).unwrap_err();
        assert_eq!(err.issues.len(), 1);
        assert_eq!(err.issues[0].line, Some(3));
        assert_eq!(err.issues[0].question_id.as_deref(), Some("d1"));
        assert!(err.issues[0].message.contains("scripted_wrong_answer"));
    }

    #[test]
    fn reports_syntax_and_type_errors() {
        let err = load_sources("q.json", "[\n{\"id\": 3}\n]", vec![], None).unwrap_err();
        assert_eq!(err.issues.iter().find(|i| i.file == "q.json").unwrap().line, Some(2));
        let err = load_sources("q.json", "[\n\n{,", vec![], None).unwrap_err();
        assert_eq!(err.issues[0].line, Some(3));
    }

    #[test]
    fn unknown_domain_is_reported() {
        let src = "[{\"id\": \"e1\", \"prompt_text\": \"x\", \"difficulty\": \"easy\", \"correct_answer\": \"a\", \"domain_id\": \"nope\"}]";
        let err = load_sources("q.json", src, vec![], None).unwrap_err();
        assert!(err.issues[0].message.contains("nope"), "{:?}", err.issues);
    }
}
