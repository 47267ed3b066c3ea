//! Post corpus: ingestion, validation, indexing, filtering, splitting, and
//! per-post style text assembly.
//!
//! The on-disk format is JSONL, one post per line:
//! `{"id": str, "user_id": str, "timestamp": int, "headline": str,
//!   "article": str, "likes": int}`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Datelike};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::tokenize;
use crate::symbols;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error("line {line}: duplicate post id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("validation/test fractions of the post-boundary remainder must sum to 1, got {sum}")]
    BadFractions { sum: f64 },
    #[error("split fraction {name} = {value} outside [0, 1]")]
    FractionRange { name: &'static str, value: f64 },
    #[error("unknown post id {0:?}")]
    UnknownPost(String),
}

/// One social-media post, the atomic corpus record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub user_id: String,
    /// Seconds since the Unix epoch, UTC. Always > 0.
    pub timestamp: i64,
    pub headline: String,
    pub article: String,
    pub likes: u64,
}

/// Month-grained time index, relative to the earliest post in the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeStep(pub u32);

/// Months since 1970-01 for a Unix timestamp (UTC calendar months).
fn month_index(timestamp: i64) -> i64 {
    let dt = DateTime::from_timestamp(timestamp, 0).expect("timestamp in range");
    (dt.year() as i64 - 1970) * 12 + (dt.month0() as i64)
}

/// Immutable, indexed post collection. Construction is single-threaded;
/// after that the corpus is read-only and safe to share across workers.
#[derive(Debug, Clone)]
pub struct Corpus {
    posts: Vec<Post>,
    by_id: HashMap<String, usize>,
    /// user id -> post indices, ascending timestamp, ties by id.
    by_user: BTreeMap<String, Vec<usize>>,
    /// time step -> post indices.
    by_step: BTreeMap<TimeStep, Vec<usize>>,
    /// Month index of the earliest post; None for an empty corpus.
    origin_month: Option<i64>,
}

impl Corpus {
    pub fn from_posts(posts: Vec<Post>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, p) in posts.iter().enumerate() {
            validate_post(p, i + 1)?;
            if !seen.insert(p.id.clone()) {
                return Err(CorpusError::DuplicateId { line: i + 1, id: p.id.clone() });
            }
        }
        Ok(Self::from_validated(posts))
    }

    fn from_validated(posts: Vec<Post>) -> Self {
        let origin_month = posts.iter().map(|p| month_index(p.timestamp)).min();
        let by_id = posts.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect();
        let mut by_user: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, p) in posts.iter().enumerate() {
            by_user.entry(p.user_id.clone()).or_default().push(i);
        }
        for ids in by_user.values_mut() {
            ids.sort_by(|&a, &b| {
                (posts[a].timestamp, &posts[a].id).cmp(&(posts[b].timestamp, &posts[b].id))
            });
        }
        let mut corpus = Corpus { posts, by_id, by_user, by_step: BTreeMap::new(), origin_month };
        for i in 0..corpus.posts.len() {
            let step = corpus.step_of(corpus.posts[i].timestamp);
            corpus.by_step.entry(step).or_default().push(i);
        }
        corpus
    }

    /// Maps a timestamp to the corpus-relative month step. Panics for
    /// timestamps before the corpus origin month, which cannot occur for
    /// posts belonging to this corpus.
    pub fn step_of(&self, timestamp: i64) -> TimeStep {
        let origin = self.origin_month.expect("step_of on empty corpus");
        let rel = month_index(timestamp) - origin;
        assert!(rel >= 0, "timestamp precedes corpus origin");
        TimeStep(rel as u32)
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn get(&self, id: &str) -> Option<&Post> {
        self.by_id.get(id).map(|&i| &self.posts[i])
    }

    pub fn users(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.by_user.iter().map(|(u, ids)| (u.as_str(), ids.as_slice()))
    }

    pub fn user_count(&self) -> usize {
        self.by_user.len()
    }

    /// Post indices of one user, ascending timestamp (ties by id).
    pub fn user_posts(&self, user_id: &str) -> &[usize] {
        self.by_user.get(user_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn steps(&self) -> impl Iterator<Item = (TimeStep, &[usize])> {
        self.by_step.iter().map(|(s, ids)| (*s, ids.as_slice()))
    }

    pub fn max_step(&self) -> Option<TimeStep> {
        self.by_step.keys().next_back().copied()
    }

    pub fn min_timestamp(&self) -> Option<i64> {
        self.posts.iter().map(|p| p.timestamp).min()
    }

    pub fn max_timestamp(&self) -> Option<i64> {
        self.posts.iter().map(|p| p.timestamp).max()
    }

    /// Reads a JSONL corpus. Malformed lines are hard errors that name the
    /// offending line number (1-based).
    pub fn ingest(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let reader = BufReader::new(file);
        let mut posts = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let post: Post = serde_json::from_str(&line)
                .map_err(|e| CorpusError::BadLine { line: lineno, message: e.to_string() })?;
            validate_post(&post, lineno)?;
            if !seen.insert(post.id.clone()) {
                return Err(CorpusError::DuplicateId { line: lineno, id: post.id });
            }
            posts.push(post);
        }
        Ok(Self::from_validated(posts))
    }

    /// Writes JSONL in post order; `ingest(write(c))` reproduces the posts
    /// field-for-field.
    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let as_io = |source| CorpusError::Io { path: path.display().to_string(), source };
        let file = File::create(path).map_err(as_io)?;
        let mut w = BufWriter::new(file);
        for post in &self.posts {
            let line = serde_json::to_string(post).expect("post serializes");
            writeln!(w, "{line}").map_err(as_io)?;
        }
        w.flush().map_err(as_io)
    }

    /// Keeps posts with `likes >= min_likes` and non-empty headline and
    /// article. With `require_prior_post`, additionally keeps only posts
    /// whose user has a strictly earlier post in this (input) corpus,
    /// whether or not that earlier post survives the filter.
    pub fn filter_posts(&self, min_likes: u64, require_prior_post: bool) -> Corpus {
        let mut earliest: HashMap<&str, i64> = HashMap::new();
        for p in &self.posts {
            earliest
                .entry(p.user_id.as_str())
                .and_modify(|t| *t = (*t).min(p.timestamp))
                .or_insert(p.timestamp);
        }
        let kept: Vec<Post> = self
            .posts
            .iter()
            .filter(|p| {
                p.likes >= min_likes
                    && !p.headline.is_empty()
                    && !p.article.is_empty()
                    && (!require_prior_post || p.timestamp > earliest[p.user_id.as_str()])
            })
            .cloned()
            .collect();
        Self::from_validated(kept)
    }

    /// Partitions into (train, validation, test): train is everything
    /// strictly before the boundary; the remainder is shuffled by seed and
    /// split by the validation fraction.
    pub fn split(&self, spec: &SplitSpec) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
        spec.validate()?;
        let mut train = Vec::new();
        let mut rest: Vec<usize> = Vec::new();
        for (i, p) in self.posts.iter().enumerate() {
            if p.timestamp < spec.boundary {
                train.push(p.clone());
            } else {
                rest.push(i);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rest.shuffle(&mut rng);
        let n_val = (rest.len() as f64 * spec.validation_fraction).round() as usize;
        let n_val = n_val.min(rest.len());
        let mut val_idx: Vec<usize> = rest[..n_val].to_vec();
        let mut test_idx: Vec<usize> = rest[n_val..].to_vec();
        val_idx.sort_unstable();
        test_idx.sort_unstable();
        let pick = |idx: &[usize]| idx.iter().map(|&i| self.posts[i].clone()).collect();
        Ok((
            Self::from_validated(train),
            Self::from_validated(pick(&val_idx)),
            Self::from_validated(pick(&test_idx)),
        ))
    }

    /// Concatenates the headlines of the same user's strictly earlier time
    /// steps, most recent first, with a separator token between headlines,
    /// truncated to `max_tokens`. A user's first post yields an empty
    /// sequence.
    pub fn build_style_text(&self, post_id: &str, max_tokens: usize) -> Result<Vec<String>, CorpusError> {
        let &idx = self.by_id.get(post_id).ok_or_else(|| CorpusError::UnknownPost(post_id.into()))?;
        let post = &self.posts[idx];
        let step = self.step_of(post.timestamp);
        let mut out: Vec<String> = Vec::new();
        for &i in self.user_posts(&post.user_id).iter().rev() {
            if self.step_of(self.posts[i].timestamp) >= step {
                continue;
            }
            if !out.is_empty() {
                out.push(symbols::SEP.to_string());
            }
            out.extend(tokenize(&self.posts[i].headline).into_tokens());
            if out.len() >= max_tokens {
                out.truncate(max_tokens);
                break;
            }
        }
        Ok(out)
    }

    /// Histogram of posts-per-user: map from post count to number of users.
    pub fn posts_per_user_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for ids in self.by_user.values() {
            *hist.entry(ids.len()).or_insert(0) += 1;
        }
        hist
    }
}

fn validate_post(p: &Post, line: usize) -> Result<(), CorpusError> {
    if p.timestamp <= 0 {
        return Err(CorpusError::BadLine {
            line,
            message: format!("timestamp must be > 0, got {}", p.timestamp),
        });
    }
    Ok(())
}

/// How to carve a corpus into train/validation/test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Posts strictly before this timestamp become training data.
    pub boundary: i64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, value) in [
            ("validation_fraction", self.validation_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(CorpusError::FractionRange { name, value });
            }
        }
        let sum = self.validation_fraction + self.test_fraction;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::BadFractions { sum });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(id: &str, user: &str, ts: i64, headline: &str, likes: u64) -> Post {
        Post {
            id: id.into(),
            user_id: user.into(),
            timestamp: ts,
            headline: headline.into(),
            article: format!("article for {id}"),
            likes,
        }
    }

    const MONTH: i64 = 31 * 86_400;

    #[test]
    fn ingest_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        File::create(&path).unwrap();
        let c = Corpus::ingest(&path).unwrap();
        assert_eq!(c.len(), 0);
    }

    #[test]
    fn ingest_counts_users() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = Corpus::from_posts(vec![
            post("a", "u1", 1_000, "h1", 5),
            post("b", "u2", 2_000, "h2", 5),
            post("c", "u1", 3_000, "h3", 5),
        ])
        .unwrap();
        c.write(&path).unwrap();
        let back = Corpus::ingest(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.user_count(), 2);
        assert_eq!(back.posts(), c.posts());
    }

    #[test]
    fn ingest_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"a","user_id":"u","timestamp":1,"headline":"h","article":"x","likes":1}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","user_id":"u","timestamp":2,"article":"x","likes":1}}"#).unwrap();
        let err = Corpus::ingest(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("line 2"), "unexpected: {msg}");
        assert!(msg.contains("headline"), "unexpected: {msg}");
    }

    #[test]
    fn ingest_rejects_duplicates_and_bad_likes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"a","user_id":"u","timestamp":1,"headline":"h","article":"x","likes":1}}"#).unwrap();
        writeln!(f, r#"{{"id":"a","user_id":"u","timestamp":2,"headline":"h","article":"x","likes":1}}"#).unwrap();
        let err = Corpus::ingest(&path).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 2, .. }));

        let path2 = dir.path().join("likes.jsonl");
        let mut f = File::create(&path2).unwrap();
        writeln!(f, r#"{{"id":"a","user_id":"u","timestamp":1,"headline":"h","article":"x","likes":1.5}}"#).unwrap();
        assert!(matches!(Corpus::ingest(&path2), Err(CorpusError::BadLine { line: 1, .. })));
    }

    #[test]
    fn filter_drops_below_threshold() {
        let c = Corpus::from_posts(vec![post("a", "u", 1_000, "h", 499), post("b", "u", 2_000, "h", 500)]).unwrap();
        let f = c.filter_posts(500, false);
        assert_eq!(f.len(), 1);
        assert_eq!(f.posts()[0].id, "b");
    }

    #[test]
    fn filter_without_constraints_is_identity() {
        let c = Corpus::from_posts(vec![post("a", "u", 1_000, "h", 0), post("b", "v", 2_000, "h", 1)]).unwrap();
        let f = c.filter_posts(0, false);
        assert_eq!(f.posts(), c.posts());
    }

    #[test]
    fn filter_prior_post_rule() {
        let c = Corpus::from_posts(vec![
            post("solo", "u1", 5_000, "h", 9),
            post("first", "u2", 1_000, "h", 9),
            post("second", "u2", 2_000, "h", 9),
        ])
        .unwrap();
        let f = c.filter_posts(0, true);
        let ids: Vec<&str> = f.posts().iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["second"]);
    }

    #[test]
    fn filter_prior_post_sees_unretained_posts() {
        // The earlier post fails the like threshold but still counts as
        // "former post" for its user.
        let c = Corpus::from_posts(vec![
            post("early", "u", 1_000, "h", 1),
            post("late", "u", 2_000, "h", 100),
        ])
        .unwrap();
        let f = c.filter_posts(50, true);
        let ids: Vec<&str> = f.posts().iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["late"]);
    }

    #[test]
    fn filter_is_idempotent_without_prior_flag() {
        let c = Corpus::from_posts(vec![
            post("a", "u", 1_000, "h", 0),
            post("b", "u", 2_000, "", 700),
            post("c", "v", 3_000, "h", 700),
        ])
        .unwrap();
        let once = c.filter_posts(500, false);
        let twice = once.filter_posts(500, false);
        assert_eq!(once.posts(), twice.posts());
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let posts: Vec<Post> = (0..20).map(|i| post(&format!("p{i:02}"), "u", 1_000 + i, "h", 1)).collect();
        let c = Corpus::from_posts(posts).unwrap();
        let spec = SplitSpec { boundary: 1_010, validation_fraction: 0.5, test_fraction: 0.5, seed: 7 };
        let (train, val, test) = c.split(&spec).unwrap();
        assert_eq!(train.len(), 10);
        assert_eq!(val.len(), 5);
        assert_eq!(test.len(), 5);
        let mut all: Vec<&str> = train.posts().iter().chain(val.posts()).chain(test.posts()).map(|p| p.id.as_str()).collect();
        all.sort_unstable();
        let mut expect: Vec<String> = (0..20).map(|i| format!("p{i:02}")).collect();
        expect.sort();
        assert_eq!(all, expect.iter().map(String::as_str).collect::<Vec<_>>());

        let (_, val2, test2) = c.split(&spec).unwrap();
        assert_eq!(val.posts(), val2.posts());
        assert_eq!(test.posts(), test2.posts());
    }

    #[test]
    fn split_with_boundary_after_everything() {
        let c = Corpus::from_posts(vec![post("a", "u", 1_000, "h", 1)]).unwrap();
        let spec = SplitSpec { boundary: 10_000, validation_fraction: 0.5, test_fraction: 0.5, seed: 1 };
        let (train, val, test) = c.split(&spec).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (1, 0, 0));
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let c = Corpus::from_posts(vec![post("a", "u", 1_000, "h", 1)]).unwrap();
        let spec = SplitSpec { boundary: 10, validation_fraction: 0.3, test_fraction: 0.3, seed: 1 };
        assert!(matches!(c.split(&spec), Err(CorpusError::BadFractions { .. })));
    }

    #[test]
    fn style_text_orders_most_recent_first() {
        let c = Corpus::from_posts(vec![
            post("p1", "u", 1_000, "aa", 1),
            post("p2", "u", 1_000 + MONTH, "bb", 1),
            post("p3", "u", 1_000 + 2 * MONTH, "cc", 1),
        ])
        .unwrap();
        let style = c.build_style_text("p3", 64).unwrap();
        assert_eq!(style, vec!["bb", symbols::SEP, "aa"]);
    }

    #[test]
    fn style_text_empty_for_first_post_and_same_step() {
        let c = Corpus::from_posts(vec![
            post("p1", "u", 1_000, "aa", 1),
            post("p2", "u", 2_000, "bb", 1),
        ])
        .unwrap();
        assert!(c.build_style_text("p1", 64).unwrap().is_empty());
        // p2 shares p1's calendar month: no strictly-smaller step exists.
        assert!(c.build_style_text("p2", 64).unwrap().is_empty());
    }

    #[test]
    fn style_text_truncates_exactly() {
        let c = Corpus::from_posts(vec![
            post("p1", "u", 1_000, "a b c d", 1),
            post("p2", "u", 1_000 + MONTH, "x", 1),
        ])
        .unwrap();
        let style = c.build_style_text("p2", 3).unwrap();
        assert_eq!(style, vec!["a", "b", "c"]);
    }

    #[test]
    fn style_text_never_leaks_future_steps() {
        let c = Corpus::from_posts(vec![
            post("p1", "u", 1_000, "old", 1),
            post("p2", "u", 1_000 + MONTH, "now", 1),
            post("p3", "u", 1_000 + 2 * MONTH, "future", 1),
        ])
        .unwrap();
        let style = c.build_style_text("p2", 64).unwrap();
        assert_eq!(style, vec!["old"]);
    }

    #[test]
    fn time_steps_are_calendar_months() {
        // 2021-01-15 and 2021-02-01 differ by one step even though the gap
        // is under 31 days.
        let c = Corpus::from_posts(vec![
            post("a", "u", 1_610_668_800, "h", 1),
            post("b", "u", 1_612_137_600, "h", 1),
        ])
        .unwrap();
        assert_eq!(c.step_of(1_610_668_800), TimeStep(0));
        assert_eq!(c.step_of(1_612_137_600), TimeStep(1));
    }
}
