//! JSON Lines ingestion: interactions, video metadata, user profiles.
//!
//! Produces an id-interned, deduplicated corpus. Malformed lines are reported
//! with their line number and skipped; a stream with more than the configured
//! fraction of malformed lines aborts the ingest.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// String-to-dense-id interner; ids are assigned in first-seen order.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl From<Vec<String>> for Interner {
    fn from(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        Interner { names, index }
    }
}

impl From<Interner> for Vec<String> {
    fn from(i: Interner) -> Vec<String> {
        i.names
    }
}

/// Raw wire records (exact JSONL field names).
#[derive(Debug, Deserialize)]
pub struct RawInteraction {
    pub user_id: String,
    pub video_id: String,
    pub timestamp: i64,
    pub watch_ratio: f64,
    pub session_id: String,
}

#[derive(Debug, Deserialize)]
pub struct RawVideoMeta {
    pub video_id: String,
    #[serde(default)]
    pub title_words: Vec<String>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub media_id: String,
    #[serde(default)]
    pub category: String,
}

#[derive(Debug, Deserialize)]
pub struct RawUserProfile {
    pub user_id: String,
    pub gender: String,
    pub age: u32,
    pub location: String,
}

/// Interned interaction; `session` indexes the corpus session table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub user: u32,
    pub video: u32,
    pub ts: i64,
    pub ratio: f64,
    pub session: u32,
}

/// Interned per-video metadata, aligned with video local ids.
#[derive(Clone, Debug, Default)]
pub struct VideoMetaIdx {
    pub tags: Vec<u32>,
    pub words: Vec<u32>,
    pub media: Option<u32>,
    pub category: String,
}

#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    /// (file, line, message) per malformed line, in input order.
    pub line_errors: Vec<(String, usize, String)>,
    pub dropped_unknown_video: usize,
    pub duplicate_interactions: usize,
    pub duplicate_metas: usize,
    pub duplicate_profiles: usize,
    pub users_without_profile: usize,
}

#[derive(Clone, Debug)]
pub struct IngestOptions {
    /// Width of the age band used in the user-group triplet; 1 keeps the
    /// integer age verbatim.
    pub age_bucket: u32,
    /// Abort threshold: strictly more than this fraction of malformed lines
    /// in one stream fails the ingest.
    pub max_malformed_frac: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            age_bucket: 1,
            max_malformed_frac: 0.01,
        }
    }
}

/// The staged corpus: all strings interned, streams deduplicated.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub videos: Interner,
    pub tags: Interner,
    pub medias: Interner,
    pub groups: Interner,
    pub words: Interner,
    pub users: Interner,
    /// Per user local id, the user-group id (None without a profile).
    pub user_group: Vec<Option<u32>>,
    /// Per video local id.
    pub metas: Vec<VideoMetaIdx>,
    pub interactions: Vec<Interaction>,
    /// Per session local id, the owning user.
    pub session_user: Vec<u32>,
    pub sessions: Interner,
    pub report: IngestReport,
}

impl Corpus {
    pub fn group_key(gender: &str, age: u32, location: &str, age_bucket: u32) -> String {
        let band = if age_bucket <= 1 {
            age
        } else {
            age / age_bucket
        };
        format!("{gender}|{band}|{location}")
    }
}

fn tokenize_word(raw: &str) -> Vec<String> {
    raw.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

struct LineScanner<'a> {
    path: String,
    report: &'a mut IngestReport,
    total: usize,
    malformed: usize,
    max_frac: f64,
}

impl<'a> LineScanner<'a> {
    fn new(path: &Path, report: &'a mut IngestReport, max_frac: f64) -> Self {
        LineScanner {
            path: path.display().to_string(),
            report,
            total: 0,
            malformed: 0,
            max_frac,
        }
    }

    fn scan<R: BufRead, T: for<'de> Deserialize<'de>>(
        mut self,
        reader: R,
        mut on_record: impl FnMut(usize, T) -> std::result::Result<(), String>,
    ) -> Result<()> {
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io(&self.path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            self.total += 1;
            let outcome = serde_json::from_str::<T>(&line)
                .map_err(|e| e.to_string())
                .and_then(|rec| on_record(lineno, rec));
            if let Err(msg) = outcome {
                self.malformed += 1;
                self.report
                    .line_errors
                    .push((self.path.clone(), lineno, msg));
            }
        }
        if self.total > 0 && (self.malformed as f64) > self.max_frac * (self.total as f64) {
            return Err(Error::Input(format!(
                "{}: {} of {} lines malformed (limit {:.1}%); first: {}",
                self.path,
                self.malformed,
                self.total,
                self.max_frac * 100.0,
                self.report
                    .line_errors
                    .iter()
                    .find(|(p, _, _)| *p == self.path)
                    .map(|(_, l, m)| format!("line {l}: {m}"))
                    .unwrap_or_default()
            )));
        }
        Ok(())
    }
}

/// Loads and stages the three input streams from readers.
pub fn ingest_readers<RA: BufRead, RB: BufRead, RC: BufRead>(
    interactions: RA,
    interactions_path: &Path,
    metas: RB,
    metas_path: &Path,
    profiles: RC,
    profiles_path: &Path,
    opts: &IngestOptions,
) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut report = IngestReport::default();

    // metadata first: it defines the video universe
    {
        let scanner = LineScanner::new(metas_path, &mut report, opts.max_malformed_frac);
        let mut seen_meta = std::collections::HashSet::new();
        let videos = &mut corpus.videos;
        let tags = &mut corpus.tags;
        let medias = &mut corpus.medias;
        let words = &mut corpus.words;
        let metas_out = &mut corpus.metas;
        let mut dup = 0usize;
        scanner.scan(metas, |_, rec: RawVideoMeta| {
            if !seen_meta.insert(rec.video_id.clone()) {
                dup += 1;
                return Ok(());
            }
            let vid = videos.intern(&rec.video_id);
            debug_assert_eq!(vid as usize, metas_out.len());
            let mut m = VideoMetaIdx {
                category: rec.category.clone(),
                ..Default::default()
            };
            for t in &rec.tags {
                let id = tags.intern(t);
                if !m.tags.contains(&id) {
                    m.tags.push(id);
                }
            }
            for w in rec.title_words.iter().flat_map(|w| tokenize_word(w)) {
                let id = words.intern(&w);
                if !m.words.contains(&id) {
                    m.words.push(id);
                }
            }
            if !rec.media_id.is_empty() {
                m.media = Some(medias.intern(&rec.media_id));
            }
            metas_out.push(m);
            Ok(())
        })?;
        report.duplicate_metas = dup;
    }

    // profiles: define user groups
    {
        let scanner = LineScanner::new(profiles_path, &mut report, opts.max_malformed_frac);
        let users = &mut corpus.users;
        let groups = &mut corpus.groups;
        let user_group = &mut corpus.user_group;
        let mut dup = 0usize;
        let age_bucket = opts.age_bucket;
        scanner.scan(profiles, |_, rec: RawUserProfile| {
            let uid = users.intern(&rec.user_id);
            if (uid as usize) < user_group.len() {
                dup += 1;
                return Ok(());
            }
            let key = Corpus::group_key(&rec.gender, rec.age, &rec.location, age_bucket);
            user_group.push(Some(groups.intern(&key)));
            Ok(())
        })?;
        report.duplicate_profiles = dup;
    }

    // interactions
    {
        let scanner =
            LineScanner::new(interactions_path, &mut report, opts.max_malformed_frac);
        let mut seen = std::collections::HashSet::new();
        let mut dropped_unknown = 0usize;
        let mut dup = 0usize;
        let mut users_no_profile = 0usize;
        let videos = &corpus.videos;
        let users = &mut corpus.users;
        let user_group = &mut corpus.user_group;
        let sessions = &mut corpus.sessions;
        let session_user = &mut corpus.session_user;
        let out = &mut corpus.interactions;
        scanner.scan(interactions, |_, rec: RawInteraction| {
            if !(0.0..=1.0).contains(&rec.watch_ratio) {
                return Err(format!(
                    "watch_ratio {} outside [0,1] (values are not clamped)",
                    rec.watch_ratio
                ));
            }
            let Some(video) = videos.get(&rec.video_id) else {
                dropped_unknown += 1;
                return Ok(());
            };
            let user = users.intern(&rec.user_id);
            if user as usize >= user_group.len() {
                user_group.push(None);
                users_no_profile += 1;
            }
            let session = sessions.intern(&rec.session_id);
            if session as usize >= session_user.len() {
                session_user.push(user);
            } else if session_user[session as usize] != user {
                return Err(format!(
                    "session {} already owned by another user",
                    rec.session_id
                ));
            }
            if !seen.insert((user, video, rec.timestamp, rec.watch_ratio.to_bits(), session)) {
                dup += 1;
                return Ok(());
            }
            out.push(Interaction {
                user,
                video,
                ts: rec.timestamp,
                ratio: rec.watch_ratio,
                session,
            });
            Ok(())
        })?;
        report.dropped_unknown_video = dropped_unknown;
        report.duplicate_interactions = dup;
        report.users_without_profile = users_no_profile;
    }

    corpus.report = report;
    Ok(corpus)
}

/// Loads and stages the three JSONL files.
pub fn ingest(
    interactions: &Path,
    metas: &Path,
    profiles: &Path,
    opts: &IngestOptions,
) -> Result<Corpus> {
    let open = |p: &Path| -> Result<BufReader<File>> {
        Ok(BufReader::new(
            File::open(p).map_err(|e| Error::io(p, e))?,
        ))
    };
    ingest_readers(
        open(interactions)?,
        interactions,
        open(metas)?,
        metas,
        open(profiles)?,
        profiles,
        opts,
    )
}

/// Standalone loader for metadata files (used by the evaluation harness,
/// which resolves ids against the graph's sidecar instead of re-interning).
pub fn load_metas(path: &Path) -> Result<Vec<RawVideoMeta>> {
    scan_jsonl(path)
}

/// Standalone loader for interaction logs.
pub fn load_interactions(path: &Path) -> Result<Vec<RawInteraction>> {
    scan_jsonl(path)
}

fn scan_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Line {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
