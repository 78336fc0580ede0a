//! Edge rules turning a staged corpus into the preference network.
//!
//! - video-video: two valid watches at adjacent positions of one session
//! - video-user: a user group validly watches a video >= 3 times within one
//!   fixed 7-day window
//! - video-tag / video-word / video-media: metadata links
//! - tag-tag: co-annotation on at least one video

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ingest::Corpus;
use crate::graph::{EdgeType, HeteroGraph};

pub const SECONDS_PER_WEEK: i64 = 7 * 86_400;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeekAnchor {
    /// Windows anchored at the corpus's minimum interaction timestamp.
    Auto,
    Fixed(i64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeRuleConfig {
    /// A watch is valid when watch_ratio is strictly greater than this.
    pub min_watch: f64,
    /// Valid watches per (group, video) within one window required for a
    /// video-user edge.
    pub min_weekly: u32,
    pub week_anchor: WeekAnchor,
}

impl Default for EdgeRuleConfig {
    fn default() -> Self {
        EdgeRuleConfig {
            min_watch: 0.7,
            min_weekly: 3,
            week_anchor: WeekAnchor::Auto,
        }
    }
}

impl EdgeRuleConfig {
    /// Strict threshold: a ratio of exactly `min_watch` is not a valid watch.
    pub fn is_valid_watch(&self, ratio: f64) -> bool {
        ratio > self.min_watch
    }
}

pub fn build_graph(corpus: &Corpus, rules: &EdgeRuleConfig) -> Result<HeteroGraph> {
    if corpus.videos.is_empty() {
        return Err(Error::Input("empty corpus: no videos staged".into()));
    }

    let mut edges: [Vec<(u32, u32)>; 6] = Default::default();

    // metadata edges
    {
        let mut vt = BTreeSet::new();
        let mut vw = BTreeSet::new();
        let mut vm = BTreeSet::new();
        let mut tt = BTreeSet::new();
        for (vid, meta) in corpus.metas.iter().enumerate() {
            let vid = vid as u32;
            for &t in &meta.tags {
                vt.insert((vid, t));
            }
            for &w in &meta.words {
                vw.insert((vid, w));
            }
            if let Some(m) = meta.media {
                vm.insert((vid, m));
            }
            let mut sorted_tags = meta.tags.clone();
            sorted_tags.sort_unstable();
            for (i, &a) in sorted_tags.iter().enumerate() {
                for &b in &sorted_tags[i + 1..] {
                    tt.insert((a, b));
                }
            }
        }
        edges[EdgeType::VideoTag.index()] = vt.into_iter().collect();
        edges[EdgeType::VideoWord.index()] = vw.into_iter().collect();
        edges[EdgeType::VideoMedia.index()] = vm.into_iter().collect();
        edges[EdgeType::TagTag.index()] = tt.into_iter().collect();
    }

    // behavior edges
    if !corpus.interactions.is_empty() {
        // session sequences ordered by (timestamp, input position)
        let mut per_session: HashMap<u32, Vec<(i64, usize)>> = HashMap::new();
        for (pos, it) in corpus.interactions.iter().enumerate() {
            per_session.entry(it.session).or_default().push((it.ts, pos));
        }

        let mut vv = BTreeSet::new();
        let mut session_ids: Vec<u32> = per_session.keys().copied().collect();
        session_ids.sort_unstable();
        for sid in session_ids {
            let seq = per_session.get_mut(&sid).unwrap();
            seq.sort_unstable();
            // invalid watches stay in the sequence and break adjacency
            for pair in seq.windows(2) {
                let a = &corpus.interactions[pair[0].1];
                let b = &corpus.interactions[pair[1].1];
                if rules.is_valid_watch(a.ratio)
                    && rules.is_valid_watch(b.ratio)
                    && a.video != b.video
                {
                    vv.insert((a.video.min(b.video), a.video.max(b.video)));
                }
            }
        }
        edges[EdgeType::VideoVideo.index()] = vv.into_iter().collect();

        // video-user: fixed non-overlapping 7-day windows
        let anchor = match rules.week_anchor {
            WeekAnchor::Fixed(ts) => ts,
            WeekAnchor::Auto => corpus
                .interactions
                .iter()
                .map(|it| it.ts)
                .min()
                .expect("non-empty interactions"),
        };
        let mut weekly: HashMap<(u32, u32, i64), u32> = HashMap::new();
        for it in &corpus.interactions {
            if !rules.is_valid_watch(it.ratio) {
                continue;
            }
            let Some(group) = corpus.user_group[it.user as usize] else {
                continue;
            };
            let window = (it.ts - anchor).div_euclid(SECONDS_PER_WEEK);
            *weekly.entry((group, it.video, window)).or_insert(0) += 1;
        }
        let mut vu = BTreeSet::new();
        for ((group, video, _), count) in weekly {
            if count >= rules.min_weekly {
                vu.insert((video, group));
            }
        }
        edges[EdgeType::VideoUser.index()] = vu.into_iter().collect();
    }

    let counts = [
        corpus.videos.len() as u32,
        corpus.tags.len() as u32,
        corpus.medias.len() as u32,
        corpus.groups.len() as u32,
        corpus.words.len() as u32,
    ];
    HeteroGraph::from_edges(counts, edges)
}
