//! User-news bipartite click graph and two-hop neighbor tables.
//!
//! The graph is built from training-split interactions only (history
//! entries plus clicked candidates), so no test-time signal leaks into
//! the neighbor structure. Neighbor users are ranked by the number of
//! commonly clicked news; neighbor news are sampled from the pool of
//! news co-clicked by the target's readers.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::data::{Impression, UserIndex};
use crate::rng::{chacha, subseed, TAG_GRAPH};

/// Adjacency in both directions, indexed by dense ids (slot 0 is the
/// reserved cold/padding id and stays empty).
pub struct BipartiteGraph {
    pub user_news: Vec<BTreeSet<u32>>,
    pub news_users: Vec<BTreeSet<u32>>,
}

impl BipartiteGraph {
    /// One edge per history entry and per clicked candidate of each
    /// training impression.
    pub fn build(train: &[Impression], users: &UserIndex, n_news: usize) -> Self {
        let mut g = BipartiteGraph {
            user_news: vec![BTreeSet::new(); users.n_users() + 1],
            news_users: vec![BTreeSet::new(); n_news + 1],
        };
        for imp in train {
            let uid = users.lookup(&imp.user);
            debug_assert_ne!(uid, UserIndex::COLD, "training impression from unindexed user");
            for &n in &imp.history {
                g.add_edge(uid, n);
            }
            for &(n, clicked) in &imp.candidates {
                if clicked {
                    g.add_edge(uid, n);
                }
            }
        }
        g
    }

    fn add_edge(&mut self, uid: u32, news: u32) {
        self.user_news[uid as usize].insert(news);
        self.news_users[news as usize].insert(uid);
    }

    pub fn n_users(&self) -> usize {
        self.user_news.len() - 1
    }

    pub fn n_news(&self) -> usize {
        self.news_users.len() - 1
    }
}

/// Fixed-width neighbor list: `ids[i]` is valid iff `mask[i]`; padded
/// slots carry id 0. Valid slots always precede padded ones.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborRow {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl NeighborRow {
    pub fn padded(width: usize) -> Self {
        NeighborRow { ids: vec![0; width], mask: vec![false; width] }
    }

    pub fn from_ids(ids: &[u32], width: usize) -> Self {
        debug_assert!(ids.len() <= width);
        let mut row = Self::padded(width);
        for (i, &id) in ids.iter().enumerate() {
            row.ids[i] = id;
            row.mask[i] = true;
        }
        row
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn valid_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.ids.iter().zip(&self.mask).filter(|(_, &m)| m).map(|(&id, _)| id)
    }
}

/// Top-`width` users sharing clicked news with `uid`, ranked by common
/// click count (descending) with ties broken by ascending user id. The
/// user itself is excluded; unknown users get a fully padded row.
pub fn neighbor_users(graph: &BipartiteGraph, uid: u32, width: usize) -> NeighborRow {
    let Some(clicked) = graph.user_news.get(uid as usize) else {
        return NeighborRow::padded(width);
    };
    let mut counts = vec![0u32; graph.user_news.len()];
    for &news in clicked {
        for &other in &graph.news_users[news as usize] {
            counts[other as usize] += 1;
        }
    }
    counts[uid as usize] = 0;
    let mut scored: Vec<(u32, u32)> = counts
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c > 0)
        .map(|(v, &c)| (v as u32, c))
        .collect();
    scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(width);
    let ids: Vec<u32> = scored.into_iter().map(|(v, _)| v).collect();
    NeighborRow::from_ids(&ids, width)
}

/// Up to `width` news sampled without replacement from the set of news
/// clicked by this news' readers (the news itself excluded). Sampling
/// is fixed once per run via a seed derived from (`seed`, news id), so
/// lookups are order-independent and reproducible.
pub fn neighbor_news(graph: &BipartiteGraph, news: u32, width: usize, seed: u64) -> NeighborRow {
    let Some(readers) = graph.news_users.get(news as usize) else {
        return NeighborRow::padded(width);
    };
    let mut pool = BTreeSet::new();
    for &uid in readers {
        pool.extend(graph.user_news[uid as usize].iter().copied());
    }
    pool.remove(&news);
    let mut pool: Vec<u32> = pool.into_iter().collect();
    if pool.len() > width {
        let mut rng = chacha(subseed(seed, TAG_GRAPH, news as u64));
        pool.shuffle(&mut rng);
        pool.truncate(width);
    }
    NeighborRow::from_ids(&pool, width)
}

/// Materialized neighbor rows for every known user and news node.
pub struct NeighborTables {
    pub width: usize,
    pub users: Vec<NeighborRow>,
    pub news: Vec<NeighborRow>,
}

impl NeighborTables {
    pub fn build(graph: &BipartiteGraph, width: usize, seed: u64) -> Self {
        let users = (0..graph.user_news.len())
            .map(|u| {
                if u == 0 {
                    NeighborRow::padded(width)
                } else {
                    neighbor_users(graph, u as u32, width)
                }
            })
            .collect();
        let news = (0..graph.news_users.len())
            .map(|n| {
                if n == 0 {
                    NeighborRow::padded(width)
                } else {
                    neighbor_news(graph, n as u32, width, seed)
                }
            })
            .collect();
        NeighborTables { width, users, news }
    }

    /// Row for a user id; out-of-range or cold ids get a padded row.
    pub fn user_row(&self, uid: u32) -> NeighborRow {
        self.users.get(uid as usize).cloned().unwrap_or_else(|| NeighborRow::padded(self.width))
    }

    pub fn news_row(&self, news: u32) -> NeighborRow {
        self.news.get(news as usize).cloned().unwrap_or_else(|| NeighborRow::padded(self.width))
    }

    /// Inspection dump: `node_id TAB space-separated neighbor ids`.
    pub fn dump_tsv(
        &self,
        user_name: impl Fn(u32) -> String,
        news_name: impl Fn(u32) -> String,
    ) -> String {
        let mut out = String::new();
        for (u, row) in self.users.iter().enumerate().skip(1) {
            let ids: Vec<String> = row.valid_ids().map(&user_name).collect();
            let _ = writeln!(out, "{}\t{}", user_name(u as u32), ids.join(" "));
        }
        for (n, row) in self.news.iter().enumerate().skip(1) {
            let ids: Vec<String> = row.valid_ids().map(&news_name).collect();
            let _ = writeln!(out, "{}\t{}", news_name(n as u32), ids.join(" "));
        }
        out
    }
}
