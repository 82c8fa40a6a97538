use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Result, TweetChunk, UserRecord};
use crate::numeric::{derive_seed, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingOptions {
    pub chunk_size: usize,
    pub n_chunks: usize,
    /// Draw every chunk independently (without replacement inside a chunk)
    /// instead of partitioning one shuffle of all tweets.
    pub independent_sampling: bool,
}

impl Default for ChunkingOptions {
    fn default() -> Self {
        ChunkingOptions { chunk_size: 10, n_chunks: 10, independent_sampling: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSet {
    pub chunks: Vec<TweetChunk>,
    /// Set when the user had too few tweets and some were reused.
    pub cycled: bool,
}

fn join_members(tweets: &[String], members: &[usize]) -> String {
    members.iter().map(|&i| tweets[i].trim()).collect::<Vec<_>>().join(" ")
}

/// Build `n_chunks` chunks of `chunk_size` tweets each.
///
/// The shuffle is seeded from `(seed, user_id)`, so the result is a pure
/// function of the record, the options and the seed.
pub fn chunk_tweets(record: &UserRecord, opts: &ChunkingOptions, seed: u64) -> Result<ChunkSet> {
    if record.tweets.is_empty() {
        return Err(CorpusError::EmptyTweetList(record.user_id.clone()));
    }
    if opts.chunk_size == 0 || opts.n_chunks == 0 {
        return Err(CorpusError::InvalidArgument("chunk_size and n_chunks must be at least 1".into()));
    }
    let n = record.tweets.len();
    let mut rng = seeded_rng(derive_seed(seed, &record.user_id));
    let mut order: Vec<usize> = (0..n).collect();

    let (members, cycled): (Vec<Vec<usize>>, bool) = if opts.independent_sampling {
        let mut out = Vec::with_capacity(opts.n_chunks);
        for _ in 0..opts.n_chunks {
            order.shuffle(&mut rng);
            out.push(order.iter().copied().cycle().take(opts.chunk_size).collect());
        }
        (out, n < opts.chunk_size)
    } else {
        order.shuffle(&mut rng);
        let need = opts.chunk_size * opts.n_chunks;
        let slots: Vec<usize> = order.iter().copied().cycle().take(need).collect();
        (slots.chunks(opts.chunk_size).map(<[usize]>::to_vec).collect(), n < need)
    };

    let chunks = members
        .into_iter()
        .enumerate()
        .map(|(chunk_index, member_indices)| TweetChunk {
            user_id: record.user_id.clone(),
            chunk_index,
            text: join_members(&record.tweets, &member_indices),
            member_indices,
        })
        .collect();
    Ok(ChunkSet { chunks, cycled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn user(n: usize) -> UserRecord {
        UserRecord {
            user_id: "u1".into(),
            label: None,
            tweets: (0..n).map(|i| format!(" tweet {i} ")).collect(),
            images: vec![],
        }
    }

    fn occurrences(set: &ChunkSet) -> HashMap<usize, usize> {
        let mut m = HashMap::new();
        for c in &set.chunks {
            for &i in &c.member_indices {
                *m.entry(i).or_insert(0) += 1;
            }
        }
        m
    }

    #[test]
    fn full_partition_covers_every_tweet_once() {
        let set = chunk_tweets(&user(100), &ChunkingOptions::default(), 7).unwrap();
        assert_eq!(set.chunks.len(), 10);
        assert!(set.chunks.iter().all(|c| c.member_indices.len() == 10));
        let occ = occurrences(&set);
        assert_eq!(occ.len(), 100);
        assert!(occ.values().all(|&c| c == 1));
        assert!(!set.cycled);
    }

    #[test]
    fn exact_fit_single_chunk() {
        let opts = ChunkingOptions { n_chunks: 1, ..Default::default() };
        let set = chunk_tweets(&user(10), &opts, 3).unwrap();
        assert_eq!(set.chunks.len(), 1);
        let mut m = set.chunks[0].member_indices.clone();
        m.sort();
        assert_eq!(m, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn shortfall_cycles_and_flags() {
        let set = chunk_tweets(&user(95), &ChunkingOptions::default(), 7).unwrap();
        assert!(set.cycled);
        let occ = occurrences(&set);
        assert_eq!(occ.len(), 95);
        assert_eq!(occ.values().filter(|&&c| c == 2).count(), 5);
        assert!(occ.values().all(|&c| c <= 2));
    }

    #[test]
    fn text_is_trimmed_single_space_join() {
        let r = user(100);
        let set = chunk_tweets(&r, &ChunkingOptions::default(), 1).unwrap();
        for c in &set.chunks {
            let expect: Vec<String> = c.member_indices.iter().map(|&i| r.tweets[i].trim().to_string()).collect();
            assert_eq!(c.text, expect.join(" "));
        }
    }

    #[test]
    fn independent_sampling_has_no_duplicates_within_chunk() {
        let opts = ChunkingOptions { independent_sampling: true, ..Default::default() };
        let set = chunk_tweets(&user(30), &opts, 5).unwrap();
        assert!(!set.cycled);
        for c in &set.chunks {
            let mut m = c.member_indices.clone();
            m.sort();
            m.dedup();
            assert_eq!(m.len(), 10);
        }
    }

    #[test]
    fn empty_tweets_rejected() {
        assert!(matches!(
            chunk_tweets(&user(0), &ChunkingOptions::default(), 0),
            Err(CorpusError::EmptyTweetList(_))
        ));
    }

    #[test]
    fn zero_sizes_rejected() {
        let opts = ChunkingOptions { chunk_size: 0, ..Default::default() };
        assert!(chunk_tweets(&user(5), &opts, 0).is_err());
    }
}
