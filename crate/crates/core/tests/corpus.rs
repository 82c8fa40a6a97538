use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use mmprofile::corpus::{
    check_disjoint, chunk_tweets, generate_synthetic_corpus, load_labeled_image_dataset, load_pan_dataset, write_labeled_layout,
    ChunkingOptions, CorpusError, SplitName, SyntheticSpec, UserRecord,
};
use mmprofile::{GenderLabel, ImageClass};

fn write_user(lang_dir: &Path, id: &str, n_tweets: usize, n_images: usize) {
    let docs: String = (0..n_tweets).map(|i| format!("<document><![CDATA[tweet {i} of {id} & more]]></document>\n")).collect();
    fs::create_dir_all(lang_dir.join("text")).unwrap();
    fs::write(lang_dir.join("text").join(format!("{id}.xml")), format!("<author lang=\"en\"><documents>\n{docs}</documents></author>")).unwrap();
    let photo = lang_dir.join("photo").join(id);
    fs::create_dir_all(&photo).unwrap();
    for n in 0..n_images {
        RgbImage::from_pixel(8, 8, Rgb([n as u8 * 20, 10, 10])).save(photo.join(format!("{id}.{n}.jpeg"))).unwrap();
    }
}

#[test]
fn two_user_fixture_loads() {
    let dir = tempfile::tempdir().unwrap();
    let lang = dir.path().join("en");
    write_user(&lang, "aaa", 100, 10);
    write_user(&lang, "bbb", 100, 10);
    fs::write(lang.join("truth.txt"), "aaa:::female\nbbb:::male:::extra\n").unwrap();

    let split = load_pan_dataset(dir.path(), "en", SplitName::Train).unwrap();
    assert_eq!(split.len(), 2);
    assert_eq!(split.users[0].label, Some(GenderLabel::Female));
    assert_eq!(split.users[1].label, Some(GenderLabel::Male));
    for u in &split.users {
        assert_eq!(u.tweets.len(), 100);
        assert_eq!(u.tweets[3], format!("tweet 3 of {} & more", u.user_id));
        assert_eq!(u.images.len(), 10);
        assert!(u.images.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn missing_tweet_document_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let lang = dir.path().join("en");
    write_user(&lang, "aaa", 5, 0);
    fs::write(lang.join("truth.txt"), "aaa:::female\nghost:::male\n").unwrap();
    assert!(matches!(load_pan_dataset(dir.path(), "en", SplitName::Train), Err(CorpusError::Integrity(_))));
}

#[test]
fn truth_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let lang = dir.path().join("en");
    write_user(&lang, "aaa", 5, 0);
    assert!(matches!(load_pan_dataset(dir.path(), "en", SplitName::Train), Err(CorpusError::MissingTruthFile(_))));
    fs::write(lang.join("truth.txt"), "aaa:::bot\n").unwrap();
    let err = load_pan_dataset(dir.path(), "en", SplitName::Train).unwrap_err();
    assert!(matches!(err, CorpusError::UnknownLabel { ref value, .. } if value == "bot"));
}

#[test]
fn labeled_image_fixture() {
    let dir = tempfile::tempdir().unwrap();
    write_labeled_layout(dir.path()).unwrap();
    for split in ["train", "test"] {
        for class in ["female", "male", "unknown"] {
            for k in 0..2 {
                let p = dir.path().join(split).join(class).join(format!("{split}{k}.png"));
                RgbImage::from_pixel(4, 4, Rgb([k * 50, 0, 0])).save(p).unwrap();
            }
        }
    }
    let ds = load_labeled_image_dataset(dir.path()).unwrap();
    assert_eq!(ds.counts(SplitName::Train), [2, 2, 2]);
    assert_eq!(ds.counts(SplitName::Test), [2, 2, 2]);

    fs::remove_dir_all(dir.path().join("test").join("unknown")).unwrap();
    assert!(matches!(load_labeled_image_dataset(dir.path()), Err(CorpusError::MissingClassFolder(_))));
}

#[test]
fn empty_class_folder_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_labeled_layout(dir.path()).unwrap();
    let err = load_labeled_image_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, CorpusError::EmptyClass { .. }));
}

fn record(n: usize) -> UserRecord {
    UserRecord { user_id: "u".into(), label: None, tweets: (0..n).map(|i| format!(" t{i} ")).collect(), images: vec![] }
}

#[test]
fn chunking_examples() {
    let set = chunk_tweets(&record(100), &ChunkingOptions::default(), 7).unwrap();
    assert_eq!(set.chunks.len(), 10);
    let mut all: Vec<usize> = set.chunks.iter().flat_map(|c| c.member_indices.clone()).collect();
    all.sort();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
    assert!(!set.cycled);

    let one = chunk_tweets(&record(10), &ChunkingOptions { n_chunks: 1, ..Default::default() }, 7).unwrap();
    let mut m = one.chunks[0].member_indices.clone();
    m.sort();
    assert_eq!(m, (0..10).collect::<Vec<_>>());

    let short = chunk_tweets(&record(95), &ChunkingOptions::default(), 7).unwrap();
    assert!(short.cycled);
    let mut counts = BTreeMap::new();
    for i in short.chunks.iter().flat_map(|c| c.member_indices.iter()) {
        *counts.entry(*i).or_insert(0) += 1;
    }
    assert_eq!(counts.len(), 95);
    assert_eq!(counts.values().filter(|&&c| c == 2).count(), 5);

    assert!(matches!(chunk_tweets(&record(0), &ChunkingOptions::default(), 7), Err(CorpusError::EmptyTweetList(_))));
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn synthetic_corpus_shape_and_determinism() {
    let spec = SyntheticSpec::new(200, 0.9, 0.8, 1);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = generate_synthetic_corpus(&spec, a.path()).unwrap();
    generate_synthetic_corpus(&spec, b.path()).unwrap();

    assert_eq!(ca.train.len(), 160);
    assert_eq!(ca.test.len(), 40);
    let [f_tr, m_tr] = ca.train.label_counts();
    let [f_te, m_te] = ca.test.label_counts();
    assert_eq!((f_tr + f_te, m_tr + m_te), (100, 100));
    check_disjoint(&ca.train, &ca.test).unwrap();
    assert!(ca.train.users.iter().all(|u| u.tweets.len() == 100 && u.images.len() == 10));

    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));

    // the written corpus loads back with the ordinary loaders
    let loaded = load_pan_dataset(&ca.pan_root, "en", SplitName::Test).unwrap();
    assert_eq!(loaded.users, ca.test.users);
    let images = load_labeled_image_dataset(&ca.image_root).unwrap();
    assert_eq!(images, ca.images);
    assert_eq!(images.counts(SplitName::Train)[ImageClass::Unknown.index()], 60);
}

#[test]
fn synthetic_signal_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let err = generate_synthetic_corpus(&SyntheticSpec::new(10, 1.5, 0.5, 1), dir.path()).unwrap_err();
    assert!(matches!(err, CorpusError::InvalidSignal { name: "image_signal", .. }));
}
