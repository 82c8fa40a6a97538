use mmprofile::corpus::{chunk_tweets, ChunkingOptions, UserRecord};
use mmprofile::evaluation::{confusion_matrix, f1_score, metrics_from_confusion};
use mmprofile::micronet::{forward, init_network, MicroNetSpec};
use mmprofile::stacking::{assemble_fused_vector, build_modality_features, majority_vote, Modality, ITEMS_PER_USER};
use mmprofile::text_model::{prepare_text_tokens, TextClassifierConfig};
use proptest::prelude::*;

fn prob_vec(arity: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, arity).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn items(arity: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prob_vec(arity), 1..=ITEMS_PER_USER)
}

proptest! {
    #[test]
    fn modality_slices_recover_items(img in items(3), txt in items(2)) {
        let fi = build_modality_features("u", &img, Modality::Image).unwrap();
        let ft = build_modality_features("u", &txt, Modality::Text).unwrap();
        prop_assert_eq!(fi.padded_items, ITEMS_PER_USER - img.len());
        for (i, p) in img.iter().enumerate() {
            prop_assert_eq!(fi.item(i), p.as_slice());
        }
        for i in img.len()..ITEMS_PER_USER {
            prop_assert_eq!(fi.item(i), &[1.0 / 3.0; 3][..]);
        }
        for i in 0..ITEMS_PER_USER {
            prop_assert!((fi.item(i).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
        let fused = assemble_fused_vector(&fi, &ft).unwrap();
        prop_assert_eq!(fused.vector.len(), 50);
        prop_assert_eq!(fused.image(), fi.vector.as_slice());
        prop_assert_eq!(fused.text(), ft.vector.as_slice());
    }

    #[test]
    fn vote_of_identical_items_is_their_argmax(p in prob_vec(3), n in 1usize..=10) {
        let list = vec![p.clone(); n];
        let best = mmprofile::numeric::argmax(&p);
        prop_assert_eq!(majority_vote(&list).unwrap(), best);
    }

    #[test]
    fn f1_lies_between_precision_and_recall(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
        prop_assume!(p + r > 0.0);
        let f = f1_score(p, r);
        prop_assert!(f >= p.min(r) - 1e-12 && f <= p.max(r) + 1e-12);
    }

    #[test]
    fn confusion_is_permutation_invariant(pairs in prop::collection::vec((0u8..3, 0u8..3), 1..80), seed in any::<u64>()) {
        let classes = [0u8, 1, 2];
        let (p, l): (Vec<u8>, Vec<u8>) = pairs.iter().cloned().unzip();
        let m = confusion_matrix(&p, &l, &classes).unwrap();
        let mut shuffled = pairs.clone();
        use rand::{seq::SliceRandom, SeedableRng};
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (p2, l2): (Vec<u8>, Vec<u8>) = shuffled.into_iter().unzip();
        prop_assert_eq!(&confusion_matrix(&p2, &l2, &classes).unwrap(), &m);
        prop_assert_eq!(m.total(), pairs.len() as u64);
        let report = metrics_from_confusion(&m).unwrap();
        prop_assert_eq!(report.accuracy, m.trace() as f64 / m.total() as f64);
        for c in &report.per_class {
            for v in [c.precision, c.recall, c.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn chunking_is_pure_and_covers_tweets(n in 1usize..150, size in 1usize..12, count in 1usize..12, seed in any::<u64>()) {
        let rec = UserRecord { user_id: format!("x{n}"), label: None, tweets: (0..n).map(|i| format!("t{i}")).collect(), images: vec![] };
        let opts = ChunkingOptions { chunk_size: size, n_chunks: count, independent_sampling: false };
        let a = chunk_tweets(&rec, &opts, seed).unwrap();
        prop_assert_eq!(&a, &chunk_tweets(&rec, &opts, seed).unwrap());
        prop_assert_eq!(a.chunks.len(), count);
        let mut all: Vec<usize> = a.chunks.iter().flat_map(|c| c.member_indices.clone()).collect();
        for c in &a.chunks {
            prop_assert_eq!(c.member_indices.len(), size);
            let joined: Vec<&str> = c.member_indices.iter().map(|&i| rec.tweets[i].as_str()).collect();
            prop_assert_eq!(&c.text, &joined.join(" "));
        }
        if n >= size * count {
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), size * count);
        }
    }

    #[test]
    fn token_sequences_respect_max_tokens(text in "[a-zA-Z0-9 !?.,@#]{1,400}", max in 3usize..=64) {
        prop_assume!(!text.trim().is_empty());
        let cfg = TextClassifierConfig { max_tokens: max, ..Default::default() };
        let ids = prepare_text_tokens(&text, &cfg).unwrap();
        prop_assert!(ids.len() <= max && ids.len() >= 2);
    }

    #[test]
    fn micronet_outputs_are_distributions(seed in any::<u64>(), x in prop::collection::vec(-50.0f64..50.0, 7)) {
        let params = init_network(&MicroNetSpec::new(7, 4, seed)).unwrap();
        let p = forward(&params, &x).unwrap();
        prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-6);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
