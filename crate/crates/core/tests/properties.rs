use mbct_core::analysis::{ecdf, kld, ks_test, ks_test_freq, CharFreq};
use mbct_core::codec::{
    decode_amount, decrypt_segment, encode_amount, encrypt_segment, extract_segment, gen_auth_field, gen_trans_field,
    mask_amount_signed, trans_tx, unmask_amount_signed, SegmentResult, SessionKey, Signature, DEFAULT_MAX_DRAWS,
};
use mbct_core::group::{decode_point, hash_to_scalar, scalar_mul_base, Scalar};
use mbct_core::monero::{mask_amount, unmask_amount, KeyQuad, Output, Transaction};
use mbct_core::session::{reassemble, segment_message, MAX_MESSAGE_LEN};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn point_from(seed: &[u8]) -> mbct_core::GroupPoint {
    scalar_mul_base(&hash_to_scalar(seed)).unwrap()
}

proptest! {
    #[test]
    fn amount_codes_roundtrip(seq in 0u32..=999, is_final: bool, seed: u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let a = encode_amount(seq, is_final, &mut rng).unwrap();
        let code = decode_amount(a).unwrap();
        prop_assert_eq!(code.seq as u32, seq);
        prop_assert_eq!(code.is_final(), is_final);
        prop_assert_eq!(code.value(), a);
    }

    #[test]
    fn out_of_range_amounts_do_not_decode(a in 2_000_000_000u64..) {
        prop_assert!(decode_amount(a).is_none());
    }

    #[test]
    fn masking_roundtrips(amount: u64, seed: Vec<u8>, index in 0u32..1000, r: [u8; 32], s: [u8; 32]) {
        let shared = point_from(&seed);
        prop_assert_eq!(unmask_amount(&mask_amount(amount, &shared, index), &shared, index), amount);
        let sig = Signature { r, s };
        prop_assert_eq!(unmask_amount_signed(&mask_amount_signed(amount, &shared, index, &sig), &shared, index, &sig), amount);
    }

    #[test]
    fn cipher_roundtrips(key: [u8; 32], pt: [u8; 32]) {
        let k = SessionKey(key);
        prop_assert_eq!(decrypt_segment(&encrypt_segment(&pt, &k), &k), pt);
    }

    #[test]
    fn framing_roundtrips(m in proptest::collection::vec(any::<u8>(), 0..2000), seed: u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let segs = segment_message(&m, &mut rng).unwrap();
        prop_assert_eq!(segs.len(), (m.len() + 2).div_ceil(32));
        prop_assert_eq!(reassemble(&segs).unwrap(), m);
    }

    #[test]
    fn oversize_messages_are_refused(extra in 1usize..100) {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        prop_assert!(segment_message(&vec![0u8; MAX_MESSAGE_LEN + extra], &mut rng).is_err());
    }

    #[test]
    fn transaction_wire_roundtrips(tx_pub: [u8; 32], fee: u64, outs in proptest::collection::vec((any::<[u8; 32]>(), any::<[u8; 8]>()), 0..6)) {
        let tx = Transaction {
            tx_pub,
            outputs: outs.iter().enumerate().map(|(i, (a, m))| Output { stealth_address: *a, masked_amount: *m, index: i as u32 }).collect(),
            fee,
        };
        let bytes = tx.to_bytes();
        prop_assert_eq!(Transaction::from_bytes(&bytes, 0).unwrap(), tx);
        prop_assert!(Transaction::from_bytes(&bytes[..bytes.len() - 1], 0).is_err());
    }

    #[test]
    fn decoded_points_reencode(bytes: [u8; 32]) {
        if let Some(p) = decode_point(&bytes) {
            prop_assert_eq!(p.encode(), bytes);
        }
    }

    #[test]
    fn scalars_reject_non_canonical(bytes: [u8; 32]) {
        match Scalar::from_canonical_bytes(bytes) {
            Ok(s) => prop_assert_eq!(s.to_bytes(), bytes),
            Err(_) => prop_assert_ne!(Scalar::from_bytes_mod_order(bytes).to_bytes(), bytes),
        }
    }

    #[test]
    fn kld_is_non_negative(p: [u16; 16], q: [u16; 16]) {
        let p = CharFreq::from_counts(p.map(|c| c as u64 + 1));
        let q = CharFreq::from_counts(q.map(|c| c as u64 + 1));
        prop_assert!(kld(&p, &q).unwrap() >= 0.0);
        prop_assert_eq!(kld(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn ecdf_is_monotone_and_ends_at_one(counts: [u16; 16]) {
        let mut c = counts.map(|x| x as u64);
        c[0] += 1;
        let cdf = ecdf(&CharFreq::from_counts(c));
        prop_assert!(cdf.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(cdf[15], 1.0);
    }

    #[test]
    fn ks_p_values_are_probabilities(a in proptest::collection::vec(0u8..16, 1..300), b in proptest::collection::vec(0u8..16, 1..300)) {
        let fa: Vec<f64> = a.iter().map(|v| *v as f64).collect();
        let fb: Vec<f64> = b.iter().map(|v| *v as f64).collect();
        let r = ks_test(&fa, &fb);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        prop_assert!((0.0..=1.0).contains(&r.statistic));
        let count = |xs: &[u8]| {
            let mut c = [0u64; 16];
            xs.iter().for_each(|v| c[*v as usize] += 1);
            CharFreq::from_counts(c)
        };
        let r2 = ks_test_freq(&count(&a), &count(&b));
        prop_assert!((r.statistic - r2.statistic).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn covert_segments_roundtrip(segment: [u8; 32], seq in 1u32..=999, is_final: bool, seed: u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let alice = KeyQuad::generate(&mut rng);
        let bob = KeyQuad::generate(&mut rng);
        let sig = gen_auth_field(&mut rng, &alice.view_priv, &bob.public(), DEFAULT_MAX_DRAWS).unwrap().signature;
        let f = gen_trans_field(&segment, seq, is_final, &bob.public(), &sig, &mut rng, DEFAULT_MAX_DRAWS).unwrap();
        let tx = trans_tx(&f, &alice.public(), &mut rng, 1);
        prop_assert!(tx.outputs.iter().all(|o| decode_point(&o.stealth_address).is_some()));
        prop_assert_eq!(
            extract_segment(&tx, &bob, &sig),
            SegmentResult::Segment { data: segment, seq: seq as u16, is_final }
        );
    }
}
