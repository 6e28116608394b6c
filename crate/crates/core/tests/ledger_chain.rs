use mbct_core::error::LedgerError;
use mbct_core::ledger::{DropPolicy, Ledger, SharedLedger};
use mbct_core::monero::{build_normal_tx, KeyQuad};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn hundred_blocks() -> Ledger {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let a = KeyQuad::generate(&mut rng).public();
    let b = KeyQuad::generate(&mut rng).public();
    let mut ledger = Ledger::new(1, DropPolicy::none());
    for h in 0..100u64 {
        for _ in 0..(h % 4) {
            ledger.submit_tx(build_normal_tx(&mut rng, &a, &b, 10 + h, 1 + h % 3)).unwrap();
        }
        ledger.produce_block();
    }
    ledger
}

#[test]
fn chain_file_roundtrip() {
    let ledger = hundred_blocks();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.bin");
    ledger.save_chain(&path).unwrap();
    let loaded = Ledger::load_chain(&path, 1, DropPolicy::none()).unwrap();
    assert_eq!(loaded.height(), 100);
    assert_eq!(loaded.blocks(), ledger.blocks());
    assert_eq!(loaded.next_ordinal(), ledger.next_ordinal());
    loaded.verify_chain().unwrap();
    assert_eq!(loaded.to_bytes(), ledger.to_bytes());
    for b in ledger.blocks() {
        for id in b.tx_ids() {
            assert_eq!(loaded.tx(&id).map(|(h, _)| h), Some(b.height));
        }
    }
}

#[test]
fn every_truncation_is_rejected() {
    let bytes = hundred_blocks().to_bytes();
    for cut in (0..bytes.len()).step_by(97) {
        assert!(Ledger::from_bytes(&bytes[..cut], 1, DropPolicy::none()).is_err(), "cut at {cut}");
    }
}

#[test]
fn flipped_bytes_never_load_silently() {
    let ledger = hundred_blocks();
    let bytes = ledger.to_bytes();
    for pos in (8..bytes.len()).step_by(131) {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x01;
        match Ledger::from_bytes(&bad, 1, DropPolicy::none()) {
            // Only the submission counter is not covered by block ids.
            Ok(l) => assert!(pos < 16 || l.verify_chain().is_err(), "flip at {pos} went unnoticed"),
            Err(LedgerError::Parse(e)) => assert!(e.offset <= bytes.len()),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}

#[test]
fn revalidation_with_stricter_fee_reports_height() {
    let ledger = hundred_blocks();
    let strict = Ledger::from_bytes(&ledger.to_bytes(), 3, DropPolicy::none()).unwrap();
    match strict.verify_chain() {
        Err(LedgerError::Integrity { height, reason }) => {
            assert_eq!(height, 1);
            assert!(reason.contains("fee"), "{reason}");
        }
        other => panic!("expected integrity failure, got {other:?}"),
    }
}

#[test]
fn json_export_lists_every_block() {
    let ledger = hundred_blocks();
    let v = ledger.export_json();
    let blocks = v.as_array().unwrap();
    assert_eq!(blocks.len(), 100);
    assert_eq!(blocks[3]["txs"].as_array().unwrap().len(), 3);
}

#[test]
fn shared_ledger_serves_concurrent_readers() {
    let shared = SharedLedger::new(hundred_blocks());
    let handles: Vec<_> = (0..4)
        .map(|i| {
            let s = shared.clone();
            std::thread::spawn(move || s.get_blocks(i * 10).len())
        })
        .collect();
    let lens: Vec<usize> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(lens, vec![100, 90, 80, 70]);
    shared.produce_block();
    assert_eq!(shared.read().height(), 101);
}
