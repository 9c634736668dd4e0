use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scm_forge_core::codec::{decode, encode, CodecError};
use scm_forge_core::DmMessage;
use scm_forge_testkit::{checks, messages};

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn encode_then_decode_is_identity(seed in any::<u64>()) {
        let m = messages::message(&mut ChaCha8Rng::seed_from_u64(seed));
        let bytes = encode(&m).unwrap();
        prop_assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn encoding_is_deterministic(seed in any::<u64>()) {
        let m = messages::message(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(encode(&m).unwrap(), encode(&m.clone()).unwrap());
    }

    #[test]
    fn mutated_documents_never_yield_invalid_messages(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = messages::message(&mut rng);
        let doc = messages::mutate(&mut rng, &encode(&m).unwrap());
        if let Ok(got) = decode(&doc) {
            prop_assert!(got.validate().is_ok());
            prop_assert_eq!(decode(&encode(&got).unwrap()).unwrap(), got);
        }
    }

    #[test]
    fn arbitrary_bytes_do_not_panic(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        if let Ok(got) = decode(&bytes) {
            prop_assert!(got.validate().is_ok());
        }
    }
}

#[test]
fn thousand_messages_roundtrip() {
    checks::codec_roundtrip(1000, 1).unwrap();
}

#[test]
fn thousand_mutations_stay_closed() {
    checks::codec_mutation(1000, 2).unwrap();
}

#[test]
fn encode_refuses_invalid_messages() {
    let mut m: DmMessage = messages::message(&mut ChaCha8Rng::seed_from_u64(9));
    m.header.msg_id = 0;
    assert!(matches!(encode(&m), Err(CodecError::InvariantViolation(_))));
}
