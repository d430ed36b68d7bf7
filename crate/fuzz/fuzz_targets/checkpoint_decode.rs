#![no_main]

use libfuzzer_sys::fuzz_target;
use satprecode::nn::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data) {
        // anything that decodes must re-encode to a decodable equal value
        let again = Checkpoint::from_bytes(&ck.to_bytes()).expect("re-encoded checkpoint decodes");
        assert_eq!(again.to_bytes(), ck.to_bytes());
    }
});
