#![no_main]

use analogy_core::corpus::Corpus;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(corpus) = Corpus::from_bytes(data) {
        // anything accepted must re-encode to the same bytes
        assert_eq!(corpus.to_bytes(), data);
    }
});
