#![no_main]

use analogy_core::model::{checkpoint_from_bytes, parse_checkpoint, Architecture};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_checkpoint(data);
    let arch = Architecture {
        image_size: 8,
        conv1: 2,
        conv2: 2,
        hidden: 4,
        embed_dim: 3,
        ..Architecture::default()
    };
    let _ = checkpoint_from_bytes(data, arch);
});
