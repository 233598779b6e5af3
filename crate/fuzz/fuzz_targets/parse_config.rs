#![no_main]

use analogy_core::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        // the echoed form parses back to the same settings
        let again = RunConfig::parse(&cfg.to_text()).expect("echo parses");
        assert_eq!(again.to_text(), cfg.to_text());
        let _ = cfg.validate();
    }
});
