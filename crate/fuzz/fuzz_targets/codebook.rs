#![no_main]

use hlm::recode::Codebook;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Err(e) = Codebook::parse(text) {
        // reported lines point into the input
        assert!(e.line >= 1 && e.line <= text.lines().count().max(1));
    }
});
