#![no_main]

use hlm::estimator::ModelSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = ModelSpec::parse(text) {
        assert!(spec.validate().is_ok());
        assert!(spec.n_random() <= 1 + spec.level1.len());
    }
});
