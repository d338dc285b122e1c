#![no_main]

use hlm::simulator::{simulate, SimConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(mut cfg) = SimConfig::parse(text) else {
        return;
    };
    // keep generated datasets small
    if cfg.n_groups > 50 || (0..cfg.n_groups).map(|j| cfg.group_size(j)).sum::<usize>() > 2000 {
        return;
    }
    cfg.seed %= 1000;
    let _ = simulate(&cfg);
});
