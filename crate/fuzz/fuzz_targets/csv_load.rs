#![no_main]

use hlm::data::{listwise_delete, read_csv, LoadOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let opts = LoadOptions {
        text_columns: vec!["label".to_string()],
        ..LoadOptions::default()
    };
    let Ok(ds) = read_csv(data, &[], "school", &opts) else {
        return;
    };
    let index = ds.group_index();
    assert_eq!(index.sizes().iter().sum::<usize>(), ds.n_rows());
    let names: Vec<String> = ds.names().map(str::to_string).collect();
    let _ = listwise_delete(&ds, &names);
    let mut out = Vec::new();
    ds.write_csv(&mut out).unwrap();
});
