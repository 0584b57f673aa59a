#![no_main]
use c3gnn::graphdata::{read_dataset_str, write_dataset_string};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ds) = read_dataset_str(text) {
        let again = read_dataset_str(&write_dataset_string(&ds)).expect("written dataset parses");
        assert_eq!(again, ds);
    }
});
