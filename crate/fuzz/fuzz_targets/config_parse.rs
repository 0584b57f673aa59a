#![no_main]
use c3gnn::trainer::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = TrainConfig::parse(text) {
        assert_eq!(TrainConfig::parse(&cfg.to_text()).expect("round trip"), cfg);
    }
});
