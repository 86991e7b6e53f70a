#![no_main]
use libfuzzer_sys::fuzz_target;
use twin_htp::cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_toml_str(text, None) {
            cfg.validate().unwrap();
        }
    }
});
