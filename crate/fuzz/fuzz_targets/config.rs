#![no_main]

use helideck_cli::config::{AppConfig, Format};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for format in [Format::Toml, Format::Json] {
        if let Ok(c) = AppConfig::parse(text, format) {
            let _ = c.scenario.validate();
        }
    }
});
