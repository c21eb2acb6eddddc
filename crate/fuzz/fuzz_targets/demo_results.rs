#![no_main]

use helideck_cli::demo::{parse_demo, summarize};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((_, frames)) = parse_demo(text) {
        let _ = summarize(&frames, (0.1524, 0.1524, 0.5));
    }
});
