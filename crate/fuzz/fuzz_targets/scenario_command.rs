#![no_main]

use helideck::wire::ScenarioCommand;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cmd) = ScenarioCommand::parse(text) {
        assert!(cmd.validate().is_ok());
        assert_eq!(ScenarioCommand::parse(&cmd.to_json()).unwrap(), cmd);
    }
});
