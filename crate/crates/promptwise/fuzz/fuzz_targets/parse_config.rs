#![no_main]

use libfuzzer_sys::fuzz_target;

use promptwise::config::{config_digest, parse_config};

// The config parser must never panic on arbitrary text; errors are the only
// acceptable way to reject input. Accepted configs must parse the same way
// twice and keep a stable digest, since the digest is the reproducibility
// key stamped into every output file.
fuzz_target!(|data: &[u8]| {
    let text = match std::str::from_utf8(data) {
        Ok(s) => s,
        Err(_) => return,
    };
    if let Ok(first) = parse_config(text) {
        let second = parse_config(text).expect("accepted config must parse again");
        assert_eq!(
            format!("{first:?}"),
            format!("{second:?}"),
            "config parse must be deterministic"
        );
        assert_eq!(
            config_digest(text),
            config_digest(text),
            "config digest must be stable"
        );
    }
});
